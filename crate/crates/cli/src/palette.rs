use std::collections::HashMap;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use snowseg::{Error, LabelMap, Result};

const DEFAULT_PALETTE: &str = include_str!("../../../assets/palette.txt");

/// Class id to display colour.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

impl Default for Palette {
    fn default() -> Self {
        Palette::parse(DEFAULT_PALETTE, Path::new("<default palette>"))
            .expect("shipped palette is valid")
    }
}

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>) -> Result<Self> {
        if colors.is_empty() {
            return Err(Error::Config("palette is empty".into()));
        }
        Ok(Palette { colors })
    }

    /// Parses `id<TAB>r<TAB>g<TAB>b` lines with ids 0, 1, 2, ... in order.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut colors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [id, r, g, b] = fields[..] else {
                return Err(err("expected 'id<TAB>r<TAB>g<TAB>b'".into()));
            };
            if id.parse::<usize>().ok() != Some(colors.len()) {
                return Err(err(format!(
                    "expected class id {}, found '{id}'",
                    colors.len()
                )));
            }
            let byte = |s: &str| {
                s.parse::<u8>()
                    .map_err(|_| err(format!("colour component '{s}' is not in 0..=255")))
            };
            colors.push([byte(r)?, byte(g)?, byte(b)?]);
        }
        Palette::new(colors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Palette::parse(&text, path)
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color(&self, class: usize) -> Option<[u8; 3]> {
        self.colors.get(class).copied()
    }

    /// Fails unless every class in `0..num_classes` has a colour.
    pub fn check_covers(&self, num_classes: usize) -> Result<()> {
        if self.colors.len() < num_classes {
            return Err(Error::Config(format!(
                "palette has {} colours but the model predicts {num_classes} classes",
                self.colors.len()
            )));
        }
        Ok(())
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.colors.iter().all(|c| seen.insert(*c))
    }

    pub fn colorize(&self, label: &LabelMap) -> Result<RgbImage> {
        let max = label.values().iter().copied().max().unwrap_or(0);
        self.check_covers(usize::from(max) + 1)?;
        Ok(RgbImage::from_fn(
            label.width() as u32,
            label.height() as u32,
            |x, y| Rgb(self.colors[usize::from(label.get(y as usize, x as usize))]),
        ))
    }

    /// Maps colours back to class ids. Requires an injective palette.
    pub fn invert(&self, img: &RgbImage) -> Result<LabelMap> {
        if !self.is_injective() {
            return Err(Error::Config(
                "palette repeats a colour and cannot be inverted".into(),
            ));
        }
        let lookup: HashMap<[u8; 3], u8> = self
            .colors
            .iter()
            .enumerate()
            .map(|(id, c)| (*c, id as u8))
            .collect();
        let values = img
            .enumerate_pixels()
            .map(|(x, y, px)| {
                lookup.get(&px.0).copied().ok_or_else(|| {
                    Error::Data(format!(
                        "pixel ({x}, {y}) colour {:?} is not in the palette",
                        px.0
                    ))
                })
            })
            .collect::<Result<Vec<u8>>>()?;
        LabelMap::new(img.height() as usize, img.width() as usize, values)
    }
}
