//! Class tables, sample manifests, PNG decoding and network-legal resizing.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::model::INPUT_MULTIPLE;
use crate::tensor::{Shape, Tensor};

/// Tab-separated default class table, one `id<TAB>name` per line.
pub const DEFAULT_CLASSES: &str = include_str!("../../../assets/classes.txt");

/// Ordered class names; a class's ID is its position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
}

impl Default for ClassTable {
    fn default() -> Self {
        ClassTable::parse(DEFAULT_CLASSES, Path::new("<default classes>"))
            .expect("shipped class table is valid")
    }
}

impl ClassTable {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("class table is empty".into()));
        }
        let mut seen = HashSet::new();
        for (id, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(Error::Config(format!("class {id} has an empty name")));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Config(format!("class name '{n}' appears twice")));
            }
        }
        if names.len() > crate::model::MAX_CLASSES {
            return Err(Error::Config(format!(
                "{} classes do not fit 8-bit label rasters",
                names.len()
            )));
        }
        Ok(ClassTable { names })
    }

    /// Parses `id<TAB>name` lines. IDs must run 0, 1, 2, ... in order.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut names = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let (id, name) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected 'id<TAB>name'".into()))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("class id '{id}' is not an integer")))?;
            if id != names.len() {
                return Err(parse_err(format!(
                    "expected class id {}, found {id}",
                    names.len()
                )));
            }
            names.push(name.trim().to_string());
        }
        ClassTable::new(names)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ClassTable::parse(&text, path)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn to_text(&self) -> String {
        self.names
            .iter()
            .enumerate()
            .map(|(id, n)| format!("{id}\t{n}\n"))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Val,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "val" => Ok(Role::Val),
            "test" => Ok(Role::Test),
            other => Err(Error::Config(format!("unknown split role '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub label: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleManifest {
    pub role: Role,
    pub entries: Vec<ManifestEntry>,
}

impl SampleManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reads an `image<TAB>label` manifest. Relative paths resolve against the
/// manifest's directory; every referenced file must exist.
pub fn load_manifest(path: impl AsRef<Path>, role: Role) -> Result<SampleManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut fields = line.split('\t');
        let (Some(image), Some(label), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err("expected exactly 'image<TAB>label'".into()));
        };
        if image.is_empty() || label.is_empty() {
            return Err(parse_err("empty path".into()));
        }
        let entry = ManifestEntry {
            image: base.join(image),
            label: base.join(label),
        };
        if !seen.insert(entry.image.clone()) {
            return Err(parse_err(format!(
                "duplicate image {}",
                entry.image.display()
            )));
        }
        for p in [&entry.image, &entry.label] {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "referenced file does not exist",
                    ),
                ));
            }
        }
        entries.push(entry);
    }
    Ok(SampleManifest { role, entries })
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &SampleManifest) -> Result<()> {
    let path = path.as_ref();
    let mut text = format!("# {} split\n", manifest.role);
    for e in &manifest.entries {
        text.push_str(&format!("{}\t{}\n", e.image.display(), e.label.display()));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// An image tensor `(1, 3, h, w)` in `[0, 1]` with its label map.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: LabelMap,
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Decodes an 8-bit RGB raster into a `(1, 3, h, w)` tensor scaled to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = match open_image(path)? {
        DynamicImage::ImageRgb8(rgb) => rgb,
        other @ (DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgba8(_)) => other.to_rgb8(),
        other => {
            return Err(Error::Data(format!(
                "{}: expected an 8-bit RGB image, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(rgb_to_tensor(&img))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| {
        f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
    })
    .expect("decoded images are non-empty")
}

/// Decodes an 8-bit single-channel raster of class IDs.
pub fn load_label(path: &Path) -> Result<LabelMap> {
    match open_image(path)? {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            LabelMap::new(h, w, gray.into_raw())
        }
        other => Err(Error::Data(format!(
            "{}: label rasters must be 8-bit single-channel, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Loads one manifest entry and checks its labels against `classes`.
pub fn load_sample(entry: &ManifestEntry, classes: &ClassTable) -> Result<Sample> {
    let image = load_image(&entry.image)?;
    let label = load_label(&entry.label)?;
    let s = image.shape();
    if label.dims() != (s.h, s.w) {
        return Err(Error::Data(format!(
            "{} is {}x{} but its label {} is {}x{}",
            entry.image.display(),
            s.h,
            s.w,
            entry.label.display(),
            label.height(),
            label.width()
        )));
    }
    label
        .validate(classes.len())
        .map_err(|e| Error::Data(format!("{}: {e}", entry.label.display())))?;
    Ok(Sample { image, label })
}

pub fn save_label_png(path: impl AsRef<Path>, label: &LabelMap) -> Result<()> {
    let path = path.as_ref();
    let img: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(
        label.width() as u32,
        label.height() as u32,
        label.values().to_vec(),
    )
    .expect("label buffer matches its dimensions");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes item 0 of a `(n, 3, h, w)` tensor as an 8-bit RGB PNG, clamping to `[0, 1]`.
pub fn save_image_png(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::Dimension(format!(
            "RGB output needs 3 channels, got {s}"
        )));
    }
    let img = RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let px =
            |c| (image.get(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Source coordinate and blend weight for half-pixel-centered linear sampling.
fn linear_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).max(0.0);
    let i0 = (pos.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resize of every channel of a tensor.
pub fn resize_bilinear(image: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let s = image.shape();
    if (s.h, s.w) == (target_h, target_w) {
        return Ok(image.clone());
    }
    let rows: Vec<_> = (0..target_h)
        .map(|y| linear_taps(y, s.h, target_h))
        .collect();
    let cols: Vec<_> = (0..target_w)
        .map(|x| linear_taps(x, s.w, target_w))
        .collect();
    Tensor::from_fn(Shape::new(s.n, s.c, target_h, target_w), |[n, c, y, x]| {
        let (y0, y1, ty) = rows[y];
        let (x0, x1, tx) = cols[x];
        let top = lerp(image.get(n, c, y0, x0), image.get(n, c, y0, x1), tx);
        let bottom = lerp(image.get(n, c, y1, x0), image.get(n, c, y1, x1), tx);
        lerp(top, bottom, ty)
    })
}

/// Nearest-neighbour resize; output values are always drawn from the input.
pub fn resize_nearest(label: &LabelMap, target_h: usize, target_w: usize) -> Result<LabelMap> {
    let (h, w) = label.dims();
    if (h, w) == (target_h, target_w) {
        return Ok(label.clone());
    }
    let pick =
        |dst: usize, src: usize, dst_len: usize| ((2 * dst + 1) * src / (2 * dst_len)).min(src - 1);
    let mut values = Vec::with_capacity(target_h * target_w);
    for y in 0..target_h {
        let sy = pick(y, h, target_h);
        for x in 0..target_w {
            values.push(label.get(sy, pick(x, w, target_w)));
        }
    }
    LabelMap::new(target_h, target_w, values)
}

/// Resizes a sample to network-legal dimensions: bilinear for the image,
/// nearest-neighbour for the categorical labels.
pub fn resize_sample(
    image: &Tensor,
    label: &LabelMap,
    target_h: usize,
    target_w: usize,
) -> Result<(Tensor, LabelMap)> {
    for (axis, len) in [("height", target_h), ("width", target_w)] {
        if len == 0 || len % INPUT_MULTIPLE != 0 {
            return Err(Error::Config(format!(
                "target {axis} {len} must be a positive multiple of {INPUT_MULTIPLE}"
            )));
        }
    }
    Ok((
        resize_bilinear(image, target_h, target_w)?,
        resize_nearest(label, target_h, target_w)?,
    ))
}

/// Loaded samples together with the class count they were validated against.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(num_classes: usize, samples: Vec<Sample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            s.label
                .validate(num_classes)
                .map_err(|e| Error::Data(format!("sample {i}: {e}")))?;
        }
        Ok(Dataset {
            num_classes,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Loads every manifest entry, resizing to `size` when given.
pub fn load_dataset(
    manifest: &SampleManifest,
    classes: &ClassTable,
    size: Option<(usize, usize)>,
) -> Result<Dataset> {
    let samples = manifest
        .entries
        .iter()
        .map(|e| {
            let s = load_sample(e, classes)?;
            match size {
                Some((h, w)) => {
                    let (image, label) = resize_sample(&s.image, &s.label, h, w)?;
                    Ok(Sample { image, label })
                }
                None => Ok(s),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(classes.len(), samples)
}
