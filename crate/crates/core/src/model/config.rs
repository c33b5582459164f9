use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Output channels of the five VGG16 blocks at full width.
pub const VGG16_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];

/// Convolutions per VGG16 block.
pub const VGG16_BLOCK_DEPTHS: [usize; 5] = [2, 2, 3, 3, 3];

/// Total downsampling of the encoder (five 2x pools).
pub const INPUT_MULTIPLE: usize = 32;

/// Largest class count representable in 8-bit label rasters.
pub const MAX_CLASSES: usize = 256;

/// Positive rational multiplier applied to the VGG16 channel widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WidthScale {
    num: u32,
    den: u32,
}

impl WidthScale {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Config(format!(
                "width scale {num}/{den} must be a positive ratio"
            )));
        }
        Ok(WidthScale { num, den })
    }

    pub fn numerator(&self) -> u32 {
        self.num
    }

    pub fn denominator(&self) -> u32 {
        self.den
    }

    /// `base * num / den`, rounded half up.
    pub fn apply(&self, base: usize) -> usize {
        let (num, den) = (self.num as u64, self.den as u64);
        ((2 * base as u64 * num + den) / (2 * den)) as usize
    }
}

impl fmt::Display for WidthScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for WidthScale {
    type Err = Error;

    /// Accepts `a/b` or a bare integer `a`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("width scale '{s}' is not of the form a/b"));
        let (num, den) = match s.split_once('/') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (s.trim(), "1"),
        };
        WidthScale::new(
            num.parse().map_err(|_| bad())?,
            den.parse().map_err(|_| bad())?,
        )
    }
}

/// Shape and initialization settings of an FCN-8 model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub width_scale: WidthScale,
    pub input_h: usize,
    pub input_w: usize,
    pub seed: u64,
    /// When false the three upsampling layers keep their bilinear initialization.
    pub learn_upsampling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 20,
            width_scale: WidthScale { num: 1, den: 4 },
            input_h: 224,
            input_w: 384,
            seed: 0,
            learn_upsampling: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > MAX_CLASSES {
            return Err(Error::Config(format!(
                "num_classes must be in 1..={MAX_CLASSES}, got {}",
                self.num_classes
            )));
        }
        for (axis, len) in [("input_h", self.input_h), ("input_w", self.input_w)] {
            if len == 0 || len % INPUT_MULTIPLE != 0 {
                return Err(Error::Config(format!(
                    "{axis} = {len} must be a positive multiple of {INPUT_MULTIPLE} (five 2x pooling stages)"
                )));
            }
        }
        if let Some(base) = VGG16_WIDTHS
            .iter()
            .find(|&&b| self.width_scale.apply(b) == 0)
        {
            return Err(Error::Config(format!(
                "width scale {} rounds the {base}-channel block to zero channels",
                self.width_scale
            )));
        }
        Ok(())
    }

    /// Encoder block widths after scaling.
    pub fn widths(&self) -> [usize; 5] {
        VGG16_WIDTHS.map(|b| self.width_scale.apply(b))
    }
}
