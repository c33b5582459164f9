use crate::error::{Error, Result};

/// A 2-D raster of class IDs, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    h: usize,
    w: usize,
    values: Vec<u8>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, values: Vec<u8>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::Dimension(format!(
                "label map must be non-empty, got {h}x{w}"
            )));
        }
        if values.len() != h * w {
            return Err(Error::Dimension(format!(
                "label map {h}x{w} needs {} values, got {}",
                h * w,
                values.len()
            )));
        }
        Ok(LabelMap { h, w, values })
    }

    pub fn filled(h: usize, w: usize, class: u8) -> Result<Self> {
        Self::new(h, w, vec![class; h * w])
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn into_values(self) -> Vec<u8> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.w + col]
    }

    /// Fails with the first (row, col) whose class ID is not below `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .values
            .iter()
            .position(|&v| usize::from(v) >= num_classes)
        {
            None => Ok(()),
            Some(i) => Err(Error::Data(format!(
                "label value {} at (row {}, col {}) is not below the class count {num_classes}",
                self.values[i],
                i / self.w,
                i % self.w
            ))),
        }
    }
}
