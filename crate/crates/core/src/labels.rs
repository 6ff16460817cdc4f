use crate::error::{Error, Result};

/// One discrete label per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    h: usize,
    w: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, labels: Vec<u16>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::dim(format!("label map dims must be positive, got {h}x{w}")));
        }
        if labels.len() != h * w {
            return Err(Error::dim(format!(
                "label map {h}x{w} needs {} labels, got {}",
                h * w,
                labels.len()
            )));
        }
        Ok(Self { h, w, labels })
    }

    pub fn filled(h: usize, w: usize, label: u16) -> Result<Self> {
        Self::new(h, w, vec![label; h * w])
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

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.w + x]
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn max_label(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Checks every label against an exclusive upper bound.
    pub fn check_range(&self, label_count: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l as usize >= label_count) {
            Some(l) => Err(Error::arg(format!(
                "label {l} out of range for {label_count} labels"
            ))),
            None => Ok(()),
        }
    }

    /// Binary mask of the pixels carrying `label`.
    pub fn mask_of(&self, label: u16) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }
}
