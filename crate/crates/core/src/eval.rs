//! Segmentation metrics: intersection-over-union, boundary-band (trimap)
//! accuracy and the confusion matrix.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::labels::LabelMap;

fn check_pairs(preds: &[LabelMap], gts: &[LabelMap], labels: usize) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.dims() != g.dims() {
            return Err(Error::dim(format!(
                "pair {i}: prediction {:?} vs ground truth {:?}",
                p.dims(),
                g.dims()
            )));
        }
        p.check_range(labels)?;
        g.check_range(labels)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoUReport {
    /// `None` for labels absent from both predictions and ground truth.
    pub per_class: Vec<Option<f64>>,
    /// Mean over labels with a nonzero union; `None` if there are none.
    pub mean: Option<f64>,
}

impl IoUReport {
    pub fn mean_percent(&self) -> f64 {
        self.mean.unwrap_or(0.0) * 100.0
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("class      IoU\n");
        for (k, v) in self.per_class.iter().enumerate() {
            match v {
                Some(v) => writeln!(s, "{k:>5}  {:>7.2}", v * 100.0).unwrap(),
                None => writeln!(s, "{k:>5}  {:>7}", "-").unwrap(),
            }
        }
        match self.mean {
            Some(m) => writeln!(s, " mean  {:>7.2}", m * 100.0).unwrap(),
            None => writeln!(s, " mean  {:>7}", "-").unwrap(),
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,iou\n");
        for (k, v) in self.per_class.iter().enumerate() {
            match v {
                Some(v) => writeln!(s, "{k},{v}").unwrap(),
                None => writeln!(s, "{k},").unwrap(),
            }
        }
        match self.mean {
            Some(m) => writeln!(s, "mean,{m}").unwrap(),
            None => writeln!(s, "mean,").unwrap(),
        }
        s
    }
}

/// Dataset-level IoU per label over `labels` labels (background included).
pub fn iou(preds: &[LabelMap], gts: &[LabelMap], labels: usize) -> Result<IoUReport> {
    let cm = confusion(preds, gts, labels)?;
    let per_class: Vec<Option<f64>> = (0..labels)
        .map(|k| {
            let inter = cm.get(k, k);
            let union = cm.row_sum(k) + cm.col_sum(k) - inter;
            (union > 0).then(|| inter as f64 / union as f64)
        })
        .collect();
    let seen: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = (!seen.is_empty()).then(|| seen.iter().sum::<f64>() / seen.len() as f64);
    Ok(IoUReport { per_class, mean })
}

/// Pixels adjacent (4-neighborhood) to a pixel of a different label.
pub fn boundary_pixels(gt: &LabelMap) -> Vec<bool> {
    let (h, w) = gt.dims();
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let l = gt.get(y, x);
            let differs = (y > 0 && gt.get(y - 1, x) != l)
                || (y + 1 < h && gt.get(y + 1, x) != l)
                || (x > 0 && gt.get(y, x - 1) != l)
                || (x + 1 < w && gt.get(y, x + 1) != l);
            out[y * w + x] = differs;
        }
    }
    out
}

/// Band of width `band_px` around the label boundaries: boundary pixels
/// dilated by a square of radius `band_px - 1`.
pub fn trimap_band(gt: &LabelMap, band_px: usize) -> Result<Vec<bool>> {
    if band_px == 0 {
        return Err(Error::arg("trimap band must be at least one pixel"));
    }
    let (h, w) = gt.dims();
    let edge = boundary_pixels(gt);
    let r = band_px - 1;
    let mut band = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !edge[y * w + x] {
                continue;
            }
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    band[yy * w + xx] = true;
                }
            }
        }
    }
    Ok(band)
}

/// Pixel accuracy inside the boundary band; `None` when the ground truth has
/// no boundary at all.
pub fn trimap_accuracy(pred: &LabelMap, gt: &LabelMap, band_px: usize) -> Result<Option<f64>> {
    trimap_accuracy_many(std::slice::from_ref(pred), std::slice::from_ref(gt), band_px)
}

/// Trimap accuracy pooled over a dataset.
pub fn trimap_accuracy_many(
    preds: &[LabelMap],
    gts: &[LabelMap],
    band_px: usize,
) -> Result<Option<f64>> {
    check_pairs(preds, gts, usize::from(u16::MAX) + 1)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        let band = trimap_band(g, band_px)?;
        for ((b, pl), gl) in band.iter().zip(p.labels()).zip(g.labels()) {
            if *b {
                total += 1;
                hit += usize::from(pl == gl);
            }
        }
    }
    Ok((total > 0).then(|| hit as f64 / total as f64))
}

/// Counts indexed `[ground truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.labels + pred]
    }

    pub fn row_sum(&self, gt: usize) -> u64 {
        self.counts[gt * self.labels..(gt + 1) * self.labels].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.labels).map(|g| self.get(g, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_table(&self) -> String {
        let width = self
            .counts
            .iter()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(4);
        let mut s = format!("{:>6}", "gt\\pr");
        for p in 0..self.labels {
            write!(s, " {p:>width$}").unwrap();
        }
        s.push('\n');
        for g in 0..self.labels {
            write!(s, "{g:>6}").unwrap();
            for p in 0..self.labels {
                write!(s, " {:>width$}", self.get(g, p)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("gt");
        for p in 0..self.labels {
            write!(s, ",pred_{p}").unwrap();
        }
        s.push('\n');
        for g in 0..self.labels {
            write!(s, "{g}").unwrap();
            for p in 0..self.labels {
                write!(s, ",{}", self.get(g, p)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion(preds: &[LabelMap], gts: &[LabelMap], labels: usize) -> Result<ConfusionMatrix> {
    check_pairs(preds, gts, labels)?;
    let mut counts = vec![0u64; labels * labels];
    for (p, g) in preds.iter().zip(gts) {
        for (&pl, &gl) in p.labels().iter().zip(g.labels()) {
            counts[gl as usize * labels + pl as usize] += 1;
        }
    }
    Ok(ConfusionMatrix { labels, counts })
}
