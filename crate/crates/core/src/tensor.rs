//! Dense row-major grids of finite `f64` values.
//!
//! [`Grid2`] is an `H x W` map, [`Grid3`] a `C x H x W` stack of maps. Both
//! reject zero dimensions and non-finite values at construction time, so every
//! downstream stage can assume clean inputs.

use crate::error::{Error, Result};

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what}: element {i} is {}", data[i]))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Grid2 {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::dim(format!("grid dims must be positive, got {h}x{w}")));
        }
        if data.len() != h * w {
            return Err(Error::dim(format!(
                "grid {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        check_finite(&data, "grid")?;
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, value: f64) -> Result<Self> {
        Self::new(h, w, vec![value; h * w])
    }

    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        Self::filled(h, w, 0.0)
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Self::new(h, w, data)
    }

    /// Callers guarantee dims and finiteness.
    pub(crate) fn from_parts(h: usize, w: usize, data: Vec<f64>) -> Self {
        debug_assert!(h > 0 && w > 0 && data.len() == h * w);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { h, w, data }
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
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.h, self.w, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Grid2, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::dim(format!(
                "grid dims differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.h, self.w, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid3 {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Grid3 {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::dim(format!(
                "stack dims must be positive, got {c}x{h}x{w}"
            )));
        }
        if data.len() != c * h * w {
            return Err(Error::dim(format!(
                "stack {c}x{h}x{w} needs {} values, got {}",
                c * h * w,
                data.len()
            )));
        }
        check_finite(&data, "stack")?;
        Ok(Self { c, h, w, data })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(c, h, w, vec![0.0; c * h * w])
    }

    pub fn from_fn(
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(c * h * w);
        for k in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(k, y, x));
                }
            }
        }
        Self::new(c, h, w, data)
    }

    /// Stacks equally sized maps along a new leading axis.
    pub fn from_channels(maps: &[Grid2]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::dim("cannot stack zero channels"))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(maps.len() * h * w);
        for m in maps {
            if m.dims() != (h, w) {
                return Err(Error::dim(format!(
                    "channel dims differ: {:?} vs {:?}",
                    m.dims(),
                    (h, w)
                )));
            }
            data.extend_from_slice(m.values());
        }
        Ok(Self::from_parts(maps.len(), h, w, data))
    }

    pub(crate) fn from_parts(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        debug_assert!(c > 0 && h > 0 && w > 0 && data.len() == c * h * w);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { c, h, w, data }
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_grid(&self, c: usize) -> Grid2 {
        Grid2::from_parts(self.h, self.w, self.channel(c).to_vec())
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.c,
            self.h,
            self.w,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Averages a stack over its channel axis.
pub fn channel_mean_pool(t: &Grid3) -> Grid2 {
    let (c, h, w) = t.dims();
    let n = h * w;
    let mut acc = vec![0.0; n];
    for k in 0..c {
        for (a, v) in acc.iter_mut().zip(t.channel(k)) {
            *a += v;
        }
    }
    let inv = 1.0 / c as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Grid2::from_parts(h, w, acc)
}

/// Rescales a map affinely onto `[0, 1]`. A constant map becomes all zeros.
pub fn minmax_normalize(m: &Grid2) -> Grid2 {
    let lo = m.min();
    let hi = m.max();
    let span = hi - lo;
    let data = if span > 0.0 && span.is_finite() {
        m.values()
            .iter()
            .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; m.len()]
    };
    Grid2::from_parts(m.height(), m.width(), data)
}

fn sample_coords(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resampling with corner-aligned sample positions.
pub fn resize_bilinear(m: &Grid2, out_h: usize, out_w: usize) -> Result<Grid2> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::dim(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    if m.dims() == (out_h, out_w) {
        return Ok(m.clone());
    }
    let ys = sample_coords(m.height(), out_h);
    let xs = sample_coords(m.width(), out_w);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = lerp(m.get(y0, x0), m.get(y0, x1), fx);
            let bottom = lerp(m.get(y1, x0), m.get(y1, x1), fx);
            data.push(lerp(top, bottom, fy));
        }
    }
    Ok(Grid2::from_parts(out_h, out_w, data))
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}
