//! Contrast-sensitive Potts kernel over pixel pairs.
//!
//! `k(i, j) = w_app * exp(-|p_i - p_j|^2 / (2 theta_a^2) - |c_i - c_j|^2 / (2 theta_b^2))
//!          + w_smooth * exp(-|p_i - p_j|^2 / (2 theta_g^2))`

use crate::error::{Error, Result};
use crate::tensor::Grid3;

/// Largest pixel count accepted by exact (all-pairs) inference.
pub const EXACT_PIXEL_CAP: usize = 16_384;

/// Above this pixel count the exact kernel is recomputed per iteration
/// instead of being cached as a dense matrix.
const DENSE_CACHE_CAP: usize = 4_096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseParams {
    pub w_app: f64,
    /// Spatial bandwidth of the appearance kernel, in pixels.
    pub theta_alpha: f64,
    /// Color bandwidth of the appearance kernel, intensity units 0-255.
    pub theta_beta: f64,
    pub w_smooth: f64,
    /// Spatial bandwidth of the smoothness kernel, in pixels.
    pub theta_gamma: f64,
}

impl Default for PairwiseParams {
    fn default() -> Self {
        Self {
            w_app: 5.0,
            theta_alpha: 30.0,
            theta_beta: 13.0,
            w_smooth: 3.0,
            theta_gamma: 3.0,
        }
    }
}

impl PairwiseParams {
    pub fn disabled() -> Self {
        Self {
            w_app: 0.0,
            w_smooth: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_app, self.w_smooth];
        let bands = [self.theta_alpha, self.theta_beta, self.theta_gamma];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::arg(format!("kernel weights must be >= 0: {self:?}")));
        }
        if bands.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::arg(format!("kernel bandwidths must be > 0: {self:?}")));
        }
        Ok(())
    }

    /// Kernel value from squared spatial and color distances.
    pub fn kernel(&self, d2_pos: f64, d2_col: f64) -> f64 {
        let app = if self.w_app > 0.0 {
            self.w_app
                * (-d2_pos / (2.0 * self.theta_alpha * self.theta_alpha)
                    - d2_col / (2.0 * self.theta_beta * self.theta_beta))
                    .exp()
        } else {
            0.0
        };
        let smooth = if self.w_smooth > 0.0 {
            self.w_smooth * (-d2_pos / (2.0 * self.theta_gamma * self.theta_gamma)).exp()
        } else {
            0.0
        };
        app + smooth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelMode {
    /// All pixel pairs; limited to [`EXACT_PIXEL_CAP`] pixels.
    #[default]
    Exact,
    /// Each Gaussian truncated to a square window of radius 3x its bandwidth.
    Approximate,
}

/// Pairwise kernel bound to one image.
#[derive(Debug, Clone)]
pub struct PairwiseKernel {
    h: usize,
    w: usize,
    colors: Vec<f64>,
    channels: usize,
    params: PairwiseParams,
    mode: KernelMode,
    /// Row-major `n x n` cache, single precision to halve memory traffic.
    dense: Option<Vec<f32>>,
}

impl PairwiseKernel {
    pub fn new(image: &Grid3, params: &PairwiseParams, mode: KernelMode) -> Result<Self> {
        params.validate()?;
        let (c, h, w) = image.dims();
        let n = h * w;
        if mode == KernelMode::Exact && n > EXACT_PIXEL_CAP {
            return Err(Error::arg(format!(
                "{n} pixels exceed the exact-mode cap of {EXACT_PIXEL_CAP}; use approximate mode"
            )));
        }
        // Pixel-major colors for locality.
        let mut colors = vec![0.0; n * c];
        for k in 0..c {
            for (i, v) in image.channel(k).iter().enumerate() {
                colors[i * c + k] = *v;
            }
        }
        let mut kernel = Self {
            h,
            w,
            colors,
            channels: c,
            params: *params,
            mode,
            dense: None,
        };
        if mode == KernelMode::Exact && n <= DENSE_CACHE_CAP && !kernel.is_zero() {
            kernel.dense = Some(kernel.dense_matrix());
        }
        Ok(kernel)
    }

    /// Same values as [`Self::eval`], with the spatial factors tabulated by
    /// pixel offset.
    fn dense_matrix(&self) -> Vec<f32> {
        let (h, w, c) = (self.h, self.w, self.channels);
        let n = h * w;
        let p = &self.params;
        let two_a2 = 2.0 * p.theta_alpha * p.theta_alpha;
        let two_b2 = 2.0 * p.theta_beta * p.theta_beta;
        let two_g2 = 2.0 * p.theta_gamma * p.theta_gamma;
        let mut app = vec![0.0; n];
        let mut smooth = vec![0.0; n];
        for dy in 0..h {
            for dx in 0..w {
                let d2 = (dy * dy + dx * dx) as f64;
                app[dy * w + dx] = if p.w_app > 0.0 { p.w_app * (-d2 / two_a2).exp() } else { 0.0 };
                smooth[dy * w + dx] = if p.w_smooth > 0.0 {
                    p.w_smooth * (-d2 / two_g2).exp()
                } else {
                    0.0
                };
            }
        }
        let mut dense = vec![0.0f32; n * n];
        for (i, row) in dense.chunks_exact_mut(n).enumerate() {
            let (yi, xi) = (i / w, i % w);
            let ci = &self.colors[i * c..(i + 1) * c];
            for (j, v) in row.iter_mut().enumerate() {
                if i == j {
                    continue;
                }
                let (yj, xj) = (j / w, j % w);
                let off = yi.abs_diff(yj) * w + xi.abs_diff(xj);
                let mut k = smooth[off];
                if p.w_app > 0.0 {
                    let cj = &self.colors[j * c..(j + 1) * c];
                    let d2_col: f64 = ci.iter().zip(cj).map(|(a, b)| (a - b) * (a - b)).sum();
                    k += app[off] * (-d2_col / two_b2).exp();
                }
                *v = k as f32;
            }
        }
        dense
    }

    pub fn params(&self) -> &PairwiseParams {
        &self.params
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn is_zero(&self) -> bool {
        self.params.w_app == 0.0 && self.params.w_smooth == 0.0
    }

    /// Untruncated kernel value; zero on the diagonal.
    pub fn eval(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (d2_pos, d2_col) = self.distances(i, j);
        self.params.kernel(d2_pos, d2_col)
    }

    fn distances(&self, i: usize, j: usize) -> (f64, f64) {
        let (yi, xi) = ((i / self.w) as f64, (i % self.w) as f64);
        let (yj, xj) = ((j / self.w) as f64, (j % self.w) as f64);
        let d2_pos = (yi - yj).powi(2) + (xi - xj).powi(2);
        let c = self.channels;
        let d2_col = self.colors[i * c..(i + 1) * c]
            .iter()
            .zip(&self.colors[j * c..(j + 1) * c])
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        (d2_pos, d2_col)
    }

    /// `out[i * labels + l] = sum_{j != i} k(i, j) * q[j * labels + l]` for a
    /// pixel-major field `q`.
    pub(crate) fn filter(&self, q: &[f64], labels: usize, out: &mut [f64]) {
        let n = self.pixels();
        debug_assert_eq!(q.len(), n * labels);
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.is_zero() {
            return;
        }
        match (&self.dense, self.mode) {
            (Some(dense), _) => {
                let mut by_label = vec![0.0; n * labels];
                for (i, qi) in q.chunks_exact(labels).enumerate() {
                    for (l, v) in qi.iter().enumerate() {
                        by_label[l * n + i] = *v;
                    }
                }
                for (row, acc) in dense.chunks_exact(n).zip(out.chunks_exact_mut(labels)) {
                    for (a, ql) in acc.iter_mut().zip(by_label.chunks_exact(n)) {
                        *a = dot(row, ql);
                    }
                }
            }
            (None, KernelMode::Exact) => {
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let k = self.eval(i, j);
                        for l in 0..labels {
                            out[i * labels + l] += k * q[j * labels + l];
                        }
                    }
                }
            }
            (None, KernelMode::Approximate) => self.filter_windowed(q, labels, out),
        }
    }

    fn filter_windowed(&self, q: &[f64], labels: usize, out: &mut [f64]) {
        let p = &self.params;
        let r_app = if p.w_app > 0.0 {
            (3.0 * p.theta_alpha).ceil() as isize
        } else {
            0
        };
        let r_smooth = if p.w_smooth > 0.0 {
            (3.0 * p.theta_gamma).ceil() as isize
        } else {
            0
        };
        let radius = r_app.max(r_smooth);
        let (h, w) = (self.h as isize, self.w as isize);
        let two_a2 = 2.0 * p.theta_alpha * p.theta_alpha;
        let two_b2 = 2.0 * p.theta_beta * p.theta_beta;
        let two_g2 = 2.0 * p.theta_gamma * p.theta_gamma;
        for yi in 0..h {
            for xi in 0..w {
                let i = (yi * w + xi) as usize;
                for yj in (yi - radius).max(0)..(yi + radius + 1).min(h) {
                    for xj in (xi - radius).max(0)..(xi + radius + 1).min(w) {
                        let j = (yj * w + xj) as usize;
                        if i == j {
                            continue;
                        }
                        let dy = (yi - yj).abs();
                        let dx = (xi - xj).abs();
                        let (d2_pos, d2_col) = self.distances(i, j);
                        let mut k = 0.0;
                        if dy <= r_app && dx <= r_app && p.w_app > 0.0 {
                            k += p.w_app * (-d2_pos / two_a2 - d2_col / two_b2).exp();
                        }
                        if dy <= r_smooth && dx <= r_smooth && p.w_smooth > 0.0 {
                            k += p.w_smooth * (-d2_pos / two_g2).exp();
                        }
                        for l in 0..labels {
                            out[i * labels + l] += k * q[j * labels + l];
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes;
/// the summation order is fixed, keeping results deterministic.
fn dot(a: &[f32], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| *x as f64 * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] as f64 * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid3 {
        Grid3::from_fn(3, h, w, |_, _, _| rng.random_range(0.0..255.0)).unwrap()
    }

    #[test]
    fn symmetric_with_zero_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let img = random_image(&mut rng, 4, 5);
        let k = PairwiseKernel::new(&img, &PairwiseParams::default(), KernelMode::Exact).unwrap();
        for i in 0..20 {
            assert_eq!(k.eval(i, i), 0.0);
            for j in 0..20 {
                assert_eq!(k.eval(i, j), k.eval(j, i));
            }
        }
    }

    #[test]
    fn filter_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let img = random_image(&mut rng, 5, 4);
        let params = PairwiseParams {
            theta_alpha: 2.0,
            theta_beta: 40.0,
            ..PairwiseParams::default()
        };
        let k = PairwiseKernel::new(&img, &params, KernelMode::Exact).unwrap();
        let q: Vec<f64> = (0..20 * 3).map(|_| rng.random()).collect();
        let mut out = vec![0.0; 60];
        k.filter(&q, 3, &mut out);
        for i in 0..20 {
            for l in 0..3 {
                let want: f64 = (0..20).map(|j| k.eval(i, j) * q[j * 3 + l]).sum();
                // Cached entries are stored as f32.
                assert!((out[i * 3 + l] - want).abs() <= 1e-6 * want.abs() + 1e-12);
            }
        }
    }

    #[test]
    fn windowed_filter_agrees_when_window_covers_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let img = random_image(&mut rng, 6, 6);
        let params = PairwiseParams {
            theta_alpha: 4.0,
            theta_gamma: 2.0,
            ..PairwiseParams::default()
        };
        let exact = PairwiseKernel::new(&img, &params, KernelMode::Exact).unwrap();
        let approx = PairwiseKernel::new(&img, &params, KernelMode::Approximate).unwrap();
        let q: Vec<f64> = (0..36 * 2).map(|_| rng.random()).collect();
        let (mut a, mut b) = (vec![0.0; 72], vec![0.0; 72]);
        exact.filter(&q, 2, &mut a);
        approx.filter(&q, 2, &mut b);
        // Smoothness window (radius 6) covers the image; appearance window (12) too.
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(y.abs()) + 1e-12);
        }
    }

    #[test]
    fn exact_mode_cap_enforced() {
        let img = Grid3::zeros(1, 129, 128).unwrap();
        assert!(PairwiseKernel::new(&img, &PairwiseParams::default(), KernelMode::Exact).is_err());
        assert!(
            PairwiseKernel::new(&img, &PairwiseParams::default(), KernelMode::Approximate).is_ok()
        );
    }

    #[test]
    fn invalid_params_rejected() {
        let img = Grid3::zeros(3, 2, 2).unwrap();
        let bad = PairwiseParams {
            theta_beta: 0.0,
            ..PairwiseParams::default()
        };
        assert!(PairwiseKernel::new(&img, &bad, KernelMode::Exact).is_err());
        let bad = PairwiseParams {
            w_app: -1.0,
            ..PairwiseParams::default()
        };
        assert!(PairwiseKernel::new(&img, &bad, KernelMode::Exact).is_err());
    }
}
