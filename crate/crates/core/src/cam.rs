//! Class activation maps and their combination with the foreground prior.

use crate::error::{Error, Result};
use crate::fusion::ForegroundMap;
use crate::tensor::{minmax_normalize, resize_bilinear, Grid2, Grid3};

/// Floor applied to every raw class score before per-pixel normalization.
pub const PROB_FLOOR: f64 = 1e-12;

/// Fraction of a CAM's maximum above which a pixel enters the binary mask.
pub const DEFAULT_RHO: f64 = 0.2;

/// Weight of the truncated foreground prior against the CAM.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Classifier weights `C x K`: row `c` weighs feature unit `k` for class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CamWeights {
    classes: usize,
    units: usize,
    w: Vec<f64>,
}

impl CamWeights {
    pub fn new(classes: usize, units: usize, w: Vec<f64>) -> Result<Self> {
        // Reuse the grid checks: positive dims, matching length, finite.
        let g = Grid2::new(classes, units, w)?;
        Ok(Self {
            classes,
            units,
            w: g.into_values(),
        })
    }

    pub fn from_grid(g: &Grid2) -> Self {
        Self {
            classes: g.height(),
            units: g.width(),
            w: g.values().to_vec(),
        }
    }

    pub fn to_grid(&self) -> Grid2 {
        Grid2::from_parts(self.classes, self.units, self.w.clone())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.w[c * self.units..(c + 1) * self.units]
    }

    /// Image-level class scores `S_c = sum_k w_k^c F^k`, with `F^k` the
    /// spatial sum of feature unit `k`.
    pub fn class_scores(&self, features: &Grid3) -> Result<Vec<f64>> {
        self.check_units(features)?;
        let pooled: Vec<f64> = (0..self.units)
            .map(|k| features.channel(k).iter().sum())
            .collect();
        Ok((0..self.classes)
            .map(|c| self.row(c).iter().zip(&pooled).map(|(w, f)| w * f).sum())
            .collect())
    }

    fn check_units(&self, features: &Grid3) -> Result<()> {
        if features.channels() != self.units {
            return Err(Error::dim(format!(
                "feature stack has {} units, weights expect {}",
                features.channels(),
                self.units
            )));
        }
        Ok(())
    }
}

/// One activation map per foreground class (class `c` is channel `c - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct CamStack {
    maps: Grid3,
}

impl CamStack {
    pub fn new(maps: Grid3) -> Self {
        Self { maps }
    }

    pub fn maps(&self) -> &Grid3 {
        &self.maps
    }

    pub fn into_maps(self) -> Grid3 {
        self.maps
    }

    pub fn class_count(&self) -> usize {
        self.maps.channels()
    }

    /// Map of foreground class `c` (1-based, matching label indices).
    pub fn class_map(&self, c: usize) -> Grid2 {
        self.maps.channel_grid(c - 1)
    }

    pub fn resized(&self, h: usize, w: usize) -> Result<Self> {
        let maps: Vec<Grid2> = (0..self.class_count())
            .map(|c| resize_bilinear(&self.maps.channel_grid(c), h, w))
            .collect::<Result<_>>()?;
        Ok(Self::new(Grid3::from_channels(&maps)?))
    }

    /// Keeps only the listed foreground classes (1-based), in the given order.
    pub fn select(&self, classes: &[usize]) -> Result<Self> {
        let maps: Vec<Grid2> = classes
            .iter()
            .map(|&c| {
                if c == 0 || c > self.class_count() {
                    Err(Error::arg(format!("class {c} not in CAM stack")))
                } else {
                    Ok(self.class_map(c))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self::new(Grid3::from_channels(&maps)?))
    }
}

/// Per-pixel categorical distributions over `C + 1` labels; channel 0 is
/// background.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMaps(Grid3);

impl ProbMaps {
    pub const SIMPLEX_TOL: f64 = 1e-9;

    pub fn new(p: Grid3) -> Result<Self> {
        let (l, h, w) = p.dims();
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for k in 0..l {
                    let v = p.get(k, y, x);
                    if v < 0.0 {
                        return Err(Error::arg(format!("negative probability {v} at ({y},{x})")));
                    }
                    s += v;
                }
                if (s - 1.0).abs() > Self::SIMPLEX_TOL {
                    return Err(Error::arg(format!(
                        "probabilities at ({y},{x}) sum to {s}, not 1"
                    )));
                }
            }
        }
        Ok(Self(p))
    }

    /// Floors every entry at [`PROB_FLOOR`] and rescales each pixel to sum to one.
    pub fn normalize(raw: &Grid3) -> Self {
        let (l, h, w) = raw.dims();
        let n = h * w;
        let src = raw.values();
        let mut out = vec![0.0; l * n];
        for i in 0..n {
            let s: f64 = (0..l).map(|k| src[k * n + i].max(PROB_FLOOR)).sum();
            for k in 0..l {
                out[k * n + i] = src[k * n + i].max(PROB_FLOOR) / s;
            }
        }
        Self(Grid3::from_parts(l, h, w, out))
    }

    pub fn grid(&self) -> &Grid3 {
        &self.0
    }

    pub fn into_grid(self) -> Grid3 {
        self.0
    }

    pub fn labels(&self) -> usize {
        self.0.channels()
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.0.spatial()
    }

    pub fn pixels(&self) -> usize {
        self.0.pixels()
    }

    pub fn channel(&self, l: usize) -> &[f64] {
        self.0.channel(l)
    }
}

/// Class activation maps `M_c = sum_k w_k^c f_k`, each rescaled onto `[0, 1]`.
pub fn compute_cam(features: &Grid3, weights: &CamWeights) -> Result<CamStack> {
    let raw = compute_cam_raw(features, weights)?;
    let maps: Vec<Grid2> = (0..raw.class_count())
        .map(|c| minmax_normalize(&raw.maps.channel_grid(c)))
        .collect();
    Ok(CamStack::new(Grid3::from_channels(&maps)?))
}

/// Unnormalized class activation maps.
pub fn compute_cam_raw(features: &Grid3, weights: &CamWeights) -> Result<CamStack> {
    weights.check_units(features)?;
    let (k_units, h, w) = features.dims();
    let n = h * w;
    let mut out = vec![0.0; weights.classes() * n];
    for c in 0..weights.classes() {
        let dst = &mut out[c * n..(c + 1) * n];
        for (k, &wk) in weights.row(c).iter().enumerate().take(k_units) {
            if wk == 0.0 {
                continue;
            }
            for (d, f) in dst.iter_mut().zip(features.channel(k)) {
                *d += wk * f;
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("class activation map overflowed".into()));
    }
    Ok(CamStack::new(Grid3::from_parts(weights.classes(), h, w, out)))
}

/// Binary mask of the pixels strictly above `rho * max(m)`; all zeros when the
/// maximum is not positive.
pub fn binarize_cam(m: &Grid2, rho: f64) -> Result<Grid2> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::arg(format!("rho must lie in (0, 1), got {rho}")));
    }
    let max = m.max();
    if max <= 0.0 {
        return Ok(Grid2::from_parts(m.height(), m.width(), vec![0.0; m.len()]));
    }
    let t = rho * max;
    m.map(|v| if v > t { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombineParams {
    pub alpha: f64,
    pub rho: f64,
}

impl Default for CombineParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            rho: DEFAULT_RHO,
        }
    }
}

/// Unnormalized per-class scores `(P_0, P_1, ..., P_C)` before the per-pixel
/// simplex projection.
pub fn multiclass_scores(
    pf: &ForegroundMap,
    cams: &CamStack,
    params: &CombineParams,
) -> Result<Grid3> {
    let alpha = params.alpha;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::arg(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if pf.dims() != cams.maps().spatial() {
        return Err(Error::dim(format!(
            "foreground map {:?} and CAMs {:?} differ",
            pf.dims(),
            cams.maps().spatial()
        )));
    }
    let c = cams.class_count();
    let (h, w) = pf.dims();
    let n = h * w;
    let pfv = pf.grid().values();
    let mut out = vec![0.0; (c + 1) * n];

    let mut cam_sum = vec![0.0; n];
    for k in 0..c {
        let m = cams.maps().channel_grid(k);
        let b = binarize_cam(&m, params.rho)?;
        let dst = &mut out[(k + 1) * n..(k + 2) * n];
        for i in 0..n {
            let q = pfv[i] * b.values()[i];
            dst[i] = alpha * q + (1.0 - alpha) * m.values()[i];
            cam_sum[i] += m.values()[i];
        }
    }
    for i in 0..n {
        let m0 = (1.0 - cam_sum[i] / c as f64).clamp(0.0, 1.0);
        out[i] = alpha * (1.0 - pfv[i]) + (1.0 - alpha) * m0;
    }
    Ok(Grid3::from_parts(c + 1, h, w, out))
}

/// Multi-class probability maps from the foreground prior and the CAMs.
pub fn combine_multiclass(
    pf: &ForegroundMap,
    cams: &CamStack,
    params: &CombineParams,
) -> Result<ProbMaps> {
    Ok(ProbMaps::normalize(&multiclass_scores(pf, cams, params)?))
}

/// Two-label maps: background `1 - p_f`, foreground `p_f`.
pub fn fgbg_to_probmaps(pf: &ForegroundMap) -> ProbMaps {
    let (h, w) = pf.dims();
    let fg = pf.grid().values();
    let mut data: Vec<f64> = fg.iter().map(|p| 1.0 - p).collect();
    data.extend_from_slice(fg);
    ProbMaps(Grid3::from_parts(2, h, w, data))
}
