//! Per-pixel features and the linear scoring head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::loss::ScoreField;
use crate::tensor::{channel_mean_pool, minmax_normalize, resize_bilinear, Grid2, Grid3};

use super::synth::{gaussian_blur, SynthScene};

/// RGB, pooled conv4, pooled conv5 and blurred RGB.
pub const FEATURES: usize = 8;
const CONTEXT_SIGMA: f64 = 1.5;

/// Builds the `FEATURES x H x W` input of the head.
pub fn scene_features(scene: &SynthScene) -> Result<Grid3> {
    pixel_features(&scene.image, &scene.conv4, &scene.conv5)
}

pub fn pixel_features(image: &Grid3, conv4: &Grid3, conv5: &Grid3) -> Result<Grid3> {
    let (c, h, w) = image.dims();
    if c != 3 {
        return Err(Error::dim(format!("expected a 3-channel image, got {c}")));
    }
    let mut maps: Vec<Grid2> = Vec::with_capacity(FEATURES);
    for ch in 0..3 {
        maps.push(image.channel_grid(ch).map(|v| v / 255.0)?);
    }
    for stack in [conv4, conv5] {
        let pooled = resize_bilinear(&channel_mean_pool(stack), h, w)?;
        maps.push(minmax_normalize(&pooled));
    }
    for ch in 0..3 {
        let blurred = gaussian_blur(image.channel(ch), h, w, CONTEXT_SIGMA);
        maps.push(Grid2::new(h, w, blurred.into_iter().map(|v| v / 255.0).collect())?);
    }
    Grid3::from_channels(&maps)
}

/// Linear head: `s_k = w_k . f + b_k` at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    labels: usize,
    features: usize,
    /// Row `k` holds the `features` weights of label `k` followed by its bias.
    params: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(labels: usize, features: usize) -> Result<Self> {
        Self::from_grid(&Grid2::zeros(labels, features + 1)?)
    }

    /// Small Gaussian weights, zero biases.
    pub fn init(labels: usize, features: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).expect("valid sigma");
        let g = Grid2::from_fn(labels, features + 1, |_, j| {
            if j == features {
                0.0
            } else {
                normal.sample(&mut rng)
            }
        })?;
        Self::from_grid(&g)
    }

    /// Reads the `labels x (features + 1)` layout written by [`Self::to_grid`].
    pub fn from_grid(g: &Grid2) -> Result<Self> {
        let (labels, cols) = g.dims();
        if labels < 2 || cols < 2 {
            return Err(Error::dim(format!(
                "head needs at least 2 labels and 1 feature, got {labels}x{cols}"
            )));
        }
        Ok(Self {
            labels,
            features: cols - 1,
            params: g.values().to_vec(),
        })
    }

    pub fn to_grid(&self) -> Grid2 {
        Grid2::from_parts(self.labels, self.features + 1, self.params.clone())
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn weight(&self, k: usize, f: usize) -> f64 {
        self.params[k * (self.features + 1) + f]
    }

    pub fn bias(&self, k: usize) -> f64 {
        self.params[k * (self.features + 1) + self.features]
    }

    pub fn values(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn norm(&self) -> f64 {
        self.params.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn predict(head: &HeadParams, features: &Grid3) -> Result<ScoreField> {
    let (f, h, w) = features.dims();
    if f != head.features {
        return Err(Error::dim(format!(
            "head expects {} features, got {f}",
            head.features
        )));
    }
    let n = h * w;
    let fv = features.values();
    let mut out = vec![0.0; head.labels * n];
    for k in 0..head.labels {
        let dst = &mut out[k * n..(k + 1) * n];
        dst.fill(head.bias(k));
        for j in 0..f {
            let wkj = head.weight(k, j);
            for (d, x) in dst.iter_mut().zip(&fv[j * n..(j + 1) * n]) {
                *d += wkj * x;
            }
        }
    }
    Ok(ScoreField::new(Grid3::new(head.labels, h, w, out)?))
}

/// Gradient of a loss w.r.t. the head given `dL/ds`.
pub fn head_gradient(features: &Grid3, grad_scores: &Grid3) -> Vec<f64> {
    let (f, h, w) = features.dims();
    let n = h * w;
    let labels = grad_scores.channels();
    let fv = features.values();
    let gv = grad_scores.values();
    let mut out = vec![0.0; labels * (f + 1)];
    for k in 0..labels {
        let g = &gv[k * n..(k + 1) * n];
        let row = &mut out[k * (f + 1)..(k + 1) * (f + 1)];
        for j in 0..f {
            row[j] = g.iter().zip(&fv[j * n..(j + 1) * n]).map(|(a, b)| a * b).sum();
        }
        row[f] = g.iter().sum();
    }
    out
}

/// Arg-max labeling of the head's scores.
pub fn predict_labels(head: &HeadParams, features: &Grid3) -> Result<LabelMap> {
    let s = predict(head, features)?;
    Ok(crate::crf::argmax_labels(s.grid()))
}
