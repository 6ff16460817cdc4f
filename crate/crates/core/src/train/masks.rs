//! Mask generation for training: prior maps smoothed by the dense CRF.

use log::warn;

use crate::cam::{combine_multiclass, compute_cam, fgbg_to_probmaps, CamWeights, CombineParams, ProbMaps};
use crate::crf::{map_labeling, smooth_probs, CrfConfig, PairwiseKernel, RegionPartition};
use crate::error::Result;
use crate::fusion::fuse_foreground;
use crate::loss::{BinaryMask, ClassMasks, TagSet};

use super::synth::SynthScene;

/// Fraction of pixels substituted when a CRF mask comes out empty.
pub const FALLBACK_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MaskConfig {
    pub crf: CrfConfig,
    pub combine: CombineParams,
    /// Adds region (P^n-Potts) terms using the scene's partition.
    pub higher_order: bool,
}

/// Scene inputs consumed by the mask builder.
pub struct MaskInputs<'a> {
    pub image: &'a crate::tensor::Grid3,
    pub conv4: &'a crate::tensor::Grid3,
    pub conv5: &'a crate::tensor::Grid3,
    pub cam_features: &'a crate::tensor::Grid3,
    pub regions: Option<&'a RegionPartition>,
    pub tags: &'a TagSet,
}

impl<'a> MaskInputs<'a> {
    pub fn from_scene(scene: &'a SynthScene) -> Self {
        Self {
            image: &scene.image,
            conv4: &scene.conv4,
            conv5: &scene.conv5,
            cam_features: &scene.cam_features,
            regions: Some(&scene.regions),
            tags: &scene.tags,
        }
    }
}

/// Reusable per-scene state: the pairwise kernel is the expensive part.
pub struct MaskBuilder<'a> {
    inputs: MaskInputs<'a>,
    kernel: PairwiseKernel,
    cfg: MaskConfig,
}

impl<'a> MaskBuilder<'a> {
    pub fn new(inputs: MaskInputs<'a>, cfg: MaskConfig) -> Result<Self> {
        let kernel = PairwiseKernel::new(inputs.image, &cfg.crf.pairwise, cfg.crf.mode)?;
        Ok(Self { inputs, kernel, cfg })
    }

    pub fn set_higher_order(&mut self, on: bool) {
        self.cfg.higher_order = on;
    }

    fn regions(&self) -> Option<&RegionPartition> {
        if self.cfg.higher_order {
            self.inputs.regions
        } else {
            None
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.inputs.image.height(), self.inputs.image.width())
    }

    /// Foreground mask from the fused prior.
    pub fn fgbg(&self) -> Result<BinaryMask> {
        let (h, w) = self.dims();
        let pf = fuse_foreground(self.inputs.conv4, self.inputs.conv5, h, w)?;
        let probs = fgbg_to_probmaps(&pf);
        let q = smooth_probs(&probs, &self.kernel, self.regions(), &self.cfg.crf)?;
        let labels = map_labeling(&q);
        let mut bits: Vec<bool> = labels.labels().iter().map(|&l| l == 1).collect();
        if !bits.contains(&true) {
            warn!("empty foreground mask; using the top-probability pixels of the prior");
            bits = top_fraction(probs.channel(1));
        } else if !bits.contains(&false) {
            warn!("foreground mask covers the image; using the top-probability background pixels");
            let bg = top_fraction(probs.channel(0));
            bits = bg.iter().map(|b| !b).collect();
        }
        BinaryMask::new(h, w, bits)
    }

    /// Probability maps over background plus the present classes, in the
    /// order of `tags.foreground()`.
    pub fn multiclass_probs(&self, weights: &CamWeights) -> Result<ProbMaps> {
        let (h, w) = self.dims();
        let pf = fuse_foreground(self.inputs.conv4, self.inputs.conv5, h, w)?;
        let cams = compute_cam(self.inputs.cam_features, weights)?
            .resized(h, w)?
            .select(&self.inputs.tags.foreground())?;
        combine_multiclass(&pf, &cams, &self.cfg.combine)
    }

    /// One mask per present label, background included.
    pub fn multiclass(&self, weights: &CamWeights) -> Result<ClassMasks> {
        let (h, w) = self.dims();
        let present = self.inputs.tags.present();
        let mut masks = ClassMasks::new();
        if present.len() == 1 {
            masks.insert(0, BinaryMask::full(h, w)?);
            return Ok(masks);
        }
        let probs = self.multiclass_probs(weights)?;
        let q = smooth_probs(&probs, &self.kernel, self.regions(), &self.cfg.crf)?;
        let labels = map_labeling(&q);
        for (slot, &label) in present.iter().enumerate() {
            let mut bits: Vec<bool> = labels.labels().iter().map(|&l| l as usize == slot).collect();
            if !bits.contains(&true) {
                warn!("empty mask for label {label}; using the top-probability pixels of its map");
                bits = top_fraction(probs.channel(slot));
            }
            masks.insert(label, BinaryMask::new(h, w, bits)?);
        }
        Ok(masks)
    }
}

/// The `FALLBACK_FRACTION` highest-valued pixels (at least one); ties go to
/// the lower index.
fn top_fraction(values: &[f64]) -> Vec<bool> {
    let k = ((values.len() as f64 * FALLBACK_FRACTION).ceil() as usize).max(1);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut bits = vec![false; values.len()];
    for &i in &order[..k] {
        bits[i] = true;
    }
    bits
}
