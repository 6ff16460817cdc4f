//! WebAssembly bindings for the browser demo in `www/`.
//!
//! A `Demo` holds one synthetic scene and its pairwise kernel. The page
//! asks it for RGBA buffers: the image, the ground truth, the prior maps at
//! a chosen mixing weight and the CRF labeling of those maps.

use wasm_bindgen::prelude::*;

use priorseg::cam::{combine_multiclass, compute_cam, fgbg_to_probmaps, CamWeights, CombineParams, ProbMaps};
use priorseg::crf::{map_labeling, smooth_probs, CrfConfig, PairwiseKernel};
use priorseg::fusion::fuse_foreground;
use priorseg::labels::LabelMap;
use priorseg::train::synth::class_color;
use priorseg::train::{cam_weights, synth_scene, SynthConfig, SynthScene};

const SIDE: usize = 48;

fn js_err(e: priorseg::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    scene: SynthScene,
    weights: CamWeights,
    kernel: PairwiseKernel,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, classes: usize) -> Result<Demo, JsError> {
        Demo::build(seed, classes).map_err(js_err)
    }

    pub fn width(&self) -> usize {
        self.scene.image.width()
    }

    pub fn height(&self) -> usize {
        self.scene.image.height()
    }

    /// Present foreground classes, comma separated.
    pub fn tags(&self) -> String {
        let fg: Vec<String> = self.scene.tags.foreground().iter().map(|k| k.to_string()).collect();
        fg.join(",")
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        let img = &self.scene.image;
        let n = img.pixels();
        let mut out = Vec::with_capacity(4 * n);
        for i in 0..n {
            for c in 0..3 {
                out.push(img.channel(c)[i].round().clamp(0.0, 255.0) as u8);
            }
            out.push(255);
        }
        out
    }

    pub fn truth_rgba(&self) -> Vec<u8> {
        label_rgba(&self.scene.gt, None)
    }

    /// Most probable label of the prior maps, shaded by its probability.
    /// `alpha` < 0 shows the two-label foreground prior instead.
    pub fn prior_rgba(&self, alpha: f64) -> Result<Vec<u8>, JsError> {
        let (probs, slots) = self.probs(alpha).map_err(js_err)?;
        let labels = relabel(&map_labeling_of(&probs), &slots);
        let n = probs.pixels();
        let conf: Vec<f64> = (0..n)
            .map(|i| (0..probs.labels()).map(|l| probs.channel(l)[i]).fold(0.0, f64::max))
            .collect();
        Ok(label_rgba(&labels, Some(&conf)))
    }

    /// CRF labeling of the same maps.
    pub fn crf_rgba(&self, alpha: f64, iters: usize, higher_order: bool) -> Result<Vec<u8>, JsError> {
        self.crf_labels(alpha, iters, higher_order)
            .map(|l| label_rgba(&l, None))
            .map_err(js_err)
    }

    /// Fraction of pixels where the CRF labeling matches ground truth.
    pub fn crf_accuracy(&self, alpha: f64, iters: usize, higher_order: bool) -> Result<f64, JsError> {
        let labels = self.crf_labels(alpha, iters, higher_order).map_err(js_err)?;
        Ok(pixel_accuracy(&labels, &self.scene.gt))
    }
}

impl Demo {
    fn build(seed: u64, classes: usize) -> priorseg::Result<Self> {
        let cfg = SynthConfig {
            h: SIDE,
            w: SIDE,
            max_objects: 3,
            classes,
        };
        let scene = synth_scene(seed, &cfg)?;
        let crf = CrfConfig::default();
        let kernel = PairwiseKernel::new(&scene.image, &crf.pairwise, crf.mode)?;
        Ok(Self {
            weights: cam_weights(classes),
            scene,
            kernel,
        })
    }

    /// Probability maps plus the label carried by each channel.
    fn probs(&self, alpha: f64) -> priorseg::Result<(ProbMaps, Vec<usize>)> {
        let (h, w) = self.scene.image.spatial();
        let pf = fuse_foreground(&self.scene.conv4, &self.scene.conv5, h, w)?;
        if alpha < 0.0 {
            return Ok((fgbg_to_probmaps(&pf), vec![0, usize::MAX]));
        }
        let fg = self.scene.tags.foreground();
        let cams = compute_cam(&self.scene.cam_features, &self.weights)?
            .resized(h, w)?
            .select(&fg)?;
        let params = CombineParams {
            alpha,
            ..CombineParams::default()
        };
        Ok((combine_multiclass(&pf, &cams, &params)?, self.scene.tags.present()))
    }

    fn crf_labels(&self, alpha: f64, iters: usize, higher_order: bool) -> priorseg::Result<LabelMap> {
        let (probs, slots) = self.probs(alpha)?;
        let cfg = CrfConfig {
            iters,
            ..CrfConfig::default()
        };
        let regions = higher_order.then_some(&self.scene.regions);
        let q = smooth_probs(&probs, &self.kernel, regions, &cfg)?;
        Ok(relabel(&map_labeling(&q), &slots))
    }
}

fn map_labeling_of(p: &ProbMaps) -> LabelMap {
    let (h, w) = p.spatial();
    let labels = (0..h * w)
        .map(|i| {
            (0..p.labels())
                .fold(0, |best, l| if p.channel(l)[i] > p.channel(best)[i] { l } else { best })
                as u16
        })
        .collect();
    LabelMap::new(h, w, labels).expect("dims come from the maps")
}

/// Maps channel indices to labels. `usize::MAX` marks a generic foreground
/// channel, drawn in white.
fn relabel(slots_map: &LabelMap, slots: &[usize]) -> LabelMap {
    let labels = slots_map
        .labels()
        .iter()
        .map(|&s| match slots[s as usize] {
            usize::MAX => u16::MAX,
            l => l as u16,
        })
        .collect();
    LabelMap::new(slots_map.height(), slots_map.width(), labels).expect("same dims")
}

fn label_rgba(labels: &LabelMap, shade: Option<&[f64]>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * labels.len());
    for (i, &l) in labels.labels().iter().enumerate() {
        let rgb = match l {
            0 => [20.0, 20.0, 20.0],
            u16::MAX => [240.0, 240.0, 240.0],
            k => class_color(k as usize),
        };
        let s = shade.map_or(1.0, |s| s[i]);
        for v in rgb {
            out.push((v * s).round().clamp(0.0, 255.0) as u8);
        }
        out.push(255);
    }
    out
}

fn pixel_accuracy(pred: &LabelMap, gt: &LabelMap) -> f64 {
    let hits = pred.labels().iter().zip(gt.labels()).filter(|(a, b)| a == b).count();
    hits as f64 / gt.len() as f64
}
