//! Synthetic scenes standing in for photographs and a pretrained network.
//!
//! Each scene places a few flat-colored shapes on a textured background and
//! emulates the activations the pipeline would otherwise take from a deep
//! network: two blurred, noisy foreground stacks at 1/2 and 1/4 resolution and
//! a CAM feature stack whose class units fire on part of each object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cam::CamWeights;
use crate::crf::RegionPartition;
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::loss::TagSet;
use crate::tensor::Grid3;

pub const CONV4_CHANNELS: usize = 6;
pub const CONV5_CHANNELS: usize = 6;
pub const CONV4_SIGMA: f64 = 2.0;
pub const CONV5_SIGMA: f64 = 4.0;
/// Spatial stride of the CAM feature stack.
pub const CAM_STRIDE: usize = 4;
pub const CAM_NOISE_UNITS: usize = 2;
const REGION_BLOCK: usize = 8;
const CONTEXT_MIX: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub h: usize,
    pub w: usize,
    pub max_objects: usize,
    pub classes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            h: 48,
            w: 48,
            max_objects: 3,
            classes: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h < 16 || self.w < 16 {
            return Err(Error::arg(format!(
                "scene must be at least 16x16, got {}x{}",
                self.h, self.w
            )));
        }
        if self.classes == 0 || self.classes > u16::MAX as usize - 1 {
            return Err(Error::arg(format!("class count {} out of range", self.classes)));
        }
        if self.max_objects == 0 || self.max_objects > self.classes {
            return Err(Error::arg(format!(
                "max_objects must lie in 1..={}, got {}",
                self.classes, self.max_objects
            )));
        }
        Ok(())
    }

    pub fn cam_units(&self) -> usize {
        self.classes + CAM_NOISE_UNITS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    /// `3 x H x W`, integer values in 0..=255.
    pub image: Grid3,
    pub gt: LabelMap,
    pub tags: TagSet,
    pub conv4: Grid3,
    pub conv5: Grid3,
    pub cam_features: Grid3,
    pub regions: RegionPartition,
}

impl SynthScene {
    pub fn classes(&self) -> usize {
        self.tags.label_count() - 1
    }

    pub fn dims(&self) -> (usize, usize) {
        self.gt.dims()
    }
}

/// Seed of scene `index` in a dataset generated from `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fixed CAM classifier: unit `c` belongs to class `c`, the trailing units are
/// noise channels with a small positive weight.
pub fn cam_weights(classes: usize) -> CamWeights {
    let units = classes + CAM_NOISE_UNITS;
    let mut w = vec![0.0; classes * units];
    for c in 0..classes {
        for k in 0..units {
            w[c * units + k] = match k {
                k if k == c => 1.0,
                k if k < classes => -0.1,
                _ => 0.05,
            };
        }
    }
    CamWeights::new(classes, units, w).expect("finite weights with positive dims")
}

/// Display color of a foreground class (1-based).
pub fn class_color(class: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 6] = [
        [205.0, 45.0, 40.0],
        [45.0, 175.0, 60.0],
        [50.0, 70.0, 215.0],
        [215.0, 195.0, 40.0],
        [190.0, 60.0, 200.0],
        [40.0, 195.0, 200.0],
    ];
    if class >= 1 && class <= PALETTE.len() {
        return PALETTE[class - 1];
    }
    let hue = (class as f64 * 0.618_033_988_75).fract() * 6.0;
    let f = hue.fract();
    let (hi, lo) = (210.0, 45.0);
    let mid_up = lo + (hi - lo) * f;
    let mid_down = hi - (hi - lo) * f;
    match hue as usize {
        0 => [hi, mid_up, lo],
        1 => [mid_down, hi, lo],
        2 => [lo, hi, mid_up],
        3 => [lo, mid_down, hi],
        4 => [mid_up, lo, hi],
        _ => [hi, lo, mid_down],
    }
}

/// Background color that co-occurs with a foreground class (1-based): a
/// washed-out version of the class color.
pub fn context_color(class: usize) -> [f64; 3] {
    class_color(class).map(|v| CONTEXT_MIX * v + (1.0 - CONTEXT_MIX) * 128.0)
}

#[derive(Debug, Clone, Copy)]
struct Object {
    class: usize,
    cy: f64,
    cx: f64,
    r: f64,
}

impl Object {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 + 0.5 - self.cy;
        let dx = x as f64 + 0.5 - self.cx;
        let r = self.r;
        match (self.class - 1) % 4 {
            0 => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
            1 => dx * dx + dy * dy <= r * r,
            2 => dy <= 0.8 * r && dy >= -r && dx.abs() <= (dy + r) * 0.6,
            _ => dx.abs() + dy.abs() <= 1.1 * r,
        }
    }

    /// Centre of the part the class unit responds to.
    fn part_center(&self) -> (f64, f64) {
        let s = 0.35 * self.r;
        match (self.class - 1) % 4 {
            0 => (self.cy - s, self.cx - s),
            1 => (self.cy - s, self.cx + s),
            2 => (self.cy + s, self.cx),
            _ => (self.cy, self.cx - s),
        }
    }
}

pub fn synth_scene(seed: u64, cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let (h, w) = (cfg.h, cfg.w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let objects = place_objects(&mut rng, cfg);
    let mut gt = vec![0u16; h * w];
    for (i, g) in gt.iter_mut().enumerate() {
        let (y, x) = (i / w, i % w);
        if let Some(o) = objects.iter().find(|o| o.contains(y, x)) {
            *g = o.class as u16;
        }
    }

    let base: f64 = rng.random_range(95.0..150.0);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-12.0..12.0));
    let period: f64 = rng.random_range(5.0..11.0);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    // The first object's class also sets the color of a background band,
    // the way boats come with water: a cue tags alone cannot disentangle.
    let band_top = (h as f64 * rng.random_range(0.45..0.7)) as usize;
    let band = context_color(objects[0].class);
    let mut image = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        let (y, x) = (i / w, i % w);
        let label = gt[i] as usize;
        let stripe = 14.0 * ((x as f64 + 0.6 * y as f64) / period + phase).sin();
        for c in 0..3 {
            let v = if label != 0 {
                class_color(label)[c] + 9.0 * unit.sample(&mut rng)
            } else if y >= band_top {
                band[c] + 0.5 * stripe + 8.0 * unit.sample(&mut rng)
            } else {
                base + tint[c] + stripe + 10.0 * unit.sample(&mut rng)
            };
            image[c * h * w + i] = v.round().clamp(0.0, 255.0);
        }
    }
    let image = Grid3::new(3, h, w, image)?;

    let fg: Vec<f64> = gt.iter().map(|&g| if g > 0 { 1.0 } else { 0.0 }).collect();
    let conv4 = activation_stack(&mut rng, &fg, h, w, 2, CONV4_CHANNELS, CONV4_SIGMA)?;
    let conv5 = activation_stack(&mut rng, &fg, h, w, 4, CONV5_CHANNELS, CONV5_SIGMA)?;
    let cam_features = cam_stack(&mut rng, &objects, cfg)?;
    let regions = color_regions(&image)?;

    let present: Vec<usize> = objects.iter().map(|o| o.class).collect();
    Ok(SynthScene {
        image,
        gt: LabelMap::new(h, w, gt)?,
        tags: TagSet::new(cfg.classes + 1, &present)?,
        conv4,
        conv5,
        cam_features,
        regions,
    })
}

fn place_objects(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<Object> {
    let (h, w) = (cfg.h as f64, cfg.w as f64);
    let side = h.min(w);
    let count = rng.random_range(1..=cfg.max_objects);
    let mut classes: Vec<usize> = (1..=cfg.classes).collect();
    for i in 0..count {
        let j = rng.random_range(i..classes.len());
        classes.swap(i, j);
    }
    let mut placed: Vec<Object> = Vec::with_capacity(count);
    for &class in &classes[..count] {
        for _ in 0..200 {
            let r = rng.random_range(side / 8.0..side / 4.5);
            let margin = r + 1.0;
            let o = Object {
                class,
                cy: rng.random_range(margin..h - margin),
                cx: rng.random_range(margin..w - margin),
                r,
            };
            let clear = placed.iter().all(|p| {
                let d = ((p.cy - o.cy).powi(2) + (p.cx - o.cx).powi(2)).sqrt();
                d > 1.2 * (p.r + o.r) + 2.0
            });
            if clear {
                placed.push(o);
                break;
            }
        }
    }
    placed
}

/// Block-averages `src` by `stride`, then applies a separable Gaussian blur.
fn downsample_blur(src: &[f64], h: usize, w: usize, stride: usize, sigma: f64) -> (usize, usize, Vec<f64>) {
    let (dh, dw) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut acc = vec![0.0; dh * dw];
    let mut cnt = vec![0.0; dh * dw];
    for y in 0..h {
        for x in 0..w {
            let j = (y / stride) * dw + x / stride;
            acc[j] += src[y * w + x];
            cnt[j] += 1.0;
        }
    }
    let small: Vec<f64> = acc.iter().zip(&cnt).map(|(a, c)| a / c).collect();
    (dh, dw, gaussian_blur(&small, dh, dw, sigma))
}

pub(crate) fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let blur_axis = |data: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut z) = (0.0, 0.0);
                for (t, &k) in taps.iter().enumerate() {
                    let d = t as isize - radius;
                    let (yy, xx) = if along_x {
                        (y as isize, x as isize + d)
                    } else {
                        (y as isize + d, x as isize)
                    };
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        s += k * data[yy as usize * w + xx as usize];
                        z += k;
                    }
                }
                out[y * w + x] = s / z;
            }
        }
        out
    };
    blur_axis(&blur_axis(src, true), false)
}

fn activation_stack(
    rng: &mut ChaCha8Rng,
    fg: &[f64],
    h: usize,
    w: usize,
    stride: usize,
    channels: usize,
    sigma: f64,
) -> Result<Grid3> {
    let (dh, dw, blurred) = downsample_blur(fg, h, w, stride, sigma);
    let noise = Normal::new(0.0, 0.08).expect("valid sigma");
    let mut data = Vec::with_capacity(channels * dh * dw);
    for _ in 0..channels {
        let gain: f64 = rng.random_range(0.6..1.4);
        let offset: f64 = rng.random_range(0.0..0.2);
        for &b in &blurred {
            data.push((gain * b + offset + noise.sample(rng)).max(0.0));
        }
    }
    Grid3::new(channels, dh, dw, data)
}

fn cam_stack(rng: &mut ChaCha8Rng, objects: &[Object], cfg: &SynthConfig) -> Result<Grid3> {
    let (dh, dw) = (cfg.h.div_ceil(CAM_STRIDE), cfg.w.div_ceil(CAM_STRIDE));
    let units = cfg.cam_units();
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let s = CAM_STRIDE as f64;
    let mut data = vec![0.0; units * dh * dw];
    for o in objects {
        let (py, px) = o.part_center();
        let sigma = 0.5 * o.r / s;
        let plane = &mut data[(o.class - 1) * dh * dw..o.class * dh * dw];
        for y in 0..dh {
            for x in 0..dw {
                let dy = (y as f64 + 0.5) - py / s;
                let dx = (x as f64 + 0.5) - px / s;
                plane[y * dw + x] += (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    for v in data.iter_mut() {
        *v = (*v + noise.sample(rng)).max(0.0);
    }
    Grid3::new(units, dh, dw, data)
}

/// Stand-in for a boundary detector's segments: fixed blocks split by a
/// coarse color quantization.
pub fn color_regions(image: &Grid3) -> Result<RegionPartition> {
    let (c, h, w) = image.dims();
    if c != 3 {
        return Err(Error::dim(format!("expected a 3-channel image, got {c}")));
    }
    let bw = w.div_ceil(REGION_BLOCK);
    let raw: Vec<u32> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let bucket = (0..3).fold(0u32, |acc, ch| {
                acc * 4 + (image.channel(ch)[i].clamp(0.0, 255.0) as u32 / 64)
            });
            ((y / REGION_BLOCK) * bw + x / REGION_BLOCK) as u32 * 64 + bucket
        })
        .collect();
    RegionPartition::from_raw_ids(h, w, &raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_scene(7, &cfg).unwrap(), synth_scene(7, &cfg).unwrap());
        assert_ne!(synth_scene(7, &cfg).unwrap().image, synth_scene(8, &cfg).unwrap().image);
    }

    #[test]
    fn single_object_tags() {
        let cfg = SynthConfig {
            max_objects: 1,
            ..SynthConfig::default()
        };
        for seed in 0..20 {
            let s = synth_scene(seed, &cfg).unwrap();
            assert_eq!(s.tags.present().len(), 2);
        }
    }

    #[test]
    fn tags_match_ground_truth() {
        let cfg = SynthConfig::default();
        for seed in 0..30 {
            let s = synth_scene(seed, &cfg).unwrap();
            let mut seen: Vec<usize> = s.gt.labels().iter().map(|&l| l as usize).collect();
            seen.sort_unstable();
            seen.dedup();
            if seen[0] != 0 {
                seen.insert(0, 0);
            }
            assert_eq!(seen, s.tags.present(), "seed {seed}");
        }
    }

    #[test]
    fn image_is_integer_valued() {
        let s = synth_scene(3, &SynthConfig::default()).unwrap();
        assert!(s.image.values().iter().all(|v| v.fract() == 0.0 && (0.0..=255.0).contains(v)));
    }

    #[test]
    fn config_validation() {
        let bad = [
            SynthConfig { h: 15, ..SynthConfig::default() },
            SynthConfig { max_objects: 0, ..SynthConfig::default() },
            SynthConfig { max_objects: 5, classes: 4, ..SynthConfig::default() },
        ];
        for cfg in bad {
            assert_eq!(synth_scene(0, &cfg).unwrap_err().exit_code(), 2);
        }
    }

    #[test]
    fn cam_weights_layout() {
        let wts = cam_weights(3);
        assert_eq!((wts.classes(), wts.units()), (3, 5));
        assert_eq!(wts.row(1), &[-0.1, 1.0, -0.1, 0.05, 0.05]);
    }

    #[test]
    fn blur_preserves_constants() {
        let b = gaussian_blur(&[2.5; 30], 5, 6, 1.7);
        assert!(b.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }
}
