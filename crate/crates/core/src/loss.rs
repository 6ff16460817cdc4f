//! Tag-supervised losses over per-pixel class scores.
//!
//! Scores are turned into per-pixel probabilities by a softmax, per-class
//! image (or mask) probabilities are formed by log-sum-exp pooling, and the
//! loss rewards present classes and penalizes absent ones. Each loss comes
//! with an analytic gradient with respect to the raw scores.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Grid3;

/// Pooling sharpness: between the mean (r -> 0) and the max (r -> inf).
pub const DEFAULT_LSE_R: f64 = 5.0;

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Raw scores `s[k][y][x]` over `C + 1` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField(Grid3);

impl ScoreField {
    pub fn new(s: Grid3) -> Self {
        Self(s)
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

    pub fn pixels(&self) -> usize {
        self.0.pixels()
    }
}

/// Per-pixel softmax of a [`ScoreField`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxField(Grid3);

impl SoftmaxField {
    pub fn grid(&self) -> &Grid3 {
        &self.0
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        self.0.channel(k)
    }
}

pub fn softmax_scores(s: &ScoreField) -> SoftmaxField {
    let (l, h, w) = s.grid().dims();
    let n = h * w;
    let v = s.grid().values();
    let mut out = vec![0.0; l * n];
    for i in 0..n {
        let max = (0..l).map(|k| v[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in 0..l {
            let e = (v[k * n + i] - max).exp();
            out[k * n + i] = e;
            z += e;
        }
        for k in 0..l {
            out[k * n + i] /= z;
        }
    }
    SoftmaxField(Grid3::from_parts(l, h, w, out))
}

/// Present and absent labels of one image; background (0) is always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    present: Vec<bool>,
}

impl TagSet {
    pub fn new(label_count: usize, present: &[usize]) -> Result<Self> {
        if label_count < 2 {
            return Err(Error::arg(format!(
                "need background plus at least one class, got {label_count} labels"
            )));
        }
        let mut flags = vec![false; label_count];
        flags[0] = true;
        for &k in present {
            if k >= label_count {
                return Err(Error::arg(format!("tag {k} out of range for {label_count} labels")));
            }
            flags[k] = true;
        }
        Ok(Self { present: flags })
    }

    pub fn label_count(&self) -> usize {
        self.present.len()
    }

    pub fn is_present(&self, k: usize) -> bool {
        self.present[k]
    }

    pub fn present(&self) -> Vec<usize> {
        (0..self.present.len()).filter(|&k| self.present[k]).collect()
    }

    pub fn absent(&self) -> Vec<usize> {
        (0..self.present.len()).filter(|&k| !self.present[k]).collect()
    }

    /// Present foreground classes (excluding background).
    pub fn foreground(&self) -> Vec<usize> {
        (1..self.present.len()).filter(|&k| self.present[k]).collect()
    }
}

/// Pixel mask over an `H x W` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, bits: Vec<bool>) -> Result<Self> {
        if h == 0 || w == 0 || bits.len() != h * w {
            return Err(Error::dim(format!("mask {h}x{w} has {} entries", bits.len())));
        }
        Ok(Self { h, w, bits })
    }

    pub fn full(h: usize, w: usize) -> Result<Self> {
        Self::new(h, w, vec![true; h * w])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            h: self.h,
            w: self.w,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }
}

/// One mask per present label. Background defaults to the complement of the
/// union of the foreground masks when not given explicitly.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassMasks {
    masks: BTreeMap<usize, BinaryMask>,
}

impl ClassMasks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: usize, mask: BinaryMask) {
        self.masks.insert(label, mask);
    }

    pub fn get(&self, label: usize) -> Option<&BinaryMask> {
        self.masks.get(&label)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &BinaryMask)> {
        self.masks.iter().map(|(k, m)| (*k, m))
    }

    /// Mask for `label`, deriving the background one if absent.
    fn resolve(&self, label: usize, h: usize, w: usize) -> Result<BinaryMask> {
        if let Some(m) = self.masks.get(&label) {
            return Ok(m.clone());
        }
        if label != 0 {
            return Err(Error::EmptyMask(format!("no mask for present class {label}")));
        }
        let mut bits = vec![true; h * w];
        for (k, m) in &self.masks {
            if *k == 0 {
                continue;
            }
            for (b, &f) in bits.iter_mut().zip(m.bits()) {
                *b &= !f;
            }
        }
        BinaryMask::new(h, w, bits)
    }
}

/// Which weak loss to evaluate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LossVariant {
    /// Image tags only.
    Weak,
    /// Tags plus a foreground mask.
    FgBg(BinaryMask),
    /// Tags plus one mask per present class.
    MultiClass(ClassMasks),
}

impl LossVariant {
    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::Weak => "weak",
            LossVariant::FgBg(_) => "fgbg",
            LossVariant::MultiClass(_) => "multiclass",
        }
    }
}

/// `(1/r) log((1/n) sum_i exp(r v_i))`.
pub fn lse_pool(values: &[f64], r: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::arg("cannot pool an empty list"));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::arg(format!("pooling sharpness must be positive, got {r}")));
    }
    Ok(lse_with_weights(values.iter().copied(), r, None))
}

/// Stable LSE; optionally fills the softmax weights `d LSE / d v_i`.
fn lse_with_weights(
    values: impl Iterator<Item = f64> + Clone,
    r: f64,
    weights: Option<&mut Vec<f64>>,
) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut n = 0usize;
    let mut z = 0.0;
    let mut terms = Vec::new();
    for v in values {
        let e = (r * (v - max)).exp();
        z += e;
        n += 1;
        if weights.is_some() {
            terms.push(e);
        }
    }
    if let Some(wts) = weights {
        wts.clear();
        wts.extend(terms.iter().map(|e| e / z));
    }
    max + (z / n as f64).ln() / r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TermKind {
    /// `-coef * log S^k`
    Present,
    /// `-coef * log(1 - S^k)`
    Absent,
}

#[derive(Debug, Clone)]
struct PooledTerm {
    label: usize,
    pixels: Option<Vec<usize>>,
    coef: f64,
    kind: TermKind,
}

/// A loss expressed as pooled terms plus a per-pixel absent-class penalty.
#[derive(Debug, Clone, Default)]
struct Objective {
    pooled: Vec<PooledTerm>,
    pixel_absent: Vec<usize>,
    pixel_absent_coef: f64,
}

impl Objective {
    fn build(
        s: &ScoreField,
        tags: &TagSet,
        variant: &LossVariant,
    ) -> Result<Self> {
        let (l, h, w) = s.grid().dims();
        if tags.label_count() != l {
            return Err(Error::dim(format!(
                "tags cover {} labels, scores have {l}",
                tags.label_count()
            )));
        }
        let n = h * w;
        let present = tags.present();
        let absent = tags.absent();
        let mut obj = Objective::default();
        let check_mask = |m: &BinaryMask| -> Result<()> {
            if m.dims() != (h, w) {
                return Err(Error::dim(format!("mask {:?} vs scores {:?}", m.dims(), (h, w))));
            }
            Ok(())
        };
        match variant {
            LossVariant::Weak => {
                let cp = 1.0 / present.len() as f64;
                obj.pooled.extend(present.iter().map(|&k| PooledTerm {
                    label: k,
                    pixels: None,
                    coef: cp,
                    kind: TermKind::Present,
                }));
                if !absent.is_empty() {
                    let ca = 1.0 / absent.len() as f64;
                    obj.pooled.extend(absent.iter().map(|&k| PooledTerm {
                        label: k,
                        pixels: None,
                        coef: ca,
                        kind: TermKind::Absent,
                    }));
                }
            }
            LossVariant::FgBg(mask) => {
                check_mask(mask)?;
                let fg = mask.count();
                if fg == 0 || fg == n {
                    return Err(Error::EmptyMask(format!(
                        "foreground mask covers {fg} of {n} pixels; need both parts nonempty"
                    )));
                }
                let fg_pixels = mask.indices();
                let bg_pixels = mask.complement().indices();
                let fore = tags.foreground();
                if !fore.is_empty() {
                    let cp = 1.0 / fore.len() as f64;
                    obj.pooled.extend(fore.iter().map(|&k| PooledTerm {
                        label: k,
                        pixels: Some(fg_pixels.clone()),
                        coef: cp,
                        kind: TermKind::Present,
                    }));
                }
                obj.pooled.push(PooledTerm {
                    label: 0,
                    pixels: Some(bg_pixels),
                    coef: 1.0,
                    kind: TermKind::Present,
                });
                obj.set_pixel_absent(&absent, n);
            }
            LossVariant::MultiClass(masks) => {
                let cp = 1.0 / present.len() as f64;
                for &k in &present {
                    let m = masks.resolve(k, h, w)?;
                    check_mask(&m)?;
                    if m.count() == 0 {
                        return Err(Error::EmptyMask(format!("mask of present class {k} is empty")));
                    }
                    obj.pooled.push(PooledTerm {
                        label: k,
                        pixels: Some(m.indices()),
                        coef: cp,
                        kind: TermKind::Present,
                    });
                }
                obj.set_pixel_absent(&absent, n);
            }
        }
        Ok(obj)
    }

    fn set_pixel_absent(&mut self, absent: &[usize], n: usize) {
        if !absent.is_empty() {
            self.pixel_absent = absent.to_vec();
            self.pixel_absent_coef = 1.0 / (absent.len() * n) as f64;
        }
    }

    /// Loss value and, when requested, the gradient w.r.t. the raw scores.
    fn evaluate(&self, s: &ScoreField, r: f64, want_grad: bool) -> (f64, Option<Grid3>) {
        let soft = softmax_scores(s);
        let (l, h, w) = s.grid().dims();
        let n = h * w;
        let mut loss = 0.0;
        // Gradient w.r.t. the softmax probabilities, label-major.
        let mut g_prob = vec![0.0; l * n];
        let mut weights = Vec::new();

        for term in &self.pooled {
            let ch = soft.channel(term.label);
            let pooled = match &term.pixels {
                Some(px) => lse_with_weights(
                    px.iter().map(|&i| ch[i]),
                    r,
                    want_grad.then_some(&mut weights),
                ),
                None => lse_with_weights(ch.iter().copied(), r, want_grad.then_some(&mut weights)),
            };
            let (arg, sign) = match term.kind {
                TermKind::Present => (pooled, 1.0),
                TermKind::Absent => (1.0 - pooled, -1.0),
            };
            loss -= term.coef * arg.max(LOG_FLOOR).ln();
            if want_grad && arg > LOG_FLOOR {
                // d/d pooled of -coef * log(arg)
                let d = -term.coef * sign / arg;
                let dst = &mut g_prob[term.label * n..(term.label + 1) * n];
                match &term.pixels {
                    Some(px) => {
                        for (&i, wt) in px.iter().zip(&weights) {
                            dst[i] += d * wt;
                        }
                    }
                    None => {
                        for (g, wt) in dst.iter_mut().zip(&weights) {
                            *g += d * wt;
                        }
                    }
                }
            }
        }

        for &k in &self.pixel_absent {
            let ch = soft.channel(k);
            let dst = &mut g_prob[k * n..(k + 1) * n];
            for (i, &p) in ch.iter().enumerate() {
                let arg = 1.0 - p;
                loss -= self.pixel_absent_coef * arg.max(LOG_FLOOR).ln();
                if want_grad && arg > LOG_FLOOR {
                    dst[i] += self.pixel_absent_coef / arg;
                }
            }
        }

        if !want_grad {
            return (loss, None);
        }
        // Back through the per-pixel softmax.
        let sv = soft.grid().values();
        let mut g = vec![0.0; l * n];
        for i in 0..n {
            let dot: f64 = (0..l).map(|k| g_prob[k * n + i] * sv[k * n + i]).sum();
            for k in 0..l {
                g[k * n + i] = sv[k * n + i] * (g_prob[k * n + i] - dot);
            }
        }
        (loss, Some(Grid3::from_parts(l, h, w, g)))
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} loss evaluated to {v}")))
    }
}

/// Loss of the given variant with the default pooling sharpness.
pub fn loss_value(s: &ScoreField, tags: &TagSet, variant: &LossVariant) -> Result<f64> {
    loss_value_with(s, tags, variant, DEFAULT_LSE_R)
}

pub fn loss_value_with(s: &ScoreField, tags: &TagSet, variant: &LossVariant, r: f64) -> Result<f64> {
    check_r(r)?;
    let obj = Objective::build(s, tags, variant)?;
    finite(obj.evaluate(s, r, false).0, variant.name())
}

fn check_r(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::arg(format!("pooling sharpness must be > 0, got {r}")))
    }
}

pub fn loss_weak(s: &ScoreField, tags: &TagSet) -> Result<f64> {
    loss_value(s, tags, &LossVariant::Weak)
}

pub fn loss_fgbg(s: &ScoreField, tags: &TagSet, mask: &BinaryMask) -> Result<f64> {
    loss_value(s, tags, &LossVariant::FgBg(mask.clone()))
}

pub fn loss_multiclass(s: &ScoreField, tags: &TagSet, masks: &ClassMasks) -> Result<f64> {
    loss_value(s, tags, &LossVariant::MultiClass(masks.clone()))
}

/// Loss value and gradient `dL/ds` (same shape as the scores).
pub fn loss_and_grad(s: &ScoreField, tags: &TagSet, variant: &LossVariant) -> Result<(f64, Grid3)> {
    loss_and_grad_with(s, tags, variant, DEFAULT_LSE_R)
}

pub fn loss_and_grad_with(
    s: &ScoreField,
    tags: &TagSet,
    variant: &LossVariant,
    r: f64,
) -> Result<(f64, Grid3)> {
    check_r(r)?;
    let obj = Objective::build(s, tags, variant)?;
    let (v, g) = obj.evaluate(s, r, true);
    let g = g.expect("gradient requested");
    if g.values().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{} gradient", variant.name())));
    }
    Ok((finite(v, variant.name())?, g))
}

pub fn loss_grad(s: &ScoreField, tags: &TagSet, variant: &LossVariant) -> Result<Grid3> {
    Ok(loss_and_grad(s, tags, variant)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scores(l: usize, h: usize, w: usize, v: Vec<f64>) -> ScoreField {
        ScoreField::new(Grid3::new(l, h, w, v).unwrap())
    }

    fn random_scores(rng: &mut ChaCha8Rng, l: usize, h: usize, w: usize) -> ScoreField {
        ScoreField::new(Grid3::from_fn(l, h, w, |_, _, _| rng.random_range(-2.0..2.0)).unwrap())
    }

    fn random_tags(rng: &mut ChaCha8Rng, l: usize) -> TagSet {
        let present: Vec<usize> = (1..l).filter(|_| rng.random_bool(0.5)).collect();
        TagSet::new(l, &present).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
        let n = h * w;
        let mut bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        bits[0] = true;
        bits[n - 1] = false;
        BinaryMask::new(h, w, bits).unwrap()
    }

    fn pool_oracle(v: &[f64], r: f64) -> f64 {
        (v.iter().map(|x| (r * x).exp()).sum::<f64>() / v.len() as f64).ln() / r
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_scores(&scores(3, 1, 1, vec![0.7, 0.7, 0.7]));
        for k in 0..3 {
            assert!((s.channel(k)[0] - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_scores(&scores(2, 1, 1, vec![1000.0, 0.0]));
        assert_eq!((s.channel(0)[0], s.channel(1)[0]), (1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let raw = random_scores(&mut rng, 4, 3, 3);
        let s = softmax_scores(&raw);
        for i in 0..9 {
            let sum: f64 = (0..4).map(|k| s.channel(k)[i]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for a in 0..4 {
                for b in 0..4 {
                    if raw.grid().channel(a)[i] < raw.grid().channel(b)[i] {
                        assert!(s.channel(a)[i] < s.channel(b)[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn lse_cases() {
        assert_eq!(lse_pool(&[0.37], 5.0).unwrap(), 0.37);
        assert!((lse_pool(&[0.4; 7], 5.0).unwrap() - 0.4).abs() < 1e-15);
        let want = ((1.0 + 5f64.exp()) / 2.0).ln() / 5.0;
        let got = lse_pool(&[0.0, 1.0], 5.0).unwrap();
        assert!((got - want).abs() < 1e-14);
        assert!((got - 0.8627).abs() < 1e-4);
        assert!(lse_pool(&[], 5.0).is_err());
        assert!(lse_pool(&[1.0], 0.0).is_err());
    }

    #[test]
    fn lse_bounds_and_monotone_in_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..200 {
            let n = rng.random_range(1..50);
            let v: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let mean = v.iter().sum::<f64>() / n as f64;
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut prev = f64::NEG_INFINITY;
            for r in [1.0, 5.0, 50.0] {
                let p = lse_pool(&v, r).unwrap();
                assert!(mean <= p + 1e-12 && p <= max + 1e-12);
                assert!(p >= max - (n as f64).ln() / r - 1e-12);
                assert!(p >= prev - 1e-12);
                prev = p;
            }
        }
    }

    #[test]
    fn weak_loss_limit() {
        let tags = TagSet::new(2, &[]).unwrap();
        let mut last = f64::INFINITY;
        for d in [1e-1f64, 1e-3, 1e-6, 1e-9] {
            // Scores whose softmax is (1 - d, d).
            let s = scores(2, 1, 1, vec![((1.0 - d) / d).ln(), 0.0]);
            let v = loss_weak(&s, &tags).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn weak_loss_uniform_all_present() {
        let tags = TagSet::new(3, &[1, 2]).unwrap();
        let s = scores(3, 2, 2, vec![0.5; 12]);
        let v = loss_weak(&s, &tags).unwrap();
        assert!((v + (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn weak_loss_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        for _ in 0..50 {
            let s = random_scores(&mut rng, 4, 2, 2);
            let tags = random_tags(&mut rng, 4);
            let soft = softmax_scores(&s);
            let pooled: Vec<f64> = (0..4).map(|k| pool_oracle(soft.channel(k), 5.0)).collect();
            let (p, a) = (tags.present(), tags.absent());
            let mut want = -p.iter().map(|&k| pooled[k].ln()).sum::<f64>() / p.len() as f64;
            if !a.is_empty() {
                want -= a.iter().map(|&k| (1.0 - pooled[k]).ln()).sum::<f64>() / a.len() as f64;
            }
            assert!((loss_weak(&s, &tags).unwrap() - want).abs() < 1e-12);
        }
    }

    fn masked_pool(ch: &[f64], mask: &[bool]) -> f64 {
        let v: Vec<f64> = ch.iter().zip(mask).filter(|(_, m)| **m).map(|(x, _)| *x).collect();
        pool_oracle(&v, 5.0)
    }

    fn absent_pixel_sum(soft: &SoftmaxField, absent: &[usize], n: usize) -> f64 {
        if absent.is_empty() {
            return 0.0;
        }
        let mut t = 0.0;
        for &k in absent {
            for i in 0..n {
                t += (1.0 - soft.channel(k)[i]).ln();
            }
        }
        -t / (absent.len() * n) as f64
    }

    #[test]
    fn fgbg_loss_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        for _ in 0..50 {
            let s = random_scores(&mut rng, 4, 2, 3);
            let tags = random_tags(&mut rng, 4);
            let m = random_mask(&mut rng, 2, 3);
            let soft = softmax_scores(&s);
            let fore = tags.foreground();
            let mut want = 0.0;
            if !fore.is_empty() {
                want -= fore
                    .iter()
                    .map(|&k| masked_pool(soft.channel(k), m.bits()).ln())
                    .sum::<f64>()
                    / fore.len() as f64;
            }
            want -= masked_pool(soft.channel(0), m.complement().bits()).ln();
            want += absent_pixel_sum(&soft, &tags.absent(), 6);
            assert!((loss_fgbg(&s, &tags, &m).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fgbg_guard_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let s = random_scores(&mut rng, 3, 2, 2);
        let tags = TagSet::new(3, &[]).unwrap();
        let m = random_mask(&mut rng, 2, 2);
        let soft = softmax_scores(&s);
        let want = -masked_pool(soft.channel(0), m.complement().bits()).ln()
            + absent_pixel_sum(&soft, &[1, 2], 4);
        assert!((loss_fgbg(&s, &tags, &m).unwrap() - want).abs() < 1e-12);
        let full = BinaryMask::full(2, 2).unwrap();
        assert!(matches!(loss_fgbg(&s, &tags, &full), Err(Error::EmptyMask(_))));
        assert!(matches!(
            loss_fgbg(&s, &tags, &full.complement()),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn fgbg_prefers_aligned_scores() {
        let mask = BinaryMask::new(1, 4, vec![true, true, false, false]).unwrap();
        let tags = TagSet::new(3, &[1]).unwrap();
        let good = scores(3, 1, 4, vec![0., 0., 5., 5., 5., 5., 0., 0., 0., 0., 0., 0.]);
        let bad = scores(3, 1, 4, vec![5., 5., 0., 0., 0., 0., 5., 5., 0., 0., 0., 0.]);
        assert!(loss_fgbg(&good, &tags, &mask).unwrap() < loss_fgbg(&bad, &tags, &mask).unwrap());
    }

    #[test]
    fn multiclass_full_masks_equal_weak_present_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let s = random_scores(&mut rng, 3, 2, 2);
        let tags = TagSet::new(3, &[1, 2]).unwrap();
        let mut masks = ClassMasks::new();
        for k in 0..3 {
            masks.insert(k, BinaryMask::full(2, 2).unwrap());
        }
        // No absent classes, so both losses reduce to the present term.
        let a = loss_multiclass(&s, &tags, &masks).unwrap();
        let b = loss_weak(&s, &tags).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn multiclass_single_pixel_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let s = random_scores(&mut rng, 2, 2, 2);
        let tags = TagSet::new(2, &[1]).unwrap();
        let mut masks = ClassMasks::new();
        masks.insert(0, BinaryMask::new(2, 2, vec![false, true, true, true]).unwrap());
        masks.insert(1, BinaryMask::new(2, 2, vec![true, false, false, false]).unwrap());
        let soft = softmax_scores(&s);
        let want = -(soft.channel(1)[0].ln()
            + masked_pool(soft.channel(0), &[false, true, true, true]).ln())
            / 2.0;
        assert!((loss_multiclass(&s, &tags, &masks).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn multiclass_matches_summation_oracle_with_derived_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        for _ in 0..50 {
            let s = random_scores(&mut rng, 4, 3, 3);
            let tags = random_tags(&mut rng, 4);
            let mut masks = ClassMasks::new();
            let mut union = vec![false; 9];
            for (j, &k) in tags.foreground().iter().enumerate() {
                let bits: Vec<bool> = (0..9).map(|i| i % 4 == j % 4 || i == j).collect();
                for (u, b) in union.iter_mut().zip(&bits) {
                    *u |= *b;
                }
                masks.insert(k, BinaryMask::new(3, 3, bits).unwrap());
            }
            let bg: Vec<bool> = union.iter().map(|u| !u).collect();
            if !bg.iter().any(|&b| b) {
                continue;
            }
            let soft = softmax_scores(&s);
            let p = tags.present();
            let mut want = 0.0;
            for &k in &p {
                let bits = if k == 0 { bg.clone() } else { masks.get(k).unwrap().bits().to_vec() };
                want -= masked_pool(soft.channel(k), &bits).ln() / p.len() as f64;
            }
            want += absent_pixel_sum(&soft, &tags.absent(), 9);
            assert!((loss_multiclass(&s, &tags, &masks).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn multiclass_missing_mask_rejected() {
        let s = scores(3, 1, 2, vec![0.0; 6]);
        let tags = TagSet::new(3, &[1]).unwrap();
        assert!(matches!(
            loss_multiclass(&s, &tags, &ClassMasks::new()),
            Err(Error::EmptyMask(_))
        ));
        let mut masks = ClassMasks::new();
        masks.insert(1, BinaryMask::new(1, 2, vec![false, false]).unwrap());
        assert!(matches!(loss_multiclass(&s, &tags, &masks), Err(Error::EmptyMask(_))));
    }

    fn variants(rng: &mut ChaCha8Rng, tags: &TagSet, h: usize, w: usize) -> Vec<LossVariant> {
        let mut masks = ClassMasks::new();
        for k in tags.present() {
            masks.insert(k, random_mask(rng, h, w));
        }
        vec![
            LossVariant::Weak,
            LossVariant::FgBg(random_mask(rng, h, w)),
            LossVariant::MultiClass(masks),
        ]
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(68);
        let h_step = 1e-3;
        for _ in 0..30 {
            let s = random_scores(&mut rng, 3, 2, 2);
            let tags = random_tags(&mut rng, 3);
            for v in variants(&mut rng, &tags, 2, 2) {
                let g = loss_grad(&s, &tags, &v).unwrap();
                for idx in 0..s.grid().values().len() {
                    let mut plus = s.grid().values().to_vec();
                    let mut minus = plus.clone();
                    plus[idx] += h_step;
                    minus[idx] -= h_step;
                    let f = |d: Vec<f64>| {
                        loss_value(&ScoreField::new(Grid3::new(3, 2, 2, d).unwrap()), &tags, &v)
                            .unwrap()
                    };
                    let fd = (f(plus) - f(minus)) / (2.0 * h_step);
                    let a = g.values()[idx];
                    if a.abs() > 1e-8 {
                        assert!((a - fd).abs() / a.abs().max(fd.abs()) < 1e-4, "{a} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn stationary_at_global_minimum() {
        let tags = TagSet::new(2, &[]).unwrap();
        let s = scores(2, 2, 2, vec![40.0, 40.0, 40.0, 40.0, 0.0, 0.0, 0.0, 0.0]);
        for v in [LossVariant::Weak] {
            let g = loss_grad(&s, &tags, &v).unwrap();
            let norm = g.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm < 1e-6);
        }
    }

    #[test]
    fn absent_term_pushes_absent_scores_down() {
        let mut rng = ChaCha8Rng::seed_from_u64(69);
        for _ in 0..100 {
            let s = random_scores(&mut rng, 4, 2, 2);
            let tags = random_tags(&mut rng, 4);
            let absent = tags.absent();
            if absent.is_empty() {
                continue;
            }
            for &k in &absent {
                let obj = Objective {
                    pooled: Vec::new(),
                    pixel_absent: vec![k],
                    pixel_absent_coef: 1.0 / (absent.len() * 4) as f64,
                };
                let g = obj.evaluate(&s, DEFAULT_LSE_R, true).1.unwrap();
                assert!(g.channel(k).iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn losses_invariant_to_per_pixel_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..30 {
            let s = random_scores(&mut rng, 3, 2, 3);
            let shift: Vec<f64> = (0..6).map(|_| rng.random_range(-50.0..50.0)).collect();
            let shifted = ScoreField::new(
                Grid3::from_fn(3, 2, 3, |k, y, x| s.grid().get(k, y, x) + shift[y * 3 + x])
                    .unwrap(),
            );
            let tags = random_tags(&mut rng, 3);
            for v in variants(&mut rng, &tags, 2, 3) {
                let a = loss_value(&s, &tags, &v).unwrap();
                let b = loss_value(&shifted, &tags, &v).unwrap();
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn losses_finite_for_extreme_scores() {
        let tags = TagSet::new(3, &[1]).unwrap();
        let s = scores(3, 1, 2, vec![-700.0, 700.0, 700.0, -700.0, 700.0, 700.0]);
        let mask = BinaryMask::new(1, 2, vec![true, false]).unwrap();
        for v in [LossVariant::Weak, LossVariant::FgBg(mask)] {
            let (l, g) = loss_and_grad(&s, &tags, &v).unwrap();
            assert!(l.is_finite());
            assert!(g.values().iter().all(|x| x.is_finite()));
        }
    }
}
