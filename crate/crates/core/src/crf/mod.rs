//! Fully-connected CRF with contrast-sensitive Potts pairwise terms and
//! P^n-Potts region terms, solved by mean-field inference.
//!
//! The energy of a labeling `x` is
//!
//! ```text
//! E(x) = sum_i theta_i(x_i) + sum_{i<j} k(i,j) [x_i != x_j] + sum_s theta_s(x_s)
//! ```
//!
//! where `theta_s` is the region cost when region `s` is uniform and
//! `theta_max` otherwise.

mod kernel;
mod mean_field;
mod potentials;

pub use kernel::{KernelMode, PairwiseKernel, PairwiseParams, EXACT_PIXEL_CAP};
pub use mean_field::{mean_field_infer, mean_field_trace};
pub use potentials::{
    region_costs, unary_from_probs, unary_from_probs_with, HigherOrder, RegionCosts,
    RegionPartition, UnaryField, UnaryMode, DEFAULT_THETA_MAX,
};

use crate::cam::ProbMaps;
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::Grid3;

pub const DEFAULT_ITERS: usize = 10;

/// Mean-field marginals, one categorical distribution per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals(pub(crate) Grid3);

impl Marginals {
    pub fn grid(&self) -> &Grid3 {
        &self.0
    }

    pub fn into_grid(self) -> Grid3 {
        self.0
    }

    pub fn labels(&self) -> usize {
        self.0.channels()
    }

    /// Largest deviation of any pixel's label sum from one.
    pub fn simplex_error(&self) -> f64 {
        let (l, h, w) = self.0.dims();
        let n = h * w;
        let v = self.0.values();
        (0..n)
            .map(|i| ((0..l).map(|k| v[k * n + i]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-pixel argmax; ties go to the smaller label index.
pub fn map_labeling(q: &Marginals) -> LabelMap {
    argmax_labels(q.grid())
}

pub(crate) fn argmax_labels(g: &Grid3) -> LabelMap {
    let (l, h, w) = g.dims();
    let n = h * w;
    let v = g.values();
    let labels = (0..n)
        .map(|i| {
            let mut best = 0;
            for k in 1..l {
                if v[k * n + i] > v[best * n + i] {
                    best = k;
                }
            }
            best as u16
        })
        .collect();
    LabelMap::new(h, w, labels).expect("dims come from a valid grid")
}

/// Direct O(N^2) evaluation of the Gibbs energy of a labeling.
pub fn gibbs_energy(
    x: &LabelMap,
    unary: &UnaryField,
    image: &Grid3,
    params: &PairwiseParams,
    ho: Option<&HigherOrder>,
) -> Result<f64> {
    let (h, w) = unary.spatial();
    if x.dims() != (h, w) || image.spatial() != (h, w) {
        return Err(Error::dim(format!(
            "labels {:?}, unaries {:?}, image {:?}",
            x.dims(),
            (h, w),
            image.spatial()
        )));
    }
    x.check_range(unary.labels())?;
    let n = h * w;
    let labels = x.labels();
    let mut e: f64 = (0..n).map(|i| unary.cost(labels[i] as usize, i)).sum();

    let c = image.channels();
    let col = |i: usize, k: usize| image.channel(k)[i];
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] == labels[j] {
                continue;
            }
            let dy = (i / w) as f64 - (j / w) as f64;
            let dx = (i % w) as f64 - (j % w) as f64;
            let d2_col: f64 = (0..c).map(|k| (col(i, k) - col(j, k)).powi(2)).sum();
            e += params.kernel(dy * dy + dx * dx, d2_col);
        }
    }
    if let Some(ho) = ho {
        if ho.partition.dims() != (h, w) {
            return Err(Error::dim("region partition does not match labeling"));
        }
        e += (0..ho.partition.region_count())
            .map(|s| ho.region_energy(s, labels))
            .sum::<f64>();
    }
    Ok(e)
}

/// Settings for smoothing probability maps into a labeling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfConfig {
    pub pairwise: PairwiseParams,
    pub mode: KernelMode,
    pub unary: UnaryMode,
    pub theta_max: f64,
    pub iters: usize,
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self {
            pairwise: PairwiseParams::default(),
            mode: KernelMode::Exact,
            unary: UnaryMode::SoftmaxOfProbs,
            theta_max: DEFAULT_THETA_MAX,
            iters: DEFAULT_ITERS,
        }
    }
}

/// Unaries, optional region terms and mean-field inference in one call.
pub fn smooth_probs(
    probs: &ProbMaps,
    kernel: &PairwiseKernel,
    regions: Option<&RegionPartition>,
    cfg: &CrfConfig,
) -> Result<Marginals> {
    let unary = unary_from_probs_with(probs, cfg.unary);
    let ho = regions
        .map(|r| HigherOrder::from_probs(probs, r.clone(), cfg.theta_max))
        .transpose()?;
    mean_field_infer(&unary, kernel, ho.as_ref(), cfg.iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unary(rng: &mut ChaCha8Rng, l: usize, h: usize, w: usize, scale: f64) -> UnaryField {
        UnaryField::new(Grid3::from_fn(l, h, w, |_, _, _| rng.random_range(0.0..scale)).unwrap())
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid3 {
        Grid3::from_fn(3, h, w, |_, _, _| rng.random_range(0.0..255.0)).unwrap()
    }

    fn random_probs(rng: &mut ChaCha8Rng, l: usize, h: usize, w: usize) -> ProbMaps {
        let raw = Grid3::from_fn(l, h, w, |_, _, _| rng.random_range(0.01..1.0)).unwrap();
        ProbMaps::normalize(&raw)
    }

    /// Exhaustive minimizer over all `labels^pixels` labelings.
    fn brute_force_min(
        unary: &UnaryField,
        image: &Grid3,
        params: &PairwiseParams,
        ho: Option<&HigherOrder>,
    ) -> (LabelMap, f64) {
        let (h, w) = unary.spatial();
        let n = h * w;
        let l = unary.labels();
        let total = l.pow(n as u32);
        let mut best: Option<(LabelMap, f64)> = None;
        for code in 0..total {
            let mut c = code;
            let labels: Vec<u16> = (0..n)
                .map(|_| {
                    let v = (c % l) as u16;
                    c /= l;
                    v
                })
                .collect();
            let x = LabelMap::new(h, w, labels).unwrap();
            let e = gibbs_energy(&x, unary, image, params, ho).unwrap();
            if best.as_ref().is_none_or(|(_, b)| e < *b) {
                best = Some((x, e));
            }
        }
        best.unwrap()
    }

    #[test]
    fn decoupled_pixels_stay_at_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let unary = random_unary(&mut rng, 3, 4, 4, 4.0);
        let img = random_image(&mut rng, 4, 4);
        let k = PairwiseKernel::new(&img, &PairwiseParams::disabled(), KernelMode::Exact).unwrap();
        let mut first = None;
        let q = mean_field_trace(&unary, &k, None, 7, |_, m| {
            let f = first.get_or_insert_with(|| m.clone());
            assert_eq!(f, m);
        })
        .unwrap();
        for i in 0..16 {
            let z: f64 = (0..3).map(|l| (-unary.cost(l, i)).exp()).sum();
            for l in 0..3 {
                let want = (-unary.cost(l, i)).exp() / z;
                assert!((q.grid().channel(l)[i] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn marginals_stay_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let p = random_probs(&mut rng, 4, 6, 5);
        let img = random_image(&mut rng, 6, 5);
        let regions =
            RegionPartition::from_raw_ids(6, 5, &(0..30).map(|i| (i / 4) as u32).collect::<Vec<_>>())
                .unwrap();
        let ho = HigherOrder::from_probs(&p, regions, DEFAULT_THETA_MAX).unwrap();
        let k = PairwiseKernel::new(&img, &PairwiseParams::default(), KernelMode::Exact).unwrap();
        mean_field_trace(&unary_from_probs(&p), &k, Some(&ho), 10, |_, m| {
            assert!(m.simplex_error() < 1e-9);
            assert!(m.grid().values().iter().all(|&v| v >= 0.0));
        })
        .unwrap();
    }

    #[test]
    fn strong_unaries_recover_brute_force_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let params = PairwiseParams {
            theta_alpha: 1.5,
            theta_beta: 60.0,
            theta_gamma: 1.0,
            ..PairwiseParams::default()
        };
        for _ in 0..10 {
            let img = random_image(&mut rng, 3, 3);
            let k = PairwiseKernel::new(&img, &params, KernelMode::Exact).unwrap();
            let mass = (0..9)
                .map(|i| (0..9).map(|j| k.eval(i, j)).sum::<f64>())
                .fold(0.0, f64::max);
            let margin = 5.0 * mass;
            let unary = UnaryField::new(
                Grid3::from_fn(2, 3, 3, |l, y, x| {
                    let favored = (y * 3 + x + l) % 2 == 0;
                    if favored { 0.0 } else { margin + rng.random_range(0.0..1.0) }
                })
                .unwrap(),
            );
            let q = mean_field_infer(&unary, &k, None, DEFAULT_ITERS).unwrap();
            let (best, _) = brute_force_min(&unary, &img, &params, None);
            assert_eq!(map_labeling(&q), best);
        }
    }

    #[test]
    fn single_region_pulls_to_majority_label() {
        // 2x2, one region; three pixels lean to label 1, one leans to label 0.
        let p = ProbMaps::new(
            Grid3::new(2, 2, 2, vec![0.3, 0.3, 0.35, 0.6, 0.7, 0.7, 0.65, 0.4]).unwrap(),
        )
        .unwrap();
        let img = Grid3::zeros(3, 2, 2).unwrap();
        let params = PairwiseParams::disabled();
        let regions = RegionPartition::new(2, 2, vec![0; 4]).unwrap();
        let ho = HigherOrder::from_probs(&p, regions, DEFAULT_THETA_MAX).unwrap();
        let unary = unary_from_probs(&p);
        let k = PairwiseKernel::new(&img, &params, KernelMode::Exact).unwrap();
        let q = mean_field_infer(&unary, &k, Some(&ho), DEFAULT_ITERS).unwrap();
        let map = map_labeling(&q);
        assert_eq!(map.labels(), &[1, 1, 1, 1]);
        let (best, _) = brute_force_min(&unary, &img, &params, Some(&ho));
        assert_eq!(map, best);
    }

    #[test]
    fn energy_trivial_cases() {
        let zero = UnaryField::new(Grid3::zeros(2, 1, 2).unwrap());
        let img = Grid3::new(3, 1, 2, vec![10.0, 40.0, 0.0, 0.0, 5.0, 5.0]).unwrap();
        let none = PairwiseParams::disabled();
        let x = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        assert_eq!(gibbs_energy(&x, &zero, &img, &none, None).unwrap(), 0.0);

        let params = PairwiseParams::default();
        let same = LabelMap::new(1, 2, vec![1, 1]).unwrap();
        assert_eq!(gibbs_energy(&same, &zero, &img, &params, None).unwrap(), 0.0);
        let k = PairwiseKernel::new(&img, &params, KernelMode::Exact).unwrap();
        let e = gibbs_energy(&x, &zero, &img, &params, None).unwrap();
        assert!((e - k.eval(0, 1)).abs() < 1e-15);
        assert!(e > 0.0);
    }

    #[test]
    fn energy_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let params = PairwiseParams::default();
        for _ in 0..20 {
            let p = random_probs(&mut rng, 3, 3, 3);
            let unary = unary_from_probs(&p);
            let img = random_image(&mut rng, 3, 3);
            let raw: Vec<u32> = (0..9).map(|_| rng.random_range(0..3)).collect();
            let regions = RegionPartition::from_raw_ids(3, 3, &raw).unwrap();
            let ho = HigherOrder::from_probs(&p, regions.clone(), DEFAULT_THETA_MAX).unwrap();
            let x = LabelMap::new(3, 3, (0..9).map(|_| rng.random_range(0..3)).collect()).unwrap();

            // Independent evaluation straight from the definitions.
            let mut want = 0.0;
            for i in 0..9 {
                want += unary.cost(x.labels()[i] as usize, i);
            }
            for i in 0..9 {
                for j in 0..9 {
                    if j <= i || x.labels()[i] == x.labels()[j] {
                        continue;
                    }
                    let (yi, xi, yj, xj) = (i / 3, i % 3, j / 3, j % 3);
                    let d2 = ((yi as f64 - yj as f64).powi(2)) + ((xi as f64 - xj as f64).powi(2));
                    let mut c2 = 0.0;
                    for ch in 0..3 {
                        c2 += (img.get(ch, yi, xi) - img.get(ch, yj, xj)).powi(2);
                    }
                    want += 5.0 * (-d2 / (2.0 * 900.0) - c2 / (2.0 * 169.0)).exp()
                        + 3.0 * (-d2 / 18.0).exp();
                }
            }
            for s in 0..regions.region_count() {
                let m = regions.members(s);
                let l0 = x.labels()[m[0]];
                if m.iter().all(|&i| x.labels()[i] == l0) {
                    let mean: f64 =
                        m.iter().map(|&i| p.channel(l0 as usize)[i]).sum::<f64>() / m.len() as f64;
                    want += -mean.ln();
                } else {
                    want += DEFAULT_THETA_MAX;
                }
            }
            let got = gibbs_energy(&x, &unary, &img, &params, Some(&ho)).unwrap();
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn mean_field_beats_unary_argmax_on_most_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let params = PairwiseParams::default();
        let mut ok = 0;
        for _ in 0..100 {
            let p = random_probs(&mut rng, 3, 3, 3);
            let unary = unary_from_probs(&p);
            let img = random_image(&mut rng, 3, 3);
            let k = PairwiseKernel::new(&img, &params, KernelMode::Exact).unwrap();
            let q = mean_field_infer(&unary, &k, None, DEFAULT_ITERS).unwrap();
            let mf = gibbs_energy(&map_labeling(&q), &unary, &img, &params, None).unwrap();
            let base_q = mean_field_infer(&unary, &k, None, 0).unwrap();
            let base = gibbs_energy(&map_labeling(&base_q), &unary, &img, &params, None).unwrap();
            if mf <= base + 1e-12 {
                ok += 1;
            }
        }
        assert!(ok >= 95, "mean-field no worse on {ok}/100 instances");
    }

    #[test]
    fn decode_ties_and_order() {
        let q = Marginals(Grid3::new(2, 1, 2, vec![0.9, 0.5, 0.1, 0.5]).unwrap());
        assert_eq!(map_labeling(&q).labels(), &[0, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let g = random_probs(&mut rng, 5, 4, 4).into_grid();
        let map = map_labeling(&Marginals(g.clone()));
        for i in 0..16 {
            let col: Vec<f64> = (0..5).map(|l| g.channel(l)[i]).collect();
            let mut best = 0;
            for (l, v) in col.iter().enumerate() {
                if *v > col[best] {
                    best = l;
                }
            }
            assert_eq!(map.labels()[i] as usize, best);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let unary = UnaryField::new(Grid3::zeros(2, 2, 2).unwrap());
        let img = Grid3::zeros(3, 3, 2).unwrap();
        let k = PairwiseKernel::new(&img, &PairwiseParams::default(), KernelMode::Exact).unwrap();
        assert!(mean_field_infer(&unary, &k, None, 1).is_err());
        let x = LabelMap::filled(2, 2, 0).unwrap();
        assert!(gibbs_energy(&x, &unary, &img, &PairwiseParams::default(), None).is_err());
    }
}

