//! Unary and region (P^n-Potts) potentials derived from probability maps.

use crate::cam::ProbMaps;
use crate::error::{Error, Result};
use crate::tensor::Grid3;

/// Cost of a non-uniform region: `-ln(1e-3)`.
pub const DEFAULT_THETA_MAX: f64 = 6.907_755_278_982_137;

/// Per-pixel, per-label costs, laid out like [`ProbMaps`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField(Grid3);

impl UnaryField {
    pub fn new(costs: Grid3) -> Self {
        Self(costs)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.0
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

    pub fn cost(&self, label: usize, pixel: usize) -> f64 {
        self.0.channel(label)[pixel]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnaryMode {
    /// Negative log of a softmax taken over the probabilities themselves.
    #[default]
    SoftmaxOfProbs,
    /// Plain negative log-probability (floored).
    NegLog,
}

/// Unary costs `theta_i(l) = -log(exp(p_i(l)) / sum_l' exp(p_i(l')))`.
pub fn unary_from_probs(p: &ProbMaps) -> UnaryField {
    unary_from_probs_with(p, UnaryMode::SoftmaxOfProbs)
}

pub fn unary_from_probs_with(p: &ProbMaps, mode: UnaryMode) -> UnaryField {
    let g = p.grid();
    let (l, h, w) = g.dims();
    let n = h * w;
    let src = g.values();
    let mut out = vec![0.0; l * n];
    for i in 0..n {
        match mode {
            UnaryMode::SoftmaxOfProbs => {
                let max = (0..l).map(|k| src[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..l).map(|k| (src[k * n + i] - max).exp()).sum::<f64>().ln();
                for k in 0..l {
                    out[k * n + i] = lse - src[k * n + i];
                }
            }
            UnaryMode::NegLog => {
                for k in 0..l {
                    out[k * n + i] = -src[k * n + i].max(crate::cam::PROB_FLOOR).ln();
                }
            }
        }
    }
    UnaryField(Grid3::from_parts(l, h, w, out))
}

/// Disjoint cover of the pixel grid by regions with dense ids `0..count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    h: usize,
    w: usize,
    ids: Vec<u32>,
    members: Vec<Vec<usize>>,
}

impl RegionPartition {
    /// Requires ids already dense: every value in `0..=max` must occur.
    pub fn new(h: usize, w: usize, ids: Vec<u32>) -> Result<Self> {
        if h == 0 || w == 0 || ids.len() != h * w {
            return Err(Error::dim(format!(
                "region map {h}x{w} has {} ids",
                ids.len()
            )));
        }
        let count = ids.iter().copied().max().map_or(0, |m| m as usize + 1);
        let mut members = vec![Vec::new(); count];
        for (i, &id) in ids.iter().enumerate() {
            members[id as usize].push(i);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::arg(format!("region ids not dense: id {empty} unused")));
        }
        Ok(Self { h, w, ids, members })
    }

    /// Relabels arbitrary ids densely in order of first appearance.
    pub fn from_raw_ids(h: usize, w: usize, raw: &[u32]) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        let ids = raw
            .iter()
            .map(|&r| {
                let next = map.len() as u32;
                *map.entry(r).or_insert(next)
            })
            .collect();
        Self::new(h, w, ids)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn region_count(&self) -> usize {
        self.members.len()
    }

    pub fn region_of(&self, pixel: usize) -> usize {
        self.ids[pixel] as usize
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn members(&self, region: usize) -> &[usize] {
        &self.members[region]
    }

    pub fn size(&self, region: usize) -> usize {
        self.members[region].len()
    }
}

/// Region cost table `theta_s(l)` plus the cost charged to non-uniform regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCosts {
    labels: usize,
    costs: Vec<f64>,
    theta_max: f64,
}

impl RegionCosts {
    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn cost(&self, region: usize, label: usize) -> f64 {
        self.costs[region * self.labels + label]
    }

    pub fn region_count(&self) -> usize {
        self.costs.len() / self.labels
    }
}

/// `theta_s(l) = -log(mean_{i in s} p_i(l))`, with the mean floored at
/// `exp(-theta_max)` so a uniform region never costs more than a mixed one.
pub fn region_costs(p: &ProbMaps, r: &RegionPartition, theta_max: f64) -> Result<RegionCosts> {
    if !(theta_max > 0.0 && theta_max.is_finite()) {
        return Err(Error::arg(format!("theta_max must be positive, got {theta_max}")));
    }
    if p.spatial() != r.dims() {
        return Err(Error::dim(format!(
            "probability maps {:?} vs regions {:?}",
            p.spatial(),
            r.dims()
        )));
    }
    let labels = p.labels();
    let floor = (-theta_max).exp();
    let mut costs = Vec::with_capacity(r.region_count() * labels);
    for s in 0..r.region_count() {
        let members = r.members(s);
        for l in 0..labels {
            let ch = p.channel(l);
            let mean = members.iter().map(|&i| ch[i]).sum::<f64>() / members.len() as f64;
            costs.push(-mean.max(floor).ln());
        }
    }
    Ok(RegionCosts {
        labels,
        costs,
        theta_max,
    })
}

/// Everything the higher-order term needs during inference.
#[derive(Debug, Clone)]
pub struct HigherOrder {
    pub partition: RegionPartition,
    pub costs: RegionCosts,
}

impl HigherOrder {
    pub fn from_probs(p: &ProbMaps, partition: RegionPartition, theta_max: f64) -> Result<Self> {
        let costs = region_costs(p, &partition, theta_max)?;
        Ok(Self { partition, costs })
    }

    /// Cost of region `s` under `labels` (indexed by pixel).
    pub fn region_energy(&self, s: usize, labels: &[u16]) -> f64 {
        let members = self.partition.members(s);
        let first = labels[members[0]];
        if members.iter().all(|&i| labels[i] == first) {
            self.costs.cost(s, first as usize)
        } else {
            self.costs.theta_max()
        }
    }
}
