use super::kernel::PairwiseKernel;
use super::potentials::{HigherOrder, UnaryField};
use super::Marginals;
use crate::error::{Error, Result};
use crate::tensor::Grid3;

fn check_shapes(unary: &UnaryField, kernel: &PairwiseKernel, ho: Option<&HigherOrder>) -> Result<()> {
    if unary.spatial() != kernel.spatial() {
        return Err(Error::dim(format!(
            "unaries {:?} vs image {:?}",
            unary.spatial(),
            kernel.spatial()
        )));
    }
    if let Some(ho) = ho {
        if ho.partition.dims() != unary.spatial() {
            return Err(Error::dim(format!(
                "regions {:?} vs unaries {:?}",
                ho.partition.dims(),
                unary.spatial()
            )));
        }
        if ho.costs.labels() != unary.labels() {
            return Err(Error::dim(format!(
                "region costs for {} labels, unaries have {}",
                ho.costs.labels(),
                unary.labels()
            )));
        }
    }
    Ok(())
}

/// Turns per-pixel energies into log-marginals and marginals in place.
fn normalize(energy: &[f64], labels: usize, log_q: &mut [f64], q: &mut [f64]) {
    for ((e, lq), qq) in energy
        .chunks_exact(labels)
        .zip(log_q.chunks_exact_mut(labels))
        .zip(q.chunks_exact_mut(labels))
    {
        let min = e.iter().copied().fold(f64::INFINITY, f64::min);
        let z: f64 = e.iter().map(|v| (min - v).exp()).sum();
        let log_z = z.ln() - min;
        for l in 0..labels {
            lq[l] = -e[l] - log_z;
            qq[l] = lq[l].exp();
        }
        let s: f64 = qq.iter().sum();
        qq.iter_mut().for_each(|v| *v /= s);
    }
}

fn to_marginals(q: &[f64], labels: usize, h: usize, w: usize) -> Marginals {
    let n = h * w;
    let mut out = vec![0.0; labels * n];
    for i in 0..n {
        for l in 0..labels {
            out[l * n + i] = q[i * labels + l];
        }
    }
    Marginals(Grid3::from_parts(labels, h, w, out))
}

/// Parallel (Jacobi) mean-field updates, calling `observe` with the marginals
/// after initialization (iteration 0) and after every update.
pub fn mean_field_trace(
    unary: &UnaryField,
    kernel: &PairwiseKernel,
    ho: Option<&HigherOrder>,
    iters: usize,
    mut observe: impl FnMut(usize, &Marginals),
) -> Result<Marginals> {
    check_shapes(unary, kernel, ho)?;
    let labels = unary.labels();
    let (h, w) = unary.spatial();
    let n = h * w;

    let mut theta = vec![0.0; n * labels];
    for l in 0..labels {
        for (i, v) in unary.grid().channel(l).iter().enumerate() {
            theta[i * labels + l] = *v;
        }
    }

    let mut log_q = vec![0.0; n * labels];
    let mut q = vec![0.0; n * labels];
    normalize(&theta, labels, &mut log_q, &mut q);
    observe(0, &to_marginals(&q, labels, h, w));

    let mut msg = vec![0.0; n * labels];
    let mut energy = vec![0.0; n * labels];
    let mut region_log_sum = ho.map(|ho| vec![0.0; ho.partition.region_count() * labels]);

    for it in 1..=iters {
        kernel.filter(&q, labels, &mut msg);
        // The pairwise cost sum_j k_ij (1 - Q_j(l)) differs from -msg by a
        // per-pixel constant, which the normalization removes.
        for ((e, t), m) in energy.iter_mut().zip(&theta).zip(&msg) {
            *e = t - m;
        }
        if let (Some(ho), Some(sums)) = (ho, region_log_sum.as_mut()) {
            sums.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                let s = ho.partition.region_of(i);
                for l in 0..labels {
                    sums[s * labels + l] += log_q[i * labels + l];
                }
            }
            let theta_max = ho.costs.theta_max();
            for i in 0..n {
                let s = ho.partition.region_of(i);
                for l in 0..labels {
                    // Probability that every other pixel of the region takes l.
                    let others = (sums[s * labels + l] - log_q[i * labels + l]).min(0.0).exp();
                    energy[i * labels + l] +=
                        ho.costs.cost(s, l) * others + theta_max * (1.0 - others);
                }
            }
        }
        if energy.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("mean-field energy at iteration {it}")));
        }
        normalize(&energy, labels, &mut log_q, &mut q);
        observe(it, &to_marginals(&q, labels, h, w));
    }
    Ok(to_marginals(&q, labels, h, w))
}

/// Mean-field marginals after `iters` synchronous updates.
pub fn mean_field_infer(
    unary: &UnaryField,
    kernel: &PairwiseKernel,
    ho: Option<&HigherOrder>,
    iters: usize,
) -> Result<Marginals> {
    mean_field_trace(unary, kernel, ho, iters, |_, _| {})
}
