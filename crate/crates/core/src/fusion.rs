//! Foreground prior from two deep activation stacks.
//!
//! Each stack is averaged over its channels, resized to the image grid, the two
//! maps are summed with equal weight and the sum is rescaled onto `[0, 1]`.

use crate::error::Result;
use crate::tensor::{channel_mean_pool, minmax_normalize, resize_bilinear, Grid2, Grid3};

/// Per-pixel foreground probability, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMap(Grid2);

impl ForegroundMap {
    /// Wraps a map after checking that every value is a probability.
    pub fn new(p: Grid2) -> Result<Self> {
        if let Some(v) = p.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(crate::Error::arg(format!(
                "foreground probability {v} outside [0, 1]"
            )));
        }
        Ok(Self(p))
    }

    pub fn grid(&self) -> &Grid2 {
        &self.0
    }

    pub fn into_grid(self) -> Grid2 {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }
}

/// Fuses two activation stacks (pool, resize, sum, normalize).
pub fn fuse_foreground(
    conv4: &Grid3,
    conv5: &Grid3,
    out_h: usize,
    out_w: usize,
) -> Result<ForegroundMap> {
    let a = resize_bilinear(&channel_mean_pool(conv4), out_h, out_w)?;
    let b = resize_bilinear(&channel_mean_pool(conv5), out_h, out_w)?;
    let sum = a.zip_with(&b, |x, y| x + y)?;
    Ok(ForegroundMap(minmax_normalize(&sum)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_inputs_give_zero_map() {
        let a = Grid3::new(1, 4, 4, vec![2.0; 16]).unwrap();
        let b = Grid3::new(1, 4, 4, vec![5.0; 16]).unwrap();
        let pf = fuse_foreground(&a, &b, 4, 4).unwrap();
        assert!(pf.grid().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_conv5_reduces_to_conv4() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = Grid3::from_fn(3, 5, 6, |_, _, _| rng.random()).unwrap();
        let b = Grid3::zeros(2, 5, 6).unwrap();
        let pf = fuse_foreground(&a, &b, 5, 6).unwrap();
        let want = minmax_normalize(&channel_mean_pool(&a));
        for (x, y) in pf.grid().values().iter().zip(want.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bright_block_is_foreground() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (y0, x0, side) = (12usize, 9usize, 8usize);
        let inside = |y: usize, x: usize| y >= y0 && y < y0 + side && x >= x0 && x < x0 + side;
        let mut stack = |c: usize, scale: usize| {
            let n = 32 / scale;
            Grid3::from_fn(c, n, n, |_, y, x| {
                let v = if inside(y * scale, x * scale) { 1.0 } else { 0.0 };
                v + rng.random_range(-0.2..0.2)
            })
            .unwrap()
        };
        let conv4 = stack(4, 1);
        let conv5 = stack(6, 2);
        let pf = fuse_foreground(&conv4, &conv5, 32, 32).unwrap();
        let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
        for y in 0..32 {
            for x in 0..32 {
                if inside(y, x) {
                    si += pf.grid().get(y, x);
                    ni += 1;
                } else {
                    so += pf.grid().get(y, x);
                    no += 1;
                }
            }
        }
        assert!(si / ni as f64 > so / no as f64);
    }

    #[test]
    fn commutes_and_absorbs_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let a = Grid3::from_fn(3, 6, 5, |_, _, _| rng.random_range(-1.0..2.0)).unwrap();
            let b = Grid3::from_fn(2, 3, 4, |_, _, _| rng.random_range(-1.0..2.0)).unwrap();
            let lambda = rng.random_range(0.1..10.0);
            let ab = fuse_foreground(&a, &b, 8, 8).unwrap();
            let ba = fuse_foreground(&b, &a, 8, 8).unwrap();
            let scaled =
                fuse_foreground(&a.scale(lambda).unwrap(), &b.scale(lambda).unwrap(), 8, 8)
                    .unwrap();
            for ((x, y), z) in ab
                .grid()
                .values()
                .iter()
                .zip(ba.grid().values())
                .zip(scaled.grid().values())
            {
                assert_eq!(x, y);
                assert!((x - z).abs() < 1e-9);
                assert!((0.0..=1.0).contains(x));
            }
        }
    }
}
