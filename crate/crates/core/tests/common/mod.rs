#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sthcss_core::tensor::Tensor;

pub const FD_EPS: f64 = 1e-5;

/// Entries whose analytic and numeric gradients are both below this are
/// treated as agreeing (both are zero up to rounding).
const ZERO_FLOOR: f64 = 1e-9;

pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ZERO_FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Central finite differences of `f` with respect to every entry of every
/// input, compared against `analytic`. Returns the worst relative error.
pub fn fd_max_rel_err(inputs: &[Tensor], analytic: &[Tensor], f: impl Fn(&[Tensor]) -> f64) -> f64 {
    assert_eq!(inputs.len(), analytic.len());
    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        assert_eq!(a.shape(), inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + FD_EPS;
            let up = f(&work);
            work[i].data_mut()[j] = orig - FD_EPS;
            let down = f(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let e = rel_err(a.data()[j], numeric);
            if e > worst {
                worst = e;
            }
        }
    }
    worst
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
