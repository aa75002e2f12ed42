//! Central finite-difference gradient checks.

use crate::rng::RngStream;
use crate::tensor::Matrix;

/// Gradients smaller than this (in both routes) are compared absolutely. At
/// h = 1e-5 central differences carry roughly 1e-10 of rounding noise.
const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Picks up to `max` distinct flat coordinates of a `len`-element tensor.
pub fn sample_coords(len: usize, max: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    if len > max {
        rng.shuffle(&mut all);
        all.truncate(max);
        all.sort_unstable();
    }
    all
}

/// Compares `analytic` (the gradient of `loss` w.r.t. the tensor returned by
/// `select`) against central differences at the given flat coordinates.
/// Returns the maximum relative error. The tensor is restored on return.
pub fn finite_difference_check<M>(
    model: &mut M,
    select: impl Fn(&mut M) -> &mut Matrix,
    mut loss: impl FnMut(&mut M) -> f64,
    analytic: &Matrix,
    h: f64,
    coords: &[usize],
) -> f64 {
    let mut worst: f64 = 0.0;
    for &k in coords {
        let orig = select(model).as_slice()[k];
        select(model).as_mut_slice()[k] = orig + h;
        let up = loss(model);
        select(model).as_mut_slice()[k] = orig - h;
        let down = loss(model);
        select(model).as_mut_slice()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic.as_slice()[k], numeric));
    }
    worst
}
