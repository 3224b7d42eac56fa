//! Power-law lightness correction with a mean-matching exponent solve.

use super::histogram::ChannelHistogram;

/// Default weight of the (γ−1)² regularizer.
pub const DEFAULT_BETA: f64 = 0.01;

/// Solver clamp range for the exponent.
pub const GAMMA_MIN: f64 = 0.1;
pub const GAMMA_MAX: f64 = 10.0;

const STEP: f64 = 0.5;

/// Result of the 1-D gamma solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSolution {
    pub gamma: f64,
    pub objective_value: f64,
    pub iterations: usize,
}

fn check_unit_range(h: &ChannelHistogram) {
    assert!(
        h.lo == 0.0 && h.hi == 1.0,
        "gamma solve expects histograms over [0, 1], got ({}, {})",
        h.lo,
        h.hi
    );
}

/// Objective and derivative at one exponent, sharing the exp evaluations.
fn objective_and_grad(
    gamma: f64,
    src_mass: &[(f64, f64)], // (probability, ln(bin midpoint))
    mean_ref: f64,
    beta: f64,
) -> (f64, f64) {
    let mut mean = 0.0;
    let mut dmean = 0.0;
    for &(p, ln_mid) in src_mass {
        let v = (gamma * ln_mid).exp();
        mean += p * v;
        dmean += p * ln_mid * v;
    }
    let diff = mean - mean_ref;
    let obj = diff * diff + beta * (gamma - 1.0) * (gamma - 1.0);
    let grad = 2.0 * diff * dmean + 2.0 * beta * (gamma - 1.0);
    (obj, grad)
}

fn nonzero_mass(h: &ChannelHistogram) -> Vec<(f64, f64)> {
    let t = h.total as f64;
    h.bins
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| (c as f64 / t, h.bin_value(i).ln()))
        .collect()
}

/// Mean-constraint objective: squared gap between the gamma-corrected source
/// mean and the reference mean, plus `beta`·(γ−1)².
///
/// Means are taken over bin midpoints of normalized-lightness histograms.
pub fn gamma_objective(
    gamma: f64,
    src: &ChannelHistogram,
    reference: &ChannelHistogram,
    beta: f64,
) -> f64 {
    assert!(gamma > 0.0, "gamma must be positive");
    check_unit_range(src);
    check_unit_range(reference);
    let mass = nonzero_mass(src);
    objective_and_grad(gamma, &mass, reference.mean(), beta).0
}

/// Solve for the exponent by fixed-step gradient descent from γ=1.
///
/// Stops when |dJ/dγ| ≤ `tol` or after `max_iters` steps (reported through
/// `iterations`, not an error). The returned exponent is the best iterate
/// visited, so the objective never exceeds its value at γ=1, and it stays
/// inside [0.1, 10].
pub fn solve_gamma(
    src: &ChannelHistogram,
    reference: &ChannelHistogram,
    beta: f64,
    max_iters: usize,
    tol: f64,
) -> GammaSolution {
    assert!(beta >= 0.0, "beta must be non-negative");
    check_unit_range(src);
    check_unit_range(reference);
    let mass = nonzero_mass(src);
    let mean_ref = reference.mean();

    let mut gamma = 1.0;
    let (obj0, mut grad) = objective_and_grad(gamma, &mass, mean_ref, beta);
    let mut best = (gamma, obj0);
    let mut iterations = 0;
    while iterations < max_iters && grad.abs() > tol {
        gamma = (gamma - STEP * grad).clamp(GAMMA_MIN, GAMMA_MAX);
        let (obj, g) = objective_and_grad(gamma, &mass, mean_ref, beta);
        if obj < best.1 {
            best = (gamma, obj);
        }
        grad = g;
        iterations += 1;
        // Pinned against a clamp boundary with the gradient pointing outward:
        // this is the constrained optimum.
        if (gamma <= GAMMA_MIN && grad > 0.0) || (gamma >= GAMMA_MAX && grad < 0.0) {
            break;
        }
    }
    GammaSolution {
        gamma: best.0,
        objective_value: best.1,
        iterations,
    }
}

/// Apply `L → 100·(L/100)^γ` to a lightness channel.
pub fn apply_gamma(l: &[f64], gamma: f64) -> Vec<f64> {
    assert!(
        (GAMMA_MIN..=GAMMA_MAX).contains(&gamma),
        "gamma {gamma} outside [{GAMMA_MIN}, {GAMMA_MAX}]"
    );
    if gamma == 1.0 {
        return l.to_vec();
    }
    l.iter()
        .map(|&v| ((v / 100.0).max(0.0).powf(gamma) * 100.0).clamp(0.0, 100.0))
        .collect()
}
