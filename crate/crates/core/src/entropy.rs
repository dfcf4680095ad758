//! Rectangular microstates entropy of one simple element in closed form,
//! the matching large-deviation rate function, the maximization functional
//! and additivity over free families.
//!
//! A simple element `a` of type `(k, l)` enters only through the law `mu` of
//! `aa*` (or `a*a`, whichever lives on the smaller block) and the two block
//! weights, stored as `alpha = min` and `beta = max`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::measures::{pushforward_increasing, Extended, GridMeasure, IncreasingMap};

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct EntropyInput {
    pub mu: GridMeasure,
    pub alpha: f64,
    pub beta: f64,
}

impl EntropyInput {
    /// Input for an element of type `(k, l)` with block weights `rho_k`,
    /// `rho_l`; `mu` is the law on the smaller of the two blocks.
    pub fn new(mu: GridMeasure, rho_k: f64, rho_l: f64) -> Result<Self> {
        let inp = EntropyInput { mu, alpha: rho_k.min(rho_l), beta: rho_k.max(rho_l) };
        inp.check()?;
        Ok(inp)
    }

    fn check(&self) -> Result<()> {
        let (a, b) = (self.alpha, self.beta);
        if !(a > 0.0 && a <= b && a + b <= 1.0 + WEIGHT_TOL) {
            return Err(Error::Precondition(format!(
                "block weights must satisfy 0 < alpha <= beta and alpha + beta <= 1, got ({a}, {b})"
            )));
        }
        if self.mu.support().0 < 0.0 {
            return Err(Error::Precondition("measure must live on [0, inf)".into()));
        }
        Ok(())
    }
}

/// `int_a^b x log x dx`, with `0 log 0 = 0`.
fn int_x_log_x(a: f64, b: f64) -> f64 {
    let prim = |x: f64| if x == 0.0 { 0.0 } else { 0.5 * x * x * x.ln() - 0.25 * x * x };
    prim(b) - prim(a)
}

/// Closed-form entropy of a single simple element; `-inf` when the log-energy
/// is `-inf`, or when `int log x dmu = -inf` and `beta > alpha`.
pub fn chi_single(inp: &EntropyInput) -> Result<Extended> {
    inp.check()?;
    let (a, b) = (inp.alpha, inp.beta);
    let constant = a * b * ((PI / a).ln() + 1.0) + a * a / 4.0 - a * a * int_x_log_x((b - a) / a, b / a);
    let sigma = inp.mu.log_energy().affine(a * a, 0.0);
    let logm = if b > a { inp.mu.log_moment().affine((b - a) * a, 0.0) } else { Extended::Finite(0.0) };
    Ok(sigma.add(logm).affine(1.0, constant))
}

/// `C = rho_k rho_l (log pi + 1 - log rho_k) + rho_k^2 / 4 - rho_k^2 int t log t`
/// over `[rho_l/rho_k - 1, rho_l/rho_k]`, for `rho_k <= rho_l`.
pub fn constant_c(rho_k: f64, rho_l: f64) -> Result<f64> {
    order_check(rho_k, rho_l)?;
    let r = rho_l / rho_k;
    let unit = int_x_log_x(0.0, 1.0);
    Ok(rho_k * rho_l * (PI.ln() + 1.0 - rho_k.ln()) - rho_k * rho_k * unit - rho_k * rho_k * int_x_log_x(r - 1.0, r))
}

fn order_check(rho_k: f64, rho_l: f64) -> Result<()> {
    if !(rho_k > 0.0 && rho_k <= rho_l) {
        return Err(Error::Precondition(format!("need 0 < rho_k <= rho_l, got ({rho_k}, {rho_l})")));
    }
    Ok(())
}

/// Rate function `J(nu) = -rho_k^2 Sigma(nu) - (rho_k rho_l - rho_k^2) int log x dnu`.
/// Returns `+inf` where the entropy is `-inf`.
pub fn rate_j(nu: &GridMeasure, rho_k: f64, rho_l: f64) -> Result<f64> {
    order_check(rho_k, rho_l)?;
    let sigma = nu.log_energy().affine(rho_k * rho_k, 0.0);
    let logm = if rho_l > rho_k { nu.log_moment().affine(rho_k * rho_l - rho_k * rho_k, 0.0) } else { Extended::Finite(0.0) };
    Ok(-sigma.add(logm).to_f64())
}

/// The functional `A(mu) = Sigma(mu) + (lambda - 1) int log x dmu`.
fn functional_a(mu: &GridMeasure, lambda: f64) -> Extended {
    let logm = if lambda > 1.0 { mu.log_moment().affine(lambda - 1.0, 0.0) } else { Extended::Finite(0.0) };
    mu.log_energy().add(logm)
}

/// The MP law with parameter `rho_l / rho_k` dilated to mean `c`.
pub fn constrained_maximizer(rho_k: f64, rho_l: f64, c: f64) -> Result<GridMeasure> {
    order_check(rho_k, rho_l)?;
    let lambda = rho_l / rho_k;
    GridMeasure::mp(lambda, c / lambda)
}

/// `A(mu_c) - A(mu)` where `mu_c` is the mean-`c` maximizer. Requires
/// `int x dmu <= c`; `+inf` when `A(mu) = -inf`.
pub fn maximizer_gap(mu: &GridMeasure, rho_k: f64, rho_l: f64, c: f64) -> Result<f64> {
    order_check(rho_k, rho_l)?;
    if !(c > 0.0) {
        return Err(Error::Precondition(format!("mean cap must be positive, got {c}")));
    }
    let mean = mu.mean();
    if mean > c * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("mean {mean} exceeds the cap {c}")));
    }
    let lambda = rho_l / rho_k;
    let best = functional_a(&constrained_maximizer(rho_k, rho_l, c)?, lambda).to_f64();
    Ok(match functional_a(mu, lambda) {
        Extended::Finite(a) => best - a,
        Extended::NegInfinity => f64::INFINITY,
    })
}

/// Entropy of a family that is free with amalgamation, as the sum of the
/// members' values. Each member must have an individually known entropy.
pub fn chi_free_family(inputs: &[EntropyInput]) -> Result<Extended> {
    inputs.iter().try_fold(Extended::Finite(0.0), |acc, inp| Ok(acc.add(chi_single(inp)?)))
}

/// Entropy of `f(a)` for a strictly increasing `f` with `f(0) = 0`, acting on
/// the polar part: the law of `aa*` is pushed forward by `t -> f(sqrt t)^2`.
pub fn chi_functional_calculus(
    inp: &EntropyInput,
    f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    refine: usize,
) -> Result<Extended> {
    if f(0.0) != 0.0 {
        return Err(Error::Precondition("f(0) must be 0".into()));
    }
    let g = IncreasingMap::new(move |t: f64| f(t.max(0.0).sqrt()).powi(2));
    let mu = pushforward_increasing(&inp.mu, &g, refine)?;
    chi_single(&EntropyInput { mu, ..inp.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_reduction() {
        let mu = GridMeasure::uniform(0.5, 2.0).unwrap();
        let rho = 0.4;
        let inp = EntropyInput::new(mu.clone(), rho, rho).unwrap();
        let chi = chi_single(&inp).unwrap().to_f64();
        let reduced = rho * rho * (mu.log_energy().to_f64() + PI.ln() + 1.5 - rho.ln());
        assert!((chi - reduced).abs() < 1e-12);
    }

    #[test]
    fn atoms_give_neg_infinity() {
        let mu = GridMeasure::atoms(vec![(1.0, 0.5), (2.0, 0.5)]).unwrap();
        let inp = EntropyInput::new(mu, 0.25, 0.75).unwrap();
        assert!(chi_single(&inp).unwrap().is_neg_infinite());
        assert!(chi_free_family(&[inp.clone(), inp]).unwrap().is_neg_infinite());
    }

    #[test]
    fn bad_weights_rejected() {
        let mu = GridMeasure::uniform(0.0, 1.0).unwrap();
        assert!(EntropyInput::new(mu.clone(), 0.0, 0.5).is_err());
        assert!(EntropyInput::new(mu, 0.6, 0.7).is_err());
        assert!(rate_j(&GridMeasure::uniform(0.0, 1.0).unwrap(), 0.7, 0.3).is_err());
    }

    #[test]
    fn gap_of_maximizer_is_zero() {
        let mu = constrained_maximizer(0.25, 0.75, 2.0).unwrap();
        assert_eq!(maximizer_gap(&mu, 0.25, 0.75, 2.0).unwrap(), 0.0);
        assert!(maximizer_gap(&mu, 0.25, 0.75, 1.0).is_err());
    }
}
