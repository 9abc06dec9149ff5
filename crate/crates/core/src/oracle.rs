//! Analytical and Monte-Carlo ground truth for the toy models.
//!
//! Used by the benchmark harness and the acceptance tests; estimator code
//! never reads these values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cond_dist::Alpha;
use crate::dataset::SyntheticModel;
use crate::qosa::pinball;
use crate::seeding::{child_seed, child_seed_indexed, task_rng};
use crate::{Error, Result};

/// True `O` term of the difference-of-exponentials model for input `i`
/// (0-based), i.e. `E[psi_alpha(Y, q_alpha(Y | X_i))]`.
///
/// For `i = 0` this is `exp(-q)*(1 + q) - alpha` with `q` the `(1-alpha)`
/// quantile of `Exp(1)`, which simplifies to `-alpha * ln(alpha)`; the
/// value for `i = 1` follows from the `Y -> -Y` symmetry.
pub fn expdiff_o_true(alpha: Alpha, input: usize) -> Result<f64> {
    let a = alpha.value();
    match input {
        0 => {
            let q = exp1_quantile(1.0 - a);
            Ok((-q).exp() * (1.0 + q) - a)
        }
        1 => expdiff_o_true(Alpha::new(1.0 - a)?, 0),
        _ => Err(Error::Config(format!("exp-diff has inputs 0 and 1, got {input}"))),
    }
}

/// True `P` term of the difference-of-exponentials model: the pinball risk
/// of a standard Laplace variable at its own `alpha`-quantile,
/// `alpha*E[Y] - E[Y 1{Y <= q_alpha}]`.
pub fn expdiff_p_true(alpha: Alpha) -> f64 {
    let a = alpha.value();
    let q = laplace_quantile(a);
    // E[Y] = 0 for the standard Laplace.
    -laplace_partial_expectation(q)
}

/// True QOSA index of the difference-of-exponentials model.
pub fn expdiff_s_true(alpha: Alpha, input: usize) -> Result<f64> {
    Ok(1.0 - expdiff_o_true(alpha, input)? / expdiff_p_true(alpha))
}

fn exp1_quantile(p: f64) -> f64 {
    -(1.0 - p).ln()
}

fn laplace_quantile(p: f64) -> f64 {
    if p < 0.5 {
        (2.0 * p).ln()
    } else {
        -(2.0 * (1.0 - p)).ln()
    }
}

/// `E[Y 1{Y <= q}]` for the standard Laplace distribution.
fn laplace_partial_expectation(q: f64) -> f64 {
    if q <= 0.0 {
        q.exp() * (q - 1.0) / 2.0
    } else {
        -(-q).exp() * (q + 1.0) / 2.0
    }
}

/// Rates of a hypoexponential distribution (sum of independent exponentials
/// with positive, pairwise-distinct rates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypoexpParams {
    rates: Vec<f64>,
    /// Partial-fraction mixture coefficients `prod_{j!=i} r_j / (r_j - r_i)`.
    coeffs: Vec<f64>,
}

impl HypoexpParams {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::Config("hypoexponential needs at least one rate".into()));
        }
        if rates.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::Config(format!("rates must be positive, got {rates:?}")));
        }
        let mut coeffs = Vec::with_capacity(rates.len());
        for (i, ri) in rates.iter().enumerate() {
            let mut c = 1.0;
            for (j, rj) in rates.iter().enumerate() {
                if i != j {
                    if rj == ri {
                        return Err(Error::Config(format!(
                            "rates must be pairwise distinct, got {rates:?}"
                        )));
                    }
                    c *= rj / (rj - ri);
                }
            }
            coeffs.push(c);
        }
        Ok(Self { rates, coeffs })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// `E[T] = sum_i 1/rate_i`.
    pub fn mean(&self) -> f64 {
        self.rates.iter().map(|r| 1.0 / r).sum()
    }

    /// Cumulative distribution function, `1 - sum_i c_i exp(-r_i t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let tail: f64 = self
            .rates
            .iter()
            .zip(&self.coeffs)
            .map(|(r, c)| c * (-r * t).exp())
            .sum();
        (1.0 - tail).clamp(0.0, 1.0)
    }

    /// Quantile by bracketed bisection to absolute tolerance `1e-10`.
    pub fn quantile(&self, alpha: Alpha) -> f64 {
        let a = alpha.value();
        let mut hi = 50.0 * self.mean();
        while self.cdf(hi) < a {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) >= a {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Truncated expectation `E[T 1{T <= q}]` via the mixture integral
    /// `sum_i c_i [ (1 - exp(-r_i q))/r_i - q exp(-r_i q) ]`.
    pub fn truncated_mean(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        self.rates
            .iter()
            .zip(&self.coeffs)
            .map(|(r, c)| {
                let e = (-r * q).exp();
                c * ((1.0 - e) / r - q * e)
            })
            .sum()
    }

    /// Pinball risk at the distribution's own `alpha`-quantile,
    /// `alpha*E[T] - E[T 1{T <= q_alpha}]`.
    pub fn pinball_risk(&self, alpha: Alpha) -> f64 {
        let q = self.quantile(alpha);
        alpha.value() * self.mean() - self.truncated_mean(q)
    }
}

/// True QOSA index of the additive exponential model for input `i`
/// (0-based): one minus the ratio of the pinball risks of
/// `Z = sum_{j != i} X_j` and of `Y = sum_j X_j`.
///
/// With a single input the output is `X_i`-measurable and the index is 1.
pub fn hypoexp_qosa_true(alpha: Alpha, input: usize, rates: &[f64]) -> Result<f64> {
    let d = rates.len();
    if input >= d {
        return Err(Error::Config(format!("input {input} out of range for {d} rates")));
    }
    if d == 1 {
        return Ok(1.0);
    }
    let full = HypoexpParams::new(rates.to_vec())?;
    let rest: Vec<f64> = rates
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != input)
        .map(|(_, r)| *r)
        .collect();
    let minus_i = HypoexpParams::new(rest)?;
    Ok(1.0 - minus_i.pinball_risk(alpha) / full.pinball_risk(alpha))
}

/// `d` rates evenly spaced over `[0.3, 1.25]`, the additive model's
/// benchmark parametrization.
pub fn evenly_spaced_rates(d: usize) -> Result<Vec<f64>> {
    if d < 2 {
        return Err(Error::Config(format!("need at least 2 rates, got {d}")));
    }
    let (lo, hi) = (0.3, 1.25);
    Ok((0..d)
        .map(|i| lo + (hi - lo) * i as f64 / (d - 1) as f64)
        .collect())
}

/// True QOSA index for a synthetic model, dispatching to the closed forms.
pub fn true_index(model: &SyntheticModel, alpha: Alpha, input: usize) -> Result<f64> {
    match model {
        SyntheticModel::ExpDiff => expdiff_s_true(alpha, input),
        SyntheticModel::AdditiveExp { rates } => hypoexp_qosa_true(alpha, input, rates),
    }
}

/// Double-loop Monte-Carlo estimate of the QOSA index for models with
/// independent inputs: the outer loop draws `X_i`, the inner loop draws the
/// remaining inputs conditionally (= marginally, by independence), estimates
/// the conditional quantile empirically and averages the pinball loss.
///
/// The `P` term comes from a separate large unconditional sample.
pub fn mc_brute_force_qosa(
    model: &SyntheticModel,
    input: usize,
    alpha: Alpha,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<f64> {
    let d = model.dimension();
    if input >= d {
        return Err(Error::Config(format!("input {input} out of range for dimension {d}")));
    }
    if n_outer == 0 || n_inner < 2 {
        return Err(Error::Config("need n_outer >= 1 and n_inner >= 2".into()));
    }
    let a = alpha.value();

    // Unconditional pinball risk from a large dedicated sample.
    let n_p = 1_000_000usize;
    let mut rng = task_rng(child_seed(seed, "mc-unconditional"));
    let mut row = vec![0.0; d];
    let mut y_sample = Vec::with_capacity(n_p);
    for _ in 0..n_p {
        for (i, slot) in row.iter_mut().enumerate() {
            *slot = crate::dataset::sample_exp(&mut rng, model.rate(i));
        }
        y_sample.push(model.eval(&row));
    }
    let q = empirical_quantile_inf(&mut y_sample, a);
    let p_hat = y_sample.iter().map(|&y| pinball(y, q, alpha)).sum::<f64>() / n_p as f64;
    if p_hat == 0.0 {
        return Err(Error::Degenerate("constant output: P term is zero".into()));
    }

    let per_outer: Vec<f64> = (0..n_outer)
        .into_par_iter()
        .map(|m| {
            let mut rng = task_rng(child_seed_indexed(seed, "mc-outer", m as u64));
            let xi = crate::dataset::sample_exp(&mut rng, model.rate(input));
            let mut row = vec![0.0; d];
            let mut ys = Vec::with_capacity(n_inner);
            for _ in 0..n_inner {
                for (i, slot) in row.iter_mut().enumerate() {
                    *slot = if i == input {
                        xi
                    } else {
                        crate::dataset::sample_exp(&mut rng, model.rate(i))
                    };
                }
                ys.push(model.eval(&row));
            }
            let q = empirical_quantile_inf(&mut ys, a);
            ys.iter().map(|&y| pinball(y, q, alpha)).sum::<f64>() / n_inner as f64
        })
        .collect();
    let o_hat = per_outer.iter().sum::<f64>() / n_outer as f64;
    Ok(1.0 - o_hat / p_hat)
}

/// Inf-form empirical quantile: the order statistic at `ceil(n * alpha)`.
/// Reorders `values` in place.
fn empirical_quantile_inf(values: &mut [f64], alpha: f64) -> f64 {
    let n = values.len();
    let k = ((n as f64 * alpha).ceil() as usize).clamp(1, n);
    let (_, v, _) = values.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
    *v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(v: f64) -> Alpha {
        Alpha::new(v).unwrap()
    }

    #[test]
    fn expdiff_o_matches_minus_alpha_ln_alpha() {
        for &al in &[0.1, 0.25, 0.5, 0.75, 0.9] {
            let o = expdiff_o_true(a(al), 0).unwrap();
            assert!((o - (-al * al.ln())).abs() < 1e-12, "alpha {al}: {o}");
        }
        assert!((expdiff_o_true(a(0.1), 0).unwrap() - 0.2302585).abs() < 1e-7);
        assert!((expdiff_o_true(a(0.5), 0).unwrap() - 0.3465736).abs() < 1e-7);
        // Symmetry at alpha = 1 - alpha.
        assert!((expdiff_o_true(a(0.5), 1).unwrap() - 0.3465736).abs() < 1e-7);
        assert!(
            (expdiff_o_true(a(0.25), 1).unwrap() - expdiff_o_true(a(0.75), 0).unwrap()).abs()
                < 1e-15
        );
    }

    fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> f64 {
        let h = (hi - lo) / steps as f64;
        let mut sum = f(lo) + f(hi);
        for s in 1..steps {
            let w = if s % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(lo + s as f64 * h);
        }
        sum * h / 3.0
    }

    /// Quadrature of `E[psi_alpha(Y, q)]` for a standard Laplace `Y`; an
    /// independent route used to pin the closed form. Integrated piecewise
    /// around the kinks of the loss (at q) and the density (at 0).
    fn laplace_pinball_risk_quadrature(alpha: f64) -> f64 {
        let q = laplace_quantile(alpha);
        let f = |y: f64| {
            0.5 * (-y.abs()).exp() * (y - q) * (alpha - if y <= q { 1.0 } else { 0.0 })
        };
        // The integrand decays like exp(-|y|); [-40, 40] is ample.
        let mut cuts = vec![-40.0, q.min(0.0), q.max(0.0), 40.0];
        cuts.dedup();
        cuts.windows(2)
            .map(|w| simpson(&f, w[0], w[1], 20_000))
            .sum()
    }

    #[test]
    fn expdiff_p_matches_quadrature() {
        assert!((expdiff_p_true(a(0.5)) - 0.5).abs() < 1e-12);
        assert!((expdiff_p_true(a(0.1)) - expdiff_p_true(a(0.9))).abs() < 1e-12);
        for &al in &[0.1, 0.25, 0.5, 0.75, 0.9] {
            let closed = expdiff_p_true(a(al));
            let quad = laplace_pinball_risk_quadrature(al);
            assert!((closed - quad).abs() < 1e-8, "alpha {al}: {closed} vs {quad}");
        }
    }

    #[test]
    fn expdiff_index_closed_values() {
        let s = expdiff_s_true(a(0.5), 0).unwrap();
        assert!((s - 0.3068528).abs() < 1e-7);
        assert!((s - (1.0 - std::f64::consts::LN_2)).abs() < 1e-12);
        for &al in &[0.1, 0.3, 0.7] {
            let s1 = expdiff_s_true(a(al), 0).unwrap();
            let s2 = expdiff_s_true(a(1.0 - al), 1).unwrap();
            assert!((s1 - s2).abs() < 1e-12);
        }
    }

    #[test]
    fn hypoexp_single_rate_reduces_to_exponential() {
        let p = HypoexpParams::new(vec![2.0]).unwrap();
        for &t in &[0.1, 0.5, 1.0, 3.0] {
            assert!((p.cdf(t) - (1.0 - (-2.0 * t).exp())).abs() < 1e-14);
        }
        assert!((p.mean() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hypoexp_cdf_two_rates_closed_value() {
        let p = HypoexpParams::new(vec![1.0, 2.0]).unwrap();
        let expected = 2.0 * (1.0 - (-1.0f64).exp()) - (1.0 - (-2.0f64).exp());
        assert!((p.cdf(1.0) - expected).abs() < 1e-12);
        assert!((p.cdf(1.0) - 0.399576).abs() < 1e-6);
        assert_eq!(p.cdf(-1.0), 0.0);
    }

    #[test]
    fn hypoexp_cdf_is_monotone_from_zero_to_one() {
        let p = HypoexpParams::new(vec![0.3, 0.775, 1.25]).unwrap();
        assert_eq!(p.cdf(0.0), 0.0);
        let mut prev = 0.0;
        for s in 1..=400 {
            let c = p.cdf(s as f64 * 0.1);
            assert!(c >= prev);
            prev = c;
        }
        assert!(p.cdf(200.0) > 1.0 - 1e-12);
    }

    #[test]
    fn hypoexp_quantile_inverts_cdf() {
        let p = HypoexpParams::new(vec![0.3, 0.775, 1.25]).unwrap();
        let mut rng = task_rng(7);
        for _ in 0..20 {
            use rand::Rng;
            let t: f64 = rng.random_range(0.05..20.0);
            let c = p.cdf(t);
            if c > 0.0 && c < 1.0 {
                let back = p.quantile(a(c));
                assert!((back - t).abs() < 1e-8, "t {t} -> cdf {c} -> {back}");
            }
        }
    }

    #[test]
    fn hypoexp_rejects_tied_rates() {
        assert!(HypoexpParams::new(vec![0.3, 0.3]).is_err());
    }

    /// Simpson quadrature of the truncated mean, pinning the mixture
    /// integral before it is trusted anywhere else.
    #[test]
    fn hypoexp_truncated_mean_matches_quadrature() {
        let p = HypoexpParams::new(vec![0.4, 0.9, 1.2]).unwrap();
        for &q in &[0.5, 1.5, 4.0, 10.0] {
            let steps = 200_000usize;
            let h = q / steps as f64;
            let dens = |t: f64| -> f64 {
                p.rates
                    .iter()
                    .zip(&p.coeffs)
                    .map(|(r, c)| c * r * (-r * t).exp())
                    .sum()
            };
            let mut sum = 0.0 + q * dens(q);
            for s in 1..steps {
                let t = s as f64 * h;
                let w = if s % 2 == 1 { 4.0 } else { 2.0 };
                sum += w * t * dens(t);
            }
            let quad = sum * h / 3.0;
            let closed = p.truncated_mean(q);
            assert!((closed - quad).abs() < 1e-8, "q {q}: {closed} vs {quad}");
        }
        assert!((p.truncated_mean(1e9) - p.mean()).abs() < 1e-9);
    }

    #[test]
    fn hypoexp_index_is_one_in_dimension_one() {
        for &al in &[0.1, 0.5, 0.9] {
            assert_eq!(hypoexp_qosa_true(a(al), 0, &[0.7]).unwrap(), 1.0);
        }
    }

    #[test]
    fn hypoexp_slower_rate_dominates() {
        for &al in &[0.2, 0.5, 0.8] {
            let s1 = hypoexp_qosa_true(a(al), 0, &[0.3, 1.25]).unwrap();
            let s2 = hypoexp_qosa_true(a(al), 1, &[0.3, 1.25]).unwrap();
            assert!(s1 > s2, "alpha {al}: {s1} vs {s2}");
        }
    }

    #[test]
    fn evenly_spaced_rates_cover_endpoint() {
        let r = evenly_spaced_rates(4).unwrap();
        assert_eq!(r.len(), 4);
        assert!((r[0] - 0.3).abs() < 1e-15);
        assert!((r[3] - 1.25).abs() < 1e-15);
        assert!(evenly_spaced_rates(1).is_err());
    }

    #[test]
    fn mc_oracle_agrees_with_expdiff_closed_form() {
        let s = mc_brute_force_qosa(&SyntheticModel::ExpDiff, 0, a(0.5), 3000, 3000, 11).unwrap();
        let truth = expdiff_s_true(a(0.5), 0).unwrap();
        assert!((s - truth).abs() < 0.01, "{s} vs {truth}");
    }

    #[test]
    fn mc_oracle_agrees_with_hypoexp_closed_form() {
        let rates = vec![0.3, 1.25];
        let model = SyntheticModel::additive_exp(rates.clone()).unwrap();
        let s = mc_brute_force_qosa(&model, 0, a(0.5), 3000, 3000, 13).unwrap();
        let truth = hypoexp_qosa_true(a(0.5), 0, &rates).unwrap();
        assert!((s - truth).abs() < 0.012, "{s} vs {truth}");
    }
}
