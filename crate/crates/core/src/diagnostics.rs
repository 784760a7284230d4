//! Checks that can be run without ground truth (SNR_eff, the KS residual
//! test) and the pointwise error bound, which needs it.

use std::fmt;

use crate::basis::DomainBasis;
use crate::error::{invalid, Error, Result};
use crate::generator::MixingSchedule;
use crate::linalg::norm2;
use crate::recovery::RecoveryResult;
use crate::Scalar;

/// `σ_min / (ε̄ + δ_approx)`.
pub fn snr_eff<S: Scalar>(sigma_min: S, mean_residual: S, delta_approx: S) -> Result<S> {
    if mean_residual < S::zero() || delta_approx < S::zero() {
        return invalid("residual and delta_approx must be nonnegative");
    }
    let denom = mean_residual + delta_approx;
    if denom.f64() < 1e-12 {
        return Err(Error::DegenerateInput("SNR_eff denominator below 1e-12 (infinite SNR)".into()));
    }
    Ok(sigma_min / denom)
}

pub fn compute_snr_eff<S: Scalar>(basis: &DomainBasis<S>, residual_norms: &[S], delta_approx: S) -> Result<S> {
    if residual_norms.iter().any(|r| *r < S::zero()) {
        return invalid("negative residual norm");
    }
    let mean = residual_norms.iter().copied().sum::<S>() / S::lit(residual_norms.len().max(1) as f64);
    snr_eff(basis.sigma_min, mean, delta_approx)
}

#[derive(Clone, Debug)]
pub struct BoundReport<S> {
    /// `‖α̂(t) − α*(t)‖` before projection, shift coordinates.
    pub errors: Vec<S>,
    /// `(‖ε̂_t‖ + δ_approx) / σ_min`.
    pub bounds: Vec<S>,
    pub violations: usize,
}

impl<S: Scalar> BoundReport<S> {
    pub fn fraction_satisfied(&self) -> f64 {
        if self.errors.is_empty() {
            return 1.0;
        }
        1.0 - self.violations as f64 / self.errors.len() as f64
    }

    pub fn merge(&mut self, other: BoundReport<S>) {
        self.errors.extend(other.errors);
        self.bounds.extend(other.bounds);
        self.violations += other.violations;
    }
}

/// Compares pre-projection errors against the pointwise bound. `epsilons`
/// holds `‖ε̂_t‖`, the representation deviation from the mixed conditional mean.
pub fn check_pointwise_bound<S: Scalar>(
    result: &RecoveryResult<S>,
    truth: &MixingSchedule<S>,
    basis: &DomainBasis<S>,
    delta_approx: S,
    epsilons: &[S],
) -> Result<BoundReport<S>> {
    let t_len = result.pre_projection.len();
    if truth.len() != t_len || epsilons.len() != t_len {
        return invalid(format!("lengths differ: result {t_len}, truth {}, epsilons {}", truth.len(), epsilons.len()));
    }
    let slack = S::lit(1e-9);
    let mut errors = Vec::with_capacity(t_len);
    let mut bounds = Vec::with_capacity(t_len);
    let mut violations = 0;
    for t in 0..t_len {
        let star = basis.shift_coords(&truth.alphas[t]);
        let diff: Vec<S> = result.pre_projection[t].iter().zip(&star).map(|(a, b)| *a - *b).collect();
        let err = norm2(&diff);
        let bound = (epsilons[t] + delta_approx) / basis.sigma_min;
        if err > bound + slack {
            violations += 1;
        }
        errors.push(err);
        bounds.push(bound);
    }
    Ok(BoundReport { errors, bounds, violations })
}

/// `Q_KS(λ) = 2 Σ_{j≥1} (−1)^{j−1} e^{−2j²λ²}`, 100 terms.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS statistic and asymptotic p-value with effective size
/// `n_a n_b / (n_a + n_b)`.
pub fn ks_two_sample<S: Scalar>(a: &[S], b: &[S]) -> Result<(S, S)> {
    if a.len() < 20 || b.len() < 20 {
        return invalid(format!("KS needs at least 20 samples per side, got {} and {}", a.len(), b.len()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return invalid("non-finite sample");
    }
    let mut xa: Vec<f64> = a.iter().map(|x| x.f64()).collect();
    let mut xb: Vec<f64> = b.iter().map(|x| x.f64()).collect();
    xa.sort_by(|p, q| p.partial_cmp(q).unwrap());
    xb.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0, 0);
    let mut stat: f64 = 0.0;
    while i < na && j < nb {
        let v = xa[i].min(xb[j]);
        while i < na && xa[i] <= v {
            i += 1;
        }
        while j < nb && xb[j] <= v {
            j += 1;
        }
        stat = stat.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let p = kolmogorov_q(ne.sqrt() * stat);
    Ok((S::lit(stat), S::lit(p)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Supported,
    Marginal,
    Violated,
}

impl Verdict {
    pub fn from_p(p: f64) -> Self {
        if p > 0.05 {
            Verdict::Supported
        } else if p > 0.01 {
            Verdict::Marginal
        } else {
            Verdict::Violated
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Supported => "supported",
            Verdict::Marginal => "marginal",
            Verdict::Violated => "violated",
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AssumptionCheck<S> {
    pub ks_statistic: S,
    pub ks_p_value: S,
    pub verdict: Verdict,
}

/// KS test of transition residuals against pure-domain residuals.
pub fn verify_assumption<S: Scalar>(pure_residuals: &[S], transition_residuals: &[S]) -> Result<AssumptionCheck<S>> {
    let (stat, p) = ks_two_sample(pure_residuals, transition_residuals)?;
    Ok(AssumptionCheck { ks_statistic: stat, ks_p_value: p, verdict: Verdict::from_p(p.f64()) })
}

#[derive(Clone, Debug)]
pub struct DiagnosticsReport<S> {
    pub snr_eff: S,
    pub sigma_min: S,
    pub mean_residual: S,
    pub delta_approx: S,
    pub bound_violations: Option<usize>,
    pub bound_fraction: Option<f64>,
    pub assumption: Option<AssumptionCheck<S>>,
}

impl<S: Scalar> DiagnosticsReport<S> {
    pub fn new(sigma_min: S, mean_residual: S, delta_approx: S) -> Result<Self> {
        Ok(DiagnosticsReport {
            snr_eff: snr_eff(sigma_min, mean_residual, delta_approx)?,
            sigma_min,
            mean_residual,
            delta_approx,
            bound_violations: None,
            bound_fraction: None,
            assumption: None,
        })
    }

    pub fn with_bound(mut self, report: &BoundReport<S>) -> Self {
        self.bound_violations = Some(report.violations);
        self.bound_fraction = Some(report.fraction_satisfied());
        self
    }

    pub fn with_assumption(mut self, check: AssumptionCheck<S>) -> Self {
        self.assumption = Some(check);
        self
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "NA".into());
        vec![
            ("snr_eff", format!("{:.6}", self.snr_eff.f64())),
            ("sigma_min", format!("{:.6}", self.sigma_min.f64())),
            ("mean_residual", format!("{:.6}", self.mean_residual.f64())),
            ("delta_approx", format!("{:.6}", self.delta_approx.f64())),
            ("bound_violations", opt(self.bound_violations.map(|v| v.to_string()))),
            ("bound_fraction", opt(self.bound_fraction.map(|v| format!("{v:.6}")))),
            ("ks_statistic", opt(self.assumption.map(|a| format!("{:.6}", a.ks_statistic.f64())))),
            ("ks_p_value", opt(self.assumption.map(|a| format!("{:.6e}", a.ks_p_value.f64())))),
            ("verdict", opt(self.assumption.map(|a| a.verdict.to_string()))),
        ]
    }

    pub fn to_key_value(&self) -> String {
        self.fields().into_iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
    }

    pub fn csv_header() -> String {
        "snr_eff,sigma_min,mean_residual,delta_approx,bound_violations,bound_fraction,ks_statistic,ks_p_value,verdict".into()
    }

    pub fn csv_row(&self) -> String {
        self.fields().into_iter().map(|(_, v)| v).collect::<Vec<_>>().join(",")
    }
}
