//! Exact checks of KL-regularized reward maximization on finite supports.
//!
//! For a base distribution `p`, reward `R` and temperature `η` the objective
//! `J(ρ) = Σ ρ R − η KL(ρ‖p)` is maximized by the tilt `ρ* ∝ p·exp(R/η)`.
//! This module computes the tilt in closed form, maximizes `J` independently
//! by exponentiated-gradient ascent, certifies optimality against random
//! perturbations, and checks the Bayes-rule form used by reward conditioning.

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("support mismatch: {0}")]
    Support(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for DiscreteDistribution {
    type Error = OracleError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<DiscreteDistribution> for Vec<f64> {
    fn from(d: DiscreteDistribution) -> Self {
        d.probs
    }
}

impl DiscreteDistribution {
    /// Nonnegative, finite entries summing to 1 within 1e-12.
    pub fn new(probs: Vec<f64>) -> Result<Self, OracleError> {
        if probs.is_empty() {
            return Err(OracleError::InvalidDistribution("empty support".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(OracleError::InvalidDistribution("negative or non-finite entry".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOLERANCE {
            return Err(OracleError::InvalidDistribution(format!("sums to {s}")));
        }
        Ok(Self { probs })
    }

    /// Divides nonnegative weights by their sum.
    pub fn normalized(weights: Vec<f64>) -> Result<Self, OracleError> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0 && s.is_finite()) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(OracleError::InvalidDistribution("weights must be nonnegative with positive sum".into()));
        }
        Self::new(renormalize(weights.into_iter().map(|w| w / s).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self, OracleError> {
        if n == 0 {
            return Err(OracleError::InvalidDistribution("empty support".into()));
        }
        Self::normalized(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Second normalization pass so the sum is within a few ulps of 1.
fn renormalize(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    for x in &mut v {
        *x /= s;
    }
    v
}

fn same_len(a: usize, b: usize, what: &str) -> Result<(), OracleError> {
    if a != b {
        return Err(OracleError::Support(format!("{what}: lengths {a} and {b}")));
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<(), OracleError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(OracleError::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    Ok(())
}

fn check_rewards(r: &[f64]) -> Result<(), OracleError> {
    if r.iter().any(|x| !x.is_finite()) {
        return Err(OracleError::InvalidArgument("rewards must be finite".into()));
    }
    Ok(())
}

/// Total variation distance `½ Σ |p − q|`.
pub fn tv(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64, OracleError> {
    same_len(p.len(), q.len(), "tv")?;
    Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `Σ p ln(p/q)`; requires `q_i > 0` wherever `p_i > 0`.
pub fn kl(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64, OracleError> {
    same_len(p.len(), q.len(), "kl")?;
    let mut total = 0.0;
    for (i, (&a, &b)) in p.probs.iter().zip(&q.probs).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(OracleError::Support(format!("p[{i}] > 0 but q[{i}] = 0")));
            }
            total += a * (a / b).ln();
        }
    }
    Ok(total.max(0.0))
}

/// `J(ρ) = Σ ρ R − η KL(ρ‖p)`.
pub fn objective_j(rho: &DiscreteDistribution, p: &DiscreteDistribution, r: &[f64], eta: f64) -> Result<f64, OracleError> {
    check_eta(eta)?;
    same_len(rho.len(), p.len(), "objective")?;
    same_len(r.len(), p.len(), "reward")?;
    check_rewards(r)?;
    let expected: f64 = rho.probs.iter().zip(r).map(|(a, b)| a * b).sum();
    Ok(expected - eta * kl(rho, p)?)
}

/// Closed-form maximizer `ρ* = p·exp(R/η) / Z` and the partition function `Z`.
///
/// `Z` is returned in linear scale and may overflow for extreme `R/η`;
/// [`log_partition`] gives the stable value.
pub fn tilt(p: &DiscreteDistribution, r: &[f64], eta: f64) -> Result<(DiscreteDistribution, f64), OracleError> {
    let (rho, log_z) = tilt_with_log_partition(p, r, eta)?;
    Ok((rho, log_z.exp()))
}

pub fn log_partition(p: &DiscreteDistribution, r: &[f64], eta: f64) -> Result<f64, OracleError> {
    Ok(tilt_with_log_partition(p, r, eta)?.1)
}

fn tilt_with_log_partition(p: &DiscreteDistribution, r: &[f64], eta: f64) -> Result<(DiscreteDistribution, f64), OracleError> {
    check_eta(eta)?;
    same_len(r.len(), p.len(), "reward")?;
    check_rewards(r)?;
    let m = p
        .probs
        .iter()
        .zip(r)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(_, ri)| ri / eta)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = p.probs.iter().zip(r).map(|(pi, ri)| pi * (ri / eta - m).exp()).collect();
    let s: f64 = w.iter().sum();
    let rho = DiscreteDistribution::new(renormalize(w.into_iter().map(|x| x / s).collect()))?;
    Ok((rho, m + s.ln()))
}

/// Maximizes `J` by exponentiated-gradient ascent, independent of the closed form.
///
/// Iterates in log space over the support of `p`, starting from uniform:
/// `log ρ ← log ρ + (κ/η)·∂J/∂ρ`, then renormalizes. With `κ = 0.5` the
/// log-space error contracts by half per step for any `η`. Stops when the
/// stationarity residual (spread of `∂J/∂ρ` across the support, divided by
/// `η`) falls below `tolerance`.
pub fn maximize_j_numerically(
    p: &DiscreteDistribution,
    r: &[f64],
    eta: f64,
    iterations: usize,
) -> Result<DiscreteDistribution, OracleError> {
    const STEP: f64 = 0.5;
    const TOLERANCE: f64 = 1e-13;
    check_eta(eta)?;
    same_len(r.len(), p.len(), "reward")?;
    check_rewards(r)?;
    let support: Vec<usize> = (0..p.len()).filter(|&i| p.probs[i] > 0.0).collect();
    let log_p: Vec<f64> = support.iter().map(|&i| p.probs[i].ln()).collect();
    let mut log_rho = vec![-(support.len() as f64).ln(); support.len()];
    let mut residual = f64::INFINITY;
    for _ in 0..iterations {
        // ∂J/∂ρ_i = R_i − η (ln ρ_i − ln p_i + 1)
        let grad: Vec<f64> = support
            .iter()
            .enumerate()
            .map(|(k, &i)| r[i] - eta * (log_rho[k] - log_p[k] + 1.0))
            .collect();
        let hi = grad.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = grad.iter().cloned().fold(f64::INFINITY, f64::min);
        residual = (hi - lo) / eta;
        if residual < TOLERANCE {
            return Ok(embed(p.len(), &support, &log_rho));
        }
        for (l, g) in log_rho.iter_mut().zip(&grad) {
            *l += STEP / eta * g;
        }
        let m = log_rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + log_rho.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        for l in &mut log_rho {
            *l -= lse;
        }
    }
    if residual < 1e-9 {
        return Ok(embed(p.len(), &support, &log_rho));
    }
    Err(OracleError::NotConverged { iterations, residual })
}

fn embed(n: usize, support: &[usize], log_rho: &[f64]) -> DiscreteDistribution {
    let mut v = vec![0.0; n];
    for (&i, l) in support.iter().zip(log_rho) {
        v[i] = l.exp();
    }
    DiscreteDistribution::new(renormalize(v)).expect("normalized log weights")
}

/// TV distance between the tilt and the normalized blend `p^{1−1/η}·p(x|R*=1)^{1/η}`,
/// where `p(R*=1|x) = exp(R_x − max R)` and `p(x|R*=1)` follows from Bayes' rule.
pub fn verify_cr_identity(p: &DiscreteDistribution, r: &[f64], eta: f64) -> Result<f64, OracleError> {
    check_eta(eta)?;
    same_len(r.len(), p.len(), "reward")?;
    check_rewards(r)?;
    let rmax = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let likelihood: Vec<f64> = r.iter().map(|ri| (ri - rmax).exp()).collect();
    let joint: Vec<f64> = likelihood.iter().zip(&p.probs).map(|(l, pi)| l * pi).collect();
    let evidence: f64 = joint.iter().sum();
    let posterior: Vec<f64> = joint.iter().map(|j| j / evidence).collect();
    let mut log_blend: Vec<f64> = Vec::with_capacity(p.len());
    for (pi, qi) in p.probs.iter().zip(&posterior) {
        log_blend.push(if *pi > 0.0 {
            (1.0 - 1.0 / eta) * pi.ln() + qi.ln() / eta
        } else {
            f64::NEG_INFINITY
        });
    }
    let m = log_blend.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let blend = DiscreteDistribution::normalized(log_blend.iter().map(|l| (l - m).exp()).collect())?;
    let (rho, _) = tilt(p, r, eta)?;
    tv(&blend, &rho)
}

/// Outcome of comparing `J(ρ*)` against random feasible distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub perturbations: usize,
    /// Smallest `J(ρ*) − J(ρ)` seen; negative beyond round-off means failure.
    pub min_margin: f64,
    pub passed: bool,
}

/// Draws feasible `ρ` (supported on `p`'s support) by mixing `ρ*` with random
/// Dirichlet(1) points at mixing weights spread over (0, 1].
pub fn optimality_certificate(
    p: &DiscreteDistribution,
    r: &[f64],
    eta: f64,
    perturbations: usize,
    rng: &mut Rng,
) -> Result<Certificate, OracleError> {
    let (star, _) = tilt(p, r, eta)?;
    let j_star = objective_j(&star, p, r, eta)?;
    let scale = 1.0 + j_star.abs() + r.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let tolerance = 1e-12 * scale;
    let mut min_margin = f64::INFINITY;
    for k in 0..perturbations {
        let weight = 10f64.powf(-6.0 * rng.uniform()) * if k % 2 == 0 { 1.0 } else { rng.uniform() };
        let raw: Vec<f64> = p
            .probs
            .iter()
            .map(|&pi| if pi > 0.0 { -rng.uniform().max(f64::MIN_POSITIVE).ln() } else { 0.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        let mixed: Vec<f64> = star
            .probs
            .iter()
            .zip(&raw)
            .map(|(s, d)| (1.0 - weight) * s + weight * d / total)
            .collect();
        let rho = DiscreteDistribution::new(renormalize(mixed))?;
        min_margin = min_margin.min(j_star - objective_j(&rho, p, r, eta)?);
    }
    Ok(Certificate {
        perturbations,
        min_margin,
        passed: min_margin >= -tolerance,
    })
}

/// One randomized verification instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub p: DiscreteDistribution,
    pub r: Vec<f64>,
    pub eta: f64,
}

impl Instance {
    /// Support size in `2..=max_n`; about a fifth of instances have zeros in `p`;
    /// every fourth instance uses `η = 1`, the rest are log-uniform in [0.01, 100].
    pub fn random(rng: &mut Rng, index: usize, max_n: usize) -> Self {
        let n = 2 + rng.below(max_n.max(2) - 1);
        let sparse = rng.bernoulli(0.2);
        let mut w: Vec<f64> = (0..n)
            .map(|_| -rng.uniform().max(f64::MIN_POSITIVE).ln())
            .collect();
        if sparse {
            let keep = rng.below(n);
            for (i, x) in w.iter_mut().enumerate() {
                if i != keep && rng.bernoulli(0.3) {
                    *x = 0.0;
                }
            }
        }
        let r: Vec<f64> = (0..n).map(|_| 3.0 * rng.normal()).collect();
        let eta = if index.is_multiple_of(4) { 1.0 } else { 10f64.powf(rng.uniform_range(-2.0, 2.0)) };
        Self {
            p: DiscreteDistribution::normalized(w).expect("positive weights"),
            r,
            eta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub instances: usize,
    pub max_tv_closed_vs_numeric: f64,
    pub max_tv_bayes_identity: f64,
    pub certificates_passed: usize,
    pub min_certificate_margin: f64,
}

/// Runs every check over `instances` random problems of support size at most `max_n`.
pub fn verify_sweep(
    instances: usize,
    max_n: usize,
    perturbations: usize,
    rng: &mut Rng,
) -> Result<VerifyReport, OracleError> {
    let mut report = VerifyReport {
        instances,
        max_tv_closed_vs_numeric: 0.0,
        max_tv_bayes_identity: 0.0,
        certificates_passed: 0,
        min_certificate_margin: f64::INFINITY,
    };
    for k in 0..instances {
        let mut child = rng.derive(k as u64);
        let inst = Instance::random(&mut child, k, max_n);
        let (closed, _) = tilt(&inst.p, &inst.r, inst.eta)?;
        let numeric = maximize_j_numerically(&inst.p, &inst.r, inst.eta, 500)?;
        report.max_tv_closed_vs_numeric = report.max_tv_closed_vs_numeric.max(tv(&closed, &numeric)?);
        report.max_tv_bayes_identity = report
            .max_tv_bayes_identity
            .max(verify_cr_identity(&inst.p, &inst.r, inst.eta)?);
        let cert = optimality_certificate(&inst.p, &inst.r, inst.eta, perturbations, &mut child)?;
        report.certificates_passed += usize::from(cert.passed);
        report.min_certificate_margin = report.min_certificate_margin.min(cert.min_margin);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn analytic_two_point_tilt() {
        let (rho, z) = tilt(&d(&[0.5, 0.5]), &[0.0, 2f64.ln()], 1.0).unwrap();
        assert!((rho.probs()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((rho.probs()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((z - 1.5).abs() < 1e-14);
    }

    #[test]
    fn numerical_maximizer_matches_analytic_case() {
        let rho = maximize_j_numerically(&d(&[0.5, 0.5]), &[0.0, 2f64.ln()], 1.0, 200).unwrap();
        assert!((rho.probs()[0] - 1.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn constant_reward_tilt_is_identity() {
        let p = d(&[0.1, 0.2, 0.7]);
        for eta in [0.01, 1.0, 50.0] {
            let (rho, _) = tilt(&p, &[3.0; 3], eta).unwrap();
            assert!(tv(&rho, &p).unwrap() < 1e-15);
        }
    }

    #[test]
    fn large_eta_tilt_approaches_base() {
        let p = d(&[0.1, 0.2, 0.7]);
        let (rho, _) = tilt(&p, &[1.0, -2.0, 0.5], 1e6).unwrap();
        assert!(tv(&rho, &p).unwrap() < 1e-5);
    }

    #[test]
    fn sharp_tilt_concentrates_on_argmax() {
        let p = d(&[0.25; 4]);
        let r = [0.0, 1.0, 0.5, -1.0];
        let rho = maximize_j_numerically(&p, &r, 0.01, 500).unwrap();
        assert!(rho.probs()[1] > 1.0 - 1e-12);
        let (closed, _) = tilt(&p, &r, 0.01).unwrap();
        assert!(tv(&closed, &rho).unwrap() < 1e-6);
    }

    #[test]
    fn objective_at_base_is_expected_reward() {
        let p = d(&[0.3, 0.7]);
        let j = objective_j(&p, &p, &[1.0, 2.0], 0.7).unwrap();
        assert!((j - 1.7).abs() < 1e-15);
    }

    #[test]
    fn objective_rejects_support_violation() {
        let p = d(&[1.0, 0.0]);
        let rho = d(&[0.5, 0.5]);
        assert!(matches!(objective_j(&rho, &p, &[0.0, 0.0], 1.0), Err(OracleError::Support(_))));
    }

    #[test]
    fn kl_examples() {
        let p = d(&[1.0, 0.0]);
        let q = d(&[0.5, 0.5]);
        assert!((kl(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(kl(&q, &q).unwrap(), 0.0);
        assert!(kl(&q, &p).is_err());
    }

    #[test]
    fn bayes_identity_collapses_at_unit_eta() {
        let p = d(&[0.2, 0.3, 0.5]);
        assert!(verify_cr_identity(&p, &[0.3, -1.0, 2.0], 1.0).unwrap() < 1e-12);
        assert!(verify_cr_identity(&p, &[1.0; 3], 3.0).unwrap() < 1e-15);
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(DiscreteDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(DiscreteDistribution::new(vec![]).is_err());
        assert!(serde_json::from_str::<DiscreteDistribution>("[0.5, 0.6]").is_err());
    }

    #[test]
    fn small_sweep_passes() {
        let report = verify_sweep(10, 20, 200, &mut Rng::new(3)).unwrap();
        assert!(report.max_tv_closed_vs_numeric < 1e-6);
        assert!(report.max_tv_bayes_identity < 1e-10);
        assert_eq!(report.certificates_passed, 10);
    }
}
