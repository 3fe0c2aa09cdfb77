//! Rényi-DP bookkeeping and the noise calibration for both perturbation
//! strategies.
//!
//! For a target `(ε, δ)` and split `λ ∈ (0, 1)` the Rényi order is fixed at
//! `α = ln(1/δ) / ((1 − λ)ε) + 1`, so the conversion term `ln(1/δ)/(α − 1)`
//! consumes `(1 − λ)ε` and the mechanism itself must stay within `λε`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};

/// Lower end of the ε search in the numerical inverses.
pub const EPSILON_SEARCH_MIN: f64 = 1e-9;
/// Upper end of the ε search; no feasible ε below this is an error.
pub const EPSILON_SEARCH_MAX: f64 = 1e9;
const BISECTION_RTOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdpPoint {
    pub alpha: f64,
    pub eps_rdp: f64,
}

impl RdpPoint {
    pub fn new(alpha: f64, eps_rdp: f64) -> Result<Self> {
        if !(alpha > 1.0) || !(eps_rdp >= 0.0) {
            return Err(Error::invalid(format!(
                "RDP point needs alpha > 1 and eps >= 0, got ({alpha}, {eps_rdp})"
            )));
        }
        Ok(Self { alpha, eps_rdp })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub lambda_split: f64,
}

impl DpBudget {
    pub fn new(epsilon: f64, delta: f64, lambda_split: f64) -> Result<Self> {
        let b = Self {
            epsilon,
            delta,
            lambda_split,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive and finite"));
        }
        check_unit_open(self.delta, "delta")?;
        check_unit_open(self.lambda_split, "lambda")
    }

    /// `α = ln(1/δ) / ((1 − λ)ε) + 1`.
    pub fn alpha(&self) -> f64 {
        (1.0 / self.delta).ln() / ((1.0 - self.lambda_split) * self.epsilon) + 1.0
    }
}

fn check_unit_open(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// Training and model constants entering the calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInputs {
    /// Optimizer iterations `T`.
    pub iterations: u64,
    /// Batch size `b`.
    pub batch_size: u64,
    /// Training-set size `N`.
    pub dataset_size: u64,
    /// Residual mappings `M`.
    pub blocks: u64,
    /// Input-norm bound `R`.
    pub input_bound: f64,
    /// Residual-output bound `G`.
    pub residual_bound: f64,
    /// Activation bound `B`.
    pub activation_bound: f64,
    /// Clipping floor `η`.
    pub eta: f64,
    /// Head-norm bound `a`.
    pub head_bound: f64,
}

impl CalibrationInputs {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.dataset_size == 0 || self.blocks == 0 {
            return Err(Error::invalid("T, b, N and M must be positive"));
        }
        if self.batch_size > self.dataset_size {
            return Err(Error::invalid("batch size exceeds dataset size"));
        }
        for (v, name) in [
            (self.input_bound, "R"),
            (self.residual_bound, "G"),
            (self.activation_bound, "B"),
            (self.head_bound, "a"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid("eta must be positive"));
        }
        Ok(())
    }

    /// Steps in which one fixed record is used: `⌈T·b / N⌉`.
    pub fn participations(&self) -> u64 {
        (self.iterations * self.batch_size).div_ceil(self.dataset_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub budget: DpBudget,
    pub inputs: CalibrationInputs,
    pub alpha: f64,
    pub participations: u64,
    pub pi_min: f64,
    pub gamma_min: f64,
    /// `(i, ε_i)` for the mixing weights `i = 0..M` and the head at `i = M`.
    pub per_layer_epsilons: Vec<(usize, f64)>,
    pub whole_model_epsilon: f64,
    pub delta: f64,
}

impl CalibrationReport {
    /// `key = value` text record echoing every input.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let i = &self.inputs;
        let _ = writeln!(s, "[calibration.strategy_additive]");
        for (k, v) in [
            ("epsilon", self.budget.epsilon.to_string()),
            ("delta", self.budget.delta.to_string()),
            ("lambda", self.budget.lambda_split.to_string()),
            ("iterations", i.iterations.to_string()),
            ("batch_size", i.batch_size.to_string()),
            ("dataset_size", i.dataset_size.to_string()),
            ("blocks", i.blocks.to_string()),
            ("input_bound", i.input_bound.to_string()),
            ("residual_bound", i.residual_bound.to_string()),
            ("participations", self.participations.to_string()),
            ("alpha", self.alpha.to_string()),
            ("pi_min", self.pi_min.to_string()),
            ("gamma_min", self.gamma_min.to_string()),
            ("whole_model_epsilon", self.whole_model_epsilon.to_string()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        for (layer, eps) in &self.per_layer_epsilons {
            let _ = writeln!(s, "layer_epsilon.{layer} = {eps}");
        }
        s
    }
}

/// `α·Δ² / (2σ²)`.
pub fn gaussian_rdp(alpha: f64, sensitivity: f64, sigma: f64) -> Result<RdpPoint> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(sensitivity >= 0.0) {
        return Err(Error::invalid("sensitivity must be nonnegative"));
    }
    RdpPoint::new(alpha, alpha * sensitivity * sensitivity / (2.0 * sigma * sigma))
}

/// Sequential composition at a common order.
pub fn rdp_compose(points: &[RdpPoint]) -> Result<RdpPoint> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("nothing to compose"))?;
    if points.iter().any(|p| p.alpha != first.alpha) {
        return Err(Error::invalid("composition requires a common alpha"));
    }
    RdpPoint::new(first.alpha, points.iter().map(|p| p.eps_rdp).sum())
}

/// `ε = ε_rdp + ln(1/δ) / (α − 1)`.
pub fn rdp_to_dp(point: RdpPoint, delta: f64) -> Result<f64> {
    check_unit_open(delta, "delta")?;
    if !(point.alpha > 1.0) {
        return Err(Error::invalid("alpha must exceed 1"));
    }
    Ok(point.eps_rdp + (1.0 / delta).ln() / (point.alpha - 1.0))
}

/// `ε_i = (λ/(i+1) + 1 − λ)·ε` for `i = 0..=M`.
pub fn per_layer_epsilons(epsilon: f64, lambda: f64, blocks: u64) -> Vec<(usize, f64)> {
    (0..=blocks as usize)
        .map(|i| (i, (lambda / (i + 1) as f64 + (1.0 - lambda)) * epsilon))
        .collect()
}

fn strategy1_factor(budget: &DpBudget, participations: u64) -> f64 {
    (2.0 * participations as f64 * budget.alpha() / (budget.lambda_split * budget.epsilon)).sqrt()
}

/// Smallest input and residual noise levels for the additive strategy.
pub fn calibrate_strategy1(budget: &DpBudget, inputs: &CalibrationInputs) -> Result<CalibrationReport> {
    budget.validate()?;
    inputs.validate()?;
    let p = inputs.participations();
    let f = strategy1_factor(budget, p);
    Ok(CalibrationReport {
        budget: *budget,
        inputs: *inputs,
        alpha: budget.alpha(),
        participations: p,
        pi_min: inputs.input_bound * f,
        gamma_min: inputs.residual_bound * f,
        per_layer_epsilons: per_layer_epsilons(budget.epsilon, budget.lambda_split, inputs.blocks),
        whole_model_epsilon: budget.epsilon,
        delta: budget.delta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strategy2Calibration {
    pub gamma_min: f64,
    pub pi_min: f64,
    pub alpha: f64,
}

/// Smallest residual and output noise levels for the multiplicative strategy.
pub fn calibrate_strategy2(budget: &DpBudget, inputs: &CalibrationInputs) -> Result<Strategy2Calibration> {
    budget.validate()?;
    inputs.validate()?;
    let alpha = budget.alpha();
    let f = (2.0 * alpha * inputs.blocks as f64 / (budget.lambda_split * budget.epsilon)).sqrt();
    Ok(Strategy2Calibration {
        gamma_min: inputs.activation_bound / inputs.eta * f,
        pi_min: inputs.head_bound * f,
        alpha,
    })
}

/// Smallest ε in `[EPSILON_SEARCH_MIN, EPSILON_SEARCH_MAX]` for which `feasible`
/// holds, assuming feasibility is monotone in ε. Bisection runs in log space.
fn smallest_feasible_epsilon<F: Fn(f64) -> bool>(feasible: F) -> Result<f64> {
    if feasible(EPSILON_SEARCH_MIN) {
        return Ok(EPSILON_SEARCH_MIN);
    }
    if !feasible(EPSILON_SEARCH_MAX) {
        return Err(Error::Infeasible(format!(
            "no epsilon below {EPSILON_SEARCH_MAX:e} is met by the given noise"
        )));
    }
    let (mut lo, mut hi) = (EPSILON_SEARCH_MIN, EPSILON_SEARCH_MAX);
    while (hi - lo) > BISECTION_RTOL * hi {
        let mid = (lo * hi).sqrt();
        let mid = if mid <= lo || mid >= hi { 0.5 * (lo + hi) } else { mid };
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn check_noise(gamma: f64, pi: f64) -> Result<()> {
    if !(gamma > 0.0 && pi > 0.0) {
        return Err(Error::invalid("noise coefficients must be positive"));
    }
    Ok(())
}

/// Smallest ε whose additive-strategy calibration is satisfied by `(γ, π)`.
pub fn achieved_epsilon_strategy1(
    gamma: f64,
    pi: f64,
    delta: f64,
    lambda_split: f64,
    inputs: &CalibrationInputs,
) -> Result<f64> {
    check_noise(gamma, pi)?;
    check_unit_open(delta, "delta")?;
    check_unit_open(lambda_split, "lambda")?;
    inputs.validate()?;
    let p = inputs.participations();
    smallest_feasible_epsilon(|eps| {
        let b = DpBudget {
            epsilon: eps,
            delta,
            lambda_split,
        };
        let f = strategy1_factor(&b, p);
        inputs.residual_bound * f <= gamma && inputs.input_bound * f <= pi
    })
}

/// Smallest ε whose multiplicative-strategy calibration is satisfied by `(γ, π)`.
pub fn achieved_epsilon_strategy2(
    gamma: f64,
    pi: f64,
    delta: f64,
    lambda_split: f64,
    inputs: &CalibrationInputs,
) -> Result<f64> {
    check_noise(gamma, pi)?;
    check_unit_open(delta, "delta")?;
    check_unit_open(lambda_split, "lambda")?;
    inputs.validate()?;
    smallest_feasible_epsilon(|eps| {
        let b = DpBudget {
            epsilon: eps,
            delta,
            lambda_split,
        };
        let f = (2.0 * b.alpha() * inputs.blocks as f64 / (lambda_split * eps)).sqrt();
        inputs.activation_bound / inputs.eta * f <= gamma && inputs.head_bound * f <= pi
    })
}

/// Split `λ` minimizing the additive-strategy ε for fixed noise, from a
/// log-spaced scan refined by golden-section search. Returns `(λ, ε)`.
pub fn best_lambda_strategy1(gamma: f64, pi: f64, delta: f64, inputs: &CalibrationInputs) -> Result<(f64, f64)> {
    let eval = |l: f64| achieved_epsilon_strategy1(gamma, pi, delta, l, inputs);
    let grid: Vec<f64> = (1..200).map(|k| k as f64 / 200.0).collect();
    let mut best = (grid[0], f64::INFINITY);
    for &l in &grid {
        if let Ok(e) = eval(l) {
            if e < best.1 {
                best = (l, e);
            }
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Infeasible("no lambda in (0, 1) gives a finite epsilon".into()));
    }
    let (mut a, mut b) = ((best.0 - 0.005).max(1e-6), (best.0 + 0.005).min(1.0 - 1e-6));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if eval(c)? < eval(d)? {
            b = d;
        } else {
            a = c;
        }
    }
    let l = 0.5 * (a + b);
    let e = eval(l)?;
    Ok(if e < best.1 { (l, e) } else { best })
}

/// Extension: instead of fixing α from the budget, scan α over a grid in
/// `(1, 256]` and report the tightest conversion of the per-record Gaussian
/// RDP `2·P·α·max(R²/π², G²/γ²)`. Returns `(α, ε)`.
pub fn alpha_grid_epsilon_strategy1(gamma: f64, pi: f64, delta: f64, inputs: &CalibrationInputs) -> Result<(f64, f64)> {
    check_noise(gamma, pi)?;
    check_unit_open(delta, "delta")?;
    inputs.validate()?;
    let p = inputs.participations() as f64;
    let worst = (inputs.input_bound / pi).powi(2).max((inputs.residual_bound / gamma).powi(2));
    let mut best = (f64::NAN, f64::INFINITY);
    for k in 1..=2550 {
        let alpha = 1.0 + k as f64 * 0.1;
        let eps = rdp_to_dp(RdpPoint::new(alpha, 2.0 * p * alpha * worst)?, delta)?;
        if eps < best.1 {
            best = (alpha, eps);
        }
    }
    Ok(best)
}

/// Attack error counts gathered on known members and non-members.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcomes {
    pub false_positives: u64,
    /// Non-members tested.
    pub negatives: u64,
    pub false_negatives: u64,
    /// Members tested.
    pub positives: u64,
}

/// One-sided Clopper–Pearson upper bound on a binomial rate.
pub fn clopper_pearson_upper(successes: u64, trials: u64, confidence: f64) -> Result<f64> {
    if trials == 0 || successes > trials {
        return Err(Error::invalid("need 0 <= successes <= trials and trials >= 1"));
    }
    check_unit_open(confidence, "confidence")?;
    if successes == trials {
        return Ok(1.0);
    }
    let beta = Beta::new(successes as f64 + 1.0, (trials - successes) as f64)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(beta.inverse_cdf(confidence))
}

/// `max(0, ln((1−δ−FNR)/FPR), ln((1−δ−FPR)/FNR))` from rate upper bounds.
pub fn epsilon_from_rates(fpr_hi: f64, fnr_hi: f64, delta: f64) -> f64 {
    let term = |num: f64, den: f64| {
        if num > 0.0 && den > 0.0 {
            (num / den).ln()
        } else if num > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    term(1.0 - delta - fnr_hi, fpr_hi)
        .max(term(1.0 - delta - fpr_hi, fnr_hi))
        .max(0.0)
}

/// Statistical lower bound on the ε of the mechanism that produced `outcomes`.
pub fn empirical_epsilon_lower_bound(outcomes: &AttackOutcomes, delta: f64, confidence: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid("delta must lie in [0, 1)"));
    }
    let fpr = clopper_pearson_upper(outcomes.false_positives, outcomes.negatives, confidence)?;
    let fnr = clopper_pearson_upper(outcomes.false_negatives, outcomes.positives, confidence)?;
    Ok(epsilon_from_rates(fpr, fnr, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Rényi divergence of order α between N(0, σ²) and N(Δ, σ²) by Simpson's rule.
    fn renyi_quadrature(alpha: f64, delta: f64, sigma: f64) -> f64 {
        let log_p = |x: f64| -0.5 * (x / sigma).powi(2) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let log_q = |x: f64| -0.5 * ((x - delta) / sigma).powi(2) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let f = |x: f64| (alpha * log_p(x) + (1.0 - alpha) * log_q(x)).exp();
        let (a, b) = (-60.0 * sigma - 10.0 * delta, 60.0 * sigma + 10.0 * delta * alpha);
        let n = 200_000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        (s * h / 3.0).ln() / (alpha - 1.0)
    }

    fn inputs() -> CalibrationInputs {
        CalibrationInputs {
            iterations: 100,
            batch_size: 10,
            dataset_size: 100,
            blocks: 3,
            input_bound: 1.5,
            residual_bound: 2.0,
            activation_bound: 1.0,
            eta: 0.1,
            head_bound: 1.0,
        }
    }

    #[test]
    fn gaussian_rdp_examples() {
        assert_eq!(gaussian_rdp(2.0, 1.0, 1.0).unwrap().eps_rdp, 1.0);
        assert_eq!(gaussian_rdp(3.0, 0.0, 0.7).unwrap().eps_rdp, 0.0);
        assert!(gaussian_rdp(2.0, 1.0, 0.0).is_err());
        assert!((renyi_quadrature(2.0, 1.0, 1.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gaussian_rdp_matches_quadrature() {
        for alpha in [1.5, 2.0, 4.0, 8.0] {
            for d in [0.5, 1.0, 2.0] {
                for s in [0.5, 1.0, 2.0] {
                    let q = renyi_quadrature(alpha, d, s);
                    let c = gaussian_rdp(alpha, d, s).unwrap().eps_rdp;
                    assert!((q - c).abs() < 1e-6, "alpha {alpha} d {d} s {s}: {q} vs {c}");
                }
            }
        }
    }

    #[test]
    fn composition() {
        let p = |e| RdpPoint::new(2.0, e).unwrap();
        assert!((rdp_compose(&[p(0.3), p(0.7)]).unwrap().eps_rdp - 1.0).abs() < 1e-15);
        assert_eq!(rdp_compose(&[p(0.4)]).unwrap(), p(0.4));
        assert_eq!(rdp_compose(&vec![p(0.25); 8]).unwrap().eps_rdp, 2.0);
        assert!(rdp_compose(&[p(0.1), RdpPoint::new(3.0, 0.1).unwrap()]).is_err());
        assert!(rdp_compose(&[]).is_err());
    }

    #[test]
    fn conversion() {
        let e = rdp_to_dp(RdpPoint::new(2.0, 0.0).unwrap(), (-1f64).exp()).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
        let e = rdp_to_dp(RdpPoint::new(2.0, 1.0).unwrap(), 1e-5).unwrap();
        assert!((e - 12.512925464970229).abs() < 1e-12);
        assert!(rdp_to_dp(RdpPoint::new(2.0, 1.0).unwrap(), 1.0).is_err());
        let near_one = rdp_to_dp(RdpPoint::new(2.0, 0.0).unwrap(), 1.0 - 1e-9).unwrap();
        assert!(near_one > 0.0 && near_one < 1e-8);
    }

    #[test]
    fn strategy1_plug_in() {
        let b = DpBudget::new(2.0, (-1f64).exp(), 0.5).unwrap();
        assert!((b.alpha() - 2.0).abs() < 1e-15);
        let inp = inputs();
        let r = calibrate_strategy1(&b, &inp).unwrap();
        let tbn = 10.0;
        assert!((r.pi_min - 2.0 * 1.5 * f64::sqrt(tbn)).abs() < 1e-12);
        assert!((r.gamma_min - 2.0 * 2.0 * f64::sqrt(tbn)).abs() < 1e-12);
        let mut doubled = inp;
        doubled.iterations *= 2;
        let r2 = calibrate_strategy1(&b, &doubled).unwrap();
        assert!((r2.pi_min / r.pi_min - 2f64.sqrt()).abs() < 1e-14);
        assert!((r2.gamma_min / r.gamma_min - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(r.per_layer_epsilons.len(), 4);
        assert_eq!(r.per_layer_epsilons[0].1, 2.0);
        assert!(r.render().contains("gamma_min = "));
    }

    #[test]
    fn participations_round_up() {
        let mut inp = inputs();
        inp.iterations = 7;
        inp.batch_size = 3;
        inp.dataset_size = 10;
        assert_eq!(inp.participations(), 3);
    }

    #[test]
    fn strategy2_plug_in() {
        let b = DpBudget::new(2.0, (-1f64).exp(), 0.5).unwrap();
        let mut inp = inputs();
        inp.blocks = 1;
        let one = calibrate_strategy2(&b, &inp).unwrap();
        // alpha = 2 and the common factor is sqrt(2*2*1/(0.5*2)) = 2.
        assert!((one.gamma_min - 20.0).abs() < 1e-12);
        assert!((one.pi_min - 2.0).abs() < 1e-12);
        inp.blocks = 4;
        let four = calibrate_strategy2(&b, &inp).unwrap();
        assert!((four.gamma_min / one.gamma_min - 2.0).abs() < 1e-14);
        assert!((four.pi_min / one.pi_min - 2.0).abs() < 1e-14);
        inp.activation_bound = 0.0;
        assert_eq!(calibrate_strategy2(&b, &inp).unwrap().gamma_min, 0.0);
    }

    /// Closed form of the inverse: with `u = 1/ε` and `L = ln(1/δ)` the
    /// constraint `γ² ≥ 2PG²α/(λε)` reads `A u² + B u − C ≤ 0`.
    fn closed_form_epsilon(bound: f64, noise: f64, delta: f64, lambda: f64, p: u64) -> f64 {
        let l = (1.0 / delta).ln();
        let k = 2.0 * p as f64 * bound * bound / lambda;
        let a = k * l / (1.0 - lambda);
        let b = k;
        let c = noise * noise;
        let u = (-b + (b * b + 4.0 * a * c).sqrt()) / (2.0 * a);
        1.0 / u
    }

    #[test]
    fn inverse_matches_closed_form() {
        let inp = inputs();
        let e = achieved_epsilon_strategy1(3.0, 100.0, 1e-5, 0.4, &inp).unwrap();
        let oracle = closed_form_epsilon(inp.residual_bound, 3.0, 1e-5, 0.4, inp.participations());
        assert!((e / oracle - 1.0).abs() < 1e-8, "{e} vs {oracle}");
    }

    #[test]
    fn vacuous_noise_hits_lower_bound() {
        let e = achieved_epsilon_strategy1(1e12, 1e12, 1e-5, 0.5, &inputs()).unwrap();
        assert!(e <= 10.0 * EPSILON_SEARCH_MIN);
    }

    #[test]
    fn tiny_noise_is_infeasible() {
        let err = achieved_epsilon_strategy1(1e-9, 1e-9, 1e-5, 0.5, &inputs()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn monotone_in_gamma() {
        let inp = inputs();
        let lo = achieved_epsilon_strategy1(5.0, 50.0, 1e-5, 0.5, &inp).unwrap();
        let hi = achieved_epsilon_strategy1(2.0, 50.0, 1e-5, 0.5, &inp).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn round_trip_strategy2() {
        let b = DpBudget::new(7.0, 1e-5, 0.3).unwrap();
        let inp = inputs();
        let c = calibrate_strategy2(&b, &inp).unwrap();
        let e = achieved_epsilon_strategy2(c.gamma_min, c.pi_min, 1e-5, 0.3, &inp).unwrap();
        assert!((e / 7.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn alpha_grid_is_no_looser() {
        let inp = inputs();
        let b = DpBudget::new(10.0, 1e-5, 0.5).unwrap();
        let r = calibrate_strategy1(&b, &inp).unwrap();
        let (_, eps) = alpha_grid_epsilon_strategy1(r.gamma_min, r.pi_min, 1e-5, &inp).unwrap();
        assert!(eps <= 10.0 * (1.0 + 1e-9));
    }

    #[test]
    fn lambda_search_improves_on_half() {
        let inp = inputs();
        let at_half = achieved_epsilon_strategy1(3.0, 3.0, 1e-5, 0.5, &inp).unwrap();
        let (l, e) = best_lambda_strategy1(3.0, 3.0, 1e-5, &inp).unwrap();
        assert!(l > 0.0 && l < 1.0);
        assert!(e <= at_half);
    }

    #[test]
    fn clopper_pearson_zero_successes() {
        // With k = 0 the bound is 1 − (1 − c)^{1/n}.
        let u = clopper_pearson_upper(0, 50, 0.95).unwrap();
        assert!((u - (1.0 - 0.05f64.powf(1.0 / 50.0))).abs() < 1e-9);
        assert_eq!(clopper_pearson_upper(5, 5, 0.95).unwrap(), 1.0);
        let mid = clopper_pearson_upper(10, 100, 0.95).unwrap();
        assert!(mid > 0.1 && mid < 0.2);
    }

    #[test]
    fn epsilon_from_rate_examples() {
        assert_eq!(epsilon_from_rates(0.5, 0.5, 0.0), 0.0);
        assert!((epsilon_from_rates(0.1, 0.1, 0.0) - 9f64.ln()).abs() < 1e-12);
        let a = epsilon_from_rates(0.01, 0.1, 0.0);
        let b = epsilon_from_rates(0.001, 0.1, 0.0);
        assert!(b > a && a > 4.0);
        assert_eq!(epsilon_from_rates(0.9, 0.9, 0.0), 0.0);
    }

    #[test]
    fn empirical_bound_of_chance_attack_is_zero() {
        let o = AttackOutcomes {
            false_positives: 50,
            negatives: 100,
            false_negatives: 50,
            positives: 100,
        };
        assert_eq!(empirical_epsilon_lower_bound(&o, 1e-5, 0.95).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn calibrate_round_trip(
            eps in 0.05f64..500.0,
            log_delta in -12.0f64..-1.0,
            lambda in 0.05f64..0.95,
            t in 1u64..5000,
            b in 1u64..64,
            extra in 0u64..2000,
            r in 0.1f64..40.0,
            g in 0.1f64..40.0,
        ) {
            let n = b + extra;
            let inp = CalibrationInputs { iterations: t, batch_size: b, dataset_size: n, blocks: 3,
                input_bound: r, residual_bound: g, activation_bound: 1.0, eta: 0.1, head_bound: 1.0 };
            let delta = 10f64.powf(log_delta);
            let rep = calibrate_strategy1(&DpBudget::new(eps, delta, lambda).unwrap(), &inp).unwrap();
            let back = achieved_epsilon_strategy1(rep.gamma_min, rep.pi_min, delta, lambda, &inp).unwrap();
            prop_assert!((back / eps - 1.0).abs() < 1e-6);
        }

        #[test]
        fn per_layer_sequence(eps in 0.01f64..100.0, lambda in 0.01f64..0.99, m in 1u64..20) {
            let seq = per_layer_epsilons(eps, lambda, m);
            prop_assert_eq!(seq.len() as u64, m + 1);
            for w in seq.windows(2) {
                prop_assert!(w[1].1 <= w[0].1);
            }
            for (i, e) in &seq {
                prop_assert_eq!(*e, (lambda / (*i + 1) as f64 + (1.0 - lambda)) * eps);
                prop_assert!(*e >= (1.0 - lambda) * eps - 1e-12 && *e <= eps + 1e-12);
            }
        }

        #[test]
        fn conversion_monotonicity(e in 0.0f64..10.0, d1 in 1e-8f64..0.5, bump in 1e-3f64..0.4) {
            let p = RdpPoint::new(3.0, e).unwrap();
            prop_assert!(rdp_to_dp(p, d1).unwrap() > rdp_to_dp(p, d1 + bump).unwrap());
            let q = RdpPoint::new(3.0, e + bump).unwrap();
            prop_assert!(rdp_to_dp(q, d1).unwrap() > rdp_to_dp(p, d1).unwrap());
        }
    }
}
