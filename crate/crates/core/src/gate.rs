//! Hard-concrete L0 gates.
//!
//! Each gated unit owns a location parameter `log_alpha`. During training the
//! gate value is a reparameterized sample
//!
//! ```text
//! eps ~ U(t_l, t_u)
//! s   = sigmoid((ln(eps / (1 - eps)) + log_alpha) / tau)
//! m   = clip01(s * (zeta - gamma) + gamma)
//! ```
//!
//! and at evaluation it is the deterministic `clip01(sigmoid(log_alpha) *
//! (zeta - gamma) + gamma)`. The expected number of non-zero gates is
//! `sum_j sigmoid(log_alpha_j - ln(-gamma / zeta) / tau)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{kernels::sigmoid, RngStream, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("invalid gate configuration: {0}")]
    Config(String),
    #[error("gate is in eval mode; training samples need train mode")]
    NotTraining,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Hard-concrete hyperparameters shared by every gate of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub tau: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub t_l: f64,
    pub t_u: f64,
    /// Mean of the normal `log_alpha` initialization.
    pub init_mean: f64,
    pub init_std: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { tau: 2.0 / 3.0, gamma: -0.1, zeta: 1.1, t_l: 0.05, t_u: 0.95, init_mean: 2.0, init_std: 0.01 }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), GateError> {
        let fail = |m: String| Err(GateError::Config(m));
        if !(self.tau > 0.0) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.gamma < 0.0) {
            return fail(format!("gamma must be negative, got {}", self.gamma));
        }
        if !(self.zeta > 1.0) {
            return fail(format!("zeta must exceed 1, got {}", self.zeta));
        }
        if !(0.0 <= self.t_l && self.t_l < self.t_u && self.t_u <= 1.0) {
            return fail(format!("need 0 <= t_l < t_u <= 1, got t_l={} t_u={}", self.t_l, self.t_u));
        }
        if !(self.init_std >= 0.0) || !self.init_mean.is_finite() {
            return fail("log_alpha initialization must be finite with std >= 0".into());
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.tau
    }

    /// Stretched and clipped deterministic gate for one location.
    pub fn eval_value(&self, log_alpha: f64) -> f64 {
        (sigmoid(log_alpha) * (self.zeta - self.gamma) + self.gamma).clamp(0.0, 1.0)
    }

    /// Probability that the stretched gate is non-zero.
    pub fn open_probability(&self, log_alpha: f64) -> f64 {
        sigmoid(log_alpha - self.beta() * (-self.gamma / self.zeta).ln())
    }

    /// Location at which the deterministic gate starts to open.
    pub fn closing_threshold(&self) -> f64 {
        let p = -self.gamma / (self.zeta - self.gamma);
        (p / (1.0 - p)).ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateMode {
    Train,
    Eval,
}

/// Learnable gate locations for one group of structural units.
#[derive(Clone, Debug, PartialEq)]
pub struct GateVector {
    pub log_alpha: Tensor,
    pub config: GateConfig,
    pub mode: GateMode,
}

/// Frozen evaluation-time gate values and keep decisions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSnapshot {
    pub values: Vec<f64>,
    pub keep: Vec<bool>,
}

impl GateSnapshot {
    pub fn from_values(values: Vec<f64>) -> Self {
        let keep = values.iter().map(|&v| v > 0.0).collect();
        Self { values, keep }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn kept(&self) -> Vec<usize> {
        self.keep.iter().enumerate().filter_map(|(i, &k)| k.then_some(i)).collect()
    }

    pub fn open_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn all_closed(&self) -> bool {
        !self.keep.iter().any(|&k| k)
    }
}

impl GateVector {
    pub fn new(len: usize, config: GateConfig, rng: &mut RngStream) -> Result<Self, GateError> {
        config.validate()?;
        let data = (0..len).map(|_| rng.normal(config.init_mean, config.init_std)).collect();
        Ok(Self { log_alpha: Tensor::vector(data), config, mode: GateMode::Train })
    }

    pub fn from_log_alpha(log_alpha: Vec<f64>, config: GateConfig) -> Result<Self, GateError> {
        config.validate()?;
        Ok(Self { log_alpha: Tensor::vector(log_alpha), config, mode: GateMode::Train })
    }

    pub fn len(&self) -> usize {
        self.log_alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_alpha.is_empty()
    }

    fn check(&self, tape: &Tape, la: Var) -> Result<(), GateError> {
        self.config.validate()?;
        if tape.shape(la) != [self.len()] {
            return Err(TensorError::Shape {
                op: "gate",
                detail: format!("log_alpha var {:?} for gate of {}", tape.shape(la), self.len()),
            }
            .into());
        }
        Ok(())
    }

    /// Reparameterized training sample, differentiable in `la` (the tape
    /// variable bound to `self.log_alpha`).
    pub fn sample_train(&self, tape: &mut Tape, la: Var, rng: &mut RngStream) -> Result<Var, GateError> {
        if self.mode != GateMode::Train {
            return Err(GateError::NotTraining);
        }
        self.check(tape, la)?;
        let c = &self.config;
        let noise: Vec<f64> = (0..self.len())
            .map(|_| {
                let eps = rng.uniform(c.t_l, c.t_u);
                (eps / (1.0 - eps)).ln()
            })
            .collect();
        self.relaxed(tape, la, Tensor::vector(noise))
    }

    /// Training sample with caller-supplied `eps` draws.
    pub fn sample_with_noise(&self, tape: &mut Tape, la: Var, eps: &[f64]) -> Result<Var, GateError> {
        self.check(tape, la)?;
        if eps.len() != self.len() || eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(GateError::Config("noise must lie strictly inside (0, 1), one per unit".into()));
        }
        let logits = eps.iter().map(|e| (e / (1.0 - e)).ln()).collect();
        self.relaxed(tape, la, Tensor::vector(logits))
    }

    fn relaxed(&self, tape: &mut Tape, la: Var, logit_noise: Tensor) -> Result<Var, GateError> {
        let c = &self.config;
        let noise = tape.constant(logit_noise);
        let z = tape.add(noise, la)?;
        let z = tape.scale(z, 1.0 / c.tau)?;
        let s = tape.sigmoid(z)?;
        self.stretch_clip(tape, s)
    }

    fn stretch_clip(&self, tape: &mut Tape, s: Var) -> Result<Var, GateError> {
        let c = &self.config;
        let stretched = tape.scale(s, c.zeta - c.gamma)?;
        let shifted = tape.add_scalar(stretched, c.gamma)?;
        Ok(tape.clip01(shifted)?)
    }

    /// Deterministic gate as a differentiable tape value.
    pub fn eval_var(&self, tape: &mut Tape, la: Var) -> Result<Var, GateError> {
        self.check(tape, la)?;
        let s = tape.sigmoid(la)?;
        self.stretch_clip(tape, s)
    }

    /// Deterministic gate values and keep decisions.
    pub fn gate_eval(&self) -> GateSnapshot {
        GateSnapshot::from_values(self.log_alpha.data().iter().map(|&a| self.config.eval_value(a)).collect())
    }

    /// Expected open-gate count, differentiable in `la`.
    pub fn complexity_loss(&self, tape: &mut Tape, la: Var) -> Result<Var, GateError> {
        self.check(tape, la)?;
        let c = &self.config;
        let shifted = tape.add_scalar(la, -c.beta() * (-c.gamma / c.zeta).ln())?;
        let p = tape.sigmoid(shifted)?;
        Ok(tape.sum(p)?)
    }

    pub fn complexity_value(&self) -> f64 {
        self.log_alpha.data().iter().map(|&a| self.config.open_probability(a)).sum()
    }
}

/// `acc + lambda * sum(penalties)`.
pub fn total_loss(tape: &mut Tape, acc: Var, penalties: &[Var], lambda: f64) -> Result<Var, GateError> {
    if !(lambda >= 0.0) {
        return Err(GateError::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    if penalties.is_empty() || lambda == 0.0 {
        return Ok(acc);
    }
    let mut sum = penalties[0];
    for &p in &penalties[1..] {
        sum = tape.add(sum, p)?;
    }
    let weighted = tape.scale(sum, lambda)?;
    Ok(tape.add(acc, weighted)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gate(values: &[f64]) -> GateVector {
        GateVector::from_log_alpha(values.to_vec(), GateConfig::default()).unwrap()
    }

    #[test]
    fn midpoint_sample() {
        let g = gate(&[0.0]);
        let mut tape = Tape::new();
        let la = tape.leaf(g.log_alpha.clone());
        let m = g.sample_with_noise(&mut tape, la, &[0.5]).unwrap();
        assert!((tape.scalar_value(m) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn saturated_sample_clips_to_one() {
        let g = gate(&[20.0]);
        let mut tape = Tape::new();
        let la = tape.leaf(g.log_alpha.clone());
        let m = g.sample_with_noise(&mut tape, la, &[0.5]).unwrap();
        assert_eq!(tape.scalar_value(m), 1.0);
    }

    #[test]
    fn eval_examples() {
        let snap = gate(&[0.0, -10.0]).gate_eval();
        assert!((snap.values[0] - 0.5).abs() < 1e-15);
        assert_eq!(snap.values[1], 0.0);
        assert_eq!(snap.keep, vec![true, false]);
        assert_eq!(snap.kept(), vec![0]);
    }

    #[test]
    fn keep_flips_at_threshold() {
        let c = GateConfig::default();
        let t = c.closing_threshold();
        assert!((t - (0.0833333333f64 / 0.9166666667).ln()).abs() < 1e-8);
        assert!((t + 2.397895).abs() < 1e-6);
        let g = gate(&[t - 1e-9, t + 1e-9]);
        assert_eq!(g.gate_eval().keep, vec![false, true]);
    }

    #[test]
    fn complexity_term_worked_value() {
        // Direct evaluation: sigmoid(0 - 1.5 * ln(0.1 / 1.1)) = sigmoid(3.596842).
        let expected = 1.0 / (1.0 + (-1.5f64 * (1.1f64 / 0.1).ln()).exp());
        assert!((expected - 0.9733211).abs() < 1e-6);
        let g = gate(&[0.0]);
        assert!((g.complexity_value() - expected).abs() < 1e-12);
        let mut tape = Tape::new();
        let la = tape.leaf(g.log_alpha.clone());
        let l = g.complexity_loss(&mut tape, la).unwrap();
        assert!((tape.scalar_value(l) - expected).abs() < 1e-12);
    }

    #[test]
    fn complexity_limits_and_monotonicity() {
        let c = GateConfig::default();
        assert!(c.open_probability(-60.0) < 1e-20);
        let xs: Vec<f64> = (-40..40).map(|i| i as f64 * 0.25).collect();
        for w in xs.windows(2) {
            let (a, b) = (c.open_probability(w[0]), c.open_probability(w[1]));
            assert!(a < b && a > 0.0 && b < 1.0);
        }
    }

    #[test]
    fn total_loss_examples() {
        let g = gate(&[0.0]);
        let mut tape = Tape::new();
        let la = tape.leaf(g.log_alpha.clone());
        let acc = tape.constant(Tensor::scalar(1.0));
        let pen = g.complexity_loss(&mut tape, la).unwrap();
        let off = total_loss(&mut tape, acc, &[pen], 0.0).unwrap();
        assert_eq!(tape.scalar_value(off), 1.0);
        let one = total_loss(&mut tape, acc, &[pen], 0.1).unwrap();
        let two = total_loss(&mut tape, acc, &[pen], 0.2).unwrap();
        let lc = g.complexity_value();
        assert!((tape.scalar_value(one) - (1.0 + 0.1 * lc)).abs() < 1e-15);
        assert!((tape.scalar_value(one) - 1.09733211).abs() < 1e-6);
        let d1 = tape.scalar_value(one) - 1.0;
        let d2 = tape.scalar_value(two) - 1.0;
        assert!((d2 - 2.0 * d1).abs() < 1e-15);
        assert!(total_loss(&mut tape, acc, &[pen], -1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            GateConfig { tau: 0.0, ..Default::default() },
            GateConfig { gamma: 0.0, ..Default::default() },
            GateConfig { zeta: 1.0, ..Default::default() },
            GateConfig { t_l: 0.5, t_u: 0.5, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(GateError::Config(_))), "{c:?}");
        }
        GateConfig::default().validate().unwrap();
    }

    #[test]
    fn eval_mode_refuses_training_samples() {
        let mut g = gate(&[0.0]);
        g.mode = GateMode::Eval;
        let mut tape = Tape::new();
        let la = tape.leaf(g.log_alpha.clone());
        let mut rng = RngStream::new(0);
        assert!(matches!(g.sample_train(&mut tape, la, &mut rng), Err(GateError::NotTraining)));
    }

    #[test]
    fn initialization_starts_open() {
        let mut rng = RngStream::new(3);
        let g = GateVector::new(64, GateConfig::default(), &mut rng).unwrap();
        let snap = g.gate_eval();
        assert_eq!(snap.open_count(), 64);
        assert!(snap.values.iter().all(|&v| v > 0.9));
    }
}
