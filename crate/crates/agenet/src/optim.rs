//! Gradient-descent optimizers: SGD, Adam, RMSprop.
//!
//! Each `*_step` updates a parameter list in place given gradients in the
//! same order. State (moment estimates, step counter) lives outside the
//! parameters so optimizers can be swapped without touching the network.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// The update divides by sqrt(v_hat) + eps. Some implementations instead
    /// compute sqrt(v_hat + eps); set this to replicate them.
    pub eps_inside_sqrt: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            eps_inside_sqrt: false,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState { t: 0, m: Vec::new(), v: Vec::new() }
    }
}

/// Running squared-gradient average for RMSprop.
#[derive(Debug, Clone, Default)]
pub struct RmsPropState<T> {
    pub t: u64,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> RmsPropState<T> {
    pub fn new() -> Self {
        RmsPropState { t: 0, v: Vec::new() }
    }
}

fn check_pairing<T: Scalar>(
    params: &[&mut Tensor<T>],
    grads: &[&Tensor<T>],
    step: u64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} gradients at optimizer step {step}",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dims() != g.dims() {
            return Err(Error::shape(format!(
                "parameter {i} is {} but its gradient is {} at optimizer step {step}",
                p.shape(),
                g.shape()
            )));
        }
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite gradient in parameter {i} at optimizer step {step}"
            )));
        }
    }
    Ok(())
}

fn ensure_state<T: Scalar>(slots: &mut Vec<Tensor<T>>, params: &[&mut Tensor<T>]) {
    if slots.is_empty() {
        *slots = params.iter().map(|p| Tensor::zeros(p.shape().clone())).collect();
    }
}

/// Plain gradient descent: w <- w - lr * g.
pub fn sgd_step<T: Scalar>(
    mut params: Vec<&mut Tensor<T>>,
    grads: &[&Tensor<T>],
    learning_rate: f64,
    step: u64,
) -> Result<()> {
    check_pairing(&params, grads, step)?;
    let lr = T::from_f64(learning_rate);
    for (p, g) in params.iter_mut().zip(grads) {
        for (w, &gi) in p.data_mut().iter_mut().zip(g.data()) {
            *w = *w - lr * gi;
        }
    }
    Ok(())
}

/// One Adam update across all parameters; the step counter advances once.
pub fn adam_step<T: Scalar>(
    mut params: Vec<&mut Tensor<T>>,
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    state.t += 1;
    check_pairing(&params, grads, state.t)?;
    ensure_state(&mut state.m, &params);
    ensure_state(&mut state.v, &params);
    if state.m.len() != params.len() {
        return Err(Error::shape(format!(
            "optimizer state tracks {} parameters, step got {}",
            state.m.len(),
            params.len()
        )));
    }

    let t = state.t;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    // Bias corrections depend only on t; compute once.
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(t as i32));
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.epsilon);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            let denom = if cfg.eps_inside_sqrt {
                (v_hat + eps).sqrt()
            } else {
                v_hat.sqrt() + eps
            };
            *w = *w - lr * m_hat / denom;
        }
    }
    Ok(())
}

/// RMSprop: v <- rho v + (1 - rho) g^2; w <- w - lr * g / (sqrt(v) + eps).
pub fn rmsprop_step<T: Scalar>(
    mut params: Vec<&mut Tensor<T>>,
    grads: &[&Tensor<T>],
    state: &mut RmsPropState<T>,
    learning_rate: f64,
    rho: f64,
    epsilon: f64,
) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::config(format!("rho must lie in [0, 1), got {rho}")));
    }
    state.t += 1;
    check_pairing(&params, grads, state.t)?;
    ensure_state(&mut state.v, &params);

    let r = T::from_f64(rho);
    let one = T::one();
    let lr = T::from_f64(learning_rate);
    let eps = T::from_f64(epsilon);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.v.iter_mut()) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = r * *vi + (one - r) * gi * gi;
            *w = *w - lr * gi / (vi.sqrt() + eps);
        }
    }
    Ok(())
}

/// Which update rule a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    RmsProp,
}

impl OptimizerKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            other => Err(Error::config(format!(
                "unknown optimizer '{other}' (expected sgd, adam, or rmsprop)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
        }
    }
}

/// An update rule bundled with its state, for the training loop.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd { learning_rate: f64, step: u64 },
    Adam { cfg: AdamConfig, state: AdamState<T> },
    RmsProp { learning_rate: f64, rho: f64, epsilon: f64, state: RmsPropState<T> },
}

impl<T: Scalar> Optimizer<T> {
    pub fn sgd(learning_rate: f64) -> Self {
        Optimizer::Sgd { learning_rate, step: 0 }
    }

    pub fn adam(cfg: AdamConfig) -> Self {
        Optimizer::Adam { cfg, state: AdamState::new() }
    }

    pub fn rmsprop(learning_rate: f64, rho: f64, epsilon: f64) -> Self {
        Optimizer::RmsProp { learning_rate, rho, epsilon, state: RmsPropState::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[&Tensor<T>]) -> Result<()> {
        match self {
            Optimizer::Sgd { learning_rate, step } => {
                *step += 1;
                sgd_step(params, grads, *learning_rate, *step)
            }
            Optimizer::Adam { cfg, state } => adam_step(params, grads, state, cfg),
            Optimizer::RmsProp { learning_rate, rho, epsilon, state } => {
                rmsprop_step(params, grads, state, *learning_rate, *rho, *epsilon)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_tensor(x: f64) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(vec![1]).unwrap(), vec![x]).unwrap()
    }

    /// Independent scalar Adam used as the oracle for the tensor version.
    struct ScalarAdam {
        m: f64,
        v: f64,
        t: u32,
    }

    impl ScalarAdam {
        fn new() -> Self {
            ScalarAdam { m: 0.0, v: 0.0, t: 0 }
        }

        fn step(&mut self, w: f64, g: f64, cfg: &AdamConfig) -> f64 {
            self.t += 1;
            self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * g;
            self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m / (1.0 - cfg.beta1.powi(self.t as i32));
            let v_hat = self.v / (1.0 - cfg.beta2.powi(self.t as i32));
            let denom = if cfg.eps_inside_sqrt {
                (v_hat + cfg.epsilon).sqrt()
            } else {
                v_hat.sqrt() + cfg.epsilon
            };
            w - cfg.learning_rate * m_hat / denom
        }
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        // With defaults and g = 1: m_hat = v_hat = 1, so the update is
        // exactly -lr / (1 + eps).
        let mut w = scalar_tensor(0.0);
        let g = scalar_tensor(1.0);
        let mut state = AdamState::new();
        adam_step(vec![&mut w], &[&g], &mut state, &AdamConfig::default()).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!(
            (w.data()[0] - expected).abs() <= 1e-12,
            "first Adam step {} should be {expected}",
            w.data()[0]
        );
    }

    #[test]
    fn adam_eps_inside_sqrt_variant_changes_the_denominator() {
        let mut w = scalar_tensor(0.0);
        let g = scalar_tensor(1.0);
        let mut state = AdamState::new();
        let cfg = AdamConfig { eps_inside_sqrt: true, ..AdamConfig::default() };
        adam_step(vec![&mut w], &[&g], &mut state, &cfg).unwrap();
        let expected = -0.001 / (1.0f64 + 1e-8).sqrt();
        assert!(
            (w.data()[0] - expected).abs() <= 1e-12,
            "inside-sqrt step {} should be {expected}",
            w.data()[0]
        );
    }

    #[test]
    fn adam_zero_gradient_with_zero_state_changes_nothing() {
        let mut w = scalar_tensor(3.5);
        let g = scalar_tensor(0.0);
        let mut state = AdamState::new();
        adam_step(vec![&mut w], &[&g], &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(w.data()[0], 3.5);
    }

    #[test]
    fn adam_matches_scalar_oracle_over_ten_steps() {
        // Minimize f(w) = w^2, so g = 2w, from w = 1.
        let cfg = AdamConfig { learning_rate: 0.05, ..AdamConfig::default() };
        let mut w = scalar_tensor(1.0);
        let mut state = AdamState::new();
        let mut oracle = ScalarAdam::new();
        let mut w_oracle = 1.0f64;
        for step in 0..10 {
            let g_val = 2.0 * w.data()[0];
            let g = scalar_tensor(g_val);
            adam_step(vec![&mut w], &[&g], &mut state, &cfg).unwrap();
            w_oracle = oracle.step(w_oracle, 2.0 * w_oracle, &cfg);
            assert!(
                (w.data()[0] - w_oracle).abs() <= 1e-12,
                "step {step}: {} diverged from scalar oracle {w_oracle}",
                w.data()[0]
            );
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate_regardless_of_scale() {
        // m_hat / (sqrt(v_hat) + eps) ~= sign(g) on step one, for tiny and
        // huge gradients alike.
        for &g_val in &[1e-6, 1.0, 1e6] {
            let mut w = scalar_tensor(0.0);
            let g = scalar_tensor(g_val);
            let mut state = AdamState::new();
            adam_step(vec![&mut w], &[&g], &mut state, &AdamConfig::default()).unwrap();
            let magnitude = w.data()[0].abs();
            assert!(
                (magnitude - 0.001).abs() < 0.001 * 0.01,
                "step magnitude {magnitude} for g = {g_val} should be ~lr"
            );
            assert!(w.data()[0] < 0.0, "positive gradient must push the weight down");
        }
    }

    #[test]
    fn sgd_hand_case_and_zero_gradient() {
        let mut w = scalar_tensor(1.0);
        sgd_step(vec![&mut w], &[&scalar_tensor(2.0)], 0.1, 1).unwrap();
        assert!((w.data()[0] - 0.8).abs() <= 1e-15);
        sgd_step(vec![&mut w], &[&scalar_tensor(0.0)], 0.1, 2).unwrap();
        assert!((w.data()[0] - 0.8).abs() <= 1e-15, "zero gradient must not move weights");
    }

    #[test]
    fn rmsprop_first_step_matches_closed_form() {
        // v = (1 - rho) g^2, so the update is -lr * g / (|g| sqrt(1 - rho) + eps).
        let (lr, rho, eps) = (0.01, 0.9, 1e-8);
        let g_val = 2.0f64;
        let mut w = scalar_tensor(0.0);
        let mut state = RmsPropState::new();
        rmsprop_step(vec![&mut w], &[&scalar_tensor(g_val)], &mut state, lr, rho, eps).unwrap();
        let expected = -lr * g_val / (g_val.abs() * (1.0 - rho).sqrt() + eps);
        assert!(
            (w.data()[0] - expected).abs() <= 1e-12,
            "first RMSprop step {} should be {expected}",
            w.data()[0]
        );
    }

    #[test]
    fn nan_gradient_is_a_numerical_error_naming_the_step() {
        let mut w = scalar_tensor(0.0);
        let g = scalar_tensor(f64::NAN);
        let mut state = AdamState::new();
        // Two clean steps first so the reported index is meaningful.
        for _ in 0..2 {
            adam_step(vec![&mut w], &[&scalar_tensor(1.0)], &mut state, &AdamConfig::default())
                .unwrap();
        }
        let err = adam_step(vec![&mut w], &[&g], &mut state, &AdamConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step 3"), "error should carry the step index: {msg}");
        assert_eq!(err.kind(), crate::error::ErrorKind::Numerical);
    }

    #[test]
    fn mismatched_gradient_shape_is_rejected() {
        let mut w = Tensor::<f64>::zeros(Shape::new(vec![2, 2]).unwrap());
        let g = Tensor::<f64>::zeros(Shape::new(vec![4]).unwrap());
        let mut state = AdamState::new();
        let err = adam_step(vec![&mut w], &[&g], &mut state, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("2x2"), "got: {err}");
    }

    #[test]
    fn all_three_optimizers_descend_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::RmsProp] {
            let mut opt: Optimizer<f64> = match kind {
                OptimizerKind::Sgd => Optimizer::sgd(0.05),
                OptimizerKind::Adam => {
                    Optimizer::adam(AdamConfig { learning_rate: 0.05, ..AdamConfig::default() })
                }
                OptimizerKind::RmsProp => Optimizer::rmsprop(0.05, 0.9, 1e-8),
            };
            // Adam and RMSprop move at most ~lr per step, so give the walk
            // from w = 3 enough steps to arrive.
            let mut w = scalar_tensor(3.0);
            let start_loss = 9.0;
            for _ in 0..150 {
                let g = scalar_tensor(2.0 * w.data()[0]);
                opt.step(vec![&mut w], &[&g]).unwrap();
            }
            let end_loss = w.data()[0] * w.data()[0];
            assert!(
                end_loss < start_loss * 0.05,
                "{} failed to descend w^2: {start_loss} -> {end_loss}",
                kind.name()
            );
        }
    }

    #[test]
    fn optimizer_kind_parses_known_names_only() {
        assert_eq!(OptimizerKind::parse("adam").unwrap(), OptimizerKind::Adam);
        assert_eq!(OptimizerKind::parse("sgd").unwrap(), OptimizerKind::Sgd);
        assert_eq!(OptimizerKind::parse("rmsprop").unwrap(), OptimizerKind::RmsProp);
        assert!(OptimizerKind::parse("adamw").is_err());
    }
}
