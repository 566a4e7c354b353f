use std::fmt;
use std::str::FromStr;

use super::params::{GradSet, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64 },
    RmsProp { decay: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
        }
    }

    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp { decay: 0.9 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::RmsProp { .. } => "rmsprop",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::adam()),
            "rmsprop" => Ok(OptimizerKind::rmsprop()),
            other => Err(Error::Argument(format!(
                "unknown optimizer `{other}` (expected adam or rmsprop)"
            ))),
        }
    }
}

/// Moment estimates and step counter for one [`ParamSet`].
///
/// For Adam `first`/`second` hold m and v; RMSProp only uses `second`
/// (the running mean of squared gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &ParamSet, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        OptimizerState {
            kind,
            learning_rate,
            epsilon: 1e-8,
            step: 0,
            first: match kind {
                OptimizerKind::Adam { .. } => zeros.clone(),
                OptimizerKind::RmsProp { .. } => Vec::new(),
            },
            second: zeros,
        }
    }

    pub fn adam(params: &ParamSet, learning_rate: f64) -> Self {
        Self::new(OptimizerKind::adam(), params, learning_rate)
    }

    pub fn rmsprop(params: &ParamSet, learning_rate: f64) -> Self {
        Self::new(OptimizerKind::rmsprop(), params, learning_rate)
    }

    /// Applies one update with whichever rule this state was built for.
    pub fn apply(&mut self, params: &mut ParamSet, grads: &GradSet) -> Result<()> {
        match self.kind {
            OptimizerKind::Adam { .. } => adam_step(params, grads, self),
            OptimizerKind::RmsProp { .. } => rmsprop_step(params, grads, self),
        }
    }
}

fn check_alignment(params: &ParamSet, grads: &GradSet, state: &OptimizerState) -> Result<()> {
    if grads.len() != params.len() || state.second.len() != params.len() {
        return Err(Error::Structure(format!(
            "optimizer expects {} parameters, got {} gradients and {} moment slots",
            params.len(),
            grads.len(),
            state.second.len()
        )));
    }
    for (id, name, tensor) in params.iter() {
        if let Some(g) = grads.get(id) {
            if g.shape() != tensor.shape() {
                return Err(Error::Structure(format!(
                    "gradient for `{name}` has shape {:?}, parameter has {:?}",
                    g.shape(),
                    tensor.shape()
                )));
            }
        }
        if state.second[id.0].shape() != tensor.shape() {
            return Err(Error::Structure(format!(
                "optimizer moments for `{name}` have the wrong shape"
            )));
        }
    }
    Ok(())
}

/// Adam with bias correction:
/// `θ -= lr · m̂ / (sqrt(v̂) + ε)`.
pub fn adam_step(params: &mut ParamSet, grads: &GradSet, state: &mut OptimizerState) -> Result<()> {
    let OptimizerKind::Adam { beta1, beta2 } = state.kind else {
        return Err(Error::Structure("adam_step called with a non-Adam state".into()));
    };
    check_alignment(params, grads, state)?;
    if state.first.len() != params.len() {
        return Err(Error::Structure("Adam state has no first moments".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let correction1 = 1.0 - beta1.powf(t);
    let correction2 = 1.0 - beta2.powf(t);
    let (lr, eps) = (state.learning_rate, state.epsilon);

    let ids: Vec<_> = params.ids().collect();
    let tensors = params.tensors_mut();
    for id in ids {
        let grad = grads.get(id).map(Tensor::data);
        let m = state.first[id.0].data_mut();
        let v = state.second[id.0].data_mut();
        let theta = tensors[id.0].data_mut();
        for i in 0..theta.len() {
            let g = grad.map_or(0.0, |g| g[i]);
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// RMSProp without momentum:
/// `E[g²] ← ρ·E[g²] + (1-ρ)·g²`, `θ -= lr · g / (sqrt(E[g²]) + ε)`.
pub fn rmsprop_step(
    params: &mut ParamSet,
    grads: &GradSet,
    state: &mut OptimizerState,
) -> Result<()> {
    let OptimizerKind::RmsProp { decay } = state.kind else {
        return Err(Error::Structure("rmsprop_step called with a non-RMSProp state".into()));
    };
    check_alignment(params, grads, state)?;
    state.step += 1;
    let (lr, eps) = (state.learning_rate, state.epsilon);

    let ids: Vec<_> = params.ids().collect();
    let tensors = params.tensors_mut();
    for id in ids {
        let Some(grad) = grads.get(id) else {
            // zero gradient: E[g²] decays, θ is unchanged
            for s in state.second[id.0].data_mut() {
                *s *= decay;
            }
            continue;
        };
        let sq = state.second[id.0].data_mut();
        let theta = tensors[id.0].data_mut();
        for ((t, s), &g) in theta.iter_mut().zip(sq.iter_mut()).zip(grad.data()) {
            *s = decay * *s + (1.0 - decay) * g * g;
            *t -= lr * g / (s.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(&[1], vec![value]).unwrap()).unwrap();
        p
    }

    fn grad(p: &ParamSet, g: f64) -> GradSet {
        let mut gs = GradSet::zeros_like(p);
        gs.set(p.id("w").unwrap(), Tensor::from_vec(&[1], vec![g]).unwrap());
        gs
    }

    fn value(p: &ParamSet) -> f64 {
        p.by_name("w").unwrap().data()[0]
    }

    /// Plain scalar Adam recurrence, written out independently.
    fn adam_oracle(grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut theta, mut m, mut v) = (0.0, 0.0, 0.0);
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            theta -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        theta
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = scalar(0.7);
        let mut s = OptimizerState::adam(&p, 0.001);
        let g = GradSet::zeros_like(&p);
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(value(&p), 0.7);
        let g = grad(&p, 0.0);
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(value(&p), 0.7);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut s = OptimizerState::adam(&p, 0.001);
        let g = grad(&p, 1.0);
        adam_step(&mut p, &g, &mut s).unwrap();
        assert!((value(&p) + 0.001).abs() < 1e-10);
        assert!((value(&p) - adam_oracle(&[1.0], 0.001)).abs() < 1e-12);
    }

    #[test]
    fn adam_two_steps_match_recurrence() {
        let mut p = scalar(0.0);
        let mut s = OptimizerState::adam(&p, 0.001);
        for _ in 0..2 {
            let g = grad(&p, 1.0);
            adam_step(&mut p, &g, &mut s).unwrap();
        }
        assert!((value(&p) - adam_oracle(&[1.0, 1.0], 0.001)).abs() < 1e-12);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn rmsprop_zero_gradient_is_identity() {
        let mut p = scalar(-0.3);
        let mut s = OptimizerState::rmsprop(&p, 0.01);
        let g = grad(&p, 0.0);
        rmsprop_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(value(&p), -0.3);
    }

    #[test]
    fn rmsprop_first_step() {
        let mut p = scalar(0.0);
        let mut s = OptimizerState::rmsprop(&p, 0.01);
        let g = grad(&p, 2.0);
        rmsprop_step(&mut p, &g, &mut s).unwrap();
        let expected = -0.01 * 2.0 / ((0.1f64 * 4.0).sqrt() + 1e-8);
        assert!((value(&p) - expected).abs() < 1e-15);
        assert!((value(&p) + 0.031623).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_update_converges_to_lr() {
        let mut p = scalar(0.0);
        let mut s = OptimizerState::rmsprop(&p, 0.01);
        let mut last = 0.0;
        for _ in 0..100 {
            let before = value(&p);
            let g = grad(&p, 3.0);
            rmsprop_step(&mut p, &g, &mut s).unwrap();
            last = before - value(&p);
        }
        // E[g²] = 9·(1 - 0.9^100) after 100 steps.
        let oracle = 0.01 * 3.0 / ((9.0 * (1.0 - 0.9f64.powi(100))).sqrt() + 1e-8);
        assert!((last - oracle).abs() < 1e-12);
        assert!((last - 0.01).abs() < 1e-5);
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let mut p = scalar(0.0);
        let mut s = OptimizerState::adam(&p, 0.001);
        let mut g = GradSet::zeros_like(&p);
        g.set(p.id("w").unwrap(), Tensor::zeros(&[2]));
        assert!(matches!(adam_step(&mut p, &g, &mut s), Err(Error::Structure(_))));
        let mut s = OptimizerState::rmsprop(&p, 0.001);
        assert!(matches!(rmsprop_step(&mut p, &g, &mut s), Err(Error::Structure(_))));
    }

    #[test]
    fn steps_are_pure_transitions() {
        let run = || {
            let mut p = scalar(0.5);
            let mut s = OptimizerState::adam(&p, 0.01);
            for k in 0..5 {
                let g = grad(&p, k as f64 - 2.0);
                s.apply(&mut p, &g).unwrap();
            }
            (value(&p), s)
        };
        assert_eq!(run(), run());
    }
}
