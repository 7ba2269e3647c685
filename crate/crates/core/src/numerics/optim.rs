use serde::{Deserialize, Serialize};

use super::{GradMap, ParamSet, Tensor};
use crate::error::{ensure, Result};

/// Adaptive-moment optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: ParamSet,
    pub second_moment: ParamSet,
}

impl OptimState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        OptimState {
            config,
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update, returning the new parameters.
pub fn optimizer_step(
    params: &ParamSet,
    grads: &GradMap,
    state: &OptimState,
) -> Result<(ParamSet, OptimState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    optimizer_step_in_place(&mut p, grads, &mut s)?;
    Ok((p, s))
}

/// In-place form of [`optimizer_step`].
pub fn optimizer_step_in_place(
    params: &mut ParamSet,
    grads: &GradMap,
    state: &mut OptimState,
) -> Result<()> {
    ensure!(
        params.same_layout(grads),
        "gradient layout does not match parameters"
    );
    ensure!(
        params.same_layout(&state.first_moment),
        "optimizer state layout does not match parameters"
    );
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g: &Tensor = grads.by_index(i).1;
        let m = state.first_moment.by_index_mut(i);
        for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
        }
        let v = state.second_moment.by_index_mut(i);
        for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        }
        let (m, v) = (
            state.first_moment.by_index(i).1.data(),
            state.second_moment.by_index(i).1.data(),
        );
        let p = params.by_index_mut(i);
        for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
