use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Scalar, Tensor};

/// Learning rate as a function of the (1-based) update count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear warmup to `peak` over `warmup` updates, then `peak * sqrt(warmup / step)`.
    InverseSqrt { peak: f64, warmup: u64 },
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::InverseSqrt { peak, warmup } => {
                let w = warmup.max(1) as f64;
                peak * (s / w).min((w / s).sqrt())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            schedule: LrSchedule::InverseSqrt {
                peak: 1e-3,
                warmup: 400,
            },
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Moment estimates for every parameter of one store, indexed like it.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect::<Vec<_>>()
        };
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
            config,
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.schedule.at(self.step.max(1))
    }
}

/// Fails on the first non-finite accumulated gradient, naming its parameter.
pub fn check_finite_grads<T: Scalar>(store: &ParamStore<T>) -> Result<()> {
    for (_, p) in store.iter() {
        if let Some(index) = p.grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: p.name.clone(),
                index,
            });
        }
    }
    Ok(())
}

/// Rescales all trainable gradients so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> Result<f64> {
    check_finite_grads(store)?;
    let sq: f64 = store
        .iter()
        .filter(|(_, p)| p.requires_grad)
        .map(|(_, p)| p.grad.data().iter().map(|g| g.as_f64().powi(2)).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let c = T::from_f64_lossy(max_norm / norm);
        for p in store.iter_mut().filter(|p| p.requires_grad) {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= c);
        }
    }
    Ok(norm)
}

/// One bias-corrected Adam update from the store's accumulated gradients.
/// Frozen parameters (`requires_grad == false`) are left untouched.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState<T>) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::dim(format!(
            "optimizer tracks {} tensors, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    check_finite_grads(store)?;
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let lr = c.schedule.at(state.step);
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let step_size = T::from_f64_lossy(lr / bc1);
    let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
    let eps = T::from_f64_lossy(c.eps);
    for (i, p) in store.iter_mut().enumerate() {
        if !p.requires_grad {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.shape() != p.value.shape() {
            return Err(Error::dim(format!("optimizer moment shape differs for `{}`", p.name)));
        }
        let w = p.value.data_mut();
        for (((w, &g), m), v) in w
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *w -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}
