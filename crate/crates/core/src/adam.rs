//! Adam with bias correction and decoupled weight decay.

use indexmap::IndexMap;

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AdamError {
    #[error("missing gradient for parameter {0:?}")]
    MissingGrad(String),
    #[error("gradient shape {got:?} does not match parameter {name:?} shape {want:?}")]
    ShapeMismatch {
        name: String,
        want: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("moment buffers do not cover parameter {0:?}")]
    MissingMoment(String),
}

/// Gradients aligned to parameters by name.
pub type GradMap<T> = IndexMap<String, Tensor<T>>;

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, weight_decay: f64) -> Self {
        let zeros = |ps: &ParamStore<T>| {
            ps.iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect::<IndexMap<_, _>>()
        };
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros(params),
            v: zeros(params),
        }
    }
}

/// One optimizer step over all parameters.
///
/// Decay is decoupled and applied before the moment update:
/// `p -= lr*wd*p`, then `m,v` ingest the raw gradient and
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &GradMap<T>,
    state: &mut AdamState<T>,
) -> Result<(), AdamError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let lr = T::from_f64(state.lr);
    let decay = T::from_f64(1.0 - state.lr * state.weight_decay);
    let b1 = T::from_f64(state.beta1);
    let b1c = T::from_f64(1.0 - state.beta1);
    let b2 = T::from_f64(state.beta2);
    let b2c = T::from_f64(1.0 - state.beta2);
    let inv_bc1 = T::from_f64(1.0 / bc1);
    let inv_bc2 = T::from_f64(1.0 / bc2);
    let eps = T::from_f64(state.eps);

    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| AdamError::MissingGrad(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(AdamError::ShapeMismatch {
                name: name.clone(),
                want: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
        let m = state
            .m
            .get_mut(name)
            .ok_or_else(|| AdamError::MissingMoment(name.clone()))?;
        let v = state
            .v
            .get_mut(name)
            .ok_or_else(|| AdamError::MissingMoment(name.clone()))?;

        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        let gd = g.data();
        for i in 0..pd.len() {
            pd[i] = pd[i] * decay;
            md[i] = b1 * md[i] + b1c * gd[i];
            vd[i] = b2 * vd[i] + b2c * gd[i] * gd[i];
            let m_hat = md[i] * inv_bc1;
            let v_hat = vd[i] * inv_bc2;
            pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// sqrt of the summed squared elements across all gradient tensors.
pub fn global_grad_norm<T: Scalar>(grads: &GradMap<T>) -> f64 {
    let mut acc = 0.0f64;
    for t in grads.values() {
        for &v in t.data() {
            let v = v.to_f64_();
            acc += v * v;
        }
    }
    acc.sqrt()
}

/// Scales all gradients by max_norm/norm when the global norm exceeds it.
pub fn clip_grad_norm<T: Scalar>(grads: &mut GradMap<T>, max_norm: f64) -> f64 {
    let norm = global_grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64(max_norm / norm);
        for t in grads.values_mut() {
            for v in t.data_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, vals: &[f64]) -> ParamStore<f64> {
        let mut ps = ParamStore::new();
        ps.insert(name, Tensor::new(vec![vals.len()], vals.to_vec()).unwrap())
            .unwrap();
        ps
    }

    fn grads_with(name: &str, vals: &[f64]) -> GradMap<f64> {
        let mut g = GradMap::new();
        g.insert(
            name.to_string(),
            Tensor::new(vec![vals.len()], vals.to_vec()).unwrap(),
        );
        g
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let mut ps = store_with("w", &[0.5, -1.5]);
        let mut st = AdamState::new(&ps, 1e-4, 0.0);
        let g = grads_with("w", &[0.0, 0.0]);
        adam_step(&mut ps, &g, &mut st).unwrap();
        assert_eq!(ps.get("w").unwrap().data(), &[0.5, -1.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_approximates_lr_times_sign() {
        let mut ps = store_with("w", &[1.0, 1.0]);
        let mut st = AdamState::new(&ps, 1e-3, 0.0);
        let g = grads_with("w", &[0.02, -7.0]);
        adam_step(&mut ps, &g, &mut st).unwrap();
        let w = ps.get("w").unwrap().data();
        // update = -lr * g/(|g| + eps) ~= -lr * sign(g)
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-8, "{}", w[0]);
        assert!((w[1] - (1.0 + 1e-3)).abs() < 1e-8, "{}", w[1]);
    }

    #[test]
    fn decoupled_decay_scales_by_one_minus_lr_wd() {
        let mut ps = store_with("w", &[2.0]);
        let mut st = AdamState::new(&ps, 1e-4, 1e-3);
        let g = grads_with("w", &[0.0]);
        adam_step(&mut ps, &g, &mut st).unwrap();
        let want = 2.0 * (1.0 - 1e-7);
        assert!((ps.get("w").unwrap().data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn second_step_uses_bias_correction() {
        // Constant gradient 1: after two steps m_hat = 1, v_hat = 1, so each
        // update is -lr/(1+eps) regardless of beta values.
        let mut ps = store_with("w", &[0.0]);
        let mut st = AdamState::new(&ps, 0.01, 0.0);
        let g = grads_with("w", &[1.0]);
        adam_step(&mut ps, &g, &mut st).unwrap();
        adam_step(&mut ps, &g, &mut st).unwrap();
        let w = ps.get("w").unwrap().data()[0];
        assert!((w + 0.02).abs() < 1e-6, "two near-equal sign steps: {w}");
        assert_eq!(st.step, 2);
    }

    #[test]
    fn shape_and_name_mismatches_error() {
        let mut ps = store_with("w", &[1.0, 2.0]);
        let mut st = AdamState::new(&ps, 1e-4, 0.0);
        let wrong_shape = grads_with("w", &[1.0]);
        assert!(matches!(
            adam_step(&mut ps, &wrong_shape, &mut st),
            Err(AdamError::ShapeMismatch { .. })
        ));
        let wrong_name = grads_with("u", &[1.0, 2.0]);
        assert!(matches!(
            adam_step(&mut ps, &wrong_name, &mut st),
            Err(AdamError::MissingGrad(_))
        ));
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut g = grads_with("w", &[3.0, 4.0]); // norm 5
        let norm = clip_grad_norm(&mut g, 10.0);
        assert_eq!(norm, 5.0);
        assert_eq!(g["w"].data(), &[3.0, 4.0]);
        let norm = clip_grad_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        let d = g["w"].data();
        assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);
    }
}
