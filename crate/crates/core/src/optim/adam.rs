use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParameters, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments, one buffer per parameter block in
/// [`ModelParameters::blocks`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParameters, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.blocks().iter().map(|b| vec![0.0; b.values.len()]).collect();
        AdamState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One bias-corrected Adam update. Blocks in `frozen` groups are left
/// untouched, moments included. Only the user-table rows listed in
/// `grads.touched_users` are updated.
pub fn adam_step(
    params: &mut ModelParameters,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    frozen: &[ParamGroup],
) -> Result<()> {
    let grad_blocks = grads.grad.blocks();
    for g in &grad_blocks {
        if g.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                name: g.name.clone(),
            });
        }
    }
    let n_blocks = grad_blocks.len();
    if state.first.len() != n_blocks || state.second.len() != n_blocks {
        return Err(Error::DimensionMismatch {
            context: "adam moment blocks".into(),
            expected: n_blocks,
            actual: state.first.len(),
        });
    }
    let user_dim = params.user_table.cols();
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for (k, (p, g)) in params.blocks_mut().into_iter().zip(&grad_blocks).enumerate() {
        if p.values.len() != g.values.len() || state.first[k].len() != p.values.len() {
            return Err(Error::DimensionMismatch {
                context: format!("parameter block {}", p.name),
                expected: p.values.len(),
                actual: g.values.len(),
            });
        }
        if frozen.contains(&p.group) {
            continue;
        }
        let (m, v) = (&mut state.first[k], &mut state.second[k]);
        let range: Box<dyn Iterator<Item = usize>> = if p.name == "user_table" {
            Box::new(grads.touched_users.iter().flat_map(|&u| u * user_dim..(u + 1) * user_dim))
        } else {
            Box::new(0..p.values.len())
        };
        for i in range {
            let gi = g.values[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.values[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvBlockConfig, Model, ModelConfig};

    fn model() -> Model {
        let cfg = ModelConfig {
            dim: 3,
            image_dim: 2,
            word_dim: 2,
            user_dim: 2,
            conv_blocks: vec![ConvBlockConfig { width: 2, filters: 2 }],
            max_sentence_len: 3,
            bias: true,
        };
        Model::new(cfg, 4, 1).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut m = model();
        let before = m.params.clone();
        let mut state = AdamState::new(&m.params, AdamConfig::default());
        let g = Gradients::zeros_like(&m.params);
        adam_step(&mut m.params, &g, &mut state, 0.0005, &[]).unwrap();
        assert_eq!(m.params, before);
        assert!(state.first.iter().chain(&state.second).flatten().all(|&x| x == 0.0));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut m = model();
        let mut state = AdamState::new(&m.params, AdamConfig::default());
        let mut g = Gradients::zeros_like(&m.params);
        g.grad.image_proj.weight.set(0, 0, 1.0);
        let before = m.params.image_proj.weight.get(0, 0);
        adam_step(&mut m.params, &g, &mut state, 0.0005, &[]).unwrap();
        let delta = m.params.image_proj.weight.get(0, 0) - before;
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε)
        assert!((delta + 0.0005 / (1.0 + 1e-8)).abs() < 1e-15, "{delta}");
    }

    #[test]
    fn sparse_user_rows_and_frozen_groups() {
        let mut m = model();
        let before = m.params.clone();
        let mut state = AdamState::new(&m.params, AdamConfig::default());
        let mut g = Gradients::zeros_like(&m.params);
        g.grad.user_table.as_mut_slice().fill(1.0);
        g.grad.text_proj.weight.as_mut_slice().fill(1.0);
        g.touched_users.insert(2);
        adam_step(&mut m.params, &g, &mut state, 0.01, &[ParamGroup::Text]).unwrap();
        for u in 0..4 {
            let changed = m.params.user_table.row(u) != before.user_table.row(u);
            assert_eq!(changed, u == 2);
        }
        assert_eq!(m.params.text_proj, before.text_proj);
    }

    #[test]
    fn non_finite_gradient_named() {
        let mut m = model();
        let mut state = AdamState::new(&m.params, AdamConfig::default());
        let mut g = Gradients::zeros_like(&m.params);
        g.grad.conv[0].weight.set(1, 1, f64::NAN);
        match adam_step(&mut m.params, &g, &mut state, 0.01, &[]) {
            Err(Error::NonFinite { name, .. }) => assert_eq!(name, "conv0.weight"),
            other => panic!("{other:?}"),
        }
    }
}
