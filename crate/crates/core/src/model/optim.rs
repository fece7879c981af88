use super::{AdamState, ModelConfig, Network};

/// One AdamW update with decoupled weight decay. Returns `false` when a
/// gradient entry is not finite; the parameters are then unusable.
pub(crate) fn adamw_step(net: &mut Network, grads: &Network, state: &mut AdamState, cfg: &ModelConfig) -> bool {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.lr, cfg.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;

    let mut finite = true;
    let params = net.tensors_mut();
    let moments = state.m.tensors_mut().zip(state.v.tensors_mut());
    for ((p, g), (m, v)) in params.zip(grads.tensors()).zip(moments) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            finite &= g.is_finite();
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    finite
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Heads, Mlp, Dense};

    fn scalar_net(x: f64) -> Network {
        Network {
            encoder: Dense { w: ndarray::array![[0.0]], b: ndarray::array![0.0] },
            heads: vec![Heads {
                phi: Mlp { layers: vec![Dense { w: ndarray::array![[x]], b: ndarray::array![0.0] }] },
                psi: Mlp { layers: vec![Dense { w: ndarray::array![[0.0]], b: ndarray::array![0.0] }] },
            }],
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let cfg = ModelConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() };
        let mut net = scalar_net(1.0);
        let mut state = AdamState { step: 0, m: net.zeros_like(), v: net.zeros_like() };
        adamw_step(&mut net, &scalar_net(2.0), &mut state, &cfg);
        // Bias-corrected first step is lr * g / (|g| + eps).
        let w = net.heads[0].phi.layers[0].w[[0, 0]];
        assert!((w - (1.0 - 0.1 * 2.0 / (2.0 + 1e-6))).abs() < 1e-12);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let cfg = ModelConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut net = scalar_net(2.0);
        let mut state = AdamState { step: 0, m: net.zeros_like(), v: net.zeros_like() };
        adamw_step(&mut net, &scalar_net(0.0), &mut state, &cfg);
        assert!((net.heads[0].phi.layers[0].w[[0, 0]] - 2.0 * 0.95).abs() < 1e-12);
    }
}
