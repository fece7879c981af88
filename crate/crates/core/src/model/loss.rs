//! Order classification and contrastive losses with their gradients.

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax cross-entropy of `(backward, forward)` logits against class `label`.
pub fn loss_cls(logits: [f64; 2], label: u8) -> f64 {
    cls_loss_grad(logits, label).0
}

/// Loss and gradient with respect to the two logits.
pub fn cls_loss_grad(logits: [f64; 2], label: u8) -> (f64, [f64; 2]) {
    debug_assert!(label <= 1);
    let lse = log_sum_exp(&logits);
    let p = [(logits[0] - lse).exp(), (logits[1] - lse).exp()];
    let target = label as usize;
    let mut grad = p;
    grad[target] -= 1.0;
    (lse - logits[target], grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// InfoNCE: `-log(e^{a·p} / (e^{a·p} + Σ_k e^{a·q_k}))`.
pub fn loss_cl(anchor: &[f64], positive: &[f64], negatives: &[&[f64]]) -> f64 {
    let mut sims = Vec::with_capacity(negatives.len() + 1);
    sims.push(dot(anchor, positive));
    sims.extend(negatives.iter().map(|q| dot(anchor, q)));
    log_sum_exp(&sims) - sims[0]
}

pub struct ClGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn cl_loss_grad(anchor: &[f64], positive: &[f64], negatives: &[&[f64]]) -> ClGrad {
    let mut targets: Vec<&[f64]> = Vec::with_capacity(negatives.len() + 1);
    targets.push(positive);
    targets.extend_from_slice(negatives);
    let sims: Vec<f64> = targets.iter().map(|t| dot(anchor, t)).collect();
    let lse = log_sum_exp(&sims);
    // d loss / d sim_k = softmax_k - [k == 0]
    let coef: Vec<f64> = sims
        .iter()
        .enumerate()
        .map(|(k, s)| (s - lse).exp() - if k == 0 { 1.0 } else { 0.0 })
        .collect();
    let mut d_anchor = vec![0.0; anchor.len()];
    for (c, t) in coef.iter().zip(&targets) {
        for (d, v) in d_anchor.iter_mut().zip(t.iter()) {
            *d += c * v;
        }
    }
    let scaled = |c: f64| anchor.iter().map(|a| c * a).collect::<Vec<f64>>();
    ClGrad {
        loss: lse - sims[0],
        anchor: d_anchor,
        positive: scaled(coef[0]),
        negatives: coef[1..].iter().map(|&c| scaled(c)).collect(),
    }
}

/// Backpropagates through `y = z / |z|` given `y`, `|z|` and `dy`.
pub fn normalize_backward(y: &[f64], norm: f64, dy: &[f64]) -> Vec<f64> {
    let proj = dot(y, dy);
    y.iter().zip(dy).map(|(yi, di)| (di - yi * proj) / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn cls_closed_forms() {
        assert_abs_diff_eq!(loss_cls([0.0, 0.0], 0), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss_cls([0.0, 0.0], 1), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss_cls([0.0, 3f64.ln()], 1), -(0.75f64).ln(), epsilon = 1e-12);
        assert!(loss_cls([0.0, 1e4], 1) < 1e-12);
        assert!(loss_cls([0.0, 800.0], 1).is_finite());
    }

    #[test]
    fn cl_closed_forms() {
        let a = [1.0, 0.0];
        let p = [0.5, 0.3];
        let negs: Vec<[f64; 2]> = vec![[0.5, -0.7]; 4];
        let refs: Vec<&[f64]> = negs.iter().map(|q| &q[..]).collect();
        assert_abs_diff_eq!(loss_cl(&a, &p, &refs), 5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss_cl(&a, &[1.0, 0.0], &[&[0.0, 1.0]]), (1.0 + (-1f64).exp()).ln(), epsilon = 1e-12);
        assert!(loss_cl(&[1e3], &[1e3], &[&[0.0]]) < 1e-12);
    }

    #[test]
    fn cl_gradient_matches_finite_differences() {
        let a = vec![0.3, -0.2, 0.9];
        let p = vec![0.1, 0.4, -0.5];
        let q1 = vec![-0.6, 0.2, 0.3];
        let q2 = vec![0.7, 0.7, 0.1];
        let g = cl_loss_grad(&a, &p, &[&q1, &q2]);
        let h = 1e-6;
        for i in 0..3 {
            let mut up = a.clone();
            up[i] += h;
            let mut dn = a.clone();
            dn[i] -= h;
            let num = (loss_cl(&up, &p, &[&q1, &q2]) - loss_cl(&dn, &p, &[&q1, &q2])) / (2.0 * h);
            assert_abs_diff_eq!(num, g.anchor[i], epsilon = 1e-8);
            let mut up = q2.clone();
            up[i] += h;
            let mut dn = q2.clone();
            dn[i] -= h;
            let num = (loss_cl(&a, &p, &[&q1, &up]) - loss_cl(&a, &p, &[&q1, &dn])) / (2.0 * h);
            assert_abs_diff_eq!(num, g.negatives[1][i], epsilon = 1e-8);
        }
    }

    proptest! {
        #[test]
        fn cls_symmetric_under_swap(l0 in -20.0..20.0f64, l1 in -20.0..20.0f64, o in 0u8..=1) {
            prop_assert!((loss_cls([l1, l0], 1 - o) - loss_cls([l0, l1], o)).abs() < 1e-12);
        }

        #[test]
        fn cl_nonnegative(a in prop::collection::vec(-1.0..1.0f64, 3), p in prop::collection::vec(-1.0..1.0f64, 3), q in prop::collection::vec(-1.0..1.0f64, 3)) {
            prop_assert!(loss_cl(&a, &p, &[&q]) >= 0.0);
        }
    }
}
