//! Dense ReLU networks with hand-written backpropagation over row batches.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine layer `y = x · w + b` with `w` stored as `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseRepr", into = "DenseRepr")]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct DenseRepr {
    shape: [usize; 2],
    /// Row-major `in × out`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Dense> for DenseRepr {
    fn from(d: Dense) -> Self {
        let shape = [d.w.nrows(), d.w.ncols()];
        DenseRepr {
            shape,
            weights: d.w.iter().copied().collect(),
            bias: d.b.to_vec(),
        }
    }
}

impl TryFrom<DenseRepr> for Dense {
    type Error = Error;

    fn try_from(r: DenseRepr) -> Result<Self> {
        let [rows, cols] = r.shape;
        if r.bias.len() != cols {
            return Err(Error::invalid(format!(
                "layer bias has {} entries for {cols} outputs",
                r.bias.len()
            )));
        }
        let w = Array2::from_shape_vec((rows, cols), r.weights)
            .map_err(|e| Error::invalid(format!("layer weights: {e}")))?;
        if w.iter().chain(r.bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint layer".into()));
        }
        Ok(Dense {
            w,
            b: Array1::from(r.bias),
        })
    }
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            w: Array2::from_shape_simple_fn((inputs, outputs), || rng.gen_range(-limit..limit)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        [
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
        .into_iter()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
        .into_iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass.
pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// `dims = [input, hidden.., output]`.
    pub fn glorot(dims: &[usize], rng: &mut impl Rng) -> Self {
        Mlp {
            layers: dims.windows(2).map(|d| Dense::glorot(d[0], d[1], rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.w) + &layer.b;
            inputs.push(h);
            if i == last {
                h = z;
            } else {
                h = z.mapv(|v| v.max(0.0));
                pre.push(z);
            }
        }
        (h, MlpCache { inputs, pre })
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h: Option<Array2<f64>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.as_ref().unwrap_or(x).dot(&layer.w) + &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = Some(z);
        }
        h.expect("network has at least one layer")
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, cache: &MlpCache, dout: Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        let mut delta = dout;
        for i in (0..self.layers.len()).rev() {
            let g = &mut grads.layers[i];
            g.w += &cache.inputs[i].t().dot(&delta);
            g.b += &delta.sum_axis(Axis(0));
            let dinput = delta.dot(&self.layers[i].w.t());
            delta = if i > 0 {
                let mut d = dinput;
                d.zip_mut_with(&cache.pre[i - 1], |dv, &z| {
                    if z <= 0.0 {
                        *dv = 0.0;
                    }
                });
                d
            } else {
                dinput
            };
        }
        delta
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(Dense::tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(Dense::tensors_mut)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn forward_matches_hand_computation() {
        // 2 -> 2 (relu) -> 1
        let mlp = Mlp {
            layers: vec![
                Dense {
                    w: array![[1.0, -1.0], [2.0, 0.5]],
                    b: array![0.0, 0.1],
                },
                Dense {
                    w: array![[3.0], [-2.0]],
                    b: array![0.5],
                },
            ],
        };
        let x = array![[1.0, 1.0]];
        // hidden pre = [3.0, -0.4] -> relu [3.0, 0.0]; out = 9.0 + 0.5
        let (y, _) = mlp.forward(&x);
        assert_eq!(y, array![[9.5]]);
        assert_eq!(mlp.infer(&x), array![[9.5]]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::glorot(&[3, 5, 4, 2], &mut rng);
        let x = Array2::from_shape_simple_fn((4, 3), || rng.gen_range(-1.0..1.0));
        let coef = Array2::from_shape_simple_fn((4, 2), || rng.gen_range(-1.0..1.0));
        // loss = sum(coef * y)
        let loss = |m: &Mlp| (m.infer(&x) * &coef).sum();
        let (_, cache) = mlp.forward(&x);
        let mut grads = mlp.zeros_like();
        mlp.backward(&cache, coef.clone(), &mut grads);

        let h = 1e-6;
        let analytic: Vec<f64> = grads.tensors().flat_map(|t| t.to_vec()).collect();
        let mut k = 0;
        let mut probe = mlp.clone();
        let sizes: Vec<usize> = mlp.tensors().map(|t| t.len()).collect();
        for (ti, size) in sizes.into_iter().enumerate() {
            for e in 0..size {
                let orig = probe.tensors().nth(ti).unwrap()[e];
                probe.tensors_mut().nth(ti).unwrap()[e] = orig + h;
                let up = loss(&probe);
                probe.tensors_mut().nth(ti).unwrap()[e] = orig - h;
                let down = loss(&probe);
                probe.tensors_mut().nth(ti).unwrap()[e] = orig;
                let numeric = (up - down) / (2.0 * h);
                assert!((numeric - analytic[k]).abs() < 1e-6, "param {k}: {numeric} vs {}", analytic[k]);
                k += 1;
            }
        }
    }

    #[test]
    fn dense_serde_is_row_major() {
        let d = Dense {
            w: array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
            b: array![0.0, 0.5, 1.0],
        };
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"{"shape":[2,3],"weights":[1.0,2.0,3.0,4.0,5.0,6.0],"bias":[0.0,0.5,1.0]}"#);
        assert_eq!(serde_json::from_str::<Dense>(&json).unwrap(), d);
        assert!(serde_json::from_str::<Dense>(r#"{"shape":[2,2],"weights":[1.0],"bias":[0.0,0.0]}"#).is_err());
    }
}
