//! Pairwise order classifier (φ) and contrastive projection head (ψ).
//!
//! Inputs are flat frame representations (vision ‖ text); shots and scenes
//! are mean-pooled from their children. Every item first passes through a
//! shared encoder `E(x) = relu(x·W + b)` of width `hidden_dim`, so both
//! loss terms shape the representation that φ orders.
//!
//! Each hierarchy level owns a φ/ψ pair unless `heads` is set to
//! [`HeadSharing::Shared`]. φ maps `[E(a) ‖ E(b)]` through one more ReLU
//! layer to `(backward, forward)` logits. ψ maps `E(x)` affinely to a
//! `proj_dim` vector that is L2-normalised.

pub mod loss;
pub mod mlp;
mod optim;
pub mod sampling;
pub mod train;

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::types::FeatureVector;

pub use loss::{loss_cl, loss_cls};
pub use mlp::{Dense, Mlp};
pub use sampling::{sample_pairs, ClipReps, PairSample, TrainingPair};
pub use train::{pairwise_accuracy, train, write_loss_csv, LossRow, TrainOutcome};

pub const CHECKPOINT_FORMAT: &str = "clipsort-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Frame,
    Shot,
    Scene,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Frame, Level::Shot, Level::Scene];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Frame => "frame",
            Level::Shot => "shot",
            Level::Scene => "scene",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadSharing {
    #[default]
    PerLevel,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_v: usize,
    pub d_u: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    /// Weight of the contrastive term.
    pub lambda: f64,
    pub n_negatives: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub heads: HeadSharing,
    /// Unordered pairs drawn per clip and epoch, per level.
    pub frame_pairs_per_clip: usize,
    pub shot_pairs_per_clip: usize,
    pub scene_pairs_per_clip: usize,
    /// Probability that a frame pair is drawn from within a single shot.
    pub same_shot_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_v: 32,
            d_u: 16,
            hidden_dim: 512,
            proj_dim: 64,
            lambda: 0.75,
            n_negatives: 8,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
            batch_size: 8,
            epochs: 5,
            seed: 0,
            heads: HeadSharing::PerLevel,
            frame_pairs_per_clip: 12,
            shot_pairs_per_clip: 4,
            scene_pairs_per_clip: 1,
            same_shot_rate: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn rep_dim(&self) -> usize {
        self.d_v + self.d_u
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("model config: {m}")));
        if self.d_v == 0 || self.d_u == 0 || self.hidden_dim == 0 || self.proj_dim == 0 {
            return bad("all dimensions must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if self.n_negatives == 0 {
            return bad("n_negatives must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optimizer settings out of range");
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be > 0 and weight_decay >= 0");
        }
        if !(0.0..=1.0).contains(&self.same_shot_rate) {
            return bad("same_shot_rate must be in [0, 1]");
        }
        Ok(())
    }

    fn n_heads(&self) -> usize {
        match self.heads {
            HeadSharing::PerLevel => 3,
            HeadSharing::Shared => 1,
        }
    }

    fn head_index(&self, level: Level) -> usize {
        match self.heads {
            HeadSharing::PerLevel => level.index(),
            HeadSharing::Shared => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    pub phi: Mlp,
    pub psi: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    /// Shared item encoder, followed by ReLU.
    pub encoder: Dense,
    pub heads: Vec<Heads>,
}

impl Network {
    fn init(config: &ModelConfig) -> Self {
        let mut rng = rng_for(config.seed, "init", 0);
        let (d, h) = (config.rep_dim(), config.hidden_dim);
        let encoder = Dense::glorot(d, h, &mut rng);
        let heads = (0..config.n_heads())
            .map(|_| Heads {
                phi: Mlp::glorot(&[2 * h, h, 2], &mut rng),
                psi: Mlp::glorot(&[h, config.proj_dim], &mut rng),
            })
            .collect();
        Network { encoder, heads }
    }

    pub fn zeros_like(&self) -> Self {
        Network {
            encoder: Dense::zeros(self.encoder.inputs(), self.encoder.outputs()),
            heads: self
                .heads
                .iter()
                .map(|h| Heads {
                    phi: h.phi.zeros_like(),
                    psi: h.psi.zeros_like(),
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.encoder
            .tensors()
            .chain(self.heads.iter().flat_map(|h| h.phi.tensors().chain(h.psi.tensors())))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.encoder.tensors_mut().chain(
            self.heads
                .iter_mut()
                .flat_map(|h| h.phi.tensors_mut().chain(h.psi.tensors_mut())),
        )
    }

    /// `relu(x·W + b)` for every row of `x`.
    fn encode(&self, x: &Array2<f64>) -> Array2<f64> {
        (x.dot(&self.encoder.w) + &self.encoder.b).mapv(|v| v.max(0.0))
    }

    /// Accumulates encoder gradients given inputs `x`, outputs `e` and
    /// upstream gradient `de`.
    fn encode_backward(&self, x: &Array2<f64>, e: &Array2<f64>, mut de: Array2<f64>, grads: &mut Network) {
        de.zip_mut_with(e, |d, &v| {
            if v <= 0.0 {
                *d = 0.0;
            }
        });
        grads.encoder.w += &x.t().dot(&de);
        grads.encoder.b += &de.sum_axis(ndarray::Axis(0));
    }

    pub fn n_params(&self) -> usize {
        self.tensors().map(|t| t.len()).sum()
    }

    fn same_shapes(&self, other: &Network) -> bool {
        self.encoder.w.dim() == other.encoder.w.dim()
            && self.encoder.b.len() == other.encoder.b.len()
            && self.heads.len() == other.heads.len()
            && self.tensors().zip(other.tensors()).all(|(a, b)| a.len() == b.len())
            && self
                .heads
                .iter()
                .zip(&other.heads)
                .all(|(a, b)| {
                    let shapes = |m: &Mlp| m.layers.iter().map(|l| l.w.dim()).collect::<Vec<_>>();
                    shapes(&a.phi) == shapes(&b.phi) && shapes(&a.psi) == shapes(&b.psi)
                })
    }
}

/// AdamW moment estimates and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Network,
    pub v: Network,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub net: Network,
    pub opt: AdamState,
}

/// Batch-mean loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub cls: f64,
    pub cl: f64,
    pub total: f64,
}

/// Concatenates vision and text features into a frame representation.
pub fn encode_frame(vision: &FeatureVector, text: &FeatureVector, config: &ModelConfig) -> Result<FeatureVector> {
    if vision.dim() != config.d_v {
        return Err(Error::DimMismatch {
            expected: config.d_v,
            got: vision.dim(),
        });
    }
    if text.dim() != config.d_u {
        return Err(Error::DimMismatch {
            expected: config.d_u,
            got: text.dim(),
        });
    }
    let mut v = Vec::with_capacity(config.rep_dim());
    v.extend_from_slice(vision.as_slice());
    v.extend_from_slice(text.as_slice());
    FeatureVector::new(v)
}

/// Element-wise mean of the members.
pub fn pool_group(members: &[&FeatureVector]) -> Result<FeatureVector> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("cannot pool an empty group"))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for m in members {
        if m.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: m.dim(),
            });
        }
        for (a, x) in acc.iter_mut().zip(m.as_slice()) {
            *a += x;
        }
    }
    let n = members.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    FeatureVector::new(acc)
}

fn rows_to_array(rows: &[&[f64]], width: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::DimMismatch {
                expected: width,
                got: r.len(),
            });
        }
        data.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), width), data).expect("shape checked"))
}

fn check_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

fn normalise_rows(z: &Array2<f64>) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut out = Vec::with_capacity(z.nrows());
    let mut norms = Vec::with_capacity(z.nrows());
    for row in z.rows() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 {
            return Err(Error::invalid("projection output is the zero vector"));
        }
        out.push(row.iter().map(|v| v / n).collect());
        norms.push(n);
    }
    Ok((out, norms))
}

impl ModelParams {
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let net = Network::init(&config);
        let opt = AdamState {
            step: 0,
            m: net.zeros_like(),
            v: net.zeros_like(),
        };
        Ok(ModelParams { config, net, opt })
    }

    pub fn heads(&self, level: Level) -> &Heads {
        &self.net.heads[self.config.head_index(level)]
    }

    /// `(backward, forward)` logits for `a` placed before `b`.
    pub fn phi_forward(&self, level: Level, a: &FeatureVector, b: &FeatureVector) -> Result<[f64; 2]> {
        Ok(self.phi_forward_batch(level, &[(a.as_slice(), b.as_slice())])?[0])
    }

    pub fn phi_forward_batch(&self, level: Level, pairs: &[(&[f64], &[f64])]) -> Result<Vec<[f64; 2]>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let d = self.config.rep_dim();
        let firsts: Vec<&[f64]> = pairs.iter().map(|p| p.0).collect();
        let seconds: Vec<&[f64]> = pairs.iter().map(|p| p.1).collect();
        let ea = self.net.encode(&rows_to_array(&firsts, d)?);
        let eb = self.net.encode(&rows_to_array(&seconds, d)?);
        let x = ndarray::concatenate![Axis(1), ea, eb];
        let logits = self.heads(level).phi.infer(&x);
        check_finite(&logits, "phi activations")?;
        Ok(logits.rows().into_iter().map(|r| [r[0], r[1]]).collect())
    }

    /// Logits for every ordered pair `(i, j)`, `i != j`, of `items` in
    /// row-major order. Each item is encoded once and the first φ layer is
    /// split into its `a` and `b` halves, so the per-pair cost is linear in
    /// the hidden width.
    pub fn phi_logit_matrix(&self, level: Level, items: &[&[f64]]) -> Result<Vec<[f64; 2]>> {
        let n = items.len();
        if n < 2 {
            return Ok(Vec::new());
        }
        let e = self.net.encode(&rows_to_array(items, self.config.rep_dim())?);
        let phi = &self.heads(level).phi;
        let first = &phi.layers[0];
        let h = e.ncols();
        let left = e.dot(&first.w.slice(ndarray::s![..h, ..])) + &first.b;
        let right = e.dot(&first.w.slice(ndarray::s![h.., ..]));
        let mut pre = Array2::zeros((n * (n - 1), first.outputs()));
        let mut r = 0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let mut row = pre.row_mut(r);
                    row.assign(&left.row(i));
                    row += &right.row(j);
                    r += 1;
                }
            }
        }
        let logits = if phi.layers.len() == 1 {
            pre
        } else {
            pre.mapv_inplace(|v| v.max(0.0));
            Mlp {
                layers: phi.layers[1..].to_vec(),
            }
            .infer(&pre)
        };
        check_finite(&logits, "phi activations")?;
        Ok(logits.rows().into_iter().map(|r| [r[0], r[1]]).collect())
    }

    /// Unit-norm projection of `x`.
    pub fn psi_forward(&self, level: Level, x: &FeatureVector) -> Result<FeatureVector> {
        Ok(self.psi_forward_batch(level, &[x.as_slice()])?.remove(0))
    }

    fn psi_raw(&self, level: Level, xs: &[&[f64]]) -> Result<Array2<f64>> {
        let e = self.net.encode(&rows_to_array(xs, self.config.rep_dim())?);
        let z = self.heads(level).psi.infer(&e);
        check_finite(&z, "psi activations")?;
        Ok(z)
    }

    pub fn psi_forward_batch(&self, level: Level, xs: &[&[f64]]) -> Result<Vec<FeatureVector>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let (rows, _) = normalise_rows(&self.psi_raw(level, xs)?)?;
        rows.into_iter().map(FeatureVector::new).collect()
    }

    /// Like [`Self::psi_forward_batch`], but zero projections stay zero
    /// instead of failing.
    pub fn psi_embed_batch(&self, level: Level, xs: &[&[f64]]) -> Result<Vec<FeatureVector>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        self.psi_raw(level, xs)?
            .rows()
            .into_iter()
            .map(|row| {
                let n = row.dot(&row).sqrt();
                let scale = if n > 0.0 { 1.0 / n } else { 0.0 };
                FeatureVector::new(row.iter().map(|v| v * scale).collect())
            })
            .collect()
    }

    pub fn loss_total(&self, pair: &TrainingPair, lambda: f64) -> Result<LossParts> {
        batch_objective(&self.net, &self.config, &[pair], lambda, None)
    }

    /// Exact gradients of [`ModelParams::loss_total`] for every parameter.
    pub fn backward(&self, pair: &TrainingPair, lambda: f64) -> Result<Network> {
        self.backward_batch(&[pair], lambda).map(|(_, g)| g)
    }

    pub fn backward_batch(&self, pairs: &[&TrainingPair], lambda: f64) -> Result<(LossParts, Network)> {
        let mut grads = self.net.zeros_like();
        let parts = batch_objective(&self.net, &self.config, pairs, lambda, Some(&mut grads))?;
        if grads.tensors().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok((parts, grads))
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            config: &self.config,
            step: self.opt.step,
            network: &self.net,
            opt_m: &self.opt.m,
            opt_v: &self.opt.v,
        };
        serde_json::to_string(&ck).map_err(|source| Error::Json {
            context: "serialising checkpoint".into(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "parsing checkpoint".into(),
            source,
        })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.config.validate()?;
        let reference = Network::init(&ck.config);
        for (name, net) in [("network", &ck.network), ("opt_m", &ck.opt_m), ("opt_v", &ck.opt_v)] {
            if !reference.same_shapes(net) {
                return Err(Error::invalid(format!(
                    "checkpoint {name} shapes do not match its config"
                )));
            }
        }
        Ok(ModelParams {
            config: ck.config,
            net: ck.network,
            opt: AdamState {
                step: ck.step,
                m: ck.opt_m,
                v: ck.opt_v,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelParams::from_json(&text)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    config: &'a ModelConfig,
    step: u64,
    network: &'a Network,
    opt_m: &'a Network,
    opt_v: &'a Network,
}

#[derive(Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    step: u64,
    network: Network,
    opt_m: Network,
    opt_v: Network,
}

/// Mean of `L_cls + λ·L_CL` over `pairs`, optionally writing gradients into
/// `grads` (overwritten, not accumulated). The
/// contrastive term only applies to pairs flagged `contrastive`.
pub(crate) fn batch_objective(
    net: &Network,
    config: &ModelConfig,
    pairs: &[&TrainingPair],
    lambda: f64,
    mut grads: Option<&mut Network>,
) -> Result<LossParts> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let d = config.rep_dim();
    let scale = 1.0 / pairs.len() as f64;
    if let Some(g) = grads.as_mut() {
        g.tensors_mut().for_each(|t| t.fill(0.0));
    }
    let mut cls_sum = 0.0;
    let mut cl_sum = 0.0;

    for (head_idx, heads) in net.heads.iter().enumerate() {
        let group: Vec<&TrainingPair> = pairs
            .iter()
            .copied()
            .filter(|p| config.head_index(p.level) == head_idx)
            .collect();
        if group.is_empty() {
            continue;
        }

        for p in &group {
            if p.a.dim() != d || p.b.dim() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: p.a.dim().max(p.b.dim()),
                });
            }
        }
        let xa = rows_to_array(&group.iter().map(|p| p.a.as_slice()).collect::<Vec<_>>(), d)?;
        let xb = rows_to_array(&group.iter().map(|p| p.b.as_slice()).collect::<Vec<_>>(), d)?;
        let (ea, eb) = (net.encode(&xa), net.encode(&xb));
        let x = ndarray::concatenate![Axis(1), ea, eb];
        let (logits, cache) = heads.phi.forward(&x);
        check_finite(&logits, "phi activations")?;
        let mut dlogits = Array2::zeros((group.len(), 2));
        for (r, p) in group.iter().enumerate() {
            let (l, g) = loss::cls_loss_grad([logits[[r, 0]], logits[[r, 1]]], p.order_label);
            cls_sum += l;
            dlogits[[r, 0]] = g[0] * scale;
            dlogits[[r, 1]] = g[1] * scale;
        }
        if let Some(gr) = grads.as_mut() {
            let dx = heads.phi.backward(&cache, dlogits, &mut gr.heads[head_idx].phi);
            let h = ea.ncols();
            net.encode_backward(&xa, &ea, dx.slice(ndarray::s![.., ..h]).to_owned(), gr);
            net.encode_backward(&xb, &eb, dx.slice(ndarray::s![.., h..]).to_owned(), gr);
        }

        if lambda == 0.0 {
            continue;
        }
        let cl_pairs: Vec<&TrainingPair> = group.iter().copied().filter(|p| p.contrastive).collect();
        if cl_pairs.is_empty() {
            continue;
        }
        // Rows per pair: anchor, positive, then negatives.
        let mut rows: Vec<&[f64]> = Vec::new();
        let mut offsets = Vec::with_capacity(cl_pairs.len());
        for p in &cl_pairs {
            if p.negatives.is_empty() {
                return Err(Error::invalid("contrastive pair without negatives"));
            }
            offsets.push(rows.len());
            rows.push(p.a.as_slice());
            rows.push(p.b.as_slice());
            rows.extend(p.negatives.iter().map(|q| q.as_slice()));
        }
        let xs = rows_to_array(&rows, d)?;
        let e = net.encode(&xs);
        let (z, cache) = heads.psi.forward(&e);
        check_finite(&z, "psi activations")?;
        let (y, norms) = normalise_rows(&z)?;
        let mut dy = vec![vec![0.0; config.proj_dim]; rows.len()];
        for (p, &off) in cl_pairs.iter().zip(&offsets) {
            let negs: Vec<&[f64]> = (0..p.negatives.len()).map(|k| y[off + 2 + k].as_slice()).collect();
            let g = loss::cl_loss_grad(&y[off], &y[off + 1], &negs);
            cl_sum += g.loss;
            let w = lambda * scale;
            let mut add = |row: usize, grad: &[f64]| {
                for (acc, v) in dy[row].iter_mut().zip(grad) {
                    *acc += w * v;
                }
            };
            add(off, &g.anchor);
            add(off + 1, &g.positive);
            for (k, gq) in g.negatives.iter().enumerate() {
                add(off + 2 + k, gq);
            }
        }
        if let Some(gr) = grads.as_mut() {
            let mut dz = Array2::zeros(z.dim());
            for (r, ((yr, n), dyr)) in y.iter().zip(&norms).zip(&dy).enumerate() {
                let g = loss::normalize_backward(yr, *n, dyr);
                dz.row_mut(r).assign(&ndarray::ArrayView1::from(&g[..]));
            }
            let de = heads.psi.backward(&cache, dz, &mut gr.heads[head_idx].psi);
            net.encode_backward(&xs, &e, de, gr);
        }
    }

    let cls = cls_sum * scale;
    let cl = cl_sum * scale;
    let parts = LossParts {
        cls,
        cl,
        total: cls + lambda * cl,
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    pub(crate) fn small_config(seed: u64) -> ModelConfig {
        ModelConfig {
            d_v: 2,
            d_u: 1,
            hidden_dim: 5,
            proj_dim: 3,
            n_negatives: 3,
            seed,
            ..Default::default()
        }
    }

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn random_pair(rng: &mut impl Rng, level: Level, d: usize, n_neg: usize) -> TrainingPair {
        let mut v = || fv(&(0..d).map(|_| rng.gen_range(-1.5..1.5)).collect::<Vec<_>>());
        TrainingPair {
            level,
            a: v(),
            b: v(),
            order_label: 1,
            negatives: (0..n_neg).map(|_| v()).collect(),
            contrastive: true,
        }
    }

    #[test]
    fn encode_concatenates() {
        let cfg = ModelConfig { d_v: 2, d_u: 1, ..Default::default() };
        assert_eq!(encode_frame(&fv(&[1.0, 2.0]), &fv(&[3.0]), &cfg).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(
            encode_frame(&fv(&[1.0, 2.0]), &FeatureVector::zeros(1), &cfg).unwrap().as_slice(),
            &[1.0, 2.0, 0.0]
        );
        assert!(encode_frame(&fv(&[1.0]), &fv(&[3.0]), &cfg).is_err());
    }

    #[test]
    fn pooling_is_a_mean() {
        let a = fv(&[1.0, 0.0]);
        let b = fv(&[0.0, 1.0]);
        assert_eq!(pool_group(&[&a]).unwrap(), a);
        assert_eq!(pool_group(&[&a, &b]).unwrap().as_slice(), &[0.5, 0.5]);
        assert_eq!(pool_group(&[&b, &a]).unwrap(), pool_group(&[&a, &b]).unwrap());
        assert!(pool_group(&[]).is_err());
    }

    fn zero_net(params: &mut ModelParams) {
        params.net.tensors_mut().for_each(|t| t.fill(0.0));
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut p = ModelParams::init(small_config(0)).unwrap();
        zero_net(&mut p);
        let x = fv(&[0.3, -2.0, 5.0]);
        assert_eq!(p.phi_forward(Level::Frame, &x, &x).unwrap(), [0.0, 0.0]);
    }

    fn identity_encoder(p: &mut ModelParams) {
        let d = p.config.rep_dim();
        p.config.hidden_dim = d;
        p.net.encoder = Dense {
            w: Array2::eye(d),
            b: Array2::zeros((1, d)).row(0).to_owned(),
        };
    }

    #[test]
    fn single_layer_affine_phi() {
        // Identity encoder and one affine φ layer on 1-D items: logits = [a, b]·W + c.
        let cfg = ModelConfig { d_v: 1, d_u: 1, ..small_config(0) };
        let mut p = ModelParams::init(cfg).unwrap();
        identity_encoder(&mut p);
        p.net.heads[0].phi = Mlp {
            layers: vec![Dense {
                w: ndarray::array![[1.0, -1.0], [0.0, 0.0], [-1.0, 1.0], [0.0, 0.0]],
                b: ndarray::array![0.25, -0.25],
            }],
        };
        let logits = p.phi_forward(Level::Frame, &fv(&[2.0, 0.0]), &fv(&[5.0, 0.0])).unwrap();
        // (2 - 5 + 0.25, -2 + 5 - 0.25)
        assert_eq!(logits, [-2.75, 2.75]);
        let m = p.phi_logit_matrix(Level::Frame, &[&[2.0, 0.0], &[5.0, 0.0]]).unwrap();
        assert_eq!(m, [[-2.75, 2.75], [3.25, -3.25]]);
    }

    #[test]
    fn logit_matrix_matches_pairwise_forward() {
        let p = ModelParams::init(small_config(7)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let items: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let rows: Vec<&[f64]> = items.iter().map(|v| v.as_slice()).collect();
        let m = p.phi_logit_matrix(Level::Shot, &rows).unwrap();
        let mut k = 0;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    let l = p.phi_forward_batch(Level::Shot, &[(rows[i], rows[j])]).unwrap()[0];
                    assert_abs_diff_eq!(m[k][0], l[0], epsilon = 1e-12);
                    assert_abs_diff_eq!(m[k][1], l[1], epsilon = 1e-12);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn psi_outputs_are_unit_norm() {
        let p = ModelParams::init(small_config(4)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = fv(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.1..3.0)]);
            for level in Level::ALL {
                if let Ok(y) = p.psi_forward(level, &x) {
                    assert!((y.norm() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn psi_with_zero_weights_is_bias_direction() {
        let mut p = ModelParams::init(small_config(1)).unwrap();
        zero_net(&mut p);
        let last = p.net.heads[0].psi.layers.last_mut().unwrap();
        last.b = ndarray::array![3.0, 0.0, 4.0];
        let y = p.psi_forward(Level::Frame, &fv(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(y.as_slice(), &[0.6, 0.0, 0.8]);
        zero_net(&mut p);
        assert!(p.psi_forward(Level::Frame, &fv(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn identity_projection_normalises() {
        let cfg = ModelConfig { d_v: 1, d_u: 1, proj_dim: 2, ..small_config(0) };
        let mut p = ModelParams::init(cfg).unwrap();
        identity_encoder(&mut p);
        p.net.heads[0].psi = Mlp {
            layers: vec![Dense {
                w: ndarray::array![[1.0, 0.0], [0.0, 1.0]],
                b: ndarray::array![0.0, 0.0],
            }],
        };
        let y = p.psi_forward(Level::Frame, &fv(&[3.0, 4.0])).unwrap();
        assert_abs_diff_eq!(y.as_slice()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(y.as_slice()[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn lambda_zero_is_classification_only() {
        let p = ModelParams::init(small_config(3)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let pair = random_pair(&mut rng, Level::Shot, 3, 3);
        let parts = p.loss_total(&pair, 0.0).unwrap();
        let logits = p.phi_forward(Level::Shot, &pair.a, &pair.b).unwrap();
        assert_abs_diff_eq!(parts.total, loss_cls(logits, 1), epsilon = 1e-12);
        let full = p.loss_total(&pair, 0.75).unwrap();
        assert_abs_diff_eq!(full.total, full.cls + 0.75 * full.cl, epsilon = 1e-12);
        assert_abs_diff_eq!(full.cls, parts.cls, epsilon = 1e-15);
    }

    #[test]
    fn contrastive_gradient_scales_with_lambda() {
        let p = ModelParams::init(small_config(5)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let pair = random_pair(&mut rng, Level::Frame, 3, 3);
        let g1 = p.backward(&pair, 1.0).unwrap();
        let g2 = p.backward(&pair, 2.0).unwrap();
        let psi = |g: &Network| g.heads[0].psi.tensors().flat_map(|t| t.to_vec()).collect::<Vec<_>>();
        for (a, b) in psi(&g1).iter().zip(psi(&g2)) {
            assert_abs_diff_eq!(2.0 * a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_shape_validation() {
        let p = ModelParams::init(small_config(6)).unwrap();
        let json = p.to_json().unwrap();
        assert_eq!(ModelParams::from_json(&json).unwrap(), p);
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["config"]["hidden_dim"] = serde_json::json!(7);
        assert!(ModelParams::from_json(&v.to_string()).is_err());
    }
}
