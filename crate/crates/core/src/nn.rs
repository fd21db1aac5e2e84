//! Numerical kernels for the two contrastive encoders: single-layer GCN,
//! its single-node (MLP) degeneration, average readout, bilinear
//! discriminator, the hand-derived backward pass over a recorded batch, and
//! Adam.
//!
//! All math is `f64`. ReLU uses subgradient 0 at 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::{add_outer, add_outer_sparse, axpy, dot, mat_vec, sparse_row, vec_mat, Matrix};
use crate::sampler::Subgraph;

/// Scores are clamped to `[SCORE_CLAMP, 1 - SCORE_CLAMP]` before taking logs.
pub const SCORE_CLAMP: f64 = 1e-12;

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = relu(*x));
}

/// `ReLU(Â · X · W)`.
pub fn gcn_forward(adj_norm: &NormalizedAdjacency, features: &Matrix, weight: &Matrix) -> Result<Matrix> {
    if !weight.is_finite() {
        return Err(Error::Numeric("gcn: non-finite weight".into()));
    }
    let mut pre = gcn_preactivation(adj_norm, features, weight)?.1;
    relu_in_place(pre.as_mut_slice());
    Ok(pre)
}

/// Returns `(X·W, Â·X·W)`. The weight is not scanned for non-finite
/// values here; callers validate parameters once up front.
fn gcn_preactivation(adj_norm: &NormalizedAdjacency, features: &Matrix, weight: &Matrix) -> Result<(Matrix, Matrix)> {
    let k = adj_norm.size();
    if features.rows() != k || features.cols() != weight.rows() {
        return Err(Error::Shape(format!(
            "gcn: adjacency {k}x{k}, features {:?}, weight {:?}",
            features.shape(),
            weight.shape()
        )));
    }
    if !features.is_finite() {
        return Err(Error::Numeric("gcn: non-finite features".into()));
    }
    let xw = features.matmul(weight)?;
    let pre = adj_norm.matrix().matmul(&xw)?;
    Ok((xw, pre))
}

/// `ReLU(x · W)`: the GCN layer applied to a lone node.
pub fn node_forward(x: &[f64], weight: &Matrix) -> Result<Vec<f64>> {
    if x.len() != weight.rows() {
        return Err(Error::Shape(format!(
            "node_forward: input of length {} against weight {:?}",
            x.len(),
            weight.shape()
        )));
    }
    let mut out = vec_mat(x, weight);
    relu_in_place(&mut out);
    Ok(out)
}

/// Column-wise mean of the rows of `h`.
pub fn readout(h: &Matrix) -> Result<Vec<f64>> {
    if h.rows() == 0 {
        return Err(Error::Shape("readout of an empty matrix".into()));
    }
    let mut out = vec![0.0; h.cols()];
    for i in 0..h.rows() {
        axpy(1.0, h.row(i), &mut out);
    }
    let k = h.rows() as f64;
    out.iter_mut().for_each(|x| *x /= k);
    Ok(out)
}

/// `h · W · zᵀ`, the discriminator logit.
pub fn bilinear_logit(h: &[f64], z: &[f64], w: &Matrix) -> Result<f64> {
    if h.len() != w.rows() || z.len() != w.cols() {
        return Err(Error::Shape(format!(
            "bilinear: h {} and z {} against W {:?}",
            h.len(),
            z.len(),
            w.shape()
        )));
    }
    Ok(dot(h, &mat_vec(w, z)))
}

/// `sigmoid(h · W · zᵀ)`.
pub fn bilinear_score(h: &[f64], z: &[f64], w: &Matrix) -> Result<f64> {
    bilinear_logit(h, z, w).map(sigmoid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Patch encoder, D×D′.
    pub theta: Matrix,
    /// Context encoder, D×D′.
    pub phi: Matrix,
    /// Patch discriminator, D′×D′.
    pub w_p: Matrix,
    /// Context discriminator, D′×D′.
    pub w_c: Matrix,
}

impl ModelParams {
    pub fn zeros(input_dim: usize, embed_dim: usize) -> Self {
        Self {
            theta: Matrix::zeros(input_dim, embed_dim),
            phi: Matrix::zeros(input_dim, embed_dim),
            w_p: Matrix::zeros(embed_dim, embed_dim),
            w_c: Matrix::zeros(embed_dim, embed_dim),
        }
    }

    /// Glorot-uniform initialization: entries drawn from `U(-a, a)` with
    /// `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng>(input_dim: usize, embed_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, embed_dim);
        for m in p.matrices_mut() {
            let a = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
            m.as_mut_slice()
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-a..a));
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.theta.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.theta.cols()
    }

    pub fn matrices(&self) -> [&Matrix; 4] {
        [&self.theta, &self.phi, &self.w_p, &self.w_c]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.theta, &mut self.phi, &mut self.w_p, &mut self.w_c]
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        let (d, e) = self.theta.shape();
        if self.phi.shape() != (d, e) || self.w_p.shape() != (e, e) || self.w_c.shape() != (e, e) {
            return Err(Error::Shape(format!(
                "inconsistent parameter shapes: theta {:?}, phi {:?}, w_p {:?}, w_c {:?}",
                self.theta.shape(),
                self.phi.shape(),
                self.w_p.shape(),
                self.w_c.shape()
            )));
        }
        if !self.is_finite() {
            return Err(Error::Numeric("non-finite model parameter".into()));
        }
        Ok(())
    }
}

/// Gradient buffers, one per parameter matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub theta: Matrix,
    pub phi: Matrix,
    pub w_p: Matrix,
    pub w_c: Matrix,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            theta: Matrix::zeros(p.theta.rows(), p.theta.cols()),
            phi: Matrix::zeros(p.phi.rows(), p.phi.cols()),
            w_p: Matrix::zeros(p.w_p.rows(), p.w_p.cols()),
            w_c: Matrix::zeros(p.w_c.rows(), p.w_c.cols()),
        }
    }

    pub fn matrices(&self) -> [&Matrix; 4] {
        [&self.theta, &self.phi, &self.w_p, &self.w_c]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.theta, &mut self.phi, &mut self.w_p, &mut self.w_c]
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.matrices().iter().fold(0.0, |m, g| m.max(g.max_abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scale {
    Patch,
    Context,
}

/// How a view's node embeddings are pooled into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Row 0 (the masked target).
    Target,
    /// Average readout over all K rows.
    Mean,
}

/// Cached forward state of one encoded view.
#[derive(Debug, Clone)]
pub struct ViewTape {
    adj: NormalizedAdjacency,
    /// Nonzero entries of each feature row.
    rows: Vec<Vec<(usize, f64)>>,
    pooling: Pooling,
    /// `Â · X · W`, before ReLU.
    pre: Matrix,
    /// Pooled embedding.
    pub embedding: Vec<f64>,
}

impl ViewTape {
    pub fn encode(sub: Subgraph, weight: &Matrix, pooling: Pooling) -> Result<Self> {
        let k = sub.adj_norm.size();
        if sub.features.rows() != k || sub.features.cols() != weight.rows() {
            return Err(Error::Shape(format!(
                "gcn: adjacency {k}x{k}, features {:?}, weight {:?}",
                sub.features.shape(),
                weight.shape()
            )));
        }
        if !sub.features.is_finite() {
            return Err(Error::Numeric("gcn: non-finite features".into()));
        }
        let rows = (0..k).map(|r| sparse_row(sub.features.row(r))).collect();
        Self::encode_sparse(sub.adj_norm, rows, weight, pooling)
    }

    /// Same as [`ViewTape::encode`] with feature rows given as nonzero
    /// `(column, value)` entries, which must be finite and in range.
    pub fn encode_sparse(
        adj: NormalizedAdjacency,
        rows: Vec<Vec<(usize, f64)>>,
        weight: &Matrix,
        pooling: Pooling,
    ) -> Result<Self> {
        if rows.len() != adj.size() {
            return Err(Error::Shape(format!(
                "{} feature rows for a {}-node view",
                rows.len(),
                adj.size()
            )));
        }
        let mut xw = Matrix::zeros(rows.len(), weight.cols());
        for (r, x) in rows.iter().enumerate() {
            let out = xw.row_mut(r);
            for &(c, v) in x {
                axpy(v, weight.row(c), out);
            }
        }
        let pre = adj.matrix().matmul(&xw)?;
        let embedding = match pooling {
            Pooling::Target => pre.row(0).iter().map(|&x| relu(x)).collect(),
            Pooling::Mean => {
                let mut h = pre.clone();
                relu_in_place(h.as_mut_slice());
                readout(&h)?
            }
        };
        Ok(Self {
            adj,
            rows,
            pooling,
            pre,
            embedding,
        })
    }

    /// Accumulates `∂L/∂W` given `∂L/∂embedding`.
    fn backward(&self, d_embedding: &[f64], d_weight: &mut Matrix) {
        let k = self.rows.len();
        let mut d_pre = Matrix::zeros(k, d_embedding.len());
        match self.pooling {
            Pooling::Target => {
                for (c, (&g, &p)) in d_embedding.iter().zip(self.pre.row(0)).enumerate() {
                    if p > 0.0 {
                        d_pre.set(0, c, g);
                    }
                }
            }
            Pooling::Mean => {
                let scale = 1.0 / k as f64;
                for r in 0..k {
                    for (c, (&g, &p)) in d_embedding.iter().zip(self.pre.row(r)).enumerate() {
                        if p > 0.0 {
                            d_pre.set(r, c, g * scale);
                        }
                    }
                }
            }
        }
        // pre = Â · (X W) with Â symmetric, so ∂(XW) = Â · ∂pre.
        let a = self.adj.matrix();
        for (m, x) in self.rows.iter().enumerate() {
            if x.is_empty() {
                continue;
            }
            let mut d_xw = vec![0.0; d_embedding.len()];
            for r in 0..k {
                let arm = a.get(r, m);
                if arm != 0.0 {
                    axpy(arm, d_pre.row(r), &mut d_xw);
                }
            }
            add_outer_sparse(d_weight, 1.0, x, &d_xw);
        }
    }
}

/// Cached forward state of a lone-node embedding `ReLU(x · W)`.
#[derive(Debug, Clone)]
pub struct NodeTape {
    x: Vec<(usize, f64)>,
    pre: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl NodeTape {
    pub fn encode(x: &[f64], weight: &Matrix) -> Result<Self> {
        if x.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "node input of length {} against weight {:?}",
                x.len(),
                weight.shape()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite node features".into()));
        }
        Ok(Self::encode_sparse(sparse_row(x), weight))
    }

    /// `x` as nonzero `(column, value)` entries, finite and in range.
    pub fn encode_sparse(x: Vec<(usize, f64)>, weight: &Matrix) -> Self {
        let mut pre = vec![0.0; weight.cols()];
        for &(c, v) in &x {
            axpy(v, weight.row(c), &mut pre);
        }
        let embedding = pre.iter().map(|&v| relu(v)).collect();
        Self { x, pre, embedding }
    }

    fn backward(&self, d_embedding: &[f64], d_weight: &mut Matrix) {
        let d_pre: Vec<f64> = d_embedding
            .iter()
            .zip(&self.pre)
            .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
            .collect();
        add_outer_sparse(d_weight, 1.0, &self.x, &d_pre);
    }
}

/// Per-node forward state at both scales.
#[derive(Debug, Clone)]
pub struct SampleTape {
    pub node: usize,
    pub patch: ViewTape,
    pub context: ViewTape,
    pub z_patch: NodeTape,
    pub z_context: NodeTape,
}

impl SampleTape {
    pub fn h(&self, scale: Scale) -> &[f64] {
        match scale {
            Scale::Patch => &self.patch.embedding,
            Scale::Context => &self.context.embedding,
        }
    }

    pub fn z(&self, scale: Scale) -> &[f64] {
        match scale {
            Scale::Patch => &self.z_patch.embedding,
            Scale::Context => &self.z_context.embedding,
        }
    }
}

/// Whether a discriminator pair is pushed toward 1 or toward 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairRole {
    Positive,
    Negative,
}

/// One term of the training loss: `weight · -log(s)` for a positive pair or
/// `weight · -log(1 - s)` for a negative pair, with
/// `s = sigmoid(h[h_of] · W · z[z_of]ᵀ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub scale: Scale,
    pub h_of: usize,
    pub z_of: usize,
    pub role: PairRole,
    pub weight: f64,
    pub logit: f64,
}

impl PairTerm {
    pub fn score(&self) -> f64 {
        sigmoid(self.logit)
    }

    pub fn loss(&self) -> f64 {
        let s = clamp_score(self.score());
        match self.role {
            PairRole::Positive => -self.weight * s.ln(),
            PairRole::Negative => -self.weight * (1.0 - s).ln(),
        }
    }

    /// `∂loss/∂logit`; zero where the score clamp is active.
    fn d_logit(&self) -> f64 {
        let s = self.score();
        if !(SCORE_CLAMP..=1.0 - SCORE_CLAMP).contains(&s) {
            return 0.0;
        }
        match self.role {
            PairRole::Positive => -self.weight * (1.0 - s),
            PairRole::Negative => self.weight * s,
        }
    }
}

/// Everything `backward` needs from a batch forward pass.
#[derive(Debug, Clone, Default)]
pub struct BatchTape {
    pub samples: Vec<SampleTape>,
    pub terms: Vec<PairTerm>,
}

impl BatchTape {
    pub fn loss(&self) -> f64 {
        self.terms.iter().map(PairTerm::loss).sum()
    }
}

/// Exact gradients of the recorded loss, scaled by `loss_grad` (`∂ℓ/∂L`).
/// `tape` is `None` when the forward pass ran without caching.
pub fn backward(tape: Option<&BatchTape>, params: &ModelParams, loss_grad: f64) -> Result<Gradients> {
    let tape = tape.ok_or_else(|| Error::State("backward called without a cached forward tape".into()))?;
    let mut grads = Gradients::zeros_like(params);
    let e = params.embed_dim();
    let n = tape.samples.len();
    let mut d_h = [vec![vec![0.0; e]; n], vec![vec![0.0; e]; n]];
    let mut d_z = [vec![vec![0.0; e]; n], vec![vec![0.0; e]; n]];

    for term in &tape.terms {
        let g = loss_grad * term.d_logit();
        if g == 0.0 {
            continue;
        }
        let (w, d_w, si) = match term.scale {
            Scale::Patch => (&params.w_p, &mut grads.w_p, 0),
            Scale::Context => (&params.w_c, &mut grads.w_c, 1),
        };
        let h = tape.samples[term.h_of].h(term.scale);
        let z = tape.samples[term.z_of].z(term.scale);
        add_outer(d_w, g, h, z);
        axpy(g, &mat_vec(w, z), &mut d_h[si][term.h_of]);
        axpy(g, &vec_mat(h, w), &mut d_z[si][term.z_of]);
    }

    for (i, s) in tape.samples.iter().enumerate() {
        s.patch.backward(&d_h[0][i], &mut grads.theta);
        s.z_patch.backward(&d_z[0][i], &mut grads.theta);
        s.context.backward(&d_h[1][i], &mut grads.phi);
        s.z_context.backward(&d_z[1][i], &mut grads.phi);
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        Self {
            first_moment: Gradients::zeros_like(params),
            second_moment: Gradients::zeros_like(params),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts the step and
/// leaves both `params` and `state` untouched.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    for (p, g) in params.matrices().iter().zip(grads.matrices()) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} does not match parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient; Adam step aborted".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let AdamState {
        first_moment,
        second_moment,
        ..
    } = state;
    for (((p, g), m), v) in params
        .matrices_mut()
        .into_iter()
        .zip(grads.matrices())
        .zip(first_moment.matrices_mut())
        .zip(second_moment.matrices_mut())
    {
        let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
