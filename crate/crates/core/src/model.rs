//! Tied-weight ReLU autoencoder `x' = ReLU(WᵀWx + b)` with sparse synthetic
//! inputs and a deterministic Adam trainer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl WeightMatrix {
    pub fn new(w: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        if w.ncols() != b.len() {
            return Err(Error::validation(format!(
                "bias has length {} but W has {} columns",
                b.len(),
                w.ncols()
            )));
        }
        if w.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::validation("weights contain non-finite entries"));
        }
        Ok(WeightMatrix { w, b })
    }

    /// Weights with zero bias.
    pub fn from_w(w: Array2<f64>) -> Result<Self> {
        let n = w.ncols();
        Self::new(w, Array1::zeros(n))
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn n(&self) -> usize {
        self.w.ncols()
    }

    pub fn gram(&self) -> Array2<f64> {
        let g = self.w.t().dot(&self.w);
        crate::spectral::symmetrize(g)
    }
}

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
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TmsConfig {
    pub n: usize,
    pub m: usize,
    /// Per-feature probability that the input coordinate is zero.
    pub sparsity: Vec<f64>,
    pub importance: Vec<f64>,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub steps: usize,
    pub batch: usize,
    pub snapshot_every: usize,
    /// Size of the fixed batch on which snapshot losses are measured.
    pub eval_batch: usize,
}

impl TmsConfig {
    /// Uniform sparsity, unit importance and the default training budget.
    pub fn uniform(n: usize, m: usize, sparsity: f64, seed: u64) -> Self {
        TmsConfig {
            n,
            m,
            sparsity: vec![sparsity; n],
            importance: vec![1.0; n],
            seed,
            optimizer: AdamConfig::default(),
            steps: 10_000,
            batch: 1024,
            snapshot_every: 500,
            eval_batch: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::validation("m must be at least 1"));
        }
        if self.n < self.m {
            return Err(Error::validation(format!("n ({}) must be at least m ({})", self.n, self.m)));
        }
        if self.sparsity.len() != self.n || self.importance.len() != self.n {
            return Err(Error::validation("sparsity and importance must have length n"));
        }
        if let Some(s) = self.sparsity.iter().find(|s| !(0.0..1.0).contains(*s)) {
            return Err(Error::validation(format!("sparsity {s} outside [0, 1)")));
        }
        if let Some(i) = self.importance.iter().find(|i| !(**i > 0.0 && i.is_finite())) {
            return Err(Error::validation(format!("importance {i} must be positive")));
        }
        if self.batch == 0 || self.eval_batch == 0 || self.snapshot_every == 0 {
            return Err(Error::validation("batch sizes and snapshot cadence must be positive"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::validation("invalid optimizer hyperparameters"));
        }
        Ok(())
    }
}

/// Draw a `batch × n` input matrix.
///
/// One uniform draw `u` per entry: the entry is zero when `u < S_i`, otherwise
/// `(u − S_i)/(1 − S_i)`, which is uniform on `[0, 1)`.
pub fn sample_batch(sparsity: &[f64], batch: usize, rng: &mut Pcg64) -> Array2<f64> {
    let mut x = Array2::zeros((batch, sparsity.len()));
    let mut nz = vec![0; x.len()];
    sample_into(sparsity, &mut x, &mut nz, rng);
    x
}

/// Refill `x` in place and record the flat positions of its nonzero entries
/// in `nz`; returns how many there are.
fn sample_into(sparsity: &[f64], x: &mut Array2<f64>, nz: &mut [u32], rng: &mut Pcg64) -> usize {
    let n = sparsity.len();
    let xs = x.as_slice_mut().expect("standard layout");
    let mut nnz = 0;
    for (r, row) in xs.chunks_exact_mut(n).enumerate() {
        for (k, (v, &s)) in row.iter_mut().zip(sparsity).enumerate() {
            let u: f64 = rng.random();
            nz[nnz] = (r * n + k) as u32;
            nnz += (u >= s) as usize;
            *v = (u - s).max(0.0) / (1.0 - s);
        }
    }
    nnz
}

/// Flat positions of the nonzero entries of `x`.
fn nonzeros(x: &[f64]) -> Vec<u32> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(p, _)| p as u32)
        .collect()
}

fn check_inputs(model: &WeightMatrix, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != model.n() {
        return Err(Error::validation(format!(
            "input has {} columns but the model has {} features",
            x.ncols(),
            model.n()
        )));
    }
    Ok(())
}

/// Pre-activations `X M + b` computed as `(X Wᵀ) W + b`.
fn preactivations(model: &WeightMatrix, x: ArrayView2<f64>) -> Array2<f64> {
    let mut h = Array2::zeros((x.nrows(), model.m()));
    let mut u = Array2::zeros(x.raw_dim());
    preactivations_into(model, x, &mut h, &mut u);
    u
}

fn preactivations_into(model: &WeightMatrix, x: ArrayView2<f64>, h: &mut Array2<f64>, u: &mut Array2<f64>) {
    general_mat_mul(1.0, &x, &model.w.t(), 0.0, h);
    general_mat_mul(1.0, h, &model.w, 0.0, u);
    *u += &model.b;
}

pub fn forward(model: &WeightMatrix, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_inputs(model, x)?;
    Ok(preactivations(model, x).mapv_into(|u| u.max(0.0)))
}

/// Batch mean of `Σ_i I_i (x_i − x'_i)²`.
pub fn loss(x: ArrayView2<f64>, x_hat: ArrayView2<f64>, importance: &[f64]) -> Result<f64> {
    if x.dim() != x_hat.dim() || x.ncols() != importance.len() {
        return Err(Error::validation("loss inputs have mismatched shapes"));
    }
    if x.nrows() == 0 {
        return Err(Error::validation("empty batch"));
    }
    let mut total = 0.0;
    for (r, rh) in x.rows().into_iter().zip(x_hat.rows()) {
        for ((a, b), w) in r.iter().zip(rh.iter()).zip(importance) {
            total += w * (a - b) * (a - b);
        }
    }
    Ok(total / x.nrows() as f64)
}

#[derive(Clone, Debug)]
pub struct Gradient {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Symmetrized Gram gradient `Φ = −E[δxᵀ + xδᵀ]`.
    pub phi: Array2<f64>,
    /// Batch loss at the evaluation point.
    pub loss: f64,
}

/// Writes the error signal `δ = I ⊙ (x − x') ⊙ 1(u > 0)` from
/// pre-activations `u` and returns the summed weighted squared error.
fn error_signal_into(x: &[f64], u: &[f64], importance: &[f64], delta: &mut [f64]) -> f64 {
    let n = importance.len();
    let mut total = 0.0;
    for ((d, xr), ur) in delta.chunks_exact_mut(n).zip(x.chunks_exact(n)).zip(u.chunks_exact(n)) {
        for (((d, &xk), &uk), &ik) in d.iter_mut().zip(xr).zip(ur).zip(importance) {
            let r = xk - uk.max(0.0);
            total += ik * r * r;
            *d = if uk > 0.0 { ik * r } else { 0.0 };
        }
    }
    total
}

/// Sparse inputs below this density use the scatter path for `Xᵀδ`.
const SPARSE_DENSITY: f64 = 0.25;

fn is_sparse(nz: &[u32], len: usize) -> bool {
    (nz.len() as f64) < SPARSE_DENSITY * len as f64
}

/// `out[k, j] = Σ_b x_bk δ_bj`.
fn x_t_delta_into(x: &[f64], nz: &[u32], delta: &Array2<f64>, out: &mut Array2<f64>) {
    let n = delta.ncols();
    if is_sparse(nz, x.len()) {
        let ds = delta.as_slice().expect("standard layout");
        let gs = out.as_slice_mut().expect("standard layout");
        gs.fill(0.0);
        for &p in nz {
            let p = p as usize;
            let (r, k) = (p / n, p % n);
            let xk = x[p];
            for (g, &d) in gs[k * n..(k + 1) * n].iter_mut().zip(&ds[r * n..(r + 1) * n]) {
                *g += xk * d;
            }
        }
    } else {
        let xv = ArrayView2::from_shape(delta.raw_dim(), x).expect("shape");
        general_mat_mul(1.0, &xv.t(), delta, 0.0, out);
    }
}

/// `H = X Wᵀ` accumulated over the nonzero entries of `X`.
fn sparse_hidden_into(model: &WeightMatrix, x: &[f64], nz: &[u32], h: &mut Array2<f64>) {
    let n = model.n();
    let m = model.m();
    let wt = model.w.t().as_standard_layout().into_owned();
    let ws = wt.as_slice().expect("standard layout");
    let hs = h.as_slice_mut().expect("standard layout");
    hs.fill(0.0);
    for &p in nz {
        let p = p as usize;
        let (r, k) = (p / n, p % n);
        let xk = x[p];
        for (a, &w) in hs[r * m..(r + 1) * m].iter_mut().zip(&ws[k * m..(k + 1) * m]) {
            *a += xk * w;
        }
    }
}

/// Buffers reused across training steps for one batch size.
struct Workspace {
    h: Array2<f64>,
    u: Array2<f64>,
    delta: Array2<f64>,
    cross: Array2<f64>,
    grad: Gradient,
}

impl Workspace {
    fn new(batch: usize, m: usize, n: usize) -> Self {
        Workspace {
            h: Array2::zeros((batch, m)),
            u: Array2::zeros((batch, n)),
            delta: Array2::zeros((batch, n)),
            cross: Array2::zeros((n, n)),
            grad: Gradient {
                w: Array2::zeros((m, n)),
                b: Array1::zeros(n),
                phi: Array2::zeros((n, n)),
                loss: 0.0,
            },
        }
    }

    /// `Φ = −(G + Gᵀ)` with `G = E[δxᵀ]`, and `−E[δ]`, from `delta` and `x`.
    fn kernel(&mut self, x: &[f64], nz: &[u32]) {
        let bsz = self.delta.nrows() as f64;
        x_t_delta_into(x, nz, &self.delta, &mut self.cross);
        let n = self.cross.nrows();
        for j in 0..n {
            for k in j..n {
                let v = -(self.cross[[j, k]] + self.cross[[k, j]]) / bsz;
                self.grad.phi[[j, k]] = v;
                self.grad.phi[[k, j]] = v;
            }
        }
        let b = self.grad.b.as_slice_mut().expect("standard layout");
        b.fill(0.0);
        for row in self.delta.as_slice().expect("standard layout").chunks_exact(n) {
            for (acc, &d) in b.iter_mut().zip(row) {
                *acc += d;
            }
        }
        for acc in b.iter_mut() {
            *acc = -*acc / bsz;
        }
    }

    fn grad(&mut self, model: &WeightMatrix, x: &[f64], importance: &[f64], nz: &[u32]) {
        let xv = ArrayView2::from_shape(self.u.raw_dim(), x).expect("shape");
        if is_sparse(nz, x.len()) {
            sparse_hidden_into(model, x, nz, &mut self.h);
            general_mat_mul(1.0, &self.h, &model.w, 0.0, &mut self.u);
            self.u += &model.b;
        } else {
            preactivations_into(model, xv, &mut self.h, &mut self.u);
        }
        let total = error_signal_into(
            x,
            self.u.as_slice().expect("standard layout"),
            importance,
            self.delta.as_slice_mut().expect("standard layout"),
        );
        self.grad.loss = total / self.u.nrows() as f64;
        self.kernel(x, nz);
        general_mat_mul(1.0, &model.w, &self.grad.phi, 0.0, &mut self.grad.w);
    }
}

/// Gradient of the objective `½·loss` with respect to `W` and `b`.
///
/// `∇_W = WΦ`, `∇_b = −E[δ]`. The ReLU subgradient at zero is zero.
pub fn grad(model: &WeightMatrix, x: ArrayView2<f64>, importance: &[f64]) -> Result<Gradient> {
    check_inputs(model, x)?;
    if importance.len() != model.n() {
        return Err(Error::validation("importance has wrong length"));
    }
    if x.nrows() == 0 {
        return Err(Error::validation("empty batch"));
    }
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let nz = nonzeros(xs);
    let mut ws = Workspace::new(x.nrows(), model.m(), model.n());
    ws.grad(model, xs, importance, &nz);
    Ok(ws.grad)
}

/// `Φ` and `−E[δ]` for a Gram matrix and bias, without reference to `W`.
pub fn kernel_from_gram(
    gram: &Array2<f64>,
    bias: &Array1<f64>,
    x: ArrayView2<f64>,
    importance: &[f64],
) -> (Array2<f64>, Array1<f64>) {
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let nz = nonzeros(xs);
    let mut ws = Workspace::new(x.nrows(), 0, x.ncols());
    general_mat_mul(1.0, &x, gram, 0.0, &mut ws.u);
    ws.u += bias;
    error_signal_into(
        xs,
        ws.u.as_slice().expect("standard layout"),
        importance,
        ws.delta.as_slice_mut().expect("standard layout"),
    );
    ws.kernel(xs, &nz);
    (ws.grad.phi, ws.grad.b)
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: usize,
    pub weights: WeightMatrix,
    /// Loss on the fixed evaluation batch.
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingTrajectory {
    pub snapshots: Vec<Snapshot>,
    pub final_weights: WeightMatrix,
}

impl TrainingTrajectory {
    pub fn initial_loss(&self) -> f64 {
        self.snapshots.first().map_or(f64::NAN, |s| s.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.snapshots.last().map_or(f64::NAN, |s| s.loss)
    }
}

struct Adam {
    cfg: AdamConfig,
    t: i32,
    mw: Array2<f64>,
    vw: Array2<f64>,
    mb: Array1<f64>,
    vb: Array1<f64>,
}

impl Adam {
    fn new(cfg: AdamConfig, m: usize, n: usize) -> Self {
        Adam {
            cfg,
            t: 0,
            mw: Array2::zeros((m, n)),
            vw: Array2::zeros((m, n)),
            mb: Array1::zeros(n),
            vb: Array1::zeros(n),
        }
    }

    fn step(&mut self, model: &mut WeightMatrix, g: &Gradient) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        Zip::from(&mut model.w)
            .and(&mut self.mw)
            .and(&mut self.vw)
            .and(&g.w)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut model.b)
            .and(&mut self.mb)
            .and(&mut self.vb)
            .and(&g.b)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
}

/// Initial weights: `W_ij ~ N(0, 1/m)` (standard deviation `1/√m`), `b = 0`.
pub fn initialize(cfg: &TmsConfig) -> WeightMatrix {
    let mut r = rng::stream(cfg.seed, rng::Stream::Init);
    let normal = Normal::new(0.0, 1.0 / (cfg.m as f64).sqrt()).expect("valid std");
    let w = Array2::from_shape_simple_fn((cfg.m, cfg.n), || normal.sample(&mut r));
    WeightMatrix {
        w,
        b: Array1::zeros(cfg.n),
    }
}

fn eval_loss(model: &WeightMatrix, x: &Array2<f64>, importance: &[f64]) -> f64 {
    let u = preactivations(model, x.view());
    let mut delta = vec![0.0; u.len()];
    let xs = x.as_slice().expect("standard layout");
    error_signal_into(xs, u.as_slice().expect("standard layout"), importance, &mut delta) / x.nrows() as f64
}

/// Run the fixed training budget. Snapshots are taken at step 0, every
/// `snapshot_every` steps and at the final step.
pub fn train(cfg: &TmsConfig) -> Result<TrainingTrajectory> {
    cfg.validate()?;
    let mut model = initialize(cfg);
    let mut data = rng::stream(cfg.seed, rng::Stream::Data);
    let mut eval_rng = rng::stream(cfg.seed, rng::Stream::Eval);
    let x_eval = sample_batch(&cfg.sparsity, cfg.eval_batch, &mut eval_rng);
    let mut adam = Adam::new(cfg.optimizer, cfg.m, cfg.n);

    let mut snapshots = vec![Snapshot {
        step: 0,
        weights: model.clone(),
        loss: eval_loss(&model, &x_eval, &cfg.importance),
    }];
    let mut x = Array2::zeros((cfg.batch, cfg.n));
    let mut nz = vec![0; x.len()];
    let mut ws = Workspace::new(cfg.batch, cfg.m, cfg.n);
    for step in 1..=cfg.steps {
        let nnz = sample_into(&cfg.sparsity, &mut x, &mut nz, &mut data);
        ws.grad(&model, x.as_slice().expect("standard layout"), &cfg.importance, &nz[..nnz]);
        let g = &ws.grad;
        if !g.loss.is_finite() || g.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step,
                reason: format!("non-finite loss or gradient (loss {})", g.loss),
            });
        }
        adam.step(&mut model, g);
        if step % cfg.snapshot_every == 0 || step == cfg.steps {
            let loss = eval_loss(&model, &x_eval, &cfg.importance);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    reason: "non-finite evaluation loss".into(),
                });
            }
            snapshots.push(Snapshot {
                step,
                weights: model.clone(),
                loss,
            });
        }
    }
    Ok(TrainingTrajectory {
        final_weights: model,
        snapshots,
    })
}
