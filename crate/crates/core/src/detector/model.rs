use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::params::{FusionParams, TENSOR_NAMES};
use super::{FusionMode, Real};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const LN_EPS: f64 = 1e-5;
const CLAMP: f64 = 1e-7;

/// Graph-level inputs shared by every forward pass.
#[derive(Clone, Copy)]
pub struct Inputs<'a, F> {
    pub adj: &'a CsrMatrix,
    pub x_orig: &'a Array2<F>,
    pub x_verd: &'a Array2<F>,
    pub mode: FusionMode,
}

impl<F: Real> Inputs<'_, F> {
    fn check(&self, params: &FusionParams<F>) -> Result<()> {
        let dim = params.input_dim();
        if self.x_orig.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.x_orig.ncols(),
            });
        }
        if self.x_verd.dim() != self.x_orig.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.x_orig.len(),
                got: self.x_verd.len(),
            });
        }
        if self.adj.n() != self.x_orig.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.adj.n(),
                got: self.x_orig.nrows(),
            });
        }
        Ok(())
    }
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `(x − mean)/√(var + ε)` with population variance and no affine terms.
pub fn layer_norm<F: Real>(x: &[F]) -> Vec<F> {
    let n = F::c(x.len() as f64);
    let mean = x.iter().copied().sum::<F>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let inv = F::one() / (var + F::c(LN_EPS)).sqrt();
    x.iter().map(|&v| (v - mean) * inv).collect()
}

pub fn layer_norm_rows<F: Real>(x: &Array2<F>) -> Array2<F> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let y = layer_norm(row.as_slice().expect("standard layout"));
        row.assign(&Array1::from(y));
    }
    out
}

/// Row-wise backward of [`layer_norm`] given its input `x` and the upstream
/// gradient: `(dy − mean(dy) − y·mean(dy⊙y))/√(var + ε)`.
fn layer_norm_rows_backward<F: Real>(x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let mut out = Array2::zeros(x.dim());
    let n = F::c(x.ncols() as f64);
    for ((xr, dyr), mut o) in x.rows().into_iter().zip(dy.rows()).zip(out.rows_mut()) {
        let mean = xr.sum() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let inv = F::one() / (var + F::c(LN_EPS)).sqrt();
        let y = xr.mapv(|v| (v - mean) * inv);
        let mean_dy = dyr.sum() / n;
        let mean_dyy = dyr.dot(&y) / n;
        for k in 0..xr.len() {
            o[k] = inv * (dyr[k] - mean_dy - y[k] * mean_dyy);
        }
    }
    out
}

struct GateCache<F> {
    pre: [Array2<F>; 3],
    gates: [Array2<F>; 3],
    x_hat: Array2<F>,
    p: Array2<F>,
}

fn gate_pre<F: Real>(w: &Array2<F>, u: &Array2<F>, b: &Array2<F>, xo: &Array2<F>, xv: &Array2<F>) -> Array2<F> {
    xo.dot(w) + xv.dot(u) + b
}

fn gates_with_pre<F: Real>(params: &FusionParams<F>, xo: &Array2<F>, xv: &Array2<F>) -> ([Array2<F>; 3], [Array2<F>; 3]) {
    let pre = [
        gate_pre(&params.w_f, &params.u_f, &params.b_f, xo, xv),
        gate_pre(&params.w_i, &params.u_i, &params.b_i, xo, xv),
        gate_pre(&params.w_o, &params.u_o, &params.b_o, xo, xv),
    ];
    let gates = pre.clone().map(|a| layer_norm_rows(&a).mapv(sigmoid));
    (pre, gates)
}

/// Forget, input and output gate activations `σ(LN(X_o W + X_v U + b))`.
pub fn gate_activations<F: Real>(params: &FusionParams<F>, x_orig: &Array2<F>, x_verd: &Array2<F>) -> [Array2<F>; 3] {
    gates_with_pre(params, x_orig, x_verd).1
}

fn fuse<F: Real>(params: &FusionParams<F>, xo: &Array2<F>, xv: &Array2<F>, mode: FusionMode) -> (Array2<F>, Option<GateCache<F>>) {
    match mode {
        FusionMode::Gate => {
            let (pre, gates) = gates_with_pre(params, xo, xv);
            let x_hat = &gates[0] * xo + &gates[1] * xv;
            let p = &gates[2] * &x_hat;
            let h = layer_norm_rows(&p);
            (h, Some(GateCache { pre, gates, x_hat, p }))
        }
        FusionMode::Mean => (layer_norm_rows(&((xo + xv) * F::c(0.5))), None),
        FusionMode::VerdictOnly => (layer_norm_rows(xv), None),
        FusionMode::OrigOnly => (layer_norm_rows(xo), None),
    }
}

/// Fused node features `H` (`n × D`).
pub fn gate_fuse<F: Real>(params: &FusionParams<F>, x_orig: &Array2<F>, x_verd: &Array2<F>, mode: FusionMode) -> Result<Array2<F>> {
    if x_orig.ncols() != params.input_dim() || x_verd.dim() != x_orig.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: if x_orig.ncols() != params.input_dim() { x_orig.ncols() } else { x_verd.ncols() },
        });
    }
    Ok(fuse(params, x_orig, x_verd, mode).0)
}

/// `Z = Â·relu(Â·H·W1)·W2`.
pub fn gcn_forward<F: Real>(params: &FusionParams<F>, adj: &CsrMatrix, h: &Array2<F>) -> Result<Array2<F>> {
    if h.ncols() != params.input_dim() || h.nrows() != adj.n() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: h.ncols(),
        });
    }
    let ah = adj.matmul(h);
    let r = ah.dot(&params.w1).mapv(|x| x.max(F::zero()));
    Ok(adj.matmul(&r).dot(&params.w2))
}

/// Every intermediate of a full-graph forward pass.
pub struct Forward<F> {
    pub h: Array2<F>,
    gates: Option<GateCache<F>>,
    ah: Array2<F>,
    z1: Array2<F>,
    ar: Array2<F>,
    pub z: Array2<F>,
}

pub fn forward<F: Real>(params: &FusionParams<F>, inputs: &Inputs<'_, F>) -> Result<Forward<F>> {
    inputs.check(params)?;
    let (h, gates) = fuse(params, inputs.x_orig, inputs.x_verd, inputs.mode);
    let ah = inputs.adj.matmul(&h);
    let z1 = ah.dot(&params.w1);
    let ar = inputs.adj.matmul(&z1.mapv(|x| x.max(F::zero())));
    let z = ar.dot(&params.w2);
    Ok(Forward { h, gates, ah, z1, ar, z })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Readout<F> {
    pub e: Array1<F>,
    /// Set when `v` had no listed neighbors and its own row was used.
    pub fallback: bool,
}

/// Mean of the listed rows of `Z`, or `Z_v` when the list is empty.
pub fn readout<F: Real>(z: &Array2<F>, v: usize, neighbors: &[usize]) -> Readout<F> {
    if neighbors.is_empty() {
        return Readout {
            e: z.row(v).to_owned(),
            fallback: true,
        };
    }
    let mut e = Array1::zeros(z.ncols());
    for &k in neighbors {
        e.scaled_add(F::one(), &z.row(k));
    }
    Readout {
        e: e / F::c(neighbors.len() as f64),
        fallback: false,
    }
}

/// `σ(e W hᵀ)`.
pub fn discriminate<F: Real>(params: &FusionParams<F>, e: ArrayView1<'_, F>, h: ArrayView1<'_, F>) -> Result<F> {
    if e.len() != params.hidden_dim() || h.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.hidden_dim(),
            got: e.len(),
        });
    }
    Ok(sigmoid(e.dot(&params.w.dot(&h))))
}

/// Training batch: each node is paired with its own sampled subgraph and
/// with a partner node's subgraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub nodes: Vec<usize>,
    pub pos_neighbors: Vec<Vec<usize>>,
    pub neg_nodes: Vec<usize>,
    pub neg_neighbors: Vec<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let b = self.nodes.len();
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        if self.pos_neighbors.len() != b || self.neg_nodes.len() != b || self.neg_neighbors.len() != b {
            return Err(Error::InvalidConfig("batch fields have different lengths".into()));
        }
        let all = self
            .nodes
            .iter()
            .chain(&self.neg_nodes)
            .chain(self.pos_neighbors.iter().flatten())
            .chain(self.neg_neighbors.iter().flatten());
        if let Some(&v) = all.into_iter().find(|&&v| v >= n) {
            return Err(Error::NodeOutOfRange { node: v, n });
        }
        if self.nodes.iter().zip(&self.neg_nodes).any(|(a, b)| a == b) {
            return Err(Error::InvalidConfig("negative partner equals its node".into()));
        }
        Ok(())
    }
}

fn clamp<F: Real>(s: F) -> F {
    s.max(F::c(CLAMP)).min(F::c(1.0 - CLAMP))
}

fn clamped<F: Real>(s: F) -> bool {
    s <= F::c(CLAMP) || s >= F::c(1.0 - CLAMP)
}

/// Data term of the contrastive loss plus optional gradient accumulation
/// into `dz`, `dh` and `dw`.
struct Grads<F> {
    dz: Array2<F>,
    dh: Array2<F>,
    dw: Array2<F>,
}

fn data_loss<F: Real>(params: &FusionParams<F>, fwd: &Forward<F>, batch: &Batch, mut grads: Option<&mut Grads<F>>) -> F {
    let two_b = F::c(2.0 * batch.len() as f64);
    let mut loss = F::zero();
    for j in 0..batch.len() {
        let v = batch.nodes[j];
        let h = fwd.h.row(v);
        let wh = params.w.dot(&h);
        let sides = [
            (v, batch.pos_neighbors[j].as_slice(), true),
            (batch.neg_nodes[j], batch.neg_neighbors[j].as_slice(), false),
        ];
        for (u, nbrs, positive) in sides {
            let e = readout(&fwd.z, u, nbrs).e;
            let s = sigmoid(e.dot(&wh));
            let sc = clamp(s);
            loss = loss - if positive { sc.ln() } else { (F::one() - sc).ln() } / two_b;
            let Some(g) = grads.as_deref_mut() else { continue };
            if clamped(s) {
                continue;
            }
            let dl = if positive { -(F::one() - s) / two_b } else { s / two_b };
            for (a, row) in g.dw.rows_mut().into_iter().zip(e.iter()) {
                let mut a = a;
                a.scaled_add(dl * *row, &h);
            }
            g.dh.row_mut(v).scaled_add(dl, &params.w.t().dot(&e));
            let de = &wh * dl;
            if nbrs.is_empty() {
                g.dz.row_mut(u).scaled_add(F::one(), &de);
            } else {
                let share = F::one() / F::c(nbrs.len() as f64);
                for &k in nbrs {
                    g.dz.row_mut(k).scaled_add(share, &de);
                }
            }
        }
    }
    loss
}

/// `−1/(2B) Σ (log s⁺ + log(1 − s⁻)) + wd·‖θ‖²/2`.
pub fn batch_loss<F: Real>(params: &FusionParams<F>, batch: &Batch, inputs: &Inputs<'_, F>, weight_decay: F) -> Result<F> {
    batch.validate(inputs.x_orig.nrows())?;
    let fwd = forward(params, inputs)?;
    Ok(data_loss(params, &fwd, batch, None) + weight_decay * params.sq_norm() * F::c(0.5))
}

/// Loss and exact gradients for every tensor.
pub fn backward<F: Real>(
    params: &FusionParams<F>,
    batch: &Batch,
    inputs: &Inputs<'_, F>,
    weight_decay: F,
) -> Result<(F, FusionParams<F>)> {
    batch.validate(inputs.x_orig.nrows())?;
    let fwd = forward(params, inputs)?;
    let (n, big_d, d) = (fwd.h.nrows(), params.input_dim(), params.hidden_dim());
    let mut g = Grads {
        dz: Array2::zeros((n, d)),
        dh: Array2::zeros((n, big_d)),
        dw: Array2::zeros((d, big_d)),
    };
    let loss = data_loss(params, &fwd, batch, Some(&mut g))
        + weight_decay * params.sq_norm() * F::c(0.5);

    let mut grad = FusionParams::zeros(big_d, d);
    grad.w = g.dw;
    grad.w2 = fwd.ar.t().dot(&g.dz);
    let d_ar = g.dz.dot(&params.w2.t());
    let d_r = inputs.adj.matmul(&d_ar);
    let d_z1 = ndarray::Zip::from(&d_r)
        .and(&fwd.z1)
        .map_collect(|&dr, &z| if z > F::zero() { dr } else { F::zero() });
    grad.w1 = fwd.ah.t().dot(&d_z1);
    let d_ah = d_z1.dot(&params.w1.t());
    let dh = g.dh + inputs.adj.matmul(&d_ah);

    if let Some(c) = &fwd.gates {
        let (xo, xv) = (inputs.x_orig, inputs.x_verd);
        let dp = layer_norm_rows_backward(&c.p, &dh);
        let d_o = &dp * &c.x_hat;
        let d_xhat = &dp * &c.gates[2];
        let d_f = &d_xhat * xo;
        let d_i = &d_xhat * xv;
        let upstream = [d_f, d_i, d_o];
        let mut targets = [
            (&mut grad.w_f, &mut grad.u_f, &mut grad.b_f),
            (&mut grad.w_i, &mut grad.u_i, &mut grad.b_i),
            (&mut grad.w_o, &mut grad.u_o, &mut grad.b_o),
        ];
        for k in 0..3 {
            let gk = &c.gates[k];
            let dn = &upstream[k] * &gk.mapv(|s| s * (F::one() - s));
            let da = layer_norm_rows_backward(&c.pre[k], &dn);
            let (w, u, b) = &mut targets[k];
            **w = xo.t().dot(&da);
            **u = xv.t().dot(&da);
            **b = da.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
    }

    if weight_decay != F::zero() {
        for (gt, pt) in grad.tensors_mut().into_iter().zip(params.tensors()) {
            gt.scaled_add(weight_decay, pt);
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: &'static str,
    pub per_tensor: Vec<(&'static str, f64)>,
}

/// Floor on the denominator so gradients that are zero up to rounding do
/// not produce spurious relative errors.
const REL_FLOOR: f64 = 1e-6;

/// Central differences against analytic gradients computed by [`backward`].
pub fn grad_check(params: &FusionParams<f64>, batch: &Batch, inputs: &Inputs<'_, f64>, weight_decay: f64, eps: f64) -> Result<GradCheckReport> {
    let (_, analytic) = backward(params, batch, inputs, weight_decay)?;
    grad_check_against(params, &analytic, batch, inputs, weight_decay, eps)
}

/// Central differences against caller-supplied gradients.
pub fn grad_check_against(
    params: &FusionParams<f64>,
    analytic: &FusionParams<f64>,
    batch: &Batch,
    inputs: &Inputs<'_, f64>,
    weight_decay: f64,
    eps: f64,
) -> Result<GradCheckReport> {
    let mut per_tensor = Vec::with_capacity(12);
    for (k, name) in TENSOR_NAMES.iter().enumerate() {
        let shape = params.tensors()[k].dim();
        let mut worst: f64 = 0.0;
        for idx in ndarray::indices(shape) {
            let mut p = params.clone();
            p.tensors_mut()[k][idx] += eps;
            let up = batch_loss(&p, batch, inputs, weight_decay)?;
            p.tensors_mut()[k][idx] -= 2.0 * eps;
            let down = batch_loss(&p, batch, inputs, weight_decay)?;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.tensors()[k][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
        per_tensor.push((*name, worst));
    }
    let (worst_tensor, max_rel_error) = per_tensor
        .iter()
        .copied()
        .fold(("", 0.0), |acc, t| if t.1 > acc.1 { t } else { acc });
    Ok(GradCheckReport {
        max_rel_error,
        worst_tensor,
        per_tensor,
    })
}
