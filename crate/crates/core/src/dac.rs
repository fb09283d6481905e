//! Disturbance-action policies on top of a stabilizing gain.
//!
//! A policy with memory `H` plays `u_t = -K x_t + Σ_{i=1..H} M^[i] w_{t-i}`,
//! with the weight blocks constrained to the set `‖M^[i]‖_F ≤ a (1-ρ)^i`.
//! Truncated transfer matrices yield approximate states/actions that are
//! affine in the weights; the sensitivity map materializes that affine map so
//! gradients of any revealed function compose through a single `Jᵀ` product.

use crate::linsys::LinearSystem;
use crate::scalar::Real;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DacError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, DacError>;

/// Geometry of the weight set: `H` blocks of shape m x n with per-block
/// Frobenius bound `a (1-ρ)^i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSet<T: Real> {
    pub h: usize,
    pub m: usize,
    pub n: usize,
    pub a: T,
    pub rho: T,
}

impl<T: Real> WeightSet<T> {
    pub fn new(h: usize, m: usize, n: usize, a: T, rho: T) -> Result<Self> {
        if h == 0 || m == 0 || n == 0 {
            return Err(DacError::InvalidParameter("h, m, n must be positive".into()));
        }
        if !(a > T::zero()) {
            return Err(DacError::InvalidParameter("radius a must be > 0".into()));
        }
        if !(rho > T::zero() && rho <= T::one()) {
            return Err(DacError::InvalidParameter("rho must be in (0, 1]".into()));
        }
        Ok(Self { h, m, n, a, rho })
    }

    /// Length of the flattened weight vector.
    pub fn dim(&self) -> usize {
        self.h * self.m * self.n
    }

    /// Frobenius bound of block `i` (1-based).
    pub fn block_bound(&self, i: usize) -> T {
        debug_assert!(i >= 1 && i <= self.h);
        self.a * (T::one() - self.rho).powi(i as i32)
    }

    /// Projects a flat weight vector onto the set, block by block. Feasible
    /// inputs are returned bit-identically, which makes the projection
    /// idempotent.
    pub fn project_flat(&self, v: &Array1<T>) -> Array1<T> {
        let bs = self.m * self.n;
        let slack = T::one() + T::epsilon() * T::from_f64_lossy(16.0);
        let mut out = v.clone();
        for i in 1..=self.h {
            let lo = (i - 1) * bs;
            let norm = (lo..lo + bs)
                .map(|k| v[k] * v[k])
                .sum::<T>()
                .sqrt();
            let bound = self.block_bound(i);
            if norm > bound * slack {
                let scale = bound / norm;
                for k in lo..lo + bs {
                    out[k] = out[k] * scale;
                }
            }
        }
        out
    }

    /// Membership check with the same tolerance as [`WeightSet::project_flat`].
    pub fn contains(&self, v: &Array1<T>) -> bool {
        let bs = self.m * self.n;
        let slack = T::one() + T::epsilon() * T::from_f64_lossy(16.0);
        (1..=self.h).all(|i| {
            let lo = (i - 1) * bs;
            let norm = (lo..lo + bs).map(|k| v[k] * v[k]).sum::<T>().sqrt();
            norm <= self.block_bound(i) * slack
        })
    }

    /// Diameter bound `2a/ρ` of the set (sum of twice the block bounds).
    pub fn diameter_bound(&self) -> T {
        T::from_f64_lossy(2.0) * self.a / self.rho
    }
}

/// Weights of a disturbance-action policy, always inside their set.
#[derive(Debug, Clone, PartialEq)]
pub struct DacWeights<T: Real> {
    set: WeightSet<T>,
    blocks: Vec<Array2<T>>,
}

impl<T: Real> DacWeights<T> {
    /// All-zero weights (the pure linear policy).
    pub fn zeros(set: WeightSet<T>) -> Self {
        let blocks = (0..set.h).map(|_| Array2::zeros((set.m, set.n))).collect();
        Self { set, blocks }
    }

    pub fn set(&self) -> &WeightSet<T> {
        &self.set
    }

    pub fn blocks(&self) -> &[Array2<T>] {
        &self.blocks
    }

    /// Block `M^[i]`, 1-based.
    pub fn block(&self, i: usize) -> &Array2<T> {
        &self.blocks[i - 1]
    }

    pub fn flatten(&self) -> Array1<T> {
        let mut v = Array1::zeros(self.set.dim());
        let bs = self.set.m * self.set.n;
        for (bi, b) in self.blocks.iter().enumerate() {
            for p in 0..self.set.m {
                for q in 0..self.set.n {
                    v[bi * bs + p * self.set.n + q] = b[[p, q]];
                }
            }
        }
        v
    }

    /// Rebuilds weights from a flat vector, projecting onto the set.
    pub fn from_flat(set: WeightSet<T>, v: &Array1<T>) -> Result<Self> {
        if v.len() != set.dim() {
            return Err(DacError::Dimension(format!(
                "flat weights: expected {}, got {}",
                set.dim(),
                v.len()
            )));
        }
        let proj = set.project_flat(v);
        Ok(Self {
            blocks: unflatten(&set, &proj),
            set,
        })
    }

    /// JSON form `{"H":…, "a":…, "rho":…, "blocks":[[…]]}`.
    pub fn to_json(&self) -> String
    where
        T: Serialize,
    {
        let shadow = DacWeightsJson {
            h: self.set.h,
            a: self.set.a,
            rho: self.set.rho,
            blocks: self
                .blocks
                .iter()
                .map(|b| b.outer_iter().map(|row| row.to_vec()).collect())
                .collect(),
        };
        serde_json::to_string(&shadow).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        let shadow: DacWeightsJson<T> = serde_json::from_str(text)
            .map_err(|e| DacError::InvalidParameter(format!("weights json: {e}")))?;
        let m = shadow.blocks.first().map(|b| b.len()).unwrap_or(0);
        let n = shadow
            .blocks
            .first()
            .and_then(|b| b.first())
            .map(|r| r.len())
            .unwrap_or(0);
        let set = WeightSet::new(shadow.h, m, n, shadow.a, shadow.rho)?;
        if shadow.blocks.len() != shadow.h {
            return Err(DacError::Dimension("block count != H".into()));
        }
        let mut blocks = Vec::with_capacity(shadow.h);
        for b in &shadow.blocks {
            if b.len() != m || b.iter().any(|r| r.len() != n) {
                return Err(DacError::Dimension("ragged block".into()));
            }
            blocks.push(Array2::from_shape_fn((m, n), |(p, q)| b[p][q]));
        }
        Ok(Self { set, blocks })
    }
}

#[derive(Serialize, Deserialize)]
struct DacWeightsJson<T> {
    #[serde(rename = "H")]
    h: usize,
    a: T,
    rho: T,
    blocks: Vec<Vec<Vec<T>>>,
}

fn unflatten<T: Real>(set: &WeightSet<T>, v: &Array1<T>) -> Vec<Array2<T>> {
    let bs = set.m * set.n;
    (0..set.h)
        .map(|bi| Array2::from_shape_fn((set.m, set.n), |(p, q)| v[bi * bs + p * set.n + q]))
        .collect()
}

/// Scales each raw block by `min(1, a(1-ρ)^i / ‖M^[i]‖_F)`; identity on
/// members, idempotent.
pub fn project_weights<T: Real>(blocks: &[Array2<T>], a: T, rho: T) -> Result<DacWeights<T>> {
    if blocks.is_empty() {
        return Err(DacError::InvalidParameter("no blocks".into()));
    }
    let (m, n) = (blocks[0].nrows(), blocks[0].ncols());
    if blocks.iter().any(|b| b.nrows() != m || b.ncols() != n) {
        return Err(DacError::Dimension("ragged blocks".into()));
    }
    let set = WeightSet::new(blocks.len(), m, n, a, rho)?;
    let mut flat = Array1::zeros(set.dim());
    let bs = m * n;
    for (bi, b) in blocks.iter().enumerate() {
        for p in 0..m {
            for q in 0..n {
                flat[bi * bs + p * n + q] = b[[p, q]];
            }
        }
    }
    DacWeights::from_flat(set, &flat)
}

/// Ring buffer of the most recent `2H` disturbances, oldest first; starts
/// zero-filled so early steps see a zero-padded history.
#[derive(Debug, Clone)]
pub struct DisturbanceHistory<T: Real> {
    h: usize,
    dim: usize,
    buf: VecDeque<Array1<T>>,
}

impl<T: Real> DisturbanceHistory<T> {
    pub fn new(h: usize, dim: usize) -> Self {
        let buf = (0..2 * h).map(|_| Array1::zeros(dim)).collect();
        Self { h, dim, buf }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Appends the newest disturbance, dropping the oldest.
    pub fn push(&mut self, w: Array1<T>) -> Result<()> {
        if w.len() != self.dim {
            return Err(DacError::Dimension("history push".into()));
        }
        self.buf.pop_front();
        self.buf.push_back(w);
        Ok(())
    }

    /// `w_{t-i}` for `i = 1..=2H` (1 is the most recent).
    pub fn past(&self, i: usize) -> &Array1<T> {
        debug_assert!(i >= 1 && i <= 2 * self.h);
        &self.buf[2 * self.h - i]
    }

    pub fn is_all_zero(&self) -> bool {
        self.buf.iter().all(|w| w.iter().all(|&x| x == T::zero()))
    }
}

/// Policy action `u = -K x + Σ_{i=1..H} M^[i] w_{t-i}`.
pub fn act<T: Real>(
    k: &Array2<T>,
    weights: &DacWeights<T>,
    x: &Array1<T>,
    hist: &DisturbanceHistory<T>,
) -> Result<Array1<T>> {
    let set = weights.set();
    if k.nrows() != set.m || k.ncols() != set.n || x.len() != set.n || hist.dim() != set.n {
        return Err(DacError::Dimension("act".into()));
    }
    if hist.h() != set.h {
        return Err(DacError::Dimension("act: history memory != weight memory".into()));
    }
    let mut u = -k.dot(x);
    for i in 1..=set.h {
        u = u + weights.block(i).dot(hist.past(i));
    }
    Ok(u)
}

/// Disturbance-state transfer matrices `Ψ_{t,i}` for `i = 1..2H` at a fixed
/// repeated weight.
#[derive(Debug, Clone)]
pub struct TransferStack<T: Real> {
    pub h: usize,
    /// `psis[i-1]` is `Ψ_{t,i}`, each n x n.
    pub psis: Vec<Array2<T>>,
}

/// Powers `Ã^0 .. Ã^{2H-1}` of the closed loop.
fn closed_loop_powers<T: Real>(sys: &LinearSystem<T>, k: &Array2<T>, h: usize) -> Result<Vec<Array2<T>>> {
    let at = sys
        .closed_loop(k)
        .map_err(|e| DacError::Dimension(e.to_string()))?;
    let mut pows = Vec::with_capacity(2 * h);
    pows.push(Array2::eye(sys.n()));
    for i in 1..2 * h {
        let next = pows[i - 1].dot(&at);
        pows.push(next);
    }
    Ok(pows)
}

fn transfer_stack_raw<T: Real>(
    sys: &LinearSystem<T>,
    apows: &[Array2<T>],
    blocks: &[Array2<T>],
    h: usize,
) -> Vec<Array2<T>> {
    let n = sys.n();
    let mut psis = Vec::with_capacity(2 * h);
    for i in 1..=2 * h {
        let mut psi = if i <= h {
            apows[i - 1].clone()
        } else {
            Array2::zeros((n, n))
        };
        for j in 1..=h {
            if i > j && i - j <= h {
                psi = psi + apows[j - 1].dot(&sys.b().dot(&blocks[i - j - 1]));
            }
        }
        psis.push(psi);
    }
    psis
}

/// `Ψ_{t,i} = Ã^{i-1}·1[i≤H] + Σ_{j=1..H} Ã^{j-1} B M^[i-j]·1[1≤i-j≤H]`.
pub fn transfer_stack<T: Real>(
    sys: &LinearSystem<T>,
    k: &Array2<T>,
    weights: &DacWeights<T>,
) -> Result<TransferStack<T>> {
    let h = weights.set().h;
    if sys.m() != weights.set().m || sys.n() != weights.set().n {
        return Err(DacError::Dimension("transfer_stack".into()));
    }
    let apows = closed_loop_powers(sys, k, h)?;
    Ok(TransferStack {
        h,
        psis: transfer_stack_raw(sys, &apows, weights.blocks(), h),
    })
}

/// Truncated state `x̃ = Σ_{i=1..2H} Ψ_{t,i} w_{t-i}`.
pub fn approx_state<T: Real>(
    stack: &TransferStack<T>,
    hist: &DisturbanceHistory<T>,
) -> Result<Array1<T>> {
    if hist.h() != stack.h {
        return Err(DacError::Dimension("approx_state".into()));
    }
    let n = stack.psis[0].nrows();
    let mut x = Array1::zeros(n);
    for i in 1..=2 * stack.h {
        x = x + stack.psis[i - 1].dot(hist.past(i));
    }
    Ok(x)
}

/// Truncated action `ũ = -K x̃ + Σ_{i=1..H} M^[i] w_{t-i}`; identical in form
/// to [`act`] evaluated at the truncated state.
pub fn approx_action<T: Real>(
    k: &Array2<T>,
    weights: &DacWeights<T>,
    x_tilde: &Array1<T>,
    hist: &DisturbanceHistory<T>,
) -> Result<Array1<T>> {
    act(k, weights, x_tilde, hist)
}

/// Affine map from flattened weights to the stacked `(x̃, ũ)`:
/// `stack = J · vec(M) + offset`.
#[derive(Debug, Clone)]
pub struct SensitivityMap<T: Real> {
    pub set: WeightSet<T>,
    /// `(n + m) x (H·m·n)`.
    pub j: Array2<T>,
    /// `(n + m)`, the value at `M = 0`.
    pub offset: Array1<T>,
}

impl<T: Real> SensitivityMap<T> {
    pub fn n(&self) -> usize {
        self.set.n
    }

    pub fn m(&self) -> usize {
        self.set.m
    }

    /// Evaluates `(x̃, ũ)` at a flat weight vector.
    pub fn apply(&self, flat: &Array1<T>) -> (Array1<T>, Array1<T>) {
        let stacked = self.j.dot(flat) + &self.offset;
        let x = stacked.slice(ndarray::s![..self.n()]).to_owned();
        let u = stacked.slice(ndarray::s![self.n()..]).to_owned();
        (x, u)
    }

    /// Pulls a `(∇x, ∇u)` pair back to weight space: `Jᵀ · stack(gx, gu)`.
    pub fn pullback(&self, grad_x: &Array1<T>, grad_u: &Array1<T>) -> Array1<T> {
        let mut stacked = Array1::zeros(self.n() + self.m());
        for i in 0..self.n() {
            stacked[i] = grad_x[i];
        }
        for i in 0..self.m() {
            stacked[self.n() + i] = grad_u[i];
        }
        self.j.t().dot(&stacked)
    }
}

/// Builds the sensitivity map column by column from unit weight
/// perturbations pushed through the transfer-stack evaluation.
pub fn sensitivity<T: Real>(
    sys: &LinearSystem<T>,
    k: &Array2<T>,
    hist: &DisturbanceHistory<T>,
    set: WeightSet<T>,
) -> Result<SensitivityMap<T>> {
    if sys.n() != set.n || sys.m() != set.m || hist.h() != set.h || hist.dim() != set.n {
        return Err(DacError::Dimension("sensitivity".into()));
    }
    let h = set.h;
    let apows = closed_loop_powers(sys, k, h)?;
    let eval = |blocks: &[Array2<T>]| -> (Array1<T>, Array1<T>) {
        let psis = transfer_stack_raw(sys, &apows, blocks, h);
        let mut x = Array1::zeros(set.n);
        for i in 1..=2 * h {
            x = x + psis[i - 1].dot(hist.past(i));
        }
        let mut u = -k.dot(&x);
        for i in 1..=h {
            u = u + blocks[i - 1].dot(hist.past(i));
        }
        (x, u)
    };

    let zero_blocks: Vec<Array2<T>> = (0..h).map(|_| Array2::zeros((set.m, set.n))).collect();
    let (x0, u0) = eval(&zero_blocks);
    let mut offset = Array1::zeros(set.n + set.m);
    for i in 0..set.n {
        offset[i] = x0[i];
    }
    for i in 0..set.m {
        offset[set.n + i] = u0[i];
    }

    let dim = set.dim();
    let mut j = Array2::zeros((set.n + set.m, dim));
    let bs = set.m * set.n;
    let mut blocks = zero_blocks;
    for bi in 0..h {
        for p in 0..set.m {
            for q in 0..set.n {
                blocks[bi][[p, q]] = T::one();
                let (x, u) = eval(&blocks);
                let col = bi * bs + p * set.n + q;
                for i in 0..set.n {
                    j[[i, col]] = x[i] - offset[i];
                }
                for i in 0..set.m {
                    j[[set.n + i, col]] = u[i] - offset[set.n + i];
                }
                blocks[bi][[p, q]] = T::zero();
            }
        }
    }
    Ok(SensitivityMap { set, j, offset })
}

/// Exact gradient of `M ↦ fn(x̃(M), ũ(M))` given the function's gradients at
/// the evaluation point: `Jᵀ · stack(∇x, ∇u)`.
pub fn grad_tilde<T: Real>(
    map: &SensitivityMap<T>,
    grad_x: &Array1<T>,
    grad_u: &Array1<T>,
) -> Result<Array1<T>> {
    if grad_x.len() != map.n() || grad_u.len() != map.m() {
        return Err(DacError::Dimension("grad_tilde".into()));
    }
    if grad_x.iter().chain(grad_u.iter()).any(|v| !v.is_finite()) {
        return Err(DacError::NonFinite("function gradient"));
    }
    let g = map.pullback(grad_x, grad_u);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(DacError::NonFinite("weight gradient"));
    }
    Ok(g)
}

/// Appendix-style bound on `‖Ψ_{t,i}‖`:
/// `κ²(1-ρ)^{i-1}·1[i≤H] + H a κ² κ_B (1-ρ)^{i-1}`.
pub fn transfer_bound<T: Real>(kappa: T, rho: T, h: usize, a: T, kappa_b: T, i: usize) -> T {
    let decay = (T::one() - rho).powi(i as i32 - 1);
    let head = if i <= h { kappa * kappa * decay } else { T::zero() };
    head + T::from_f64_lossy(h as f64) * a * kappa * kappa * kappa_b * decay
}
