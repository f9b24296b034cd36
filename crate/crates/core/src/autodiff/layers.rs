//! Layer building blocks expressed as graph compositions.

use rand::Rng;

use super::{AutodiffError, Graph, Tensor, Var};

/// `x · W + b` with `x: n×in`, `W: in×out`, `b: 1×out`.
pub fn dense(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Inverted dropout: at train time each unit survives with probability
/// `1 - p` and survivors are scaled by `1 / (1 - p)`. Identity when
/// `train` is false or `p == 0`.
pub fn dropout<R: Rng + ?Sized>(g: &mut Graph, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var, AutodiffError> {
    if !(0.0..1.0).contains(&p) {
        return Err(AutodiffError::BadProbability(p));
    }
    if !train || p == 0.0 {
        return Ok(x);
    }
    let v = g.value(x);
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..v.len())
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = Tensor::matrix(v.rows(), v.cols(), mask);
    g.mul_const(x, &mask)
}

/// Gated recurrent cell dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Graph handles for one GRU cell's parameters. Each weight acts on the
/// concatenation `[x, h]` and has shape `(input + hidden) × hidden`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_update: Var,
    pub b_update: Var,
    pub w_reset: Var,
    pub b_reset: Var,
    pub w_candidate: Var,
    pub b_candidate: Var,
}

impl GruCell {
    pub fn new(input_dim: usize, hidden_dim: usize) -> Self {
        Self { input_dim, hidden_dim }
    }

    pub fn param_count(&self) -> usize {
        3 * ((self.input_dim + self.hidden_dim) * self.hidden_dim + self.hidden_dim)
    }
}

/// One step of the cell:
///
/// ```text
/// z  = σ([x, h] W_z + b_z)
/// r  = σ([x, h] W_r + b_r)
/// h~ = tanh([x, r ⊙ h] W_h + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
pub fn gru_step(g: &mut Graph, cell: &GruCell, vars: &GruVars, x: Var, h_prev: Var) -> Result<Var, AutodiffError> {
    let (xv, hv) = (g.value(x), g.value(h_prev));
    if xv.cols() != cell.input_dim || hv.cols() != cell.hidden_dim || xv.rows() != hv.rows() {
        return Err(AutodiffError::ShapeMismatch {
            op: "gru_step",
            left: vec![xv.rows(), xv.cols()],
            right: vec![hv.rows(), hv.cols()],
        });
    }
    let xh = g.concat_cols(&[x, h_prev])?;
    let z_pre = dense(g, xh, vars.w_update, vars.b_update)?;
    let z = g.sigmoid(z_pre);
    let r_pre = dense(g, xh, vars.w_reset, vars.b_reset)?;
    let r = g.sigmoid(r_pre);
    let rh = g.mul(r, h_prev)?;
    let xrh = g.concat_cols(&[x, rh])?;
    let c_pre = dense(g, xrh, vars.w_candidate, vars.b_candidate)?;
    let candidate = g.tanh(c_pre);
    let keep = g.one_minus(z);
    let old = g.mul(keep, h_prev)?;
    let new = g.mul(z, candidate)?;
    g.add(old, new)
}
