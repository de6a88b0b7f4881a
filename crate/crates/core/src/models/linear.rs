use nalgebra::DMatrix;

use super::{ModelConfig, ModelError, ModelHandle, INPUT};
use crate::autodiff::{Graph, ParamStore, Tensor};

/// Least-squares coefficients `W` (`cols × outputs`) for `X W ≈ Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub coef: DMatrix<f64>,
    /// Whether the ridge fallback was used.
    pub ridge: bool,
}

const RANK_TOL: f64 = 1e-10;

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ModelError> {
    let ncols = rows.first().ok_or(ModelError::EmptyData)?.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(ModelError::Dimension { expected: ncols, got: bad.len() });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Solve `min ‖X W - Y‖²` by Householder QR. A rank-deficient or
/// underdetermined design falls back to ridge with `λ = 1e-8 · trace(XᵀX) / cols`.
pub fn lstsq(design: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<LstsqSolution, ModelError> {
    let x = to_matrix(design)?;
    let y = to_matrix(targets)?;
    lstsq_matrix(&x, &y)
}

pub(crate) fn lstsq_matrix(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LstsqSolution, ModelError> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(ModelError::EmptyData);
    }
    if x.nrows() != y.nrows() {
        return Err(ModelError::Dimension { expected: x.nrows(), got: y.nrows() });
    }
    if x.nrows() >= x.ncols() {
        let qr = x.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let full_rank = diag_max > 0.0 && r.diagonal().iter().all(|d| d.abs() > RANK_TOL * diag_max);
        if full_rank {
            let qty = qr.q().transpose() * y;
            if let Some(coef) = r.solve_upper_triangular(&qty) {
                if coef.iter().all(|v| v.is_finite()) {
                    return Ok(LstsqSolution { coef, ridge: false });
                }
            }
        }
    }
    ridge(x, y)
}

fn ridge(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LstsqSolution, ModelError> {
    let xt = x.transpose();
    let mut gram = &xt * x;
    let cols = gram.ncols();
    let mut lambda = 1e-8 * gram.trace() / cols as f64;
    if lambda <= 0.0 {
        lambda = 1e-8;
    }
    for i in 0..cols {
        gram[(i, i)] += lambda;
    }
    let rhs = &xt * y;
    let coef = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| ModelError::Config(format!("least-squares solve failed: {e}")))?,
    };
    Ok(LstsqSolution { coef, ridge: true })
}

/// Rows of `inputs` with a trailing 1 appended.
pub(crate) fn with_bias(inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    inputs
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.push(1.0);
            r
        })
        .collect()
}

/// Split a `(m+1) × n` coefficient matrix with bias last into `W: [m, n]`
/// and `b: [n]` tensors.
pub(crate) fn split_affine(coef: &DMatrix<f64>) -> (Tensor, Tensor) {
    let (rows, n) = coef.shape();
    let m = rows - 1;
    let w = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| coef[(i, j)]).collect();
    let b = (0..n).map(|j| coef[(m, j)]).collect();
    (Tensor::from_parts(vec![m, n], w), Tensor::from_parts(vec![n], b))
}

/// Linear model `y = x W + b` fitted in closed form.
pub fn fit_linear_closed_form(
    config: &ModelConfig,
    train_inputs: &[Vec<f64>],
    train_targets: &[Vec<f64>],
) -> Result<ModelHandle, ModelError> {
    config.check()?;
    if train_inputs.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if let Some(r) = train_inputs.iter().find(|r| r.len() != config.input_dim) {
        return Err(ModelError::Dimension { expected: config.input_dim, got: r.len() });
    }
    if let Some(r) = train_targets.iter().find(|r| r.len() != config.output_dim) {
        return Err(ModelError::Dimension { expected: config.output_dim, got: r.len() });
    }
    let sol = lstsq(&with_bias(train_inputs), train_targets)?;
    let (w, b) = split_affine(&sol.coef);
    let mut params = ParamStore::new();
    let w = params.add("linear.w", w);
    let b = params.add("linear.b", b);
    let mut graph = Graph::new();
    let x = graph.input(INPUT);
    let y = graph.affine(x, w, b);
    graph.set_output(y);
    Ok(ModelHandle::new(*config, graph, params, x, y))
}
