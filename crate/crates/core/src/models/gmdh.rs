//! Self-organizing polynomial network grown layer by layer.
//!
//! Layer 0 is a least-squares linear readout of the inputs. Each further
//! layer generates quadratic neurons `(w_a f_i + w_b f_j + w_0)²` over pairs of
//! the previous layer's features, fits every candidate's three weights by
//! adam to the current residual, keeps the candidates whose single-neuron
//! readout scores best on the validation split, and adds a least-squares
//! readout of the kept neurons to the running prediction.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::{lstsq_matrix, split_affine};
use super::{ModelConfig, ModelError, ModelHandle, INPUT};
use crate::autodiff::{inputs, AdamConfig, Graph, ParamStore, Tensor};

/// Pair indices into the previous layer's features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GmdhLayer {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmdhReport {
    /// Validation MSE after layer 0 (linear readout) and each grown layer,
    /// including a final rejected layer if growth stopped on no improvement.
    pub validation_mse: Vec<f64>,
    pub candidates: Vec<usize>,
    /// Number of grown layers in the returned model.
    pub kept_layers: usize,
}

impl GmdhReport {
    pub fn returned_validation_mse(&self) -> f64 {
        self.validation_mse[self.kept_layers]
    }
}

/// Column-major feature block: `cols[f][sample]`.
type Columns = Vec<Vec<f64>>;

fn columns(rows: &[Vec<f64>]) -> Columns {
    let width = rows[0].len();
    (0..width).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

fn design(cols: &Columns) -> DMatrix<f64> {
    let n = cols[0].len();
    DMatrix::from_fn(n, cols.len() + 1, |i, j| if j < cols.len() { cols[j][i] } else { 1.0 })
}

fn matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn mse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().map(|d| d * d).sum::<f64>() / a.len() as f64
}

struct Readout {
    coef: DMatrix<f64>,
}

impl Readout {
    fn fit(cols: &Columns, target: &DMatrix<f64>) -> Result<Self, ModelError> {
        Ok(Self { coef: lstsq_matrix(&design(cols), target)?.coef })
    }

    fn apply(&self, cols: &Columns) -> DMatrix<f64> {
        design(cols) * &self.coef
    }
}

fn candidate_pairs(rng: &mut ChaCha8Rng, k: usize, cap: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    if all.len() <= cap {
        return all;
    }
    let mut picked: Vec<usize> = sample(rng, all.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|p| all[p]).collect()
}

fn gather(cols: &Columns, idx: &[usize]) -> Tensor {
    let n = cols[0].len();
    let c = idx.len();
    let mut data = vec![0.0; n * c];
    for (k, &f) in idx.iter().enumerate() {
        for i in 0..n {
            data[i * c + k] = cols[f][i];
        }
    }
    Tensor::new(vec![n, c], data).expect("non-empty block")
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

struct Neurons {
    wa: Vec<f64>,
    wb: Vec<f64>,
    w0: Vec<f64>,
}

impl Neurons {
    fn eval(&self, cols: &Columns, pairs: &[(usize, usize)], c: usize) -> Vec<f64> {
        let (i, j) = pairs[c];
        cols[i]
            .iter()
            .zip(&cols[j])
            .map(|(a, b)| {
                let u = self.wa[c] * a + self.wb[c] * b + self.w0[c];
                u * u
            })
            .collect()
    }
}

/// Fit all candidates jointly. Each candidate's readout is profiled out: for
/// centered neuron output `z` and centered residual `R`, the best
/// single-neuron readout removes `Σ_o (zᵀR_o)² / zᵀz` of squared error, which
/// is maximized.
fn fit_candidates(
    config: &ModelConfig,
    rng: &mut ChaCha8Rng,
    cols: &Columns,
    pairs: &[(usize, usize)],
    residual: &DMatrix<f64>,
) -> Result<Neurons, ModelError> {
    let c = pairs.len();
    let n = residual.nrows();
    let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let rc = centered(residual);
    let scale = rc.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    let r_data: Vec<f64> = (0..n).flat_map(|i| rc.row(i).iter().copied().collect::<Vec<_>>()).collect();
    let feed = inputs([
        ("a", gather(cols, &left)),
        ("b", gather(cols, &right)),
        ("r", Tensor::new(vec![n, residual.ncols()], r_data)?),
    ]);

    let mut params = ParamStore::new();
    let wa = params.add_uniform("wa", &[c], 1, rng);
    let wb = params.add_uniform("wb", &[c], 1, rng);
    let w0 = params.add_uniform("w0", &[c], 1, rng);
    let mut g = Graph::new();
    let a = g.input("a");
    let b = g.input("b");
    let r = g.input("r");
    let (wa_n, wb_n, w0_n) = (g.param(wa), g.param(wb), g.param(w0));
    let aw = g.mul(a, wa_n);
    let bw = g.mul(b, wb_n);
    let u = g.add(aw, bw);
    let u = g.add(u, w0_n);
    let z = g.square(u);
    let zm = g.mean(z, Some(0));
    let zc = g.sub(z, zm);
    let zct = g.transpose(zc);
    let p = g.matmul(zct, r);
    let p2 = g.square(p);
    let num = g.sum(p2, Some(1));
    let zc2 = g.square(zc);
    let szz = g.sum(zc2, Some(0));
    let szz = g.add_scalar(szz, 1e-12 * n as f64);
    let ratio = g.div(num, szz);
    let total = g.sum(ratio, None);
    let obj = g.scale(total, -1.0 / scale);
    g.set_output(obj);

    let adam = AdamConfig::default();
    for _ in 0..config.arch_params.gmdh_candidate_epochs {
        let (_, grads) = g.gradients(&feed, &params)?;
        params.adam_step(&grads, &adam)?;
    }
    Ok(Neurons {
        wa: params.value(wa).data().to_vec(),
        wb: params.value(wb).data().to_vec(),
        w0: params.value(w0).data().to_vec(),
    })
}

/// Validation MSE of the residual after adding a single-neuron readout fitted
/// on the training rows.
fn score(z_train: &[f64], z_val: &[f64], r_train: &DMatrix<f64>, r_val: &DMatrix<f64>) -> f64 {
    let n = z_train.len() as f64;
    let zm = z_train.iter().sum::<f64>() / n;
    let szz: f64 = z_train.iter().map(|z| (z - zm) * (z - zm)).sum();
    let mut err = 0.0;
    for o in 0..r_train.ncols() {
        let col = r_train.column(o);
        let rm = col.mean();
        let szr: f64 = z_train.iter().zip(col.iter()).map(|(z, r)| (z - zm) * (r - rm)).sum();
        let slope = if szz > 1e-300 { szr / szz } else { 0.0 };
        for (i, z) in z_val.iter().enumerate() {
            let pred = rm + slope * (z - zm);
            let d = r_val[(i, o)] - pred;
            err += d * d;
        }
    }
    err / r_val.len() as f64
}

struct GrownLayer {
    layer: GmdhLayer,
    neurons: Neurons,
    readout: Readout,
}

/// Grow a network on the time-ordered training windows; the final
/// `gmdh_validation_fraction` of them form the validation split. Returns the
/// best-validation snapshot.
pub fn grow_gmdh(
    config: &ModelConfig,
    train_inputs: &[Vec<f64>],
    train_targets: &[Vec<f64>],
) -> Result<(ModelHandle, GmdhReport), ModelError> {
    config.check()?;
    let m = config.input_dim;
    if m < 2 {
        return Err(ModelError::Config("GMDH needs at least two input features".into()));
    }
    if train_inputs.len() != train_targets.len() {
        return Err(ModelError::Dimension { expected: train_inputs.len(), got: train_targets.len() });
    }
    for r in train_inputs {
        if r.len() != m {
            return Err(ModelError::Dimension { expected: m, got: r.len() });
        }
    }
    for r in train_targets {
        if r.len() != config.output_dim {
            return Err(ModelError::Dimension { expected: config.output_dim, got: r.len() });
        }
    }
    let total = train_inputs.len();
    let n_val = ((total as f64) * config.arch_params.gmdh_validation_fraction).round() as usize;
    let n_val = n_val.max(1);
    if n_val >= total {
        return Err(ModelError::Config(format!("{total} windows leave no GMDH training rows")));
    }
    let n_train = total - n_val;
    let y_train = matrix(&train_targets[..n_train]);
    let y_val = matrix(&train_targets[n_train..]);
    let mut f_train = columns(&train_inputs[..n_train]);
    let mut f_val = columns(&train_inputs[n_train..]);

    let readout0 = Readout::fit(&f_train, &y_train)?;
    let mut pred_train = readout0.apply(&f_train);
    let mut pred_val = readout0.apply(&f_val);
    let mut report = GmdhReport { validation_mse: vec![mse(&pred_val, &y_val)], candidates: vec![], kept_layers: 0 };
    let mut best = report.validation_mse[0];
    let mut grown: Vec<GrownLayer> = Vec::new();
    let mut rng = config.rng();
    let select_k = config.gmdh_select_k().max(1);

    for _ in 0..config.arch_params.gmdh_max_layers {
        if f_train.len() < 2 {
            break;
        }
        let pairs = candidate_pairs(&mut rng, f_train.len(), config.arch_params.gmdh_candidate_cap);
        report.candidates.push(pairs.len());
        let r_train = &y_train - &pred_train;
        let r_val = &y_val - &pred_val;
        let neurons = fit_candidates(config, &mut rng, &f_train, &pairs, &r_train)?;
        let mut scored: Vec<(f64, usize, Vec<f64>, Vec<f64>)> = (0..pairs.len())
            .map(|c| {
                let zt = neurons.eval(&f_train, &pairs, c);
                let zv = neurons.eval(&f_val, &pairs, c);
                let s = score(&zt, &zv, &r_train, &r_val);
                (if s.is_finite() { s } else { f64::INFINITY }, c, zt, zv)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(select_k.min(scored.len()));

        let keep: Vec<usize> = scored.iter().map(|s| s.1).collect();
        let next_train: Columns = scored.iter().map(|s| s.2.clone()).collect();
        let next_val: Columns = scored.into_iter().map(|s| s.3).collect();
        let readout = Readout::fit(&next_train, &r_train)?;
        let cand_train = &pred_train + readout.apply(&next_train);
        let cand_val = &pred_val + readout.apply(&next_val);
        let val = mse(&cand_val, &y_val);
        report.validation_mse.push(val);
        if !(val < best) {
            break;
        }
        best = val;
        pred_train = cand_train;
        pred_val = cand_val;
        f_train = next_train;
        f_val = next_val;
        let layer = GmdhLayer {
            left: keep.iter().map(|&c| pairs[c].0).collect(),
            right: keep.iter().map(|&c| pairs[c].1).collect(),
        };
        let neurons = Neurons {
            wa: keep.iter().map(|&c| neurons.wa[c]).collect(),
            wb: keep.iter().map(|&c| neurons.wb[c]).collect(),
            w0: keep.iter().map(|&c| neurons.w0[c]).collect(),
        };
        grown.push(GrownLayer { layer, neurons, readout });
    }
    report.kept_layers = grown.len();

    let mut params = ParamStore::new();
    let (w, b) = split_affine(&readout0.coef);
    params.add("gmdh.r0.w", w);
    params.add("gmdh.r0.b", b);
    for (k, gl) in grown.iter().enumerate() {
        let k = k + 1;
        params.add(format!("gmdh.l{k}.wa"), Tensor::vector(gl.neurons.wa.clone()));
        params.add(format!("gmdh.l{k}.wb"), Tensor::vector(gl.neurons.wb.clone()));
        params.add(format!("gmdh.l{k}.w0"), Tensor::vector(gl.neurons.w0.clone()));
        let (w, b) = split_affine(&gl.readout.coef);
        params.add(format!("gmdh.r{k}.w"), w);
        params.add(format!("gmdh.r{k}.b"), b);
    }
    let layers: Vec<GmdhLayer> = grown.into_iter().map(|g| g.layer).collect();
    let handle = assemble(config, params, &layers)?;
    Ok((handle, report))
}

/// Build the prediction graph for a grown structure over parameters named
/// as in [`grow_gmdh`].
pub(crate) fn assemble(config: &ModelConfig, params: ParamStore, layers: &[GmdhLayer]) -> Result<ModelHandle, ModelError> {
    let id = |name: String| params.id(&name).ok_or_else(|| ModelError::Snapshot(format!("missing parameter {name}")));
    let mut g = Graph::new();
    let x = g.input(INPUT);
    let mut pred = g.affine(x, id("gmdh.r0.w".into())?, id("gmdh.r0.b".into())?);
    let mut f = x;
    for (k, layer) in layers.iter().enumerate() {
        let k = k + 1;
        let a = g.gather(f, layer.left.clone());
        let b = g.gather(f, layer.right.clone());
        let wa = g.param(id(format!("gmdh.l{k}.wa"))?);
        let wb = g.param(id(format!("gmdh.l{k}.wb"))?);
        let w0 = g.param(id(format!("gmdh.l{k}.w0"))?);
        let aw = g.mul(a, wa);
        let bw = g.mul(b, wb);
        let u = g.add(aw, bw);
        let u = g.add(u, w0);
        f = g.square(u);
        let r = g.affine(f, id(format!("gmdh.r{k}.w"))?, id(format!("gmdh.r{k}.b"))?);
        pred = g.add(pred, r);
    }
    g.set_output(pred);
    let mut handle = ModelHandle::new(*config, g, params, x, pred);
    handle.gmdh_layers = layers.to_vec();
    Ok(handle)
}
