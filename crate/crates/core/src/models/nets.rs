use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Arch, ModelConfig, ModelError, ModelHandle, INPUT};
use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};

fn dense(
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> (ParamId, ParamId) {
    let w = params.add_uniform(format!("{name}.w"), &[fan_in, fan_out], fan_in, rng);
    let b = params.add_uniform(format!("{name}.b"), &[fan_out], fan_in, rng);
    (w, b)
}

/// Two-hidden-layer perceptron `m → m → 2m+1 → n`. `linear_sgd` uses the
/// identity activation.
pub fn build_mlp(config: &ModelConfig) -> Result<ModelHandle, ModelError> {
    config.check()?;
    let act: fn(&mut Graph, NodeId) -> NodeId = match config.arch {
        Arch::LinearSgd => |_, x| x,
        Arch::MlpRelu => Graph::relu,
        Arch::MlpSigmoid => Graph::sigmoid,
        Arch::MlpTanh => Graph::tanh,
        other => return Err(ModelError::Config(format!("{other} is not a perceptron"))),
    };
    let (m, n) = (config.input_dim, config.output_dim);
    let (h1, h2) = config.hidden_sizes();
    let mut rng = config.rng();
    let mut params = ParamStore::new();
    let l1 = dense(&mut params, &mut rng, "l1", m, h1);
    let l2 = dense(&mut params, &mut rng, "l2", h1, h2);
    let l3 = dense(&mut params, &mut rng, "out", h2, n);

    let mut g = Graph::new();
    let x = g.input(INPUT);
    let z1 = g.affine(x, l1.0, l1.1);
    let a1 = act(&mut g, z1);
    let z2 = g.affine(a1, l2.0, l2.1);
    let a2 = act(&mut g, z2);
    let y = g.affine(a2, l3.0, l3.1);
    g.set_output(y);
    Ok(ModelHandle::new(*config, g, params, x, y))
}

/// Gated layer stack: `z = (W x_i + b + tanh(W_t x₀ + b_t) ⊙ (W_a x₀ + b_a)) ⊙ σ(W_s x₀ + b_s)`
/// with every gate reading the network input `x₀`, two layers of widths
/// `m` and `2m+1`, then a linear readout.
pub fn build_kgate(config: &ModelConfig) -> Result<ModelHandle, ModelError> {
    config.check()?;
    let (m, n) = (config.input_dim, config.output_dim);
    let (h1, h2) = config.hidden_sizes();
    let mut rng = config.rng();
    let mut params = ParamStore::new();
    let mut g = Graph::new();
    let x0 = g.input(INPUT);
    let mut h = x0;
    let mut width_in = m;
    for (i, width) in [h1, h2].into_iter().enumerate() {
        let trunk = dense(&mut params, &mut rng, &format!("kg{i}.trunk"), width_in, width);
        let shift = dense(&mut params, &mut rng, &format!("kg{i}.tanh"), m, width);
        let amp = dense(&mut params, &mut rng, &format!("kg{i}.add"), m, width);
        let gate = dense(&mut params, &mut rng, &format!("kg{i}.sig"), m, width);
        let lin = g.affine(h, trunk.0, trunk.1);
        let t = g.affine(x0, shift.0, shift.1);
        let t = g.tanh(t);
        let a = g.affine(x0, amp.0, amp.1);
        let ta = g.mul(t, a);
        let pre = g.add(lin, ta);
        let s = g.affine(x0, gate.0, gate.1);
        let s = g.sigmoid(s);
        h = g.mul(pre, s);
        width_in = width;
    }
    let out = dense(&mut params, &mut rng, "out", width_in, n);
    let y = g.affine(h, out.0, out.1);
    g.set_output(y);
    Ok(ModelHandle::new(*config, g, params, x0, y))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

/// Initial centers drawn from the training inputs, without replacement while
/// possible; repeats get a small jitter so units do not coincide.
fn sample_centers(rng: &mut ChaCha8Rng, data: &[Vec<f64>], k: usize, m: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let spread: Vec<f64> = (0..m)
        .map(|j| {
            let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r[j]), hi.max(r[j]))
            });
            (hi - lo).max(1e-3)
        })
        .collect();
    let mut out = Vec::with_capacity(k * m);
    for u in 0..k {
        let row = &data[order[u % order.len()]];
        if u < order.len() {
            out.extend_from_slice(row);
        } else {
            out.extend(row.iter().zip(&spread).map(|(v, s)| v + rng.gen_range(-0.05..0.05) * s));
        }
    }
    out
}

/// Gaussian units `Σ_k a_k exp(-b_k ‖x - c_k‖²) + bias` with widths stored
/// as `log b_k`.
pub fn build_rbf(config: &ModelConfig, train_inputs: Option<&[Vec<f64>]>) -> Result<ModelHandle, ModelError> {
    config.check()?;
    let (m, n) = (config.input_dim, config.output_dim);
    let k = config.rbf_centers();
    if k < 1 {
        return Err(ModelError::Config("RBF needs at least one unit".into()));
    }
    let mut rng = config.rng();
    let mut params = ParamStore::new();
    let data = train_inputs.filter(|d| !d.is_empty());
    if let Some(bad) = data.and_then(|d| d.iter().find(|r| r.len() != m)) {
        return Err(ModelError::Dimension { expected: m, got: bad.len() });
    }
    let (centers, log_width) = match data {
        Some(d) => {
            let c = sample_centers(&mut rng, d, k, m);
            let rows: Vec<&[f64]> = c.chunks(m).collect();
            let mut dists = Vec::new();
            for i in 0..rows.len() {
                for j in i + 1..rows.len() {
                    dists.push(squared_distance(rows[i], rows[j]));
                }
            }
            let med = median(dists).filter(|d| *d > 0.0).unwrap_or(1.0);
            (Tensor::new(vec![k, m], c)?, Tensor::filled(&[k], -med.ln()))
        }
        None => {
            let c = (0..k * m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            (Tensor::new(vec![k, m], c)?, Tensor::zeros(&[k]))
        }
    };
    let c = params.add("rbf.centers", centers);
    let lb = params.add("rbf.log_width", log_width);
    let a = params.add_uniform("rbf.a", &[k, n], k, &mut rng);
    let bias = params.add_uniform("rbf.bias", &[n], k, &mut rng);

    let mut g = Graph::new();
    let x = g.input(INPUT);
    let cn = g.param(c);
    let d2 = g.sqdist(x, cn);
    let lbn = g.param(lb);
    let b = g.exp(lbn);
    let e = g.mul(d2, b);
    let e = g.scale(e, -1.0);
    let phi = g.exp(e);
    let y = g.affine(phi, a, bias);
    g.set_output(y);
    Ok(ModelHandle::new(*config, g, params, x, y))
}

/// Dot-product attention over the input vector read as `L` scalar tokens
/// lifted to width `d` with a positional bias. Per layer the keys, queries
/// and values are affine maps of the token matrix; scores `Q Kᵀ` are divided
/// by `d_k + d_q`, the mean squared token norms of `K` and `Q`, and each
/// query's weights are a softmax over keys. Two layers, then the token
/// matrix is flattened into a linear readout.
pub fn build_attention(config: &ModelConfig) -> Result<ModelHandle, ModelError> {
    config.check()?;
    let (l, n) = (config.input_dim, config.output_dim);
    let d = config.arch_params.attention_width;
    if d == 0 {
        return Err(ModelError::Config("attention width must be positive".into()));
    }
    let mut rng = config.rng();
    let mut params = ParamStore::new();
    let lift = params.add_uniform("att.lift", &[1, d], 1, &mut rng);
    let pos = params.add_uniform("att.pos", &[l, d], d, &mut rng);

    let mut g = Graph::new();
    let x = g.input(INPUT);
    let tokens = g.reshape(x, 1, vec![l, 1]);
    let lift = g.param(lift);
    let lifted = g.matmul(tokens, lift);
    let pos = g.param(pos);
    let mut h = g.add(lifted, pos);
    let mut attention_nodes = Vec::new();
    for layer in 0..2 {
        let wk = dense(&mut params, &mut rng, &format!("att{layer}.k"), d, d);
        let wq = dense(&mut params, &mut rng, &format!("att{layer}.q"), d, d);
        let wv = dense(&mut params, &mut rng, &format!("att{layer}.v"), d, d);
        let k = g.affine(h, wk.0, wk.1);
        let q = g.affine(h, wq.0, wq.1);
        let v = g.affine(h, wv.0, wv.1);
        let dk = mean_token_norm(&mut g, k);
        let dq = mean_token_norm(&mut g, q);
        let denom = g.add(dk, dq);
        let denom = g.reshape(denom, 1, vec![1, 1]);
        let kt = g.transpose(k);
        let scores = g.matmul(q, kt);
        let scores = g.div(scores, denom);
        let a = g.softmax(scores, 2);
        attention_nodes.push(a);
        h = g.matmul(a, v);
    }
    let flat = g.reshape(h, 1, vec![l * d]);
    let out = dense(&mut params, &mut rng, "out", l * d, n);
    let y = g.affine(flat, out.0, out.1);
    g.set_output(y);
    let mut handle = ModelHandle::new(*config, g, params, x, y);
    handle.attention_nodes = attention_nodes;
    Ok(handle)
}

/// `[B, L, d] → [B]`: mean over tokens of the squared token norm.
fn mean_token_norm(g: &mut Graph, t: NodeId) -> NodeId {
    let sq = g.square(t);
    let norms = g.sum(sq, Some(2));
    g.mean(norms, Some(1))
}
