use kinn_core::autodiff::gradcheck::check_gradients;
use kinn_core::autodiff::{inputs, ParamStore, Tensor};
use kinn_core::kinloss::LossSpec;
use kinn_core::models::{
    build_attention, build_kgate, build_mlp, build_model, build_rbf, fit_linear_closed_form, grow_gmdh, lstsq,
    predict, Arch, ModelConfig, ModelError, ModelHandle, ModelSnapshot,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows(rng: &mut ChaCha8Rng, n: usize, m: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.gen_range(lo..hi)).collect()).collect()
}

fn set(model: &mut ModelHandle, name: &str, f: impl Fn(usize) -> f64) {
    let id = model.params.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let shape = model.params.value(id).shape().to_vec();
    let n: usize = shape.iter().product();
    model.params.set(id, Tensor::new(shape, (0..n).map(f).collect()).unwrap()).unwrap();
}

fn get(model: &ModelHandle, name: &str) -> Vec<f64> {
    model.params.by_name(name).unwrap().data().to_vec()
}

/// `x · W + b` with `W` stored row-major as `[in, out]`.
fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out).map(|j| b[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * out + j]).sum::<f64>()).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * y.abs().max(1.0))
}

#[test]
fn perceptron_parameter_counts() {
    for (m, n) in [(59, 59), (30, 30), (7, 3)] {
        let (h1, h2) = (m, 2 * m + 1);
        let want = (m * h1 + h1) + (h1 * h2 + h2) + (h2 * n + n);
        for arch in [Arch::LinearSgd, Arch::MlpRelu, Arch::MlpSigmoid, Arch::MlpTanh] {
            let model = build_mlp(&ModelConfig::new(arch, m, n, 1)).unwrap();
            assert_eq!(model.parameter_count(), want, "{arch} {m}->{n}");
        }
    }
    assert_eq!(build_mlp(&ModelConfig::new(Arch::MlpRelu, 59, 59, 1)).unwrap().parameter_count(), 17760);
}

#[test]
fn kgate_parameter_count() {
    for (m, n) in [(59, 59), (30, 30), (4, 2)] {
        let (h1, h2) = (m, 2 * m + 1);
        let layer = |inp: usize, h: usize| (inp * h + h) + 3 * (m * h + h);
        let want = layer(m, h1) + layer(h1, h2) + h2 * n + n;
        assert_eq!(build_kgate(&ModelConfig::new(Arch::Kgate, m, n, 1)).unwrap().parameter_count(), want);
    }
    assert_eq!(build_kgate(&ModelConfig::new(Arch::Kgate, 59, 59, 1)).unwrap().parameter_count(), 49800);
}

#[test]
fn rbf_and_attention_parameter_counts() {
    let (m, n) = (59, 59);
    let k = 2 * m + 1;
    let rbf = build_rbf(&ModelConfig::new(Arch::Rbf, m, n, 1), None).unwrap();
    assert_eq!(rbf.parameter_count(), k * m + k + k * n + n);
    let att = build_attention(&ModelConfig::new(Arch::Attention, m, n, 1)).unwrap();
    let d = 8;
    assert_eq!(att.parameter_count(), d + m * d + 2 * 3 * (d * d + d) + m * d * n + n);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = rows(&mut rng, 10, 6, -1.0, 1.0);
    let y = rows(&mut rng, 10, 4, -1.0, 1.0);
    let lin = fit_linear_closed_form(&ModelConfig::new(Arch::LinearClosedForm, 6, 4, 0), &x, &y).unwrap();
    assert_eq!(lin.parameter_count(), 7 * 4);
}

fn small_config(arch: Arch, seed: u64) -> ModelConfig {
    // kinematic layout with T_p = T_f = 3
    let mut c = ModelConfig::for_windows(arch, 3, 3, true, true, seed);
    c.arch_params.attention_width = 3;
    c.arch_params.gmdh_select_k = Some(4);
    c.arch_params.gmdh_candidate_epochs = 20;
    c
}

fn randomize(model: &mut ModelHandle, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let shape = model.params.value(id).shape().to_vec();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        model.params.set(id, Tensor::new(shape, data).unwrap()).unwrap();
    }
}

fn grown_gmdh(config: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelHandle {
    let x = rows(rng, 40, config.input_dim, 0.0, 1.0);
    let y: Vec<Vec<f64>> = x
        .iter()
        .map(|r| (0..config.output_dim).map(|o| (r[o % r.len()] * r[(o + 1) % r.len()] + 0.3).powi(2)).collect())
        .collect();
    let (model, report) = grow_gmdh(config, &x, &y).unwrap();
    assert!(report.kept_layers >= 1, "{report:?}");
    model
}

#[test]
fn every_trainable_architecture_passes_gradient_check() {
    let archs = [
        Arch::LinearSgd,
        Arch::MlpRelu,
        Arch::MlpSigmoid,
        Arch::MlpTanh,
        Arch::Rbf,
        Arch::Kgate,
        Arch::Attention,
        Arch::Gmdh,
    ];
    for arch in archs {
        for draw in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + draw);
            let config = small_config(arch, draw);
            let mut model = match arch {
                Arch::Gmdh => grown_gmdh(&config, &mut rng),
                _ => build_model(&config, None).unwrap(),
            };
            randomize(&mut model, &mut rng);
            for spec in [LossSpec::kinematic(3), LossSpec { kind: kinn_core::kinloss::LossKind::Mse, ..LossSpec::kinematic(3) }] {
                let mut g_spec = spec;
                if matches!(spec.kind, kinn_core::kinloss::LossKind::Mse) {
                    g_spec.t_future = model.config.output_dim;
                }
                let g = model.loss_graph(&g_spec).unwrap();
                let feed = inputs([
                    ("x", Tensor::from_rows(&rows(&mut rng, 4, model.config.input_dim, 0.0, 1.0)).unwrap()),
                    ("y", Tensor::from_rows(&rows(&mut rng, 4, model.config.output_dim, 0.0, 1.0)).unwrap()),
                ]);
                let r = check_gradients(&g, &feed, &model.params, 1e-6, None).unwrap();
                assert!(r.max_rel_error < 1e-4, "{arch} draw {draw}: {r:?}");
            }
        }
    }
}

#[test]
fn zero_perceptron_outputs() {
    let x = vec![0.3, -1.2, 4.0, 0.5];
    for arch in [Arch::MlpRelu, Arch::MlpTanh, Arch::LinearSgd] {
        let mut model = build_mlp(&ModelConfig::new(arch, 4, 3, 9)).unwrap();
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        for n in &names {
            set(&mut model, n, |_| 0.0);
        }
        assert_eq!(predict(&model, &x).unwrap(), vec![0.0; 3], "{arch}");
    }
    let mut model = build_mlp(&ModelConfig::new(Arch::MlpSigmoid, 4, 3, 9)).unwrap();
    for n in ["l1.w", "l1.b", "l2.w", "l2.b"] {
        set(&mut model, n, |_| 0.0);
    }
    let w3 = get(&model, "out.w");
    let b3 = get(&model, "out.b");
    let want = affine(&vec![0.5; 9], &w3, &b3);
    assert!(close(&predict(&model, &x).unwrap(), &want, 1e-15));
}

#[test]
fn rbf_center_hit_and_decay() {
    let mut c = ModelConfig::new(Arch::Rbf, 3, 1, 4);
    c.arch_params.rbf_centers = Some(1);
    let mut model = build_rbf(&c, None).unwrap();
    let center = vec![0.2, -0.7, 1.5];
    let cc = center.clone();
    set(&mut model, "rbf.centers", move |i| cc[i]);
    set(&mut model, "rbf.a", |_| 1.0);
    set(&mut model, "rbf.bias", |_| 0.0);
    assert_eq!(predict(&model, &center).unwrap(), vec![1.0]);
    set(&mut model, "rbf.log_width", |_| 50f64.ln());
    let far = predict(&model, &[3.0, 3.0, -3.0]).unwrap()[0];
    assert!(far.abs() < 1e-300, "{far}");
    assert!(build_rbf(&ModelConfig { arch_params: kinn_core::models::ArchParams { rbf_centers: Some(0), ..Default::default() }, ..c }, None).is_err());
}

#[test]
fn rbf_centers_come_from_training_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = rows(&mut rng, 30, 5, 0.0, 1.0);
    let model = build_rbf(&ModelConfig::new(Arch::Rbf, 5, 2, 3), Some(&data)).unwrap();
    let centers = get(&model, "rbf.centers");
    for c in centers.chunks(5).take(30) {
        assert!(data.iter().any(|r| r.as_slice() == c));
    }
}

struct KgateOracle {
    sig_fixed: Option<f64>,
    drop_additive: bool,
}

impl KgateOracle {
    fn forward(&self, model: &ModelHandle, x0: &[f64]) -> Vec<f64> {
        let mut h = x0.to_vec();
        for i in 0..2 {
            let p = |s: &str| get(model, &format!("kg{i}.{s}"));
            let lin = affine(&h, &p("trunk.w"), &p("trunk.b"));
            let t = affine(x0, &p("tanh.w"), &p("tanh.b"));
            let a = affine(x0, &p("add.w"), &p("add.b"));
            let s = affine(x0, &p("sig.w"), &p("sig.b"));
            h = (0..lin.len())
                .map(|k| {
                    let add = if self.drop_additive { 0.0 } else { t[k].tanh() * a[k] };
                    let gate = self.sig_fixed.unwrap_or_else(|| sigmoid(s[k]));
                    (lin[k] + add) * gate
                })
                .collect();
        }
        affine(&h, &get(model, "out.w"), &get(model, "out.b"))
    }
}

#[test]
fn kgate_matches_gate_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = build_kgate(&ModelConfig::new(Arch::Kgate, 5, 3, 1)).unwrap();
    randomize(&mut model, &mut rng);
    let x = rows(&mut rng, 1, 5, -1.0, 1.0).pop().unwrap();
    let general = KgateOracle { sig_fixed: None, drop_additive: false };
    assert!(close(&predict(&model, &x).unwrap(), &general.forward(&model, &x), 1e-12));

    let mut m1 = model.clone();
    for i in 0..2 {
        set(&mut m1, &format!("kg{i}.sig.w"), |_| 0.0);
        set(&mut m1, &format!("kg{i}.sig.b"), |_| 0.0);
    }
    let half = KgateOracle { sig_fixed: Some(0.5), drop_additive: false };
    assert!(close(&predict(&m1, &x).unwrap(), &half.forward(&m1, &x), 1e-12));

    let mut m2 = model.clone();
    for i in 0..2 {
        set(&mut m2, &format!("kg{i}.tanh.w"), |_| 0.0);
        set(&mut m2, &format!("kg{i}.tanh.b"), |_| 0.0);
    }
    let no_add = KgateOracle { sig_fixed: None, drop_additive: true };
    assert!(close(&predict(&m2, &x).unwrap(), &no_add.forward(&m2, &x), 1e-12));

    // saturated gates: tanh → 1 and σ → 1, leaving W x_i + b + W_a x₀ + b_a
    let mut m3 = model.clone();
    for i in 0..2 {
        set(&mut m3, &format!("kg{i}.tanh.w"), |_| 0.0);
        set(&mut m3, &format!("kg{i}.tanh.b"), |_| 40.0);
        set(&mut m3, &format!("kg{i}.sig.w"), |_| 0.0);
        set(&mut m3, &format!("kg{i}.sig.b"), |_| 40.0);
    }
    let mut h = x.clone();
    for i in 0..2 {
        let p = |s: &str| get(&m3, &format!("kg{i}.{s}"));
        let lin = affine(&h, &p("trunk.w"), &p("trunk.b"));
        let a = affine(&x, &p("add.w"), &p("add.b"));
        h = lin.iter().zip(&a).map(|(l, a)| l + a).collect();
    }
    let want = affine(&h, &get(&m3, "out.w"), &get(&m3, "out.b"));
    assert!(close(&predict(&m3, &x).unwrap(), &want, 1e-9));
}

fn attention_oracle(model: &ModelHandle, x: &[f64], d: usize) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
    let l = x.len();
    let lift = get(model, "att.lift");
    let pos = get(model, "att.pos");
    let mut h: Vec<Vec<f64>> = (0..l).map(|t| (0..d).map(|c| x[t] * lift[c] + pos[t * d + c]).collect()).collect();
    let mut weights = Vec::new();
    for layer in 0..2 {
        let p = |s: &str| get(model, &format!("att{layer}.{s}"));
        let k: Vec<Vec<f64>> = h.iter().map(|r| affine(r, &p("k.w"), &p("k.b"))).collect();
        let q: Vec<Vec<f64>> = h.iter().map(|r| affine(r, &p("q.w"), &p("q.b"))).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|r| affine(r, &p("v.w"), &p("v.b"))).collect();
        let mean_norm = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|z| z * z).sum::<f64>()).sum::<f64>() / l as f64;
        let denom = mean_norm(&k) + mean_norm(&q);
        let mut a = vec![vec![0.0; l]; l];
        for i in 0..l {
            let s: Vec<f64> = (0..l).map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / denom).collect();
            let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|z| (z - mx).exp()).collect();
            let tot: f64 = e.iter().sum();
            for j in 0..l {
                a[i][j] = e[j] / tot;
            }
        }
        h = (0..l).map(|i| (0..d).map(|c| (0..l).map(|j| a[i][j] * v[j][c]).sum()).collect()).collect();
        weights.push(a);
    }
    let flat: Vec<f64> = h.concat();
    (affine(&flat, &get(model, "out.w"), &get(model, "out.b")), weights)
}

#[test]
fn attention_matches_token_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut c = ModelConfig::new(Arch::Attention, 6, 4, 2);
    c.arch_params.attention_width = 3;
    let mut model = build_attention(&c).unwrap();
    randomize(&mut model, &mut rng);
    let x = rows(&mut rng, 1, 6, -1.0, 1.0).pop().unwrap();
    let (want, weights) = attention_oracle(&model, &x, 3);
    assert!(close(&predict(&model, &x).unwrap(), &want, 1e-12));
    let feed = inputs([("x", Tensor::from_rows(&[x.clone()]).unwrap())]);
    let nodes = model.graph.evaluate_nodes(&model.attention_nodes, &feed, &model.params).unwrap();
    for (a, w) in nodes.iter().zip(&weights) {
        assert!(close(a.data(), &w.concat(), 1e-12));
        for row in a.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn single_token_attention_is_identity_weight() {
    let mut c = ModelConfig::new(Arch::Attention, 1, 2, 5);
    c.arch_params.attention_width = 4;
    let model = build_attention(&c).unwrap();
    let feed = inputs([("x", Tensor::from_rows(&[vec![0.7]]).unwrap())]);
    for a in model.graph.evaluate_nodes(&model.attention_nodes, &feed, &model.params).unwrap() {
        assert_eq!(a.data(), &[1.0]);
    }
    let (want, _) = attention_oracle(&model, &[0.7], 4);
    assert!(close(&predict(&model, &[0.7]).unwrap(), &want, 1e-12));
}

#[test]
fn attention_is_permutation_consistent_without_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut c = ModelConfig::new(Arch::Attention, 5, 2, 3);
    c.arch_params.attention_width = 3;
    let mut model = build_attention(&c).unwrap();
    randomize(&mut model, &mut rng);
    set(&mut model, "att.pos", |_| 0.0);
    let x = vec![0.1, 0.9, 0.4, 0.9, -0.3];
    let swapped = vec![0.1, 0.9, 0.4, 0.9, -0.3]; // tokens 1 and 3 share a value
    let feed = |v: &Vec<f64>| inputs([("x", Tensor::from_rows(&[v.clone()]).unwrap())]);
    let flat_node = |m: &ModelHandle| {
        // the readout input is the last reshape before the output affine
        let ops = m.graph.len();
        (0..ops).rev().map(kinn_core::autodiff::NodeId).find(|&n| matches!(m.graph.op(n), kinn_core::autodiff::Op::Reshape { .. })).unwrap()
    };
    let node = flat_node(&model);
    let a = model.graph.evaluate_node(node, &feed(&x), &model.params).unwrap();
    let b = model.graph.evaluate_node(node, &feed(&swapped), &model.params).unwrap();
    let d = 3;
    let ad = a.data();
    let bd = b.data();
    // token rows 1 and 3 of the pooled representation coincide
    assert!(close(&ad[d..2 * d], &ad[3 * d..4 * d], 1e-12));
    // permuting a general input permutes the token rows
    let y = vec![0.2, -0.5, 0.8, 0.1, 0.6];
    let perm = [4usize, 2, 0, 1, 3];
    let yp: Vec<f64> = perm.iter().map(|&p| y[p]).collect();
    let ty = model.graph.evaluate_node(node, &feed(&y), &model.params).unwrap();
    let typ = model.graph.evaluate_node(node, &feed(&yp), &model.params).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        assert!(close(&typ.data()[i * d..(i + 1) * d], &ty.data()[p * d..(p + 1) * d], 1e-12));
    }
    assert_eq!(ad, bd);
}

/// Normal equations solved by Gauss-Jordan elimination with partial pivoting.
fn normal_equations(x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = x[0].len();
    let n = y[0].len();
    let mut a = vec![vec![0.0; m + n]; m];
    for r in 0..x.len() {
        for i in 0..m {
            for j in 0..m {
                a[i][j] += x[r][i] * x[r][j];
            }
            for j in 0..n {
                a[i][m + j] += x[r][i] * y[r][j];
            }
        }
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, piv);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        for r in 0..m {
            if r != col {
                let f = a[r][col];
                let pivot_row = a[col].clone();
                for (v, p) in a[r].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    a.into_iter().map(|r| r[m..].to_vec()).collect()
}

#[test]
fn closed_form_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = rows(&mut rng, 100, 5, -1.0, 1.0);
    let y = rows(&mut rng, 100, 3, -1.0, 1.0);
    let sol = lstsq(&x, &y).unwrap();
    let want = normal_equations(&x, &y);
    for i in 0..5 {
        for j in 0..3 {
            assert!((sol.coef[(i, j)] - want[i][j]).abs() < 1e-8);
        }
    }
}

#[test]
fn closed_form_recovers_exact_linear_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (m, n) = (6, 4);
    let a = rows(&mut rng, m, n, -2.0, 2.0);
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = rows(&mut rng, 50, m, -1.0, 1.0);
    let y: Vec<Vec<f64>> = x
        .iter()
        .map(|r| (0..n).map(|j| b[j] + (0..m).map(|i| r[i] * a[i][j]).sum::<f64>()).collect())
        .collect();
    let model = fit_linear_closed_form(&ModelConfig::new(Arch::LinearClosedForm, m, n, 0), &x, &y).unwrap();
    let w = get(&model, "linear.w");
    for i in 0..m {
        for j in 0..n {
            assert!((w[i * n + j] - a[i][j]).abs() < 1e-8);
        }
    }
    for (r, t) in x.iter().zip(&y) {
        assert!(close(&predict(&model, r).unwrap(), t, 1e-8));
    }
    assert_eq!(
        fit_linear_closed_form(&ModelConfig::new(Arch::LinearClosedForm, m, n, 0), &[], &[]).unwrap_err(),
        ModelError::EmptyData
    );
}

#[test]
fn gmdh_learns_a_quadratic_neuron() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = rows(&mut rng, 400, 2, -1.0, 1.0);
    let y: Vec<Vec<f64>> = x.iter().map(|r| vec![(r[0] + r[1] + 1.0).powi(2)]).collect();
    let mut c = ModelConfig::new(Arch::Gmdh, 2, 1, 7);
    c.arch_params.gmdh_candidate_epochs = 1000;
    let (model, report) = grow_gmdh(&c, &x, &y).unwrap();
    assert!(report.validation_mse[0] > 1e-2, "{report:?}");
    assert!(report.validation_mse[1] < 1e-3, "{report:?}");
    assert!(report.kept_layers >= 1);
    assert_eq!(model.gmdh_layers.len(), report.kept_layers);
}

#[test]
fn gmdh_constant_target_is_fit_at_layer_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = rows(&mut rng, 60, 3, 0.0, 1.0);
    let y = vec![vec![2.5, -1.0]; 60];
    let mut c = ModelConfig::new(Arch::Gmdh, 3, 2, 1);
    c.arch_params.gmdh_candidate_epochs = 30;
    let (model, report) = grow_gmdh(&c, &x, &y).unwrap();
    assert!(report.validation_mse[0] < 1e-20, "{report:?}");
    assert!(close(&predict(&model, &x[0]).unwrap(), &[2.5, -1.0], 1e-9));
}

#[test]
fn gmdh_returns_best_validation_snapshot() {
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let x = rows(&mut rng, 30, 5, 0.0, 1.0);
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] * r[1] - r[2].powi(3) + 0.05 * rng.gen_range(-1.0..1.0)]).collect();
        let mut c = ModelConfig::new(Arch::Gmdh, 5, 1, seed);
        c.arch_params.gmdh_candidate_epochs = 60;
        let (_, report) = grow_gmdh(&c, &x, &y).unwrap();
        let best = report.returned_validation_mse();
        assert!(report.validation_mse.iter().all(|v| best <= *v), "{report:?}");
    }
    let c = ModelConfig::new(Arch::Gmdh, 1, 1, 0);
    assert!(grow_gmdh(&c, &vec![vec![1.0]; 10], &vec![vec![1.0]; 10]).is_err());
}

#[test]
fn predict_checks_dimensions_and_is_deterministic() {
    let c = ModelConfig::for_windows(Arch::Kgate, 30, 30, true, true, 77);
    let a = build_model(&c, None).unwrap();
    let b = build_model(&c, None).unwrap();
    let x: Vec<f64> = (0..59).map(|i| (i as f64 * 0.37).sin()).collect();
    let pa = predict(&a, &x).unwrap();
    assert_eq!(pa.len(), 59);
    assert_eq!(pa, predict(&b, &x).unwrap());
    assert_eq!(predict(&a, &x[..30]).unwrap_err(), ModelError::Dimension { expected: 59, got: 30 });
    let baseline = ModelConfig::for_windows(Arch::Kgate, 30, 30, false, true, 77);
    assert_eq!((baseline.input_dim, baseline.output_dim), (30, 30));
}

#[test]
fn snapshots_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let x = rows(&mut rng, 30, 5, 0.0, 1.0);
    let y = rows(&mut rng, 30, 5, 0.0, 1.0);
    for arch in Arch::ALL {
        let c = small_config(arch, 3);
        let model = match arch {
            Arch::LinearClosedForm => fit_linear_closed_form(&c, &x, &y).unwrap(),
            Arch::Gmdh => grow_gmdh(&c, &x, &y).unwrap().0,
            _ => build_model(&c, Some(&x)).unwrap(),
        };
        let json = ModelSnapshot::capture(&model).to_json();
        let back = ModelSnapshot::from_json(&json).unwrap().restore().unwrap();
        for r in &x {
            assert_eq!(predict(&model, r).unwrap(), predict(&back, r).unwrap(), "{arch}");
        }
    }
}

#[test]
fn architecture_names_parse() {
    for arch in Arch::ALL {
        assert_eq!(arch.name().parse::<Arch>().unwrap(), arch);
    }
    assert_eq!("relu".parse::<Arch>().unwrap(), Arch::MlpRelu);
    assert!("lstm".parse::<Arch>().is_err());
    let _ = ParamStore::new();
}
