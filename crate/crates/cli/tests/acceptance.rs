//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Each derived number is checked against an independent
//! computation rather than the library's own helpers.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use layertime_core::analysis::{cnn_time_polynomial, expansion_benefit, safe_region, Axis, RegionBound};
use layertime_core::harness::{generate_plan, Scope, SyntheticOracle};
use layertime_core::steering::{
    brute_force_compress, expand_layer, greedy_compress, network_time, rnn_time_floor, ModelMap, NetworkSpec,
    WidthDeficitLoss,
};
use layertime_core::timetree::nnls::fit_rows;
use layertime_core::timetree::{dataset_mape, Condition, ConditionKind, LinearFit};
use layertime_core::{
    derive_features, fit_tree, load_model, ConvGeometry, Dataset, FitParams, LayerKind, Padding, StructureConfig,
    TimeModel,
};

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn law(w: &[f64], b: f64) -> LinearFit {
    LinearFit { w: w.to_vec(), b, n: 0, mape: 0.0, mse: 0.0 }
}

// ---------------------------------------------------------------- 1

fn cnn_dataset(oracle: &SyntheticOracle, n: usize, seed: u64) -> Dataset {
    let plan = generate_plan(&Scope::named("cnn").unwrap(), n.div_ceil(6), seed).unwrap();
    assert!(plan.len() >= n, "plan too short");
    let mut ds = Dataset::new(LayerKind::Cnn);
    for entry in plan.into_iter().take(n) {
        ds.push(entry.config, oracle.synth_time(&entry.config).unwrap().time_ms).unwrap();
    }
    ds
}

fn planted_recovery() -> Verdict {
    let start = Instant::now();
    let oracle = SyntheticOracle::reference_device(0.01, 7);
    let train = cnn_dataset(&oracle, 1000, 1);
    let test = cnn_dataset(&oracle, 300, 2);
    let model = fit_tree(&train, &FitParams::default()).unwrap();
    let elapsed = start.elapsed();
    let root = model.root().condition.expect("root split");
    let recovered = root.kind == ConditionKind::Multiple && root.feature == 4 && root.tau == 4.0;
    let mape = dataset_mape(&model, &test).unwrap();
    verdict(
        recovered && mape <= 0.05 && elapsed < Duration::from_secs(30),
        format!(
            "root {:?}(feature {}, {}), held-out MAPE {:.2}%, {:.1} s",
            root.kind,
            root.feature,
            root.tau,
            100.0 * mape,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

/// `(G, h, c)` of the mean squared error `zᵀGz − 2hᵀz + c` over `[x | 1]`.
fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
    let p = rows[0].len() + 1;
    let n = rows.len() as f64;
    let mut g = vec![vec![0.0; p]; p];
    let mut h = vec![0.0; p];
    let mut c = 0.0;
    for (row, &yi) in rows.iter().zip(y) {
        let a: Vec<f64> = row.iter().copied().chain([1.0]).collect();
        for i in 0..p {
            h[i] += a[i] * yi / n;
            for j in 0..p {
                g[i][j] += a[i] * a[j] / n;
            }
        }
        c += yi * yi / n;
    }
    (g, h, c)
}

fn quad_loss(g: &[Vec<f64>], h: &[f64], c: f64, z: &[f64]) -> f64 {
    let p = z.len();
    let mut q = c;
    for i in 0..p {
        q -= 2.0 * h[i] * z[i];
        for j in 0..p {
            q += z[i] * g[i][j] * z[j];
        }
    }
    q
}

fn gradient(g: &[Vec<f64>], h: &[f64], z: &[f64]) -> Vec<f64> {
    (0..z.len()).map(|i| 2.0 * (g[i].iter().zip(z).map(|(a, b)| a * b).sum::<f64>() - h[i])).collect()
}

/// Accelerated projected gradient with restart; the reference solution.
fn projected_gradient(g: &[Vec<f64>], h: &[f64]) -> Vec<f64> {
    let p = h.len();
    let mut v = vec![1.0; p];
    let mut top = 0.0;
    for _ in 0..500 {
        let gv: Vec<f64> = (0..p).map(|i| g[i].iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        top = gv.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = gv.iter().map(|x| x / top).collect();
    }
    let step = 1.0 / (2.0 * top * 1.01);
    let mut z = vec![0.0; p];
    let mut yk = z.clone();
    let mut t = 1.0f64;
    for _ in 0..400_000 {
        let gr = gradient(g, h, &yk);
        let next: Vec<f64> = yk.iter().zip(&gr).map(|(y, d)| (y - step * d).max(0.0)).collect();
        // gradient-based restart: drop momentum when it points uphill
        let uphill: f64 = yk.iter().zip(&next).zip(&z).map(|((y, n), o)| (y - n) * (n - o)).sum();
        if uphill > 0.0 {
            t = 1.0;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        yk = next.iter().zip(&z).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
        z = next;
        t = t_next;
        // projected-gradient optimality measure at the iterate
        let pg = gradient(g, h, &z)
            .iter()
            .zip(&z)
            .map(|(d, v)| if *v > 0.0 { d.abs() } else { (-d).max(0.0) })
            .fold(0.0, f64::max);
        if pg < 1e-12 {
            break;
        }
    }
    z
}

fn nnls_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_kkt, mut worst_gap) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let k = rng.random_range(1..=5);
        let n = rng.random_range(k + 2..=200);
        let beta: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b0 = rng.random_range(0.0..2.0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>() + b0 + rng.random_range(-0.1..0.1))
            .collect();
        let fit = fit_rows(&rows, &y).unwrap();
        let z: Vec<f64> = fit.w.iter().copied().chain([fit.b]).collect();
        let (g, h, c) = normal_equations(&rows, &y);
        let grad = gradient(&g, &h, &z);
        let y_rms = c.sqrt();
        for j in 0..z.len() {
            let col_rms = g[j][j].sqrt();
            let rel = grad[j] / (2.0 * col_rms * y_rms);
            let kkt = if z[j] > 0.0 { rel.abs() } else { (-rel).max(0.0) };
            worst_kkt = worst_kkt.max(kkt).max((-z[j]).max(0.0));
        }
        let reference = projected_gradient(&g, &h);
        worst_gap = worst_gap.max((quad_loss(&g, &h, c, &z) - quad_loss(&g, &h, c, &reference)).abs());
    }
    let xs: Vec<[f64; 1]> = (1..=5).map(|x| [f64::from(x)]).collect();
    let ys: Vec<f64> = (1..=5).map(|x| 5.0 - f64::from(x)).collect();
    let hand = fit_rows(&xs, &ys).unwrap();
    let hand_ok = hand.w == [0.0] && hand.b == 2.0;
    verdict(
        worst_kkt <= 1e-8 && worst_gap <= 1e-8 && hand_ok,
        format!(
            "500 instances: max KKT residual {worst_kkt:.1e}, max loss gap {worst_gap:.1e}; hand example w={:?} b={}",
            hand.w, hand.b
        ),
    )
}

// ---------------------------------------------------------------- 3 and 4

fn root_laws() -> (LinearFit, LinearFit) {
    (law(&[3.41e-8, 4.03e-6, 7.11e-25], 8.11), law(&[3.11e-8, 8.03e-6, 1.52e-34], 12.82))
}

fn root_model() -> TimeModel {
    let (t, f) = root_laws();
    let mut m = TimeModel::single_leaf(LayerKind::Cnn, vec![3.2e-8, 6e-6, 0.0], 10.0);
    m.split_leaf(0, Condition::multiple(4, 4), t, f).unwrap();
    m
}

fn geometry() -> ConvGeometry {
    "24x24,3x3,1,same".parse().unwrap()
}

/// Leaf law evaluated directly from FLOPs / memory / parameter counts of a
/// 24×24 3×3 same-padded stride-1 convolution.
fn direct_time(fit: &LinearFit, ic: f64, oc: f64) -> f64 {
    let (hw, kk) = (24.0 * 24.0, 9.0);
    let flops = 2.0 * hw * kk * ic * oc;
    let mem = hw * ic + hw * oc + hw * kk * ic;
    let param = kk * ic * oc + 1.0;
    fit.w[0] * flops + fit.w[1] * mem + fit.w[2] * param + fit.b
}

fn polynomial_reproduction() -> Verdict {
    let (t, f) = root_laws();
    let printed = [(&t, [3.53e-4, 2.32e-2, 2.32e-3, 8.11]), (&f, [3.23e-4, 4.63e-2, 4.63e-3, 12.82])];
    let mut worst = 0.0f64;
    for (fit, want) in printed {
        let p = cnn_time_polynomial(fit, &geometry()).unwrap();
        for (got, want) in [p.uv, p.u, p.v, p.c].into_iter().zip(want) {
            worst = worst.max((got - want).abs() / want);
        }
    }
    let model = root_model();
    let start = geometry().config(43, 64);
    let (expanded, _) = expand_layer(&model, &start).unwrap();
    let before = model.predict(&start).unwrap();
    let after = model.predict(&expanded).unwrap();
    let moved = expanded == geometry().config(44, 64);
    verdict(
        worst <= 0.01 && moved && (before - 16.0).abs() < 0.05 && (after - 10.3).abs() < 0.05,
        format!(
            "max coefficient error {:.2}%; (43,64) -> ({},{}) {before:.3} ms -> {after:.3} ms",
            100.0 * worst,
            expanded.in_width(),
            expanded.out_width()
        ),
    )
}

fn safe_region_derivation() -> Verdict {
    let (t, f) = root_laws();
    let p = expansion_benefit(&t, &f, &geometry(), Axis::InChannel, 3).unwrap();
    let RegionBound::Finite(root) = safe_region(&p) else {
        return verdict(false, format!("expected a finite bound, got {:?}", safe_region(&p)));
    };
    let benefit = |u: f64, v: f64| direct_time(&t, u + 3.0, v) - direct_time(&f, u, v);
    // sign changes of the diagonal over a fine scan: exactly one positive root
    let mut changes = 0;
    let mut prev = benefit(1.0, 1.0);
    let mut x = 1.0;
    while x < 65536.0 {
        x += 0.25;
        let cur = benefit(x, x);
        if (cur < 0.0) != (prev < 0.0) {
            changes += 1;
        }
        prev = cur;
    }
    let edge = root.floor();
    let mut grid_ok = true;
    for i in 0..32 {
        for j in 0..32 {
            let u = 1.0 + (edge - 1.0) * f64::from(i) / 31.0;
            let v = 1.0 + (edge - 1.0) * f64::from(j) / 31.0;
            grid_ok &= benefit(u, v) < 0.0;
        }
    }
    let beyond = benefit(root.ceil() + 1.0, root.ceil() + 1.0) > 0.0;
    let ratio = root / 1288.0;
    verdict(
        changes == 1 && grid_ok && beyond && (0.7..=1.4).contains(&ratio),
        format!(
            "diagonal root {root:.1} ({ratio:.3} of 1288), {changes} sign change(s), 32x32 grid strictly negative: {grid_ok}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn rnn_floor() -> Verdict {
    let model = TimeModel::single_leaf(LayerKind::Gru, vec![4e-8, 2e-5, 0.0, 0.666], 0.5);
    let net = NetworkSpec::chained(vec![StructureConfig::gru(128, 256, 20)]);
    let floor = rnn_time_floor(&model, &net).unwrap();
    let observed = 14.1;
    let rel = (floor - observed).abs() / observed;
    verdict(
        (floor - 13.32).abs() < 1e-9 && rel <= 0.10,
        format!("floor {floor:.3} ms, {:.1}% from the observed 14.1 ms", 100.0 * rel),
    )
}

// ---------------------------------------------------------------- 6

fn random_config(kind: LayerKind, rng: &mut ChaCha8Rng) -> StructureConfig {
    match kind {
        LayerKind::Fc => StructureConfig::fc(rng.random_range(1..=600), rng.random_range(1..=600)),
        LayerKind::Cnn => {
            let h = rng.random_range(8..=64);
            let k = rng.random_range(1..=5);
            let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
            StructureConfig::cnn(
                h,
                h,
                k,
                k,
                rng.random_range(1..=2),
                padding,
                rng.random_range(1..=300),
                rng.random_range(1..=300),
            )
        }
        LayerKind::Gru => {
            StructureConfig::gru(rng.random_range(1..=300), rng.random_range(1..=300), rng.random_range(1..=30))
        }
        LayerKind::Lstm => {
            StructureConfig::lstm(rng.random_range(1..=300), rng.random_range(1..=300), rng.random_range(1..=30))
        }
    }
}

fn random_law(kind: LayerKind, rng: &mut ChaCha8Rng) -> LinearFit {
    let scales = [1e-7, 1e-5, 1e-5, 1.0];
    let w = (0..kind.explanatory_len()).map(|i| if rng.random_bool(0.8) { rng.random_range(0.0..scales[i]) } else { 0.0 });
    law(&w.collect::<Vec<_>>(), rng.random_range(0.0..20.0))
}

fn random_tree(kind: LayerKind, rng: &mut ChaCha8Rng) -> TimeModel {
    let root = random_law(kind, rng);
    let mut model = TimeModel::single_leaf(kind, root.w, root.b);
    let n_features = kind.feature_names().len();
    let widths: Vec<usize> = (0..n_features).filter(|&j| kind.is_width_feature(j)).collect();
    for _ in 0..rng.random_range(0..=6) {
        let leaves: Vec<usize> = model.nodes.iter().filter(|n| n.is_leaf() && n.depth < 4).map(|n| n.id).collect();
        let Some(&leaf) = leaves.get(rng.random_range(0..leaves.len().max(1))) else { break };
        let condition = if rng.random_bool(0.7) {
            Condition::multiple(widths[rng.random_range(0..widths.len())], [2, 3, 4, 8, 16][rng.random_range(0..5)])
        } else {
            Condition::range(rng.random_range(0..n_features), f64::from(rng.random_range(1..400)))
        };
        let left = random_law(kind, rng);
        let right = random_law(kind, rng);
        model.split_leaf(leaf, condition, left, right).unwrap();
    }
    model
}

fn expansion_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let kinds = [LayerKind::Cnn, LayerKind::Fc, LayerKind::Gru, LayerKind::Lstm];
    let (mut slower, mut unstable, mut shrunk, mut moved) = (0, 0, 0, 0);
    for i in 0..200 {
        let kind = kinds[i % kinds.len()];
        let model = random_tree(kind, &mut rng);
        let config = random_config(kind, &mut rng);
        let (expanded, _) = expand_layer(&model, &config).unwrap();
        if model.predict(&expanded).unwrap() > model.predict(&config).unwrap() {
            slower += 1;
        }
        if expand_layer(&model, &expanded).unwrap().0 != expanded {
            unstable += 1;
        }
        let before = derive_features(&config).unwrap().values;
        let after = derive_features(&expanded).unwrap().values;
        if before.iter().zip(&after).any(|(a, b)| b < a) {
            shrunk += 1;
        }
        if expanded != config {
            moved += 1;
        }
    }
    verdict(
        slower == 0 && unstable == 0 && shrunk == 0,
        format!("200 pairs ({moved} expanded): {slower} slower, {unstable} not idempotent, {shrunk} shrank"),
    )
}

// ---------------------------------------------------------------- 7

fn ground_truth_models() -> ModelMap {
    SyntheticOracle::reference_device(0.0, 0).trees
}

fn random_instance(rng: &mut ChaCha8Rng) -> NetworkSpec {
    if rng.random_bool(0.5) {
        let h = [14, 24, 28][rng.random_range(0..3)];
        let mut ic = rng.random_range(3..=16);
        let layers = (0..3)
            .map(|_| {
                let oc = rng.random_range(16..=160);
                let layer = StructureConfig::cnn(h, h, 3, 3, 1, Padding::Same, ic, oc);
                ic = oc;
                layer
            })
            .collect();
        NetworkSpec::chained(layers)
    } else {
        let mut d = rng.random_range(32..=784);
        let layers = (0..3)
            .map(|_| {
                let o = rng.random_range(16..=1024);
                let layer = StructureConfig::fc(d, o);
                d = o;
                layer
            })
            .collect();
        NetworkSpec::chained(layers)
    }
}

fn width_grid(net: &NetworkSpec) -> Vec<Vec<u32>> {
    net.out_widths().iter().map(|&w| (1..=8).map(|k| (w * k).div_ceil(8)).collect()).collect()
}

fn compression_optimality() -> Verdict {
    let models = ground_truth_models();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut close, mut monotone) = (0, 0);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let net = random_instance(&mut rng);
        let grid = width_grid(&net);
        let base = network_time(&models, &net).unwrap();
        // loss and time terms of comparable size at lambda = 1
        let loss = WidthDeficitLoss::new(&net, base * rng.random_range(0.5..4.0));
        let greedy = greedy_compress(&loss, &models, &net, 1.0, &grid, 10_000).unwrap();
        let brute = brute_force_compress(&loss, &models, &net, 1.0, &grid).unwrap();
        let gap = (greedy.objective - brute.objective) / brute.objective;
        worst = worst.max(gap);
        if gap <= 0.05 {
            close += 1;
        }
        let times: Vec<f64> = [0.0, 0.1, 1.0, 10.0]
            .iter()
            .map(|&l| brute_force_compress(&loss, &models, &net, l, &grid).unwrap().time)
            .collect();
        if times.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }
    verdict(
        close >= 40 && monotone == 50,
        format!("greedy within 5% in {close}/50 (worst gap {:.2}%); time monotone in lambda in {monotone}/50", 100.0 * worst),
    )
}

// ---------------------------------------------------------------- 8

fn run(bin: &str, args: &[&str]) -> String {
    let out = Command::new(bin).args(args).output().expect("spawn layertime");
    assert!(out.status.success(), "layertime {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn end_to_end() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_layertime");
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("demo");
    let cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(demo.join("pipeline.json")).unwrap()).unwrap();
    let get = |k: &str| cfg[k].to_string().trim_matches('"').to_string();
    let work = tempfile::tempdir().unwrap();
    let path = |name: &str| work.path().join(name).to_string_lossy().into_owned();
    let network = demo.join("network.json").to_string_lossy().into_owned();
    let start = Instant::now();
    run(bin, &["plan", "--scope", &get("scope"), "--networks", &get("networks"), "--seed", &get("plan_seed"), "--out", &path("plan.jsonl")]);
    run(bin, &["synth", "--plan", &path("plan.jsonl"), "--noise", &get("noise"), "--seed", &get("synth_seed"), "--out", &path("profile.jsonl")]);
    run(bin, &["fit", "--dataset", &path("profile.jsonl"), "--seed", &get("fit_seed"), "--out", &path("models")]);
    run(bin, &["expand", "--model", &path("models"), "--network", &network, "--out", &path("expanded.json")]);
    run(
        bin,
        &[
            "compress", "--model", &path("models"), "--network", &network, "--lambda", &get("lambda"),
            "--loss-weight", &get("loss_weight"), "--grid-steps", &get("grid_steps"), "--budget", &get("budget"),
            "--out", &path("compressed.json"),
        ],
    );
    let elapsed = start.elapsed();

    let mut models = ModelMap::new();
    for entry in std::fs::read_dir(work.path().join("models")).unwrap() {
        let model = load_model(&std::fs::read(entry.unwrap().path()).unwrap()).unwrap();
        models.insert(model.kind, model);
    }
    let original = NetworkSpec::from_json(&std::fs::read(&network).unwrap()).unwrap();
    let compressed = NetworkSpec::from_json(&std::fs::read(path("compressed.json")).unwrap()).unwrap();
    let before = network_time(&models, &original).unwrap();
    let after = network_time(&models, &compressed).unwrap();
    let ratio = after / before;
    verdict(
        elapsed < Duration::from_secs(120) && ratio <= 0.5,
        format!(
            "{before:.3} ms -> {after:.3} ms ({:.1}%) at lambda {}, {:.1} s",
            100.0 * ratio,
            get("lambda"),
            elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("planted-model recovery", planted_recovery),
        ("NNLS correctness", nnls_correctness),
        ("time polynomial reproduction", polynomial_reproduction),
        ("safe-region derivation", safe_region_derivation),
        ("RNN time floor", rnn_floor),
        ("expansion properties", expansion_properties),
        ("compression optimality", compression_optimality),
        ("end-to-end pipeline", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
            });
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} criterion {} ({name}): {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
