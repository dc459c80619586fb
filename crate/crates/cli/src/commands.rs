use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use layertime_core::analysis::{analyze as analyze_model, simplify_model, AnalysisReport};
use layertime_core::harness::{
    generate_plan, ingest_profile, read_plan, write_plan, write_profile, ProfileSample, Scope, SyntheticOracle,
};
use layertime_core::steering::{
    brute_force_compress, expand_network, greedy_compress, model_for, network_time, rnn_time_floor,
    zero_pad_plan, CommandEvaluator, LossEvaluator, ModelMap, NetworkSpec, WidthDeficitLoss,
};
use layertime_core::timetree::dataset_mape;
use layertime_core::{
    fit_tree, load_model, save_model, ConvGeometry, Dataset, Error, FitParams, LayerKind, StructureConfig,
};

use crate::{
    AnalyzeArgs, CompressArgs, ExpandArgs, Failure, FitArgs, FloorArgs, OracleArgs, PlanArgs, PredictArgs,
    SynthArgs,
};

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Core(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))
}

fn write(path: &Path, bytes: &[u8]) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn ms(t: f64) -> String {
    format!("{t:.3} ms")
}

fn model_file_name(kind: LayerKind) -> String {
    format!("{}.model.json", kind.as_str().to_lowercase())
}

/// A single model file, or every `*.model.json` in a directory.
fn load_models(path: &Path) -> Result<ModelMap, Failure> {
    let mut models = ModelMap::new();
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".model.json")))
            .collect();
        files.sort();
        for file in files {
            let model = load_model(&read(&file)?)?;
            if models.insert(model.kind, model).is_some() {
                return Err(Failure::Usage(format!("{} holds two models of the same kind", path.display())));
            }
        }
        if models.is_empty() {
            return Err(Failure::Core(Error::MalformedModel(format!("no *.model.json files in {}", path.display()))));
        }
    } else {
        let model = load_model(&read(path)?)?;
        models.insert(model.kind, model);
    }
    Ok(models)
}

fn load_network(path: &Path) -> Result<NetworkSpec, Failure> {
    Ok(NetworkSpec::from_json(&read(path)?)?)
}

pub fn plan(a: PlanArgs) -> CmdResult {
    let scope = Scope::named(&a.scope)?;
    let plan = generate_plan(&scope, a.networks, a.seed)?;
    let mut buf = Vec::new();
    write_plan(&mut buf, &plan)?;
    write(&a.out, &buf)?;
    println!("plan: {} layers from {} networks -> {}", plan.len(), a.networks, a.out.display());
    Ok(())
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let oracle = match &a.oracle {
        Some(path) => SyntheticOracle::from_json(&read(path)?)?,
        None => SyntheticOracle::reference_device(a.noise, a.seed),
    };
    let plan = read_plan(BufReader::new(File::open(&a.plan)?))?;
    let samples = plan.iter().map(|e| oracle.synth_time(&e.config)).collect::<Result<Vec<ProfileSample>, _>>()?;
    let file = File::create(&a.out)?;
    let mut out = BufWriter::new(file);
    write_profile(&mut out, &samples)?;
    out.flush()?;
    println!("synth: {} samples -> {}", samples.len(), a.out.display());
    Ok(())
}

pub fn oracle(a: OracleArgs) -> CmdResult {
    let oracle = SyntheticOracle::new(a.noise, a.seed, SyntheticOracle::reference_device(0.0, 0).trees.into_values())?;
    write(&a.out, &oracle.to_json())?;
    println!("oracle: {} kinds -> {}", oracle.trees.len(), a.out.display());
    Ok(())
}

/// Seeded split of each kind's records into (train, test).
fn holdout_split(dataset: &Dataset, fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Dataset, Dataset), Failure> {
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_test = ((fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let pick = |idx: &[usize]| {
        Dataset::from_samples(dataset.kind(), idx.iter().map(|&i| dataset.samples()[i].clone()).collect())
    };
    Ok((pick(&order[n_test..])?, pick(&order[..n_test])?))
}

pub fn fit(a: FitArgs) -> CmdResult {
    if !(0.0..1.0).contains(&a.holdout) {
        return Err(Failure::Usage(format!("--holdout must be in [0, 1), got {}", a.holdout)));
    }
    let mut params = FitParams::default();
    if let Some(v) = a.min_leaf {
        params.min_leaf = v;
    }
    if let Some(v) = a.mape_stop {
        params.mape_stop = v;
    }
    if let Some(v) = a.max_depth {
        params.max_depth = v;
    }
    params.noise_seed = a.seed;
    params.validate()?;
    let set = ingest_profile(&a.dataset)?;
    if set.is_empty() {
        return Err(Failure::Core(Error::EmptyDataset));
    }
    fs::create_dir_all(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for (kind, dataset) in &set.datasets {
        let (train, test) = holdout_split(dataset, a.holdout, &mut rng)?;
        if train.len() < params.min_leaf {
            eprintln!(
                "warning: {kind}: {} training records is below min_leaf {}; fitting a single leaf",
                train.len(),
                params.min_leaf
            );
        }
        let model = fit_tree(&train, &params)?;
        let path = a.out.join(model_file_name(*kind));
        write(&path, &save_model(&model))?;
        let test_mape = if test.is_empty() {
            "n/a".to_string()
        } else {
            format!("{:.1}%", 100.0 * dataset_mape(&model, &test)?)
        };
        println!(
            "{kind}: nodes={} leaves={} depth={} train={} test={} test_mape={test_mape} -> {}",
            model.nodes.len(),
            model.leaf_count(),
            model.depth(),
            train.len(),
            test.len(),
            path.display()
        );
    }
    Ok(())
}

fn parse_config(text: &str) -> Result<StructureConfig, Failure> {
    let bytes = match text.strip_prefix('@') {
        Some(path) => read(Path::new(path))?,
        None => text.as_bytes().to_vec(),
    };
    let bad = |e: String| Failure::Usage(format!("bad --config: {e}"));
    let mut value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
    // `{"kind": .., fields..}`, or profile style `{"layer_type": .., "config": {..}}` / flat.
    let config = match value.as_object_mut().and_then(|o| o.remove("layer_type")) {
        Some(kind) => {
            let kind: LayerKind = serde_json::from_value(kind).map_err(|e| bad(e.to_string()))?;
            let fields = match value.get("config") {
                Some(inner) => inner.clone(),
                None => value,
            };
            StructureConfig::from_fields(kind, fields).map_err(|e| bad(e.to_string()))?
        }
        None => serde_json::from_value(value).map_err(|e| bad(e.to_string()))?,
    };
    config.validate()?;
    Ok(config)
}

pub fn predict(a: PredictArgs) -> CmdResult {
    let models = load_models(&a.model)?;
    let config = parse_config(&a.config)?;
    let t = model_for(&models, config.kind())?.predict(&config)?;
    println!("{}", ms(t));
    Ok(())
}

pub fn analyze(a: AnalyzeArgs) -> CmdResult {
    let models = load_models(&a.model)?;
    let geometries = a
        .geometry
        .iter()
        .map(|g| g.parse::<ConvGeometry>())
        .collect::<Result<Vec<_>, _>>()?;
    let profile = a.dataset.as_deref().map(ingest_profile).transpose()?;
    let mut reports: Vec<AnalysisReport> = Vec::new();
    for (kind, model) in &models {
        let dataset = profile.as_ref().and_then(|p| p.get(*kind));
        reports.push(analyze_model(model, dataset, &geometries)?);
    }
    let mut text = serde_json::to_vec_pretty(&reports).map_err(Error::from)?;
    text.push(b'\n');
    match &a.out {
        Some(path) => write(path, &text)?,
        None => std::io::stdout().write_all(&text)?,
    }
    if let Some(path) = &a.simplified {
        let cnn = model_for(&models, LayerKind::Cnn)?;
        let regions: Vec<_> = reports.iter().flat_map(|r| r.regions.iter().cloned()).collect();
        let simplified = simplify_model(cnn, &regions)?;
        write(path, &save_model(&simplified))?;
        eprintln!("simplified: {} snap rules -> {}", simplified.snap_rules.len(), path.display());
    }
    Ok(())
}

pub fn expand(a: ExpandArgs) -> CmdResult {
    let models = load_models(&a.model)?;
    let net = load_network(&a.network)?;
    let (expanded, trace) = expand_network(&models, &net)?;
    for (i, (before, after)) in net.layers.iter().zip(&expanded.layers).enumerate() {
        let model = model_for(&models, before.kind())?;
        println!(
            "layer {i}: {} -> {}  {} -> {}",
            before,
            after,
            ms(model.predict(before)?),
            ms(model.predict(after)?)
        );
    }
    if trace.guard_fired {
        eprintln!("note: resolved network was predicted slower; kept the input");
    }
    println!("total: {} -> {}", ms(trace.time_before), ms(trace.time_after));
    if let Some(path) = &a.out {
        write(path, &expanded.to_json())?;
    }
    if let Some(path) = &a.trace {
        let mut text = serde_json::to_vec_pretty(&trace).map_err(Error::from)?;
        text.push(b'\n');
        write(path, &text)?;
    }
    if let Some(path) = &a.pad_plan {
        let plan = zero_pad_plan(&net, &expanded)?;
        let mut text = serde_json::to_vec_pretty(&plan).map_err(Error::from)?;
        text.push(b'\n');
        write(path, &text)?;
    }
    Ok(())
}

/// `ceil(k·w/steps)` for k = 1..=steps.
fn width_grid(net: &NetworkSpec, steps: u32, free_output: bool) -> Vec<Vec<u32>> {
    let last = net.len().saturating_sub(1);
    net.out_widths()
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            if i == last && !free_output {
                return vec![w];
            }
            let mut g: Vec<u32> =
                (1..=steps).map(|k| (u64::from(w) * u64::from(k)).div_ceil(u64::from(steps)).max(1) as u32).collect();
            g.dedup();
            g
        })
        .collect()
}

pub fn compress(a: CompressArgs) -> CmdResult {
    if a.grid_steps == 0 {
        return Err(Failure::Usage("--grid-steps must be >= 1".into()));
    }
    let models = load_models(&a.model)?;
    let net = load_network(&a.network)?;
    let evaluator: Box<dyn LossEvaluator> = match &a.evaluator_cmd {
        Some(cmd) => Box::new(CommandEvaluator { command: cmd.clone(), theta: a.theta.clone() }),
        None => Box::new(WidthDeficitLoss::new(&net, a.loss_weight)),
    };
    let grid = width_grid(&net, a.grid_steps, a.free_output);
    let outcome = if a.exhaustive {
        brute_force_compress(evaluator.as_ref(), &models, &net, a.lambda, &grid)?
    } else {
        greedy_compress(evaluator.as_ref(), &models, &net, a.lambda, &grid, a.budget)?
    };
    for (i, (before, after)) in net.layers.iter().zip(&outcome.network.layers).enumerate() {
        println!("layer {i}: {} -> {}", before, after);
    }
    println!("before: {}", ms(network_time(&models, &net)?));
    println!("after: {}", ms(outcome.time));
    println!("objective: {:.6} -> {:.6}", outcome.start_objective, outcome.objective);
    println!("evaluator calls: {}{}", outcome.evaluator_calls, if outcome.budget_exhausted { " (budget exhausted)" } else { "" });
    if let Some(path) = &a.out {
        write(path, &outcome.network.to_json())?;
    }
    Ok(())
}

pub fn floor(a: FloorArgs) -> CmdResult {
    let models = load_models(&a.model)?;
    let net = load_network(&a.network)?;
    let mut per_kind = BTreeMap::new();
    for kind in [LayerKind::Gru, LayerKind::Lstm] {
        if net.layers.iter().any(|l| l.kind() == kind) {
            per_kind.insert(kind, rnn_time_floor(model_for(&models, kind)?, &net)?);
        }
    }
    for (kind, t) in &per_kind {
        println!("{kind}: {}", ms(*t));
    }
    println!("floor: {}", ms(per_kind.values().sum()));
    Ok(())
}
