use layertime_core::harness::{generate_plan, Scope, SyntheticOracle};
use layertime_core::timetree::{dataset_mape, ConditionKind};
use layertime_core::{fit_tree, Dataset, FitParams, LayerKind};

fn cnn_dataset(oracle: &SyntheticOracle, n: usize, seed: u64) -> Dataset {
    let scope = Scope::named("cnn").unwrap();
    let plan = generate_plan(&scope, n.div_ceil(6), seed).unwrap();
    let mut ds = Dataset::new(LayerKind::Cnn);
    for entry in plan.into_iter().take(n) {
        ds.push(entry.config, oracle.synth_time(&entry.config).unwrap().time_ms).unwrap();
    }
    ds
}

#[test]
fn planted_cnn_root_is_recovered() {
    let oracle = SyntheticOracle::reference_device(0.01, 7);
    let train = cnn_dataset(&oracle, 1000, 1);
    let test = cnn_dataset(&oracle, 300, 2);
    let model = fit_tree(&train, &FitParams::default()).unwrap();
    let root = model.root().condition.unwrap();
    assert_eq!((root.feature, root.tau, root.kind), (4, 4.0, ConditionKind::Multiple));
    let left = model.node(model.root().left.unwrap()).condition.unwrap();
    assert_eq!((left.feature, left.tau), (5, 4.0));
    let mape = dataset_mape(&model, &test).unwrap();
    assert!(mape <= 0.05, "{mape}");
}
