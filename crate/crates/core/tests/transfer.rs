//! Output distances between atlas sizes shrink as the atlas refines.

use covnn::synth::CortexSpec;
use covnn::training::TrainConfig;
use covnn::transfer::{transfer_experiment, TransferSetup};
use covnn::vnn::{Nonlinearity, VnnConfig};

#[test]
fn matched_output_distance_shrinks_with_refinement() {
    // a large cohort keeps covariance estimation error well below the
    // discretization error at every size
    let setup = TransferSetup {
        spec: CortexSpec::default(),
        dims: vec![25, 50, 100, 200],
        train_dims: vec![25],
        vnn: VnnConfig {
            taps_per_layer: vec![2, 3],
            widths: vec![1, 4, 4],
            nonlinearity: Nonlinearity::Relu,
            linear_final_layer: false,
        },
        train: TrainConfig { epochs: 20, learning_rate: 1e-2, zscore_features: true, ..TrainConfig::default() },
        n_train: 2000,
        n_test: 20,
        n_matched: 20,
        age_range: (50.0, 90.0),
        seed: 11,
    };
    let r = transfer_experiment(&setup).unwrap();
    let d: Vec<f64> =
        [(25, 50), (50, 100), (100, 200)].iter().map(|&(a, b)| r.distance(25, a, b).unwrap().median).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
}
