//! Synthetic cohort through training, age-bias correction, regional
//! explanations and group statistics.

use covnn::brainage::{delta_age_report, fit_bias, group_stats};
use covnn::stats::pearson;
use covnn::synth::{sample_design, CohortDesign, CortexSpec, DiseaseSpec, DISEASE_GROUP, HEALTHY_GROUP};
use covnn::training::{evaluate, train, training_covariance, TrainConfig};
use covnn::vnn::{Nonlinearity, VnnConfig, VnnModel};

#[test]
fn small_cohort_end_to_end() {
    let design =
        CohortDesign { regions: 20, n_train: 240, n_test_healthy: 80, n_test_disease: 80, age_range: (50.0, 90.0) };
    let disease = DiseaseSpec::default();
    let (train_set, test_set) = sample_design(&CortexSpec::default(), &disease, &design, 5).unwrap();
    let cfg = TrainConfig { epochs: 40, learning_rate: 1e-2, zscore_features: true, seed: 5, ..TrainConfig::default() };
    let vnn = VnnConfig {
        taps_per_layer: vec![2, 3],
        widths: vec![1, 8, 8],
        nonlinearity: Nonlinearity::Relu,
        linear_final_layer: false,
    };

    let (cov, standardizer) = training_covariance(&train_set, &cfg, None).unwrap();
    let report = train(VnnModel::init(vnn, 5).unwrap(), &cov, &train_set, &cfg).unwrap();
    assert!(report.best_validation_mae < report.initial_validation_mae);
    let s = standardizer.unwrap();
    let train_z = s.apply(&train_set).unwrap();
    let test_z = s.apply(&test_set).unwrap();

    let fitted = evaluate(&report.model, &cov, &train_z).unwrap();
    let bias = fit_bias(train_z.ages(), &fitted.predictions).unwrap();
    let on_train = delta_age_report(&report.model, &cov, &bias, &train_z, cov.dim()).unwrap();
    let corr = pearson(&on_train.delta_ages(HEALTHY_GROUP), train_z.ages()).unwrap();
    assert!(corr.r.abs() < 1e-8, "corr {}", corr.r);

    let on_test = delta_age_report(&report.model, &cov, &bias, &test_z, cov.dim()).unwrap();
    for s in &on_test.subjects {
        let sum: f64 = s.residuals.iter().sum();
        assert!(sum.abs() < 1e-9);
        if !s.zero_residual {
            let energy: f64 = s.aligned_coeffs.iter().map(|c| c * c).sum();
            assert!((energy - 1.0).abs() < 1e-9);
        }
    }

    let stats = group_stats(&on_test, HEALTHY_GROUP, DISEASE_GROUP).unwrap();
    let contrast = stats.delta_age.as_ref().unwrap();
    assert!(contrast.mean_comparison > contrast.mean_reference);
    assert!(contrast.test.p_greater < 0.05);
    let planted = disease.affected_regions(design.regions);
    let top: Vec<usize> = stats.ranking().into_iter().take(planted.len() + 3).collect();
    assert!(planted.iter().filter(|r| top.contains(r)).count() >= planted.len() - 1, "top {top:?} planted {planted:?}");
}
