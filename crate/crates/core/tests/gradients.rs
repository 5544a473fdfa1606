//! The gradient contract: every layer primitive and the full two-head
//! graph agree with central finite differences in 64-bit to better than
//! 1e-4 relative error, across randomized shapes.

use gplac_core::gradcheck::layer_suite;

#[test]
fn every_primitive_and_the_full_graph_pass_finite_differences() {
    let report = layer_suite(2024, 20).expect("suite runs");
    let mut failed = Vec::new();
    for check in &report {
        println!(
            "gradcheck {:<18} trials {:>2}  max_rel_err {:.3e}",
            check.name, check.trials, check.max_rel_err
        );
        if !(check.max_rel_err < 1e-4) {
            failed.push(check.name);
        }
    }
    assert!(failed.is_empty(), "layers over tolerance: {failed:?}");
    // the suite must cover the primitives and the composed graph
    let names: Vec<&str> = report.iter().map(|c| c.name).collect();
    for want in [
        "conv2d",
        "affine",
        "relu",
        "sigmoid",
        "concat",
        "batch_norm_train",
        "batch_norm_eval",
        "dropout_train",
        "spatial_softmax",
        "expected_points",
        "attention_layer",
        "task_loss",
        "bce_loss",
        "full_graph",
    ] {
        assert!(names.contains(&want), "missing {want}");
    }
}

#[test]
fn single_sample_combined_loss_matches_finite_differences() {
    // The one-sample end-to-end case, on its own seed.
    let report = layer_suite(77, 3).expect("suite runs");
    let full = report.iter().find(|c| c.name == "full_graph").unwrap();
    assert!(full.max_rel_err < 1e-4, "{}", full.max_rel_err);
}
