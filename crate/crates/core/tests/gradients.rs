mod common;

use common::grad_suite as g;
use common::GradCheck;
use iscm_core::models::CrossmodalMode;

fn assert_passes(name: &str, c: GradCheck) {
    assert!(c.passed(), "{name}: worst relative error {:.3e} over {} entries", c.worst, c.checked);
}

#[test]
fn linear_layer() {
    assert_passes("linear", g::linear());
}

#[test]
fn conv_layer() {
    assert_passes("conv2d", g::conv2d());
}

#[test]
fn mlp_with_each_output_activation() {
    assert_passes("mlp", g::mlp());
}

#[test]
fn visual_encoder() {
    assert_passes("encoder", g::encoder());
}

#[test]
fn forward_model() {
    assert_passes("forward", g::forward_model());
}

#[test]
fn inverse_model() {
    assert_passes("inverse", g::inverse_model());
}

#[test]
fn crossmodal_heads() {
    assert_passes("discriminator", g::crossmodal_head(CrossmodalMode::Discriminator));
    assert_passes("regressor", g::crossmodal_head(CrossmodalMode::Regressor));
}

#[test]
fn actor_and_critic() {
    assert_passes("actor", g::actor());
    assert_passes("critic", g::critic());
}

#[test]
fn weighted_discrimination_loss() {
    assert_passes("discrimination loss", g::discrimination_loss());
}

#[test]
fn encoder_objectives() {
    assert_passes("vision-only", g::objective_check(None));
    assert_passes("discriminator", g::objective_check(Some(CrossmodalMode::Discriminator)));
    assert_passes("regressor", g::objective_check(Some(CrossmodalMode::Regressor)));
}

#[test]
fn suite_reports_worst_errors() {
    for (name, c) in g::all() {
        eprintln!("{name:<26} worst {:.2e} over {} entries", c.worst, c.checked);
        assert!(c.checked >= 5, "{name}");
    }
}
