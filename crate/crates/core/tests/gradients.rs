//! Reverse-mode gradients against central finite differences.

mod common;

use common::gradients;

#[test]
fn elementwise_primitives() {
    gradients::elementwise_primitives();
}

#[test]
fn reductions_and_matrix_primitives() {
    gradients::reductions_and_matrix_primitives();
}

#[test]
fn subgradient_conventions_at_kinks() {
    gradients::subgradient_conventions_at_kinks();
}

#[test]
fn mlp_parameters_and_inputs() {
    gradients::mlp_parameters_and_inputs();
}

#[test]
fn mlp_parameter_gradient_through_rollout() {
    gradients::mlp_parameter_gradient_through_rollout();
}

#[test]
fn objective_assemblers() {
    gradients::objective_assemblers();
}

#[test]
fn projection_layer_off_kinks() {
    gradients::projection_layer_off_kinks();
}

#[test]
fn end_to_end_every_strategy() {
    gradients::end_to_end_every_strategy();
}

#[test]
fn end_to_end_label_aware_policy() {
    gradients::end_to_end_label_aware_policy();
}
