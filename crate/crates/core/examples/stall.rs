use coprou::coprou::UncertaintyMode;
use coprou::geometry::Pose6;
use coprou::losses::{LossWeights, ObjectiveConfig};
use coprou::synthopt::*;

fn main() {
    let spec = SceneSpec::default();
    let scene = generate_scene(0, &spec).unwrap();
    let cfg = ObjectiveConfig::default();
    println!("true pose: rot {:?} trans {:?}", scene.true_pose.rotation, scene.true_pose.translation);
    let init = OptimState::init(64, 64, 0.1, coprou::SIGMA_FLOOR);
    let schedule = Schedule { steps: 480, lr_pose: 1e-2, lr_sigma: 0.3, lr_decay: 0.01, bidirectional: true };
    let (state, report) = optimize(&scene, &init, LossWeights::default(), UncertaintyMode::Combined, &schedule).unwrap();
    println!("stalled: rot {:?} trans {:?}", state.pose.rotation, state.pose.translation);
    println!("rot_err {:.4} trans_err {:.4} final_loss {:.6}", report.rotation_error_deg, report.translation_rel_error, report.final_loss);
    // Evaluate loss at the true pose with the stalled sigma fields.
    let at_truth = objective_value(&scene, &scene.true_pose, &state.log_sigma_tgt, &state.log_sigma_ref, &cfg, true).unwrap();
    println!("loss at stall pose {:.6}, at truth with same sigmas {:.6}", report.final_loss, at_truth);
    // Gradient norm at the stall.
    let (_, g, _, _) = objective_with_gradients(&scene, &state.pose, &state.log_sigma_tgt, &state.log_sigma_ref, &cfg, true).unwrap();
    println!("pose grad at stall: {:?}", g);
    // Re-optimize starting from truth: does it stay?
    let mut init2 = OptimState::init(64, 64, 0.1, coprou::SIGMA_FLOOR);
    init2.pose = scene.true_pose;
    let (st2, rep2) = optimize(&scene, &init2, LossWeights::default(), UncertaintyMode::Combined, &schedule).unwrap();
    println!("from truth: rot_err {:.5} trans_err {:.5} loss {:.6}", rep2.rotation_error_deg, rep2.translation_rel_error, rep2.final_loss);
    let _ = st2;
    // Loss trajectory tail of the stalled run.
    let h = &state.loss_history;
    println!("history: first {:.4}, mid {:.4}, last {:.4}", h[0], h[h.len()/2], h[h.len()-1]);
}
