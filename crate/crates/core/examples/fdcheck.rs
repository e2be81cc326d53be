use coprou::coprou::UncertaintyMode;
use coprou::field::ScalarField;
use coprou::geometry::Pose6;
use coprou::losses::{LossWeights, ObjectiveConfig};
use coprou::synthopt::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let spec = SceneSpec { width: 32, height: 32, ..Default::default() };
    let scene = generate_scene(42, &spec).unwrap();
    let cfg = ObjectiveConfig { weights: LossWeights::default(), mode: UncertaintyMode::Combined, ..Default::default() };
    // Pose displaced from truth.
    let mut pose = scene.true_pose;
    pose.rotation[0] += 0.003; pose.rotation[2] -= 0.002;
    pose.translation[1] += 0.02; pose.translation[0] -= 0.015;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let lt = ScalarField::from_fn(32, 32, 1, |_, _, _| rng.random_range(-2.5..-1.5));
    let lr = ScalarField::from_fn(32, 32, 1, |_, _, _| rng.random_range(-2.5..-1.5));

    for bidir in [false, true] {
        let (_, pose_grad, gt, gr) = objective_with_gradients(&scene, &pose, &lt, &lr, &cfg, bidir).unwrap();
        let h = 1e-4;
        println!("bidirectional={bidir}");
        for lane in 0..6 {
            let mut pp = pose; let mut pm = pose;
            if lane < 3 { pp.rotation[lane] += h; pm.rotation[lane] -= h; }
            else { pp.translation[lane-3] += h; pm.translation[lane-3] -= h; }
            let fp = objective_value(&scene, &pp, &lt, &lr, &cfg, bidir).unwrap();
            let fm = objective_value(&scene, &pm, &lt, &lr, &cfg, bidir).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let a = pose_grad[lane];
            println!("  pose[{lane}]: analytic {a:+.9e} fd {fd:+.9e} rel {:.2e}", (a - fd).abs() / a.abs().max(fd.abs()));
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..4 {
            let x = rng2.random_range(4..28usize); let y = rng2.random_range(4..28usize);
            for (name, field, grad) in [("tgt", &lt, &gt), ("ref", &lr, &gr)] {
                let mut fp_f = field.clone(); fp_f.set(x, y, 0, field.at(x, y) + h);
                let mut fm_f = field.clone(); fm_f.set(x, y, 0, field.at(x, y) - h);
                let (fp, fm) = if name == "tgt" {
                    (objective_value(&scene, &pose, &fp_f, &lr, &cfg, bidir).unwrap(),
                     objective_value(&scene, &pose, &fm_f, &lr, &cfg, bidir).unwrap())
                } else {
                    (objective_value(&scene, &pose, &lt, &fp_f, &cfg, bidir).unwrap(),
                     objective_value(&scene, &pose, &lt, &fm_f, &cfg, bidir).unwrap())
                };
                let fd = (fp - fm) / (2.0 * h);
                let a = grad.at(x, y);
                println!("  sigma_{name}[{x},{y}]: analytic {a:+.6e} fd {fd:+.6e} rel {:.2e}", (a - fd).abs() / a.abs().max(fd.abs()).max(1e-300));
            }
        }
    }
}
