use coprou::coprou::UncertaintyMode;
use coprou::losses::LossWeights;
use coprou::synthopt::*;
use std::time::Instant;

fn main() {
    let spec = SceneSpec::default();
    let variants = [
        ("A: ls0.05 lp1e-2 d0.01 s480", Schedule { steps: 480, lr_pose: 1e-2, lr_sigma: 0.05, lr_decay: 0.01, bidirectional: true }),
        ("B: ls0.02 lp1e-2 d0.01 s480", Schedule { steps: 480, lr_pose: 1e-2, lr_sigma: 0.02, lr_decay: 0.01, bidirectional: true }),
        ("C: ls0.10 lp1e-2 d0.01 s480", Schedule { steps: 480, lr_pose: 1e-2, lr_sigma: 0.10, lr_decay: 0.01, bidirectional: true }),
    ];
    for (name, schedule) in variants {
        println!("--- {name}");
        for seed in 0..6u64 {
            let t0 = Instant::now();
            let scene = generate_scene(seed, &spec).unwrap();
            let init = OptimState::init(spec.width, spec.height, 0.1, coprou::SIGMA_FLOOR);
            match optimize(&scene, &init, LossWeights::default(), UncertaintyMode::Combined, &schedule) {
                Ok((_, report)) => println!(
                    "  seed {seed}: rot {:.5} deg, trans {:.5} rel, {:.1}s",
                    report.rotation_error_deg, report.translation_rel_error, t0.elapsed().as_secs_f64()
                ),
                Err(e) => println!("  seed {seed}: ERROR {e}"),
            }
        }
    }
}
