use coprou::coprou::UncertaintyMode;
use coprou::losses::LossWeights;
use coprou::synthopt::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("static");
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(320);

    let spec = SceneSpec::default();
    match mode {
        "static" => {
            for seed in 0..5u64 {
                let t0 = Instant::now();
                let scene = generate_scene(seed, &spec).unwrap();
                let init = OptimState::init(spec.width, spec.height, 0.1, coprou::SIGMA_FLOOR);
                let schedule = Schedule { steps, ..Default::default() };
                match optimize(&scene, &init, LossWeights::default(), UncertaintyMode::Combined, &schedule) {
                    Ok((_, report)) => println!(
                        "seed {seed}: rot {:.5} deg, trans {:.5} rel, loss {:.4} -> {:.4}, {:.1}s",
                        report.rotation_error_deg,
                        report.translation_rel_error,
                        report.initial_loss,
                        report.final_loss,
                        t0.elapsed().as_secs_f64()
                    ),
                    Err(e) => println!("seed {seed}: ERROR {e}"),
                }
            }
        }
        "dynamic" => {
            for seed in 0..10u64 {
                let scene = generate_scene(seed, &spec).unwrap();
                let patch = PatchSpec::centered(spec.width, spec.height, 0.2, seed.wrapping_add(1000), [5.0, 0.0]);
                let scene = inject_dynamic_object(&scene, &patch).unwrap();
                let init = OptimState::init(spec.width, spec.height, 0.1, coprou::SIGMA_FLOOR);
                let schedule = Schedule { steps, ..Default::default() };
                let mut line = format!("seed {seed}:");
                let mut tr = [0.0f64; 2];
                for (i, m) in [UncertaintyMode::Combined, UncertaintyMode::SingleTarget].iter().enumerate() {
                    match optimize(&scene, &init, LossWeights::default(), *m, &schedule) {
                        Ok((_, report)) => {
                            tr[i] = report.translation_rel_error;
                            let stats = report.sigma_stats;
                            line += &format!(
                                " [{:?}: trans {:.5}, rot {:.4}, med_dyn {:.4} med_stat {:.4}]",
                                m,
                                report.translation_rel_error,
                                report.rotation_error_deg,
                                stats.median_dynamic.unwrap_or(f64::NAN),
                                stats.median_static
                            );
                        }
                        Err(e) => line += &format!(" [{m:?}: ERROR {e}]"),
                    }
                }
                line += if tr[0] <= tr[1] { "  COMBINED<=SINGLE" } else { "  WORSE" };
                println!("{line}");
            }
        }
        _ => eprintln!("unknown mode"),
    }
}
