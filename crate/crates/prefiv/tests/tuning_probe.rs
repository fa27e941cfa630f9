//! Scratch probe for inspecting scenario tables while tuning. Not part of
//! the suite: run with `--ignored --nocapture`.

use prefiv::methods::MethodId;
use prefiv::pipeline::PipelineOptions;
use prefiv::sim::scenario::{run_scenario, Generator, Missingness, ScenarioConfig};

fn print_cell(generator: Generator, n_j: usize, missingness: Missingness, n_reps: usize) {
    let mut config = ScenarioConfig::standard(generator, n_j, missingness, 20_260_101);
    config.n_reps = n_reps;
    let t0 = std::time::Instant::now();
    let result = run_scenario(&config, &MethodId::standard_eleven(), PipelineOptions::default())
        .unwrap();
    println!(
        "== {} reps={} elapsed={:.1?} failures={} ==",
        config.cell_label(),
        n_reps,
        t0.elapsed(),
        result.failures.len()
    );
    for row in &result.metrics {
        let f = if row.mean_f.is_nan() { "      -".to_string() } else { format!("{:9.1}", row.mean_f) };
        println!(
            "{:>14}  n={:3} fail={:2}  bias={:+.4}  mcse={:.4}  cov={:5.1}  rmse={:.4}  F={}",
            row.estimator.to_string(),
            row.n_reps,
            row.n_failed,
            row.bias,
            row.mcse,
            row.coverage,
            row.rmse,
            f
        );
    }
    for failure in result.failures.iter().take(5) {
        println!("  failure rep {} {}: {}", failure.rep, failure.estimator, failure.message);
    }
}

#[test]
#[ignore]
fn probe_slopes() {
    use prefiv::sim::calibrate::{calibrate, CalibrationTargets};
    let gxu: f64 = std::env::var("PREFIV_GXU").unwrap().parse().unwrap();
    let gyu: f64 = std::env::var("PREFIV_GYU").unwrap().parse().unwrap();
    let gyw: Option<f64> = std::env::var("PREFIV_GYW").ok().map(|v| v.parse().unwrap());
    let omega0: Option<f64> = std::env::var("PREFIV_OMEGA0").ok().map(|v| v.parse().unwrap());
    let reps: usize = std::env::var("PREFIV_REPS").map_or(30, |v| v.parse().unwrap());
    println!("### slopes gxu={gxu} gyu={gyu} gyw={gyw:?} omega0={omega0:?} reps={reps}");
    let methods = [
        MethodId::AllProp,
        MethodId::AllDichMean,
        MethodId::AllDichMedian,
        MethodId::Epp,
        MethodId::EppRirs,
        MethodId::Star,
    ];
    for (generator, n_j) in [(Generator::A, 408), (Generator::B, 408), (Generator::A, 24)] {
        let mut config = ScenarioConfig::standard(generator, n_j, Missingness::None, 20_260_101);
        config.coefficients.treatment_a.u = gxu;
        config.coefficients.treatment_b.u = gxu;
        config.coefficients.outcome.u = gyu;
        if let Some(gyw) = gyw {
            config.coefficients.outcome.w1 = gyw;
            config.coefficients.outcome.w2 = gyw;
        }
        if let Some(v0) = omega0 {
            config.coefficients.treatment_b.omega.var_intercept = v0;
        }
        let (calibrated, _) =
            calibrate(&config, &CalibrationTargets::standard(generator)).unwrap();
        config.coefficients = calibrated;
        config.n_reps = reps;
        let t0 = std::time::Instant::now();
        let result = run_scenario(&config, &methods, PipelineOptions::default()).unwrap();
        println!(
            "== {} reps={} elapsed={:.1?} failures={} ==",
            config.cell_label(),
            reps,
            t0.elapsed(),
            result.failures.len()
        );
        for row in &result.metrics {
            let f = if row.mean_f.is_nan() {
                "      -".to_string()
            } else {
                format!("{:9.1}", row.mean_f)
            };
            println!(
                "{:>14}  n={:3} fail={:2}  bias={:+.4}  mcse={:.4}  cov={:5.1}  rmse={:.4}  F={}",
                row.estimator.to_string(),
                row.n_reps,
                row.n_failed,
                row.bias,
                row.mcse,
                row.coverage,
                row.rmse,
                f
            );
        }
    }
}

#[test]
#[ignore]
fn probe_timing() {
    let mut config = ScenarioConfig::standard(Generator::A, 408, Missingness::None, 20_260_101);
    config.n_reps = 2;
    for method in MethodId::standard_eleven() {
        let t0 = std::time::Instant::now();
        let _ = run_scenario(&config, &[method], PipelineOptions::default()).unwrap();
        println!("{method:>14}: {:.2?} for 2 reps (incl. generation + benchmarks)", t0.elapsed());
    }
    let t0 = std::time::Instant::now();
    let _ = run_scenario(&config, &[], PipelineOptions::default()).unwrap();
    println!("{:>14}: {:.2?} for 2 reps", "benchmarks", t0.elapsed());
}

#[test]
#[ignore]
fn probe_a_408() {
    print_cell(Generator::A, 408, Missingness::None, 50);
}

#[test]
#[ignore]
fn probe_a_24() {
    print_cell(Generator::A, 24, Missingness::None, 50);
}

#[test]
#[ignore]
fn probe_a_108() {
    print_cell(Generator::A, 108, Missingness::None, 50);
}

#[test]
#[ignore]
fn probe_b_408() {
    print_cell(Generator::B, 408, Missingness::None, 50);
}

#[test]
#[ignore]
fn probe_b_24() {
    print_cell(Generator::B, 24, Missingness::None, 50);
}

#[test]
#[ignore]
fn probe_b_108() {
    print_cell(Generator::B, 108, Missingness::None, 50);
}

#[test]
#[ignore]
fn probe_a_408_mnar() {
    print_cell(Generator::A, 408, Missingness::Mnar, 50);
}

#[test]
#[ignore]
fn probe_b_408_mnar() {
    print_cell(Generator::B, 408, Missingness::Mnar, 50);
}

#[test]
#[ignore]
fn probe_a_408_mcar() {
    print_cell(Generator::A, 408, Missingness::Mcar, 50);
}
