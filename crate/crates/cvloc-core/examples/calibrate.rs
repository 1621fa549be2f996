//! Scratch calibration sweeps used to pick the synthetic-city constants
//! baked into the integration tests. Run phases individually:
//!
//! ```text
//! cargo run --release --example calibrate -- recall
//! cargo run --release --example calibrate -- fusion 0.6
//! cargo run --release --example calibrate -- decouple
//! cargo run --release --example calibrate -- init
//! ```

use cvloc_core::experiment::{
    compare_strategies, run_experiment, ExperimentSpec, InitMode, TrajectorySpec,
};
use cvloc_core::filter::{FilterConfig, Strategy};
use cvloc_core::retrieval::{recall_at_fraction, recall_at_k};
use cvloc_core::sim::{generate_ground_run, generate_world, WorldConfig};

fn recall_stats(world: &WorldConfig) -> (f64, f64) {
    let db = generate_world(world).unwrap();
    let traj = TrajectorySpec::default();
    let run = generate_ground_run(world, &db, &traj.waypoints, traj.speed, 1.0).unwrap();
    let pairs = run.query_pairs();
    (
        recall_at_k(&db, &pairs, 1).unwrap(),
        recall_at_fraction(&db, &pairs, 0.01).unwrap(),
    )
}

fn phase_recall() {
    for pairing in [0.0, 4.58] {
        println!("pairing_noise_sigma = {pairing}");
        for sigma in [0.3, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.8, 0.9, 1.0] {
            let mut sum1 = 0.0;
            let mut sump = 0.0;
            for seed in 0..3 {
                let world = WorldConfig {
                    descriptor_noise_sigma: sigma,
                    pairing_noise_sigma: pairing,
                    seed,
                    ..WorldConfig::default()
                };
                let (r1, rp) = recall_stats(&world);
                sum1 += r1;
                sump += rp;
            }
            println!(
                "  sigma={sigma:.2} recall@1={:.3} recall@1%={:.3}",
                sum1 / 3.0,
                sump / 3.0
            );
        }
    }
}

fn phase_fusion(sigma: f64) {
    let world = WorldConfig { descriptor_noise_sigma: sigma, ..WorldConfig::default() };
    let spec = ExperimentSpec::synthetic(world, TrajectorySpec::default(), FilterConfig::default());
    let cmp = compare_strategies(&spec).unwrap();
    println!(
        "sigma={sigma} recall@1={:.3} recall@1%={:.3}",
        cmp.capf.recall_top1,
        cmp.capf.recall.at_fraction(0.01).unwrap()
    );
    println!(
        "  CAPF mean={:.2} std={:.2}   PPF mean={:.2} std={:.2}   DR mean={:.2} std={:.2}",
        cmp.capf.err_est.mean,
        cmp.capf.err_est.std,
        cmp.ppf.err_est.mean,
        cmp.ppf.err_est.std,
        cmp.capf.err_dr.mean,
        cmp.capf.err_dr.std
    );
    // Per-seed pairing for the std comparison.
    for (p, c) in cmp.ppf.runs.iter().zip(&cmp.capf.runs) {
        println!(
            "  seed {}: ppf {:.2}±{:.2}  capf {:.2}±{:.2}  capf_std<=ppf_std: {}",
            p.seed,
            p.err_est.mean,
            p.err_est.std,
            c.err_est.mean,
            c.err_est.std,
            c.err_est.std <= p.err_est.std
        );
    }
}

fn phase_decouple() {
    for sigma in [0.5, 0.55, 1.0, 1.2, 1.3, 1.4, 1.5] {
        let world = WorldConfig { descriptor_noise_sigma: sigma, ..WorldConfig::default() };
        let filter = FilterConfig { strategy: Strategy::Capf, ..FilterConfig::default() };
        let spec = ExperimentSpec::synthetic(world, TrajectorySpec::default(), filter);
        let report = run_experiment(&spec).unwrap();
        println!(
            "sigma={sigma} recall@1%={:.3} capf mean={:.2} std={:.2}",
            report.recall.at_fraction(0.01).unwrap(),
            report.err_est.mean,
            report.err_est.std
        );
    }
}

fn phase_init() {
    for world_seed in 0..8u64 {
        let world = WorldConfig { seed: world_seed, ..WorldConfig::default() };
        let db = generate_world(&world).unwrap();
        let traj = TrajectorySpec::default();
        let run = generate_ground_run(&world, &db, &traj.waypoints, traj.speed, 1.0).unwrap();
        let top = db.top_k_by_descriptor(&run.queries[0], 1).unwrap();
        let anchored = top[0].id == run.paired_ids[0];
        print!("world seed {world_seed}: first query rank-1 correct: {anchored}");

        let filter = FilterConfig { strategy: Strategy::Capf, ..FilterConfig::default() };
        let mut spec = ExperimentSpec::synthetic(world, traj, filter);
        let known = run_experiment(&spec).unwrap();
        spec.init_mode = InitMode::Retrieval;
        let retr = run_experiment(&spec).unwrap();
        println!(
            "  known-start mean={:.2}  retrieval-init mean={:.2}  ratio={:.3}",
            known.err_est.mean,
            retr.err_est.mean,
            retr.err_est.mean / known.err_est.mean
        );
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    match args.get(1).map(String::as_str) {
        Some("recall") => phase_recall(),
        Some("fusion") => {
            let sigma: f64 = args.get(2).map_or(0.6, |s| s.parse().unwrap());
            phase_fusion(sigma);
        }
        Some("decouple") => phase_decouple(),
        Some("init") => phase_init(),
        other => eprintln!("unknown phase {other:?}; use recall|fusion|decouple|init"),
    }
}
