//! Paired clean-vs-poisoned run on the default synthetic benchmark.
//!
//! `cargo run --release -p fairinject --example benchmark -- [seeds] [adam|sgd] [variant]`
//!
//! Environment overrides for exploring the generator and optimizer:
//! `P_IN`, `P_OUT`, `SEP`, `LRF` (feature learning rate), `VLR` and `PAT`
//! (victim learning rate and patience). `CLEAN_ONLY`, `AUDIT` and `DEFENSE`
//! switch to the clean-only, audit-table and defense-sweep reports.

use std::time::Instant;

use fairinject::attack::{run_ablation, AttackConfig, FeatureOptimizer, Variant};
use fairinject::audit::{diff_reports, graph_statistics, PathLengthMode};
use fairinject::eval::{defense_sweep, evaluate_victim, VictimConfig};
use fairinject::model::ModelKind;
use fairinject::synth::{generate_sbm, SbmConfig};
use fairinject::uncertainty::train_bayesian;

fn main() -> fairinject::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let opt = match args.get(2).map(String::as_str) {
        Some("sgd") => FeatureOptimizer::Sgd,
        _ => FeatureOptimizer::Adam,
    };
    let variant: Variant = args.get(3).map_or(Ok(Variant::Full), |s| s.parse())?;
    let victim = VictimConfig {
        lr: std::env::var("VLR")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0.01),
        patience: std::env::var("PAT")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(30),
        ..VictimConfig::default()
    };
    let (mut before, mut after) = ([0.0; 3], [0.0; 3]);
    for seed in 0..seeds {
        let t = Instant::now();
        let env = |k: &str, d: f64| {
            std::env::var(k)
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(d)
        };
        let base = SbmConfig::default();
        let sbm = SbmConfig {
            seed,
            p_in: env("P_IN", base.p_in),
            p_out: env("P_OUT", base.p_out),
            feature_sep: env("SEP", base.feature_sep),
            ..base
        };
        let (g, split) = generate_sbm(&sbm)?;
        if std::env::var("CLEAN_ONLY").is_ok() {
            let clean = evaluate_victim(&g, &split, ModelKind::Gcn2, &[seed], &victim)?;
            println!(
                "seed {seed}: acc {:.3} sp {:.4} eo {:.4}",
                clean.accuracy.mean, clean.delta_sp.mean, clean.delta_eo.mean
            );
            continue;
        }
        let cfg = AttackConfig {
            seed,
            feature_optimizer: opt,
            lr_feature: env("LRF", 0.001),
            ..AttackConfig::default()
        };
        let out = run_ablation(&g, &split, &cfg, variant)?;
        if std::env::var("AUDIT").is_ok() {
            let a = graph_statistics(&g, PathLengthMode::Auto)?;
            let b = graph_statistics(&out.poisoned, PathLengthMode::Auto)?;
            print!("{}", diff_reports(&a, &b).table());
        }
        if std::env::var("DEFENSE").is_ok() {
            let bayes = train_bayesian(&out.poisoned, &split, &cfg.bayesian(), seed)?;
            let etas = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
            let pts = defense_sweep(
                &out.poisoned,
                &split,
                &bayes,
                &etas,
                cfg.samples,
                cfg.keep_prob,
                ModelKind::Gcn2,
                &[seed],
                &victim,
                seed,
            )?;
            let clean = evaluate_victim(&g, &split, ModelKind::Gcn2, &[seed], &victim)?;
            print!("seed {seed} clean sp {:.4} |", clean.delta_sp.mean);
            for p in pts {
                print!(
                    " {:.1}:{:.4}/{:.3}",
                    p.eta, p.report.delta_sp.mean, p.report.accuracy.mean
                );
            }
            println!();
            continue;
        }
        let clean = evaluate_victim(&g, &split, ModelKind::Gcn2, &[seed], &victim)?;
        let pois = evaluate_victim(&out.poisoned, &split, ModelKind::Gcn2, &[seed], &victim)?;
        let first = out.log.mean_total(0, None).unwrap_or(f64::NAN);
        let last = out
            .log
            .mean_total(cfg.max_iter.saturating_sub(1), None)
            .unwrap_or(f64::NAN);
        println!(
            "seed {seed}: acc {:.3}->{:.3} sp {:.4}->{:.4} eo {:.4}->{:.4} loss {first:.4}->{last:.4} ({:.1?})",
            clean.accuracy.mean, pois.accuracy.mean, clean.delta_sp.mean, pois.delta_sp.mean,
            clean.delta_eo.mean, pois.delta_eo.mean, t.elapsed()
        );
        for (acc, r) in [(&mut before, &clean), (&mut after, &pois)] {
            acc[0] += r.accuracy.mean / seeds as f64;
            acc[1] += r.delta_sp.mean / seeds as f64;
            acc[2] += r.delta_eo.mean / seeds as f64;
        }
    }
    println!(
        "mean before acc {:.4} sp {:.4} eo {:.4}",
        before[0], before[1], before[2]
    );
    println!(
        "mean after  acc {:.4} sp {:.4} eo {:.4}",
        after[0], after[1], after[2]
    );
    Ok(())
}
