//! `fairinject` command-line driver.
//!
//! Each subcommand reads a graph directory (see `fairinject::io`) and an
//! optional TOML config, and writes one self-contained output directory
//! with a `manifest.json`.

mod config;
mod error;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairinject::attack::{run_ablation, AttackOutcome, Variant};
use fairinject::audit::{diff_reports, graph_statistics, PathLengthMode};
use fairinject::eval::{defense_sweep, evaluate_victim, DefensePoint, MetricsReport};
use fairinject::graph::{Graph, Split};
use fairinject::io::{load_graph_dir, save_graph_dir, write_json, FeatureFormat};
use fairinject::model::{write_checkpoint, ModelKind};
use fairinject::synth::{generate_sbm, make_split};
use fairinject::uncertainty::train_bayesian;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{Manifest, Staging};

#[derive(Debug, Parser)]
#[command(
    name = "fairinject",
    version,
    about = "Node-injection fairness attacks on GNNs"
)]
struct Cli {
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory; replaced atomically on success.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic biased graph with its split.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Overrides `data.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Poison a clean graph directory.
    Attack {
        /// Clean graph directory.
        graph: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Overrides `attack.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train victims on a graph and report accuracy and fairness.
    Evaluate {
        /// Graph directory (clean or poisoned).
        graph: PathBuf,
        /// Optional second graph reported as the "before" row.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        victim: Option<ModelKind>,
        /// Comma list or half-open range, e.g. `0,1,2` or `0..5`.
        #[arg(long, value_parser = seed_list)]
        seeds: Option<SeedList>,
    },
    /// Run attack variants on a clean graph and compare them.
    Ablate {
        /// Clean graph directory.
        graph: PathBuf,
        #[command(flatten)]
        common: Common,
        /// `all`, `nifa`, `nifa-u`, `nifa-h` or `nifa-i`.
        #[arg(long, default_value = "all")]
        variant: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = seed_list)]
        seeds: Option<SeedList>,
        #[arg(long)]
        victim: Option<ModelKind>,
    },
    /// Mask the most uncertain training nodes and re-evaluate.
    Defend {
        /// Poisoned graph directory.
        poisoned: PathBuf,
        /// Optional clean graph reported as a reference row.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Comma list of masking fractions, e.g. `0,0.1,0.2`.
        #[arg(long, value_parser = eta_list)]
        eta: Option<EtaList>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = seed_list)]
        seeds: Option<SeedList>,
        #[arg(long)]
        victim: Option<ModelKind>,
    },
    /// Compare structural statistics of a clean and a poisoned graph.
    Audit {
        clean: PathBuf,
        poisoned: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A whole `--seeds` value. Wrapped so clap treats the list as one value
/// rather than as repeated occurrences.
#[derive(Debug, Clone)]
struct SeedList(Vec<u64>);

#[derive(Debug, Clone)]
struct EtaList(Vec<f64>);

fn seed_list(s: &str) -> Result<SeedList, String> {
    parse_seeds(s).map(SeedList)
}

fn eta_list(s: &str) -> Result<EtaList, String> {
    parse_etas(s).map(EtaList)
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
        (a..b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|e| format!("{t}: {e}")))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("empty seed list".into());
    }
    Ok(seeds)
}

fn parse_etas(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().map_err(|e| format!("{t}: {e}"))?;
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(format!("{v} not in [0, 1]"))
            }
        })
        .collect()
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn revalidate(cfg: &ExperimentConfig, source: Option<&Path>) -> Result<(), CliError> {
    cfg.validate().map_err(|(field, message)| CliError::Config {
        path: source.map_or("<defaults>".into(), |p| p.display().to_string()),
        field,
        message,
    })
}

/// Loads a graph directory and its split, deriving a split from the data
/// section when the directory has none.
fn load_with_split(dir: &Path, cfg: &ExperimentConfig) -> Result<(Graph, Split), CliError> {
    let loaded = load_graph_dir(dir)?;
    let split = match loaded.split {
        Some(s) => s,
        None => {
            log::info!("{} has no split; deriving one", dir.display());
            make_split(&loaded.graph, cfg.data.split, cfg.data.seed)?
        }
    };
    Ok((loaded.graph, split))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_attack_artifacts(
    stage: &Staging,
    dir: &str,
    outcome: &AttackOutcome,
    split: &Split,
    clean_nodes: usize,
) -> Result<(), CliError> {
    let graph_dir = stage.file(dir);
    save_graph_dir(
        &graph_dir,
        &outcome.poisoned,
        Some(split),
        Some(&outcome.plan.sidecar(clean_nodes)),
        FeatureFormat::Csv,
    )?;
    let log_path = stage.file(&format!("{dir}_log.csv"));
    let f = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    outcome.log.write_csv(f)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { common, seed } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.data.seed = s;
            }
            revalidate(&cfg, common.config.as_deref())?;
            let (g, split) = generate_sbm(&cfg.data)?;
            let stage = Staging::new(&common.out)?;
            save_graph_dir(stage.path(), &g, Some(&split), None, FeatureFormat::Csv)?;
            let mut m = Manifest::new("generate", &[], &cfg)?;
            m.seed = Some(cfg.data.seed);
            let out = stage.commit(m)?;
            println!(
                "wrote {} ({} nodes, {} edges, {} train / {} val / {} test)",
                out.display(),
                g.num_nodes(),
                g.num_edges(),
                split.train.len(),
                split.val.len(),
                split.test.len()
            );
        }
        Command::Attack {
            graph,
            common,
            seed,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.attack.seed = s;
            }
            revalidate(&cfg, common.config.as_deref())?;
            let (g, split) = load_with_split(&graph, &cfg)?;
            let outcome = run_ablation(&g, &split, &cfg.attack, Variant::Full)?;
            let stage = Staging::new(&common.out)?;
            save_graph_dir(
                stage.path(),
                &outcome.poisoned,
                Some(&split),
                Some(&outcome.plan.sidecar(g.num_nodes())),
                FeatureFormat::Csv,
            )?;
            let log_path = stage.file("attack_log.csv");
            let f = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
            outcome.log.write_csv(f)?;
            if let Some(report) = &outcome.uncertainty {
                let p = stage.file("uncertainty.csv");
                let f = fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
                report.write_csv(&g, f)?;
            }
            write_checkpoint(
                &stage.file("surrogate.ckpt"),
                &outcome.surrogate,
                cfg.attack.seed,
            )?;
            let mut m = Manifest::new("attack", &[&graph], &cfg)?;
            m.seed = Some(cfg.attack.seed);
            let out = stage.commit(m)?;
            let last = outcome.log.rows.last().map(|r| r.losses.total);
            println!(
                "wrote {}: {} injected nodes, {} injected edges, perturbation rate {:.2}%, final loss {}",
                out.display(),
                outcome.plan.num_injected(),
                outcome.plan.edges.len(),
                100.0 * outcome.poisoned.perturbation_rate(),
                last.map_or("n/a".into(), |v| format!("{v:.4}"))
            );
        }
        Command::Evaluate {
            graph,
            baseline,
            common,
            victim,
            seeds,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(v) = victim {
                cfg.evaluate.victim = v;
            }
            if let Some(s) = seeds {
                cfg.evaluate.seeds = s.0;
            }
            revalidate(&cfg, common.config.as_deref())?;
            let eval = |dir: &Path| -> Result<MetricsReport, CliError> {
                let (g, split) = load_with_split(dir, &cfg)?;
                Ok(evaluate_victim(
                    &g,
                    &split,
                    cfg.evaluate.victim,
                    &cfg.evaluate.seeds,
                    &cfg.victim,
                )?)
            };
            let after = eval(&graph)?;
            let before = baseline.as_deref().map(eval).transpose()?;

            #[derive(Serialize)]
            struct Out<'a> {
                report: &'a MetricsReport,
                baseline: Option<&'a MetricsReport>,
            }
            let mut rows = Vec::new();
            if let Some(b) = &before {
                rows.push(("before", b));
            }
            rows.push((if before.is_some() { "after" } else { "graph" }, &after));
            let table = MetricsReport::table(&rows);

            let stage = Staging::new(&common.out)?;
            write_json(
                &stage.file("metrics.json"),
                &Out {
                    report: &after,
                    baseline: before.as_ref(),
                },
            )?;
            write_text(&stage.file("metrics.txt"), &table)?;
            let mut inputs: Vec<&Path> = vec![&graph];
            inputs.extend(baseline.as_deref());
            let mut m = Manifest::new("evaluate", &inputs, &cfg)?;
            m.seeds = cfg.evaluate.seeds.clone();
            stage.commit(m)?;
            print!("{table}");
        }
        Command::Ablate {
            graph,
            common,
            variant,
            seed,
            seeds,
            victim,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.attack.seed = s;
            }
            if let Some(s) = seeds {
                cfg.evaluate.seeds = s.0;
            }
            if let Some(v) = victim {
                cfg.evaluate.victim = v;
            }
            revalidate(&cfg, common.config.as_deref())?;
            let variants: Vec<Variant> = if variant.eq_ignore_ascii_case("all") {
                std::iter::once(Variant::Full)
                    .chain(Variant::ABLATIONS)
                    .collect()
            } else {
                vec![variant.parse()?]
            };
            let (g, split) = load_with_split(&graph, &cfg)?;
            let kind = cfg.evaluate.victim;
            let clean = evaluate_victim(&g, &split, kind, &cfg.evaluate.seeds, &cfg.victim)?;
            let stage = Staging::new(&common.out)?;

            #[derive(Serialize)]
            struct VariantReport {
                variant: String,
                injected_nodes: usize,
                injected_edges: usize,
                report: MetricsReport,
            }
            let mut results = Vec::new();
            for v in variants {
                let outcome = run_ablation(&g, &split, &cfg.attack, v)?;
                let report = evaluate_victim(
                    &outcome.poisoned,
                    &split,
                    kind,
                    &cfg.evaluate.seeds,
                    &cfg.victim,
                )?;
                write_attack_artifacts(
                    &stage,
                    &v.name().to_ascii_lowercase(),
                    &outcome,
                    &split,
                    g.num_nodes(),
                )?;
                results.push(VariantReport {
                    variant: v.name().to_string(),
                    injected_nodes: outcome.plan.num_injected(),
                    injected_edges: outcome.plan.edges.len(),
                    report,
                });
            }
            let mut rows: Vec<(&str, &MetricsReport)> = vec![("clean", &clean)];
            rows.extend(results.iter().map(|r| (r.variant.as_str(), &r.report)));
            let table = MetricsReport::table(&rows);

            #[derive(Serialize)]
            struct Out<'a> {
                clean: &'a MetricsReport,
                variants: &'a [VariantReport],
            }
            write_json(
                &stage.file("ablation.json"),
                &Out {
                    clean: &clean,
                    variants: &results,
                },
            )?;
            write_text(&stage.file("ablation.txt"), &table)?;
            let mut m = Manifest::new("ablate", &[&graph], &cfg)?;
            m.seed = Some(cfg.attack.seed);
            m.seeds = cfg.evaluate.seeds.clone();
            stage.commit(m)?;
            print!("{table}");
        }
        Command::Defend {
            poisoned,
            baseline,
            common,
            eta,
            seed,
            seeds,
            victim,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(e) = eta {
                cfg.defense.etas = e.0;
            }
            if let Some(s) = seed {
                cfg.attack.seed = s;
            }
            if let Some(s) = seeds {
                cfg.evaluate.seeds = s.0;
            }
            if let Some(v) = victim {
                cfg.evaluate.victim = v;
            }
            revalidate(&cfg, common.config.as_deref())?;
            let (g, split) = load_with_split(&poisoned, &cfg)?;
            let bayes = cfg.attack.bayesian();
            // The defender fits its own uncertainty model on the graph it
            // was handed; it never sees the attacker's.
            let params = train_bayesian(&g, &split, &bayes, cfg.attack.seed)?;
            let points = defense_sweep(
                &g,
                &split,
                &params,
                &cfg.defense.etas,
                bayes.samples,
                bayes.keep_prob,
                cfg.evaluate.victim,
                &cfg.evaluate.seeds,
                &cfg.victim,
                cfg.attack.seed,
            )?;
            let reference = baseline
                .as_deref()
                .map(|dir| -> Result<MetricsReport, CliError> {
                    let (cg, cs) = load_with_split(dir, &cfg)?;
                    Ok(evaluate_victim(
                        &cg,
                        &cs,
                        cfg.evaluate.victim,
                        &cfg.evaluate.seeds,
                        &cfg.victim,
                    )?)
                })
                .transpose()?;

            let labels: Vec<String> = points.iter().map(|p| format!("η={:.2}", p.eta)).collect();
            let mut rows: Vec<(&str, &MetricsReport)> = Vec::new();
            if let Some(r) = &reference {
                rows.push(("clean", r));
            }
            rows.extend(
                labels
                    .iter()
                    .map(String::as_str)
                    .zip(points.iter().map(|p| &p.report)),
            );
            let table = MetricsReport::table(&rows);

            #[derive(Serialize)]
            struct Out<'a> {
                points: &'a [DefensePoint],
                clean: Option<&'a MetricsReport>,
            }
            let stage = Staging::new(&common.out)?;
            write_json(
                &stage.file("defense.json"),
                &Out {
                    points: &points,
                    clean: reference.as_ref(),
                },
            )?;
            write_text(&stage.file("defense.txt"), &table)?;
            let mut inputs: Vec<&Path> = vec![&poisoned];
            inputs.extend(baseline.as_deref());
            let mut m = Manifest::new("defend", &inputs, &cfg)?;
            m.seed = Some(cfg.attack.seed);
            m.seeds = cfg.evaluate.seeds.clone();
            stage.commit(m)?;
            print!("{table}");
        }
        Command::Audit {
            clean,
            poisoned,
            out,
        } => {
            let a = graph_statistics(&load_graph_dir(&clean)?.graph, PathLengthMode::Auto)?;
            let b = graph_statistics(&load_graph_dir(&poisoned)?.graph, PathLengthMode::Auto)?;
            let diff = diff_reports(&a, &b);
            let table = diff.table();
            let stage = Staging::new(&out)?;
            write_json(&stage.file("audit.json"), &diff)?;
            write_text(&stage.file("audit.txt"), &table)?;
            stage.commit(Manifest::new(
                "audit",
                &[&clean, &poisoned],
                &ExperimentConfig::default(),
            )?)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
