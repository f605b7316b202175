use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use curriculum::harness::experiment::{compute_scores, write_bootstrap};
use curriculum::harness::{
    bootstrap_loop, gradient_study, run_experiment, two_stage_grid_search, DatasetSpec, ExperimentConfig, GridSpec,
    Manifest,
};
use curriculum::theory::verify_theory;
use curriculum::Error;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "curlab", version, about = "Curriculum learning experiments and landscape checks")]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed. Replaces the configured run seed; for gen-data it seeds the
    /// synthetic mixture.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured train and test sets as CSV.
    GenData,
    /// Score the training set with the configured scoring method.
    Score,
    /// Run the configured condition for every seed.
    Train,
    /// Select pacing and learning-rate parameters on a validation split.
    GridSearch {
        /// Grid file (JSON); defaults to the built-in desk-scale grid.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Repeated self-taught scoring, starting from vanilla.
    Bootstrap {
        #[arg(long, default_value_t = 1)]
        generations: usize,
    },
    /// Gradient coherence of easy, random and full subsets at a vanilla model.
    AnalyzeGradients {
        /// Subset size; defaults to 10% of the training set.
        #[arg(long)]
        subset_size: Option<usize>,
    },
    /// Randomized check of the utility-landscape identities and inequalities.
    VerifyTheory {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 200)]
        families: usize,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        match (&cli.command, &mut cfg.dataset) {
            (Command::GenData, DatasetSpec::Synthetic { seed: data_seed, .. }) => *data_seed = seed,
            _ if cfg.seeds.is_some() => {
                return Err(Error::Config("--seed conflicts with the explicit seeds list".into()).into())
            }
            _ => cfg.seed = seed,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> anyhow::Result<String> {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(name.to_string())
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let out = &cli.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    if let Command::VerifyTheory { instances, families } = cli.command {
        let seed = cli.seed.unwrap_or(1);
        let report = verify_theory(instances, families, seed);
        let artifacts = vec![write_json(out, "theory_report.json", &report)?];
        Manifest {
            subcommand: "verify-theory".into(),
            config: json!({ "instances": instances, "families": families, "seed": seed }),
            artifacts,
        }
        .write(out)?;
        println!(
            "{} instances, {} families: {} violations (max identity residual {:.3e})",
            instances, families, report.total_violations, report.identity_max_residual
        );
        return Ok(report.total_violations == 0);
    }

    let cfg = load_config(cli)?;
    let mut manifest_config = serde_json::to_value(&cfg)?;
    let (name, artifacts) = match &cli.command {
        Command::GenData => {
            let (train, test) = cfg.dataset.load()?;
            train.write_csv(out.join("train.csv"))?;
            test.write_csv(out.join("test.csv"))?;
            let mut files = vec!["train.csv".to_string(), "test.csv".to_string()];
            if let Some(mixture) = train.mixture() {
                files.push(write_json(out, "mixture.json", mixture)?);
            }
            println!("wrote {} training and {} test examples", train.len(), test.len());
            ("gen-data", files)
        }
        Command::Score => {
            let (train, _) = cfg.dataset.load()?;
            let scores = compute_scores(&cfg, &train, cfg.seed)?;
            scores.write_csv(out.join("scores.csv"))?;
            println!("scored {} examples ({})", scores.len(), scores.provenance());
            ("score", vec!["scores.csv".to_string()])
        }
        Command::Train => {
            let run = run_experiment(&cfg)?;
            let files = run.write_to(out)?;
            for w in &run.summary.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "final accuracy {:.4} ± {:.4} (STE), AUC {:.4}",
                run.summary.final_accuracy.mean, run.summary.final_accuracy.ste, run.summary.auc.mean
            );
            ("train", files)
        }
        Command::GridSearch { grid } => {
            let grid = match grid {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    GridSpec::from_json_str(&text)?
                }
                None => GridSpec::default_grid(),
            };
            let result = two_stage_grid_search(&cfg, &grid)?;
            manifest_config = json!({ "base": cfg, "grid": grid });
            let files = vec![
                write_json(out, "grid_search.json", &result)?,
                write_json(out, "best_config.json", &result.best)?,
            ];
            println!("{} cells evaluated, best score {:.4}", result.audit.len(), result.best_score);
            ("grid-search", files)
        }
        Command::Bootstrap { generations } => {
            let gens = bootstrap_loop(&cfg, *generations)?;
            manifest_config = json!({ "config": cfg, "generations": generations });
            for g in &gens {
                println!("generation {}: final accuracy {:.4}", g.generation, g.run.summary.final_accuracy.mean);
            }
            ("bootstrap", write_bootstrap(&gens, out)?)
        }
        Command::AnalyzeGradients { subset_size } => {
            let study = gradient_study(&cfg, cfg.seed, *subset_size)?;
            manifest_config = json!({ "config": cfg, "subset_size": study.subset_size });
            for c in &study.report.conditions {
                println!("{:>12}: total variance {:.4}", c.label, c.total_variance.total);
            }
            ("analyze-gradients", vec![write_json(out, "gradients.json", &study)?])
        }
        Command::VerifyTheory { .. } => unreachable!("handled above"),
    };
    Manifest {
        subcommand: name.into(),
        config: manifest_config,
        artifacts,
    }
    .write(out)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(
                e.downcast_ref::<Error>(),
                Some(Error::Config(_) | Error::Parameter(_) | Error::Load { .. })
            );
            if usage {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
