mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use eb_lab::baselines::{npmle_grid, ErmTypeMatch, NpmleEstimator, OracleBayes, Robbins};
use eb_lab::bench::{
    self, alpha_fit, contraction_diag, gen_dataset, length_gen_sweep, regret_eval, write_alpha_fit,
    write_contraction, write_model_report, write_report, RegretReport,
};
use eb_lab::dataset_io::{export_csv, read_dataset, write_dataset};
use eb_lab::gaussian::{
    default_regularization, gaussian_init_state, sample_gaussian_prior, GaussianPrior,
    RegularizedBayes,
};
use eb_lab::hb::{init_state, HbEstimator, LengenEstimator, PosteriorState};
use eb_lab::pop::sample_prior;
use eb_lab::seed::stream_rng;
use eb_lab::{DiscretePrior, Estimator, Prior};

use config::{ExperimentConfig, Model};

#[derive(Parser, Debug)]
#[command(name = "eb-lab", version, about = "Empirical Bayes benchmark harness")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(short, long, global = true, default_value = "eb-lab.toml")]
    config: PathBuf,
    /// Override a configuration entry, e.g. `--set pop.k=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (default: available parallelism).
    #[arg(short, long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Generate a training dataset.
    Gen {
        /// Also write a CSV export next to the binary file.
        #[arg(long)]
        csv: bool,
    },
    /// Regret of each configured estimator against the test prior.
    Regret,
    /// Regret of the length-generalized HB estimate over `n_test_list`.
    Lengen,
    /// Distance between a reference estimator and α-posterior HB.
    Alphafit,
    /// Hellinger contraction of the posterior predictive over `n_list`.
    Contract,
    /// Fit the grid NPMLE and dump the prior as JSON.
    Npmle {
        /// Fit on the pooled observations of a dataset written by `gen`
        /// instead of a fresh sample from the test prior.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Regret => "regret",
            Command::Lengen => "lengen",
            Command::Alphafit => "alphafit",
            Command::Contract => "contract",
            Command::Npmle { .. } => "npmle",
        }
    }
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    let seed_env = std::env::var(config::SEED_ENV).ok();
    let cfg =
        config::load(&cli.config, &cli.overrides, seed_env.as_deref()).map_err(Failure::Config)?;
    check_command(&cfg, &cli.command).map_err(Failure::Config)?;
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(Failure::Config(anyhow::anyhow!(
                "--workers must be at least 1"
            )));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let hash = cfg.hash();
    info!(
        "{} with config {} (hash {hash}, seed {})",
        cli.command.name(),
        cli.config.display(),
        cfg.root_seed
    );
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))
        .map_err(Failure::Runtime)?;
    let outputs = dispatch(&cfg, &cli.command, &hash).map_err(Failure::Runtime)?;
    for path in outputs {
        println!("{}", path.display());
    }
    Ok(())
}

/// Command-specific configuration requirements.
fn check_command(cfg: &ExperimentConfig, command: &Command) -> Result<()> {
    match command {
        Command::Regret if cfg.estimators.is_empty() => bail!("estimators must not be empty"),
        Command::Regret | Command::Lengen if cfg.reps < 2 => bail!("regret needs reps >= 2"),
        Command::Lengen | Command::Alphafit if cfg.n_test_list.is_empty() => {
            bail!("n_test_list must not be empty")
        }
        Command::Alphafit
            if cfg.alpha_grid.is_empty()
                || cfg.alpha_grid.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) =>
        {
            bail!("alpha_grid must be a nonempty subset of (0, 1]")
        }
        Command::Contract
            if cfg.n_list.is_empty() || cfg.n_list.windows(2).any(|w| w[0] >= w[1]) =>
        {
            bail!("n_list must be nonempty and increasing")
        }
        Command::Contract | Command::Npmle { .. } | Command::Gen { .. }
            if cfg.model == Model::Gaussian =>
        {
            bail!("`{}` supports only the poisson model", command.name())
        }
        _ => Ok(()),
    }
}

fn output_path(cfg: &ExperimentConfig, command: &str, hash: &str, ext: &str) -> PathBuf {
    cfg.output_dir.join(format!("{command}_{hash}.{ext}"))
}

fn dispatch(cfg: &ExperimentConfig, command: &Command, hash: &str) -> Result<Vec<PathBuf>> {
    let csv = output_path(cfg, command.name(), hash, "csv");
    match (command, cfg.model) {
        (Command::Gen { csv: export }, _) => {
            let ds = gen_dataset(&cfg.pop, cfg.n, cfg.batches, cfg.root_seed)?;
            let bin = output_path(cfg, "gen", hash, "ebds");
            write_dataset(&ds, &bin)?;
            let mut out = vec![bin];
            if *export {
                export_csv(&ds, &csv)?;
                out.push(csv);
            }
            Ok(out)
        }
        (Command::Regret, Model::Poisson) => {
            let g0 = poisson_test_prior(cfg)?;
            let state = poisson_state(cfg, cfg.n)?;
            let mut reports = Vec::new();
            for name in &cfg.estimators {
                let est = poisson_estimator(cfg, name, &state, &g0)?;
                reports.push(regret_eval(
                    est.as_ref(),
                    &g0,
                    cfg.n,
                    cfg.reps,
                    cfg.root_seed,
                )?);
            }
            finish_regret(cfg, &mut reports, hash, &csv)
        }
        (Command::Regret, Model::Gaussian) => {
            let g0 = gaussian_test_prior(cfg)?;
            let state = gaussian_state(cfg, cfg.n)?;
            let mut reports = Vec::new();
            for name in &cfg.estimators {
                let est = gaussian_estimator(cfg, name, &state, &g0)?;
                reports.push(regret_eval(
                    est.as_ref(),
                    &g0,
                    cfg.n,
                    cfg.reps,
                    cfg.root_seed,
                )?);
            }
            finish_regret(cfg, &mut reports, hash, &csv)
        }
        (Command::Lengen, Model::Poisson) => {
            let g0 = poisson_test_prior(cfg)?;
            let state = poisson_state(cfg, cfg.n)?;
            let mut reports =
                length_gen_sweep(&state, &g0, &cfg.n_test_list, cfg.reps, cfg.root_seed)?;
            finish_regret(cfg, &mut reports, hash, &csv)
        }
        (Command::Lengen, Model::Gaussian) => {
            let g0 = gaussian_test_prior(cfg)?;
            let state = gaussian_state(cfg, cfg.n)?;
            let mut reports =
                length_gen_sweep(&state, &g0, &cfg.n_test_list, cfg.reps, cfg.root_seed)?;
            finish_regret(cfg, &mut reports, hash, &csv)
        }
        (Command::Alphafit, Model::Poisson) => {
            let state = poisson_state(cfg, cfg.n)?;
            run_alpha_fit(cfg, &state, hash, &csv)
        }
        (Command::Alphafit, Model::Gaussian) => {
            let state = gaussian_state(cfg, cfg.n)?;
            run_alpha_fit(cfg, &state, hash, &csv)
        }
        (Command::Contract, _) => {
            let g0 = poisson_test_prior(cfg)?;
            let train_n = *cfg.n_list.last().expect("checked nonempty");
            let state = poisson_state(cfg, train_n)?;
            let rows = contraction_diag(
                &state,
                &g0,
                &cfg.n_list,
                cfg.contraction_reps,
                cfg.root_seed,
            )?;
            for r in &rows {
                info!(
                    "n = {}: median H² {:.4e}, q90 {:.4e}",
                    r.n, r.median_h2, r.q90_h2
                );
            }
            write_contraction(&rows, hash, &csv)?;
            Ok(vec![csv])
        }
        (Command::Npmle { input }, _) => {
            let xs = match input {
                Some(path) => read_dataset(path)?
                    .batches
                    .into_iter()
                    .flat_map(|b| b.x)
                    .collect(),
                None => {
                    let g0 = poisson_test_prior(cfg)?;
                    let mut rng = stream_rng(cfg.root_seed, "npmle", 0);
                    bench::draw_sequence(&g0, cfg.n, &mut rng).1
                }
            };
            let fit = npmle_grid(&xs, &cfg.npmle_config(), cfg.pop.support_bound)?;
            let json = serde_json::json!({
                "prior": fit.prior,
                "iterations": fit.iterations,
                "log_likelihood": fit.log_likelihood.last(),
                "observations": xs.len(),
                "config_hash": hash,
            });
            let path = output_path(cfg, "npmle", hash, "json");
            write_text(
                &path,
                &format!("{}\n", serde_json::to_string_pretty(&json)?),
            )?;
            Ok(vec![path])
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn finish_regret(
    cfg: &ExperimentConfig,
    reports: &mut [RegretReport],
    hash: &str,
    path: &Path,
) -> Result<Vec<PathBuf>> {
    for r in reports.iter_mut() {
        r.config_hash = hash.to_string();
        info!(
            "{} n={} n_test={}: regret {:.6e} ± {:.2e} ({} failures)",
            r.estimator, r.n, r.n_test, r.mean_regret, r.stderr, r.failures
        );
    }
    match cfg.model {
        Model::Poisson => write_report(reports, path)?,
        Model::Gaussian => write_model_report(cfg.model.as_str(), reports, path)?,
    }
    Ok(vec![path.to_path_buf()])
}

fn run_alpha_fit<P: Prior>(
    cfg: &ExperimentConfig,
    state: &PosteriorState<P>,
    hash: &str,
    path: &Path,
) -> Result<Vec<PathBuf>> {
    let reference: Box<dyn Estimator<P::Obs>> = match cfg.reference.as_str() {
        "hb" => Box::new(HbEstimator {
            state: state.clone(),
        }),
        _ => Box::new(LengenEstimator {
            state: state.clone(),
        }),
    };
    let fits = cfg
        .n_test_list
        .iter()
        .map(|&n_test| {
            let fit = alpha_fit(
                state,
                n_test,
                &cfg.alpha_grid,
                cfg.reps,
                cfg.root_seed,
                reference.as_ref(),
            )?;
            info!("n_test = {n_test}: alpha_star = {}", fit.alpha_star);
            Ok(fit)
        })
        .collect::<Result<Vec<_>>>()?;
    write_alpha_fit(&fits, hash, path)?;
    Ok(vec![path.to_path_buf()])
}

fn poisson_state(cfg: &ExperimentConfig, train_n: usize) -> Result<PosteriorState<DiscretePrior>> {
    let mut rng = stream_rng(cfg.root_seed, "state", 0);
    Ok(init_state(&cfg.pop, cfg.mc_draws, train_n, &mut rng)?)
}

fn gaussian_state(cfg: &ExperimentConfig, train_n: usize) -> Result<PosteriorState<GaussianPrior>> {
    let mut rng = stream_rng(cfg.root_seed, "state", 0);
    Ok(gaussian_init_state(
        &cfg.pop,
        cfg.mc_draws,
        train_n,
        &mut rng,
    )?)
}

fn poisson_test_prior(cfg: &ExperimentConfig) -> Result<DiscretePrior> {
    if let Some(t) = &cfg.test_prior {
        return DiscretePrior::new(t.atoms.clone(), t.weights.clone(), cfg.pop.support_bound)
            .context("test_prior");
    }
    let spec = cfg.test_pop.as_ref().unwrap_or(&cfg.pop);
    let mut rng = stream_rng(cfg.root_seed, "test_prior", 0);
    Ok(sample_prior(spec, &mut rng)?)
}

fn gaussian_test_prior(cfg: &ExperimentConfig) -> Result<GaussianPrior> {
    if let Some(t) = &cfg.test_prior {
        return GaussianPrior::new(t.atoms.clone(), t.weights.clone(), cfg.pop.support_bound)
            .context("test_prior");
    }
    let spec = cfg.test_pop.as_ref().unwrap_or(&cfg.pop);
    let mut rng = stream_rng(cfg.root_seed, "test_prior", 0);
    Ok(sample_gaussian_prior(spec, &mut rng)?)
}

fn poisson_estimator(
    cfg: &ExperimentConfig,
    name: &str,
    state: &PosteriorState<DiscretePrior>,
    g0: &DiscretePrior,
) -> Result<Box<dyn Estimator<u64>>> {
    Ok(match name {
        "oracle" => Box::new(OracleBayes { prior: g0.clone() }),
        "hb" => Box::new(HbEstimator {
            state: state.clone(),
        }),
        "lengen" => Box::new(LengenEstimator {
            state: state.clone(),
        }),
        "robbins" => Box::new(Robbins {
            clip_bound: Some(cfg.pop.support_bound),
        }),
        "npmle" => Box::new(NpmleEstimator {
            config: cfg.npmle_config(),
            support_bound: cfg.pop.support_bound,
        }),
        "erm" => {
            let seed = eb_lab::seed::derive_seed(cfg.root_seed, "erm_train", 0);
            let train = gen_dataset(&cfg.pop, cfg.n, cfg.batches, seed)?;
            Box::new(ErmTypeMatch::new(&train))
        }
        other => bail!("unknown estimator {other:?}"),
    })
}

fn gaussian_estimator(
    cfg: &ExperimentConfig,
    name: &str,
    state: &PosteriorState<GaussianPrior>,
    g0: &GaussianPrior,
) -> Result<Box<dyn Estimator<f64>>> {
    Ok(match name {
        "oracle" => Box::new(OracleBayes { prior: g0.clone() }),
        "hb" => Box::new(HbEstimator {
            state: state.clone(),
        }),
        "lengen" => Box::new(LengenEstimator {
            state: state.clone(),
        }),
        "bayes_reg" => Box::new(RegularizedBayes {
            prior: g0.clone(),
            rho: default_regularization(cfg.pop.support_bound, cfg.n),
        }),
        other => bail!("unknown estimator {other:?}"),
    })
}
