//! Experiment engine: training data generation, Monte-Carlo regret,
//! length-generalization sweeps, α-fit curves and contraction diagnostics.
//!
//! Every repetition `r` of an experiment tagged `tag` draws from its own
//! stream `stream_rng(root_seed, tag, r)`. Repetitions run on the rayon pool
//! and are reduced in repetition order, so results do not depend on the
//! number of workers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::baselines::oracle_bayes;
use crate::error::{EbError, Result};
use crate::hb::{alpha_hb_estimate, posterior_update, PosteriorState};
use crate::mixture::{default_x_max, divergence, DiscretePrior, DivergenceKind, TruncatedPmf};
use crate::model::{Estimator, Prior};
use crate::pop::{sample_prior, PopSpec};
use crate::seed::stream_rng;

pub const DEFAULT_REGRET_REPS: usize = 4096;
pub const DEFAULT_CONTRACTION_REPS: usize = 512;

pub const REGRET_HEADER: &str = "estimator,n,n_test,reps,mean_regret,stderr,config_hash";
pub const ALPHA_FIT_HEADER: &str = "alpha,msd,n,n_test,reps,config_hash";
pub const CONTRACTION_HEADER: &str = "n,median_h2,q90_h2,reps,config_hash";

/// One training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub theta: Vec<f64>,
    pub x: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub batches: Vec<Batch>,
    pub n: usize,
    pub pop: PopSpec,
    pub root_seed: u64,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let a = self.pop.support_bound;
        for (m, b) in self.batches.iter().enumerate() {
            if b.theta.len() != self.n || b.x.len() != self.n {
                return Err(EbError::Format(format!(
                    "batch {m} does not have length {}",
                    self.n
                )));
            }
            if b.theta.iter().any(|t| !(0.0..=a).contains(t)) {
                return Err(EbError::Format(format!(
                    "batch {m} has theta outside [0, {a}]"
                )));
            }
        }
        Ok(())
    }
}

/// `M` batches of `G ~ Π`, `θ ~ G^{⊗n}`, `X_i ~ Poi(θ_i)`.
pub fn gen_dataset(spec: &PopSpec, n: usize, m: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || m == 0 {
        return Err(EbError::InvalidArgument(
            "n and M must be at least 1".into(),
        ));
    }
    spec.validate()?;
    let batches = (0..m)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, "gen", b as u64);
            let g = sample_prior(spec, &mut rng)?;
            let (theta, x) = draw_sequence(&g, n, &mut rng);
            Ok(Batch { theta, x })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        batches,
        n,
        pop: spec.clone(),
        root_seed: seed,
    })
}

/// `θ ~ G^{⊗n}` and `X_i | θ_i`.
pub fn draw_sequence<P: Prior, R: Rng + ?Sized>(
    g: &P,
    n: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<P::Obs>) {
    let theta: Vec<f64> = (0..n).map(|_| g.sample_theta(rng)).collect();
    let x = theta.iter().map(|&t| P::sample_obs(t, rng)).collect();
    (theta, x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub estimator: String,
    /// Training length of the estimator (equal to `n_test` for plain regret).
    pub n: usize,
    pub n_test: usize,
    /// Repetitions that produced an estimate.
    pub reps: usize,
    pub mean_regret: f64,
    pub stderr: f64,
    pub config_hash: String,
    /// Repetitions where the estimator returned an error (not written to CSV).
    pub failures: usize,
}

/// Mean and standard error (`sd / √k`, with `k − 1` in the variance).
fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn regret_core<P, E>(
    estimator: &E,
    g0: &P,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<RegretReport>
where
    P: Prior,
    E: Estimator<P::Obs> + ?Sized,
{
    if n == 0 {
        return Err(EbError::InvalidArgument(
            "sequence length must be at least 1".into(),
        ));
    }
    if reps < 2 {
        return Err(EbError::InvalidArgument(
            "regret needs at least 2 repetitions".into(),
        ));
    }
    let outcomes: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, "regret", r as u64);
            let (_, xs) = draw_sequence(g0, n, &mut rng);
            let target = oracle_bayes(g0, &xs)?;
            let est = estimator.estimate(&xs)?;
            if est.len() != n {
                return Err(EbError::LengthMismatch {
                    left: est.len(),
                    right: n,
                });
            }
            Ok(est
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / n as f64)
        })
        .collect();
    let mut losses = Vec::with_capacity(reps);
    let mut failures = 0;
    let mut last_error = None;
    for o in outcomes {
        match o {
            Ok(v) => losses.push(v),
            Err(e) => {
                failures += 1;
                last_error = Some(e);
            }
        }
    }
    if losses.is_empty() {
        return Err(last_error.expect("reps >= 2"));
    }
    if failures > 0 {
        log::warn!(
            "{}: {failures} of {reps} repetitions failed",
            estimator.name()
        );
    }
    let (mean_regret, stderr) = mean_stderr(&losses);
    Ok(RegretReport {
        estimator: estimator.name(),
        n,
        n_test: n,
        reps: losses.len(),
        mean_regret,
        stderr,
        config_hash: String::new(),
        failures,
    })
}

/// Monte-Carlo estimate of `E (1/n)‖θ̂(X) − θ_{G0}(X)‖²` over `X ~ f_{G0}^{⊗n}`.
///
/// The same seed gives every estimator the same sequences.
pub fn regret_eval<P, E>(
    estimator: &E,
    g0: &P,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<RegretReport>
where
    P: Prior,
    E: Estimator<P::Obs> + ?Sized,
{
    regret_core(estimator, g0, n, reps, seed)
}

/// Regret of the length-generalized HB estimate at each test length.
pub fn length_gen_sweep<P: Prior>(
    state: &PosteriorState<P>,
    g0: &P,
    n_test_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<RegretReport>> {
    if n_test_list.is_empty() {
        return Err(EbError::InvalidArgument(
            "n_test_list must not be empty".into(),
        ));
    }
    let est = crate::hb::LengenEstimator {
        state: state.clone(),
    };
    n_test_list
        .iter()
        .map(|&n_test| {
            let mut report = regret_core(&est, g0, n_test, reps, seed)?;
            report.n = state.train_n();
            Ok(report)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaFit {
    pub alpha_star: f64,
    /// `(α, msd)` in grid order.
    pub curve: Vec<(f64, f64)>,
    pub n: usize,
    pub n_test: usize,
    pub reps: usize,
}

/// Mean squared distance between `reference` and the α-posterior HB
/// estimate for each `α` in the grid, over sequences of length `n_test`
/// drawn from the Π-marginal represented by `state`.
pub fn alpha_fit<P, E>(
    state: &PosteriorState<P>,
    n_test: usize,
    alpha_grid: &[f64],
    reps: usize,
    seed: u64,
    reference: &E,
) -> Result<AlphaFit>
where
    P: Prior,
    E: Estimator<P::Obs> + ?Sized,
{
    if alpha_grid.is_empty() || alpha_grid.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(EbError::InvalidArgument(
            "alpha grid must be a nonempty subset of (0, 1]".into(),
        ));
    }
    if n_test == 0 || reps == 0 {
        return Err(EbError::InvalidArgument(
            "n_test and reps must be at least 1".into(),
        ));
    }
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, "alphafit", r as u64);
            let g = state.sample_prior(&mut rng).clone();
            let (_, xs) = draw_sequence(&g, n_test, &mut rng);
            let target = reference.estimate(&xs)?;
            alpha_grid
                .iter()
                .map(|&alpha| {
                    let est = alpha_hb_estimate(state, &xs, alpha)?;
                    Ok(est
                        .iter()
                        .zip(&target)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        / n_test as f64)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let curve: Vec<(f64, f64)> = alpha_grid
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            (
                alpha,
                per_rep.iter().map(|v| v[k]).sum::<f64>() / reps as f64,
            )
        })
        .collect();
    let alpha_star = curve
        .iter()
        .fold((f64::NAN, f64::INFINITY), |best, &(a, m)| {
            if m < best.1 {
                (a, m)
            } else {
                best
            }
        })
        .0;
    Ok(AlphaFit {
        alpha_star,
        curve,
        n: state.train_n(),
        n_test,
        reps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionRow {
    pub n: usize,
    pub median_h2: f64,
    pub q90_h2: f64,
    pub reps: usize,
}

/// Linear-interpolation quantile (the usual "type 7") of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Squared Hellinger distance between `f_{G0}` and the posterior predictive
/// of the next observation given `X^{n−1} ~ f_{G0}^{⊗(n−1)}`.
pub fn contraction_diag(
    state: &PosteriorState<DiscretePrior>,
    g0: &DiscretePrior,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<ContractionRow>> {
    if n_list.is_empty() || n_list[0] == 0 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EbError::InvalidArgument(
            "n_list must be increasing and start at >= 1".into(),
        ));
    }
    if reps == 0 {
        return Err(EbError::InvalidArgument("reps must be at least 1".into()));
    }
    let x_max = default_x_max(state.support_bound().max(g0.support_bound()));
    let pmf = |g: &DiscretePrior| -> Vec<f64> { (0..=x_max).map(|x| g.marginal(x)).collect() };
    let table: Vec<Vec<f64>> = state.priors().par_iter().map(pmf).collect();
    let truth = TruncatedPmf::from_values(pmf(g0));

    n_list
        .iter()
        .map(|&n| {
            let h2: Vec<f64> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let mut rng = stream_rng(seed, &format!("contract/{n}"), r as u64);
                    let (_, xs) = draw_sequence(g0, n - 1, &mut rng);
                    let post = posterior_update(state, &xs, 1.0)?;
                    let mut values = vec![0.0; x_max as usize + 1];
                    for (row, lw) in table.iter().zip(post.log_weights()) {
                        let p = lw.exp();
                        if p > 0.0 {
                            values
                                .iter_mut()
                                .zip(row)
                                .for_each(|(acc, f)| *acc += p * f);
                        }
                    }
                    let h = divergence(
                        &truth,
                        &TruncatedPmf::from_values(values),
                        DivergenceKind::H2,
                    )?;
                    Ok(h.clamp(0.0, 2.0))
                })
                .collect::<Result<_>>()?;
            Ok(ContractionRow {
                n,
                median_h2: quantile(&h2, 0.5),
                q90_h2: quantile(&h2, 0.9),
                reps,
            })
        })
        .collect()
}

/// Reals with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_lines(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| EbError::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| EbError::io(path, e))
}

fn regret_row(r: &RegretReport) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{},{},{},{},{},{},{}",
        r.estimator,
        r.n,
        r.n_test,
        r.reps,
        fmt_real(r.mean_regret),
        fmt_real(r.stderr),
        r.config_hash
    );
    s
}

/// Writes regret reports in the standard CSV schema.
pub fn write_report(reports: &[RegretReport], path: &Path) -> Result<()> {
    write_lines(path, REGRET_HEADER, reports.iter().map(regret_row))
}

/// Regret CSV with a leading `model` column.
pub fn write_model_report(model: &str, reports: &[RegretReport], path: &Path) -> Result<()> {
    let header = format!("model,{REGRET_HEADER}");
    write_lines(
        path,
        &header,
        reports.iter().map(|r| format!("{model},{}", regret_row(r))),
    )
}

/// One row per `(α, n_test)`; fits for several test lengths share a file.
pub fn write_alpha_fit(fits: &[AlphaFit], config_hash: &str, path: &Path) -> Result<()> {
    write_lines(
        path,
        ALPHA_FIT_HEADER,
        fits.iter().flat_map(|fit| {
            fit.curve.iter().map(move |(a, m)| {
                format!(
                    "{},{},{},{},{},{config_hash}",
                    fmt_real(*a),
                    fmt_real(*m),
                    fit.n,
                    fit.n_test,
                    fit.reps
                )
            })
        }),
    )
}

pub fn write_contraction(rows: &[ContractionRow], config_hash: &str, path: &Path) -> Result<()> {
    write_lines(
        path,
        CONTRACTION_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{config_hash}",
                r.n,
                fmt_real(r.median_h2),
                fmt_real(r.q90_h2),
                r.reps
            )
        }),
    )
}

fn field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| EbError::Format(format!("line {line}: cannot parse field {s:?}")))
}

/// Parses a file written by [`write_report`] or [`write_model_report`]; the
/// model column, if present, is dropped.
pub fn read_report(path: &Path) -> Result<Vec<RegretReport>> {
    let text = fs::read_to_string(path).map_err(|e| EbError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| EbError::Format("empty report".into()))?;
    let skip = match header {
        REGRET_HEADER => 0,
        h if h.strip_prefix("model,") == Some(REGRET_HEADER) => 1,
        h => return Err(EbError::Format(format!("unexpected header {h:?}"))),
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let lineno = i + 2;
            let f: Vec<&str> = line.split(',').skip(skip).collect();
            if f.len() != 7 {
                return Err(EbError::Format(format!("line {lineno}: expected 7 fields")));
            }
            Ok(RegretReport {
                estimator: f[0].to_string(),
                n: field(f[1], lineno)?,
                n_test: field(f[2], lineno)?,
                reps: field(f[3], lineno)?,
                mean_regret: field(f[4], lineno)?,
                stderr: field(f[5], lineno)?,
                config_hash: f[6].to_string(),
                failures: 0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::OracleBayes;
    use crate::hb::HbEstimator;

    fn two_point() -> DiscretePrior {
        DiscretePrior::new(vec![1.0, 4.0], vec![0.5, 0.5], 5.0).unwrap()
    }

    #[test]
    fn gen_dataset_point_mass() {
        let spec = PopSpec::finite(vec![DiscretePrior::point_mass(2.0, 3.0).unwrap()]);
        let ds = gen_dataset(&spec, 1000, 100, 11).unwrap();
        ds.validate().unwrap();
        assert!(ds.batches.iter().all(|b| b.theta.iter().all(|t| *t == 2.0)));
        let xs: Vec<f64> = ds
            .batches
            .iter()
            .flat_map(|b| b.x.iter().map(|&x| x as f64))
            .collect();
        let (mean, se) = mean_stderr(&xs);
        assert!((mean - 2.0).abs() < 3.0 * se, "{mean} ± {se}");
        assert_eq!(ds, gen_dataset(&spec, 1000, 100, 11).unwrap());
        assert!(gen_dataset(&spec, 0, 1, 0).is_err());
    }

    #[test]
    fn theta_are_atoms() {
        let spec = PopSpec::uniform_dirichlet(3.0, 4);
        let ds = gen_dataset(&spec, 20, 10, 5).unwrap();
        for (m, b) in ds.batches.iter().enumerate() {
            let mut rng = stream_rng(5, "gen", m as u64);
            let g = sample_prior(&spec, &mut rng).unwrap();
            assert!(b.theta.iter().all(|t| g.atoms().contains(t)));
        }
    }

    #[test]
    fn oracle_regret_is_zero() {
        let g0 = two_point();
        let r = regret_eval(&OracleBayes { prior: g0.clone() }, &g0, 30, 64, 1).unwrap();
        assert_eq!(r.mean_regret, 0.0);
        assert_eq!(r.stderr, 0.0);
        assert_eq!(r.reps, 64);
        assert!(regret_eval(&OracleBayes { prior: g0.clone() }, &g0, 30, 1, 1).is_err());
    }

    #[test]
    fn failures_are_counted() {
        struct Flaky;
        impl Estimator<u64> for Flaky {
            fn name(&self) -> String {
                "flaky".into()
            }
            fn estimate(&self, xs: &[u64]) -> Result<Vec<f64>> {
                if xs[0].is_multiple_of(2) {
                    Err(EbError::ZeroLikelihood)
                } else {
                    Ok(vec![0.0; xs.len()])
                }
            }
        }
        let r = regret_eval(&Flaky, &two_point(), 1, 200, 3).unwrap();
        assert!(r.failures > 0 && r.reps > 0);
        assert_eq!(r.failures + r.reps, 200);
    }

    #[test]
    fn lengen_sweep_at_train_length_matches_hb() {
        let g1 = DiscretePrior::point_mass(1.0, 5.0).unwrap();
        let g2 = DiscretePrior::point_mass(3.0, 5.0).unwrap();
        let state = PosteriorState::uniform(vec![g1, g2], 10).unwrap();
        let g0 = two_point();
        let sweep = length_gen_sweep(&state, &g0, &[10], 50, 9).unwrap();
        let hb = regret_eval(
            &HbEstimator {
                state: state.clone(),
            },
            &g0,
            10,
            50,
            9,
        )
        .unwrap();
        assert!((sweep[0].mean_regret - hb.mean_regret).abs() < 1e-12);
        assert_eq!((sweep[0].n, sweep[0].n_test), (10, 10));
    }

    #[test]
    fn quantile_type7() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[5.0], 0.9), 5.0);
        assert!((quantile(&[0.0, 10.0], 0.9) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn contraction_single_prior_is_zero() {
        let g0 = two_point();
        let state = PosteriorState::uniform(vec![g0.clone()], 8).unwrap();
        let rows = contraction_diag(&state, &g0, &[1, 8], 10, 0).unwrap();
        assert!(rows.iter().all(|r| r.median_h2 < 1e-15 && r.q90_h2 < 1e-15));
        assert!(contraction_diag(&state, &g0, &[8, 8], 10, 0).is_err());
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report(&[], &path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            format!("{REGRET_HEADER}\n")
        );
        let report = RegretReport {
            estimator: "hb".into(),
            n: 50,
            n_test: 200,
            reps: 4096,
            mean_regret: 0.1 + 0.2,
            stderr: 1.0 / 3.0,
            config_hash: "0123456789abcdef".into(),
            failures: 0,
        };
        write_report(std::slice::from_ref(&report), &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
        assert_eq!(read_report(&path).unwrap(), vec![report.clone()]);
        write_model_report("gaussian", std::slice::from_ref(&report), &path).unwrap();
        assert_eq!(read_report(&path).unwrap(), vec![report]);
    }
}
