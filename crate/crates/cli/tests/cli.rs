use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"
n = 20
n_test_list = [20, 80]
estimators = ["oracle", "hb", "lengen", "robbins", "npmle", "erm"]
reps = 16
mc_draws = 64
alpha_grid = [0.25, 0.5, 1.0]
root_seed = 3
n_list = [4, 16]
contraction_reps = 8
batches = 50

[pop]
support_bound = 5.0
kind = "UNIFORM_DIRICHLET"
k = 4

[test_prior]
atoms = [1.0, 4.0]
weights = [0.5, 0.5]
"#;

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eb.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn eb_lab(config: &Path, args: &[&str]) -> Output {
    let out_dir = config.parent().unwrap().join("out");
    Command::new(env!("CARGO_BIN_EXE_eb-lab"))
        .arg("--config")
        .arg(config)
        .arg("--set")
        .arg(format!("output_dir=\"{}\"", out_dir.display()))
        .args(args)
        .env_remove("EB_LAB_SEED")
        .output()
        .unwrap()
}

fn outputs(dir: &Path) -> Vec<PathBuf> {
    let out = dir.join("out");
    if !out.exists() {
        return Vec::new();
    }
    let mut files: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
}

fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == name)
        .unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().to_string())
        .collect()
}

#[test]
fn regret_with_oracle_only_is_zero() {
    let (dir, cfg) = setup(BASE);
    let out = eb_lab(&cfg, &["--set", "estimators=[\"oracle\"]", "regret"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let files = outputs(dir.path());
    assert_eq!(files.len(), 1);
    let name = files[0].file_name().unwrap().to_str().unwrap();
    assert!(
        name.starts_with("regret_")
            && name.ends_with(".csv")
            && name.len() == "regret_.csv".len() + 16
    );
    for v in csv_column(&files[0], "mean_regret") {
        assert_eq!(v.parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn regret_all_estimators_is_deterministic() {
    let (dir, cfg) = setup(BASE);
    assert!(eb_lab(&cfg, &["regret"]).status.success());
    let files = outputs(dir.path());
    let first = fs::read(&files[0]).unwrap();
    assert_eq!(csv_column(&files[0], "estimator").len(), 6);
    assert!(eb_lab(&cfg, &["--workers", "2", "regret"]).status.success());
    assert_eq!(fs::read(&files[0]).unwrap(), first);
}

#[test]
fn alphafit_lengen_reference_recovers_quarter() {
    let (dir, cfg) = setup(BASE);
    let out = eb_lab(&cfg, &["--set", "n_test_list=[80]", "alphafit"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let file = &outputs(dir.path())[0];
    let alphas = csv_column(file, "alpha");
    let msd: Vec<f64> = csv_column(file, "msd")
        .iter()
        .map(|m| m.parse().unwrap())
        .collect();
    let best = (0..msd.len())
        .min_by(|&a, &b| msd[a].total_cmp(&msd[b]))
        .unwrap();
    assert_eq!(alphas[best].parse::<f64>().unwrap(), 0.25);
    assert!(msd[best] <= 1e-16);
}

#[test]
fn lengen_contract_npmle_and_gen() {
    let (dir, cfg) = setup(BASE);
    for cmd in [
        &["lengen"][..],
        &["contract"],
        &["npmle"],
        &["gen", "--csv"],
    ] {
        let out = eb_lab(&cfg, cmd);
        assert!(
            out.status.success(),
            "{cmd:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let names: Vec<String> = outputs(dir.path())
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for prefix in ["lengen_", "contract_", "npmle_", "gen_"] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "{names:?}");
    }
    let ebds = outputs(dir.path())
        .into_iter()
        .find(|p| p.extension().unwrap() == "ebds")
        .unwrap();
    assert_eq!(&fs::read(&ebds).unwrap()[..4], b"EBDS");
    let out = eb_lab(&cfg, &["npmle", "--input", ebds.to_str().unwrap()]);
    assert!(out.status.success());
    let header = fs::read_to_string(
        outputs(dir.path())
            .iter()
            .find(|p| p.to_string_lossy().contains("contract_"))
            .unwrap(),
    )
    .unwrap();
    assert!(header.starts_with("n,median_h2,q90_h2,reps,config_hash\n"));
}

#[test]
fn gaussian_regret_has_model_column() {
    let (dir, cfg) = setup(BASE);
    let out = eb_lab(
        &cfg,
        &[
            "--set",
            "model=gaussian",
            "--set",
            "estimators=[\"oracle\", \"hb\", \"bayes_reg\"]",
            "--set",
            "test_prior.atoms=[-1.0, 2.0]",
            "regret",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let file = &outputs(dir.path())[0];
    assert!(fs::read_to_string(file)
        .unwrap()
        .starts_with("model,estimator,n,n_test,reps,mean_regret,stderr,config_hash\n"));
    assert_eq!(csv_column(file, "model"), vec!["gaussian"; 3]);
}

#[test]
fn config_errors_exit_one_without_outputs() {
    let (dir, cfg) = setup("n = [this is not toml");
    let out = eb_lab(&cfg, &["regret"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(outputs(dir.path()).is_empty());

    let (dir, cfg) = setup(BASE);
    let out = eb_lab(
        &cfg,
        &["--set", "estimators=[\"hb\", \"nonesuch\"]", "regret"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonesuch"));
    assert!(outputs(dir.path()).is_empty());

    let out = eb_lab(
        &cfg,
        &[
            "--set",
            "model=gaussian",
            "--set",
            "estimators=[\"oracle\"]",
            "contract",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    let (dir, cfg) = setup(BASE);
    let missing = dir.path().join("missing.ebds");
    let out = eb_lab(&cfg, &["npmle", "--input", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ebds"));
}

#[test]
fn seed_env_overrides_root_seed() {
    let (dir, cfg) = setup(BASE);
    let run = |seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_eb-lab"));
        cmd.arg("--config")
            .arg(&cfg)
            .arg("--set")
            .arg(format!(
                "output_dir=\"{}\"",
                dir.path().join("out").display()
            ))
            .args(["--set", "estimators=[\"robbins\"]", "regret"]);
        match seed {
            Some(s) => cmd.env("EB_LAB_SEED", s),
            None => cmd.env_remove("EB_LAB_SEED"),
        };
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
    };
    let a = run(None);
    let b = run(Some("3"));
    let c = run(Some("4"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let out = Command::new(env!("CARGO_BIN_EXE_eb-lab"))
        .arg("--config")
        .arg(&cfg)
        .arg("regret")
        .env("EB_LAB_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
