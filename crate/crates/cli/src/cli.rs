//! The `ssal` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors and contract or configuration
//! violations, 2 on I/O and malformed-file errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use ssal_core::attack::{validate_universal_basis, BasisVariant};
use ssal_core::calibration::fit_sigmoid;
use ssal_core::io::{save_matrix, save_vector};
use ssal_core::ofs::{generate_ofs, OfsConfig};
use ssal_core::sphere::{beta_fit_report, projection_energies, BasisChoice, BetaFitReport};
use ssal_core::stats::Histogram;
use ssal_core::world::{build_world, load_world, save_world, SyntheticWorld, WorldConfig};
use ssal_core::{rng, Error, Result};

use crate::config::{AttackConfig, ExperimentConfig, ExperimentMode};
use crate::experiment::{self, write_outputs};

#[derive(Debug, Parser)]
#[command(
    name = "ssal",
    version,
    about = "Attributed-subsphere adversarial face experiments on a synthetic world"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte-Carlo check of the Beta law of random subsphere projections.
    ValidateProp(ValidatePropArgs),
    /// Build a synthetic world and save it.
    GenWorld(GenWorldArgs),
    /// Generate an orthogonal face set.
    GenOfs(GenOfsArgs),
    /// Fit the confidence curve to (cosine, confidence) pairs.
    FitSigmoid(FitSigmoidArgs),
    /// Build the attributed basis images (and the black-box calibration).
    PrepareBasis(ExperimentArgs),
    /// Run an attack experiment.
    Attack(ExperimentArgs),
    /// Cross-model consistency of score vectors for a basis variant.
    ValidateBasis(ValidateBasisArgs),
    /// Re-aggregate the summaries of finished runs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum BasisArg {
    Random,
    Axes,
}

#[derive(Debug, Args)]
struct ValidatePropArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "random")]
    basis: BasisArg,
    /// Histogram bins over [0, 1) of the squared cosine.
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Also write report.csv and histogram.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WorldArgs {
    /// World config as TOML (keys of the `[world]` table). Flags override it.
    #[arg(long)]
    world_config: Option<PathBuf>,
    /// Load a saved world instead of building one.
    #[arg(long, conflicts_with = "world_config")]
    world: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k_f: Option<usize>,
    #[arg(long)]
    sigma_id: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    n_models: Option<usize>,
    /// Master seed; the world seed is derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl WorldArgs {
    fn config(&self) -> Result<WorldConfig> {
        let mut cfg = match &self.world_config {
            Some(p) => toml::from_str::<WorldConfig>(&fs::read_to_string(p)?)
                .map_err(|e| Error::Config(e.to_string()))?,
            None => WorldConfig::new(64, 128, 24, 0.3, 0.05, 0),
        };
        cfg.d = self.d.unwrap_or(cfg.d);
        cfg.m = self.m.unwrap_or(cfg.m.max(cfg.d));
        cfg.k_f = self.k_f.unwrap_or(cfg.k_f);
        cfg.sigma_id = self.sigma_id.unwrap_or(cfg.sigma_id);
        cfg.eta_model = self.eta.unwrap_or(cfg.eta_model);
        cfg.n_models = self.n_models.unwrap_or(cfg.n_models);
        cfg.seed = rng::derive_seed(self.seed, "world");
        if self.d.is_some() && self.m.is_none() && cfg.m < cfg.d {
            cfg.m = 2 * cfg.d;
        }
        Ok(cfg)
    }

    fn world(&self) -> Result<SyntheticWorld> {
        match &self.world {
            Some(dir) => load_world(dir),
            None => build_world(&self.config()?),
        }
    }
}

#[derive(Debug, Args)]
struct GenWorldArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenOfsArgs {
    #[command(flatten)]
    world: WorldArgs,
    /// Model index (`target` for the target model).
    #[arg(long, default_value = "0")]
    model: String,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitSigmoidArgs {
    /// CSV with header `cosine,confidence`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    WhiteBox,
    BlackBox,
    Transfer,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment config (TOML). Without one, a 64-dimensional default world is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    use_correction: Option<bool>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_targets: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig {
                seed: 0,
                output_dir: PathBuf::new(),
                world: WorldConfig::new(64, 128, 24, 0.3, 0.05, 0),
                attack: AttackConfig {
                    mode: ExperimentMode::BlackBox,
                    use_correction: true,
                    k: 24,
                    attribute: "f".into(),
                    n_targets: 100,
                    population: 1000,
                    local_model: 0,
                    fit_data: crate::config::FitData::BasisPairs,
                    held_out_pairs: 400,
                    centered_pca: true,
                },
                thresholds: crate::config::default_thresholds(),
                calibration_pairs: 1000,
                store_images: true,
            },
        };
        if let Some(m) = self.mode {
            cfg.attack.mode = match m {
                ModeArg::WhiteBox => ExperimentMode::WhiteBox,
                ModeArg::BlackBox => ExperimentMode::BlackBox,
                ModeArg::Transfer => ExperimentMode::Transfer,
            };
        }
        if let Some(v) = self.use_correction {
            cfg.attack.use_correction = v;
        }
        if let Some(k) = self.k {
            cfg.attack.k = k;
            if cfg.world.d < k {
                return Err(Error::Config(format!(
                    "k={k} exceeds the world dimension {}",
                    cfg.world.d
                )));
            }
        }
        if let Some(n) = self.n_targets {
            cfg.attack.n_targets = n;
        }
        if let Some(e) = self.eta {
            cfg.world.eta_model = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum VariantArg {
    Attributed,
    RandomFaces,
    RandomVectors,
    All,
}

#[derive(Debug, Args)]
struct ValidateBasisArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long, value_enum, default_value = "all")]
    variant: VariantArg,
    #[arg(long, default_value = "f")]
    attribute: String,
    #[arg(long, default_value_t = 24)]
    k: usize,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Cosine threshold (0.3420 is cos 70°).
    #[arg(long, default_value_t = 0.3420)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// A run directory or a directory of run directories.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::ValidateProp(a) => validate_prop(a),
        Command::GenWorld(a) => gen_world(a),
        Command::GenOfs(a) => gen_ofs(a),
        Command::FitSigmoid(a) => fit_sigmoid_cmd(a),
        Command::PrepareBasis(a) => prepare_basis_cmd(a),
        Command::Attack(a) => attack(a),
        Command::ValidateBasis(a) => validate_basis(a),
        Command::Report(a) => report(a),
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))
}

fn prop_csv(report: &BetaFitReport) -> String {
    format!("{}\n{}\n", BetaFitReport::CSV_HEADER, report.csv_row())
}

fn validate_prop(a: ValidatePropArgs) -> Result<()> {
    let choice = match a.basis {
        BasisArg::Random => BasisChoice::Random,
        BasisArg::Axes => BasisChoice::Axes,
    };
    let mut r = rng::stream(a.seed, "validate-prop");
    let energies = projection_energies(a.d, a.k, a.n, choice, &mut r)?;
    let report = beta_fit_report(a.d, a.k, &energies)?;
    let csv = prop_csv(&report);
    print!("{csv}");
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("report.csv"), &csv)?;
        let hist = Histogram::from_values(0.0, 1.0, a.bins, &energies)?;
        fs::write(dir.join("histogram.csv"), hist.to_csv())?;
    }
    Ok(())
}

fn gen_world(a: GenWorldArgs) -> Result<()> {
    let world = a.world.world()?;
    save_world(&world, &a.out)?;
    println!("{}", world.fingerprint());
    Ok(())
}

#[derive(Serialize)]
struct OfsSummary {
    k: usize,
    final_loss: f64,
    iterations: usize,
    converged: bool,
    gram_offdiag_max: f64,
}

fn gen_ofs(a: GenOfsArgs) -> Result<()> {
    let world = a.world.world()?;
    let model = if a.model == "target" {
        world.target.model.clone()
    } else {
        let i: usize = a.model.parse().map_err(|_| {
            Error::Config(format!(
                "--model must be an index or 'target', got '{}'",
                a.model
            ))
        })?;
        world.model(i)?.clone()
    };
    let cfg = OfsConfig {
        learning_rate: a.lr,
        max_iters: a.max_iters,
        convergence_tol: a.tol,
        ..OfsConfig::new(a.k, a.world.seed)
    };
    let res = generate_ofs(&world, &model, &cfg)?;
    let summary = OfsSummary {
        k: a.k,
        final_loss: res.final_loss,
        iterations: res.iterations,
        converged: res.converged,
        gram_offdiag_max: res.gram_offdiag_max,
    };
    let text = json(&summary)?;
    println!("{text}");
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("ofs.json"), &text)?;
        fs::write(dir.join("loss_trace.csv"), res.loss_trace_csv())?;
        save_matrix(&dir.join("latents.bin"), &res.latents)?;
        for (i, img) in res.images.iter().enumerate() {
            save_vector(&dir.join(format!("image_{i:04}.bin")), img.as_slice())?;
        }
    }
    Ok(())
}

fn fit_sigmoid_cmd(a: FitSigmoidArgs) -> Result<()> {
    let mut reader = csv::Reader::from_path(&a.input).map_err(|e| {
        if e.is_io_error() {
            Error::Io(std::io::Error::other(e.to_string()))
        } else {
            Error::Format(e.to_string())
        }
    })?;
    let mut pairs = Vec::new();
    for row in reader.deserialize::<(f64, f64)>() {
        pairs.push(row.map_err(|e| Error::Format(e.to_string()))?);
    }
    let fit = fit_sigmoid(&pairs, a.seed)?;
    let text = json(&fit)?;
    println!("{text}");
    if let Some(p) = a.out {
        fs::write(p, &text)?;
    }
    Ok(())
}

fn rows_matrix(rows: &[nalgebra::DVector<f64>]) -> DMatrix<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

fn require_out(cfg: &ExperimentConfig) -> Result<&Path> {
    if cfg.output_dir.as_os_str().is_empty() {
        return Err(Error::Config(
            "an output directory is required (--out or output_dir)".into(),
        ));
    }
    Ok(&cfg.output_dir)
}

fn prepare_basis_cmd(a: ExperimentArgs) -> Result<()> {
    let cfg = a.config()?;
    let dir = require_out(&cfg)?;
    let world = build_world(&cfg.effective_world())?;
    let basis = experiment::build_basis(&cfg, &world)?;
    fs::create_dir_all(dir)?;
    save_matrix(&dir.join("basis_images.bin"), &rows_matrix(&basis.images))?;
    save_matrix(&dir.join("basis_features.bin"), basis.features.rows())?;
    #[derive(Serialize)]
    struct BasisInfo<'a> {
        fingerprint: String,
        world_fingerprint: String,
        k: usize,
        attribute: &'a str,
        explained_variance: &'a [f64],
    }
    let info = BasisInfo {
        fingerprint: cfg.fingerprint(),
        world_fingerprint: world.fingerprint(),
        k: basis.k(),
        attribute: &basis.source_attribute,
        explained_variance: &basis.explained_variance,
    };
    fs::write(dir.join("basis.json"), json(&info)?)?;
    if cfg.attack.mode == ExperimentMode::BlackBox {
        let cal = experiment::black_box_calibration(&cfg, &world, &basis)?;
        fs::write(dir.join("calibration.json"), json(&cal)?)?;
    }
    println!("{}", info.fingerprint);
    Ok(())
}

fn attack(a: ExperimentArgs) -> Result<()> {
    let cfg = a.config()?;
    let dir = require_out(&cfg)?.to_path_buf();
    let outcome = experiment::run_experiment(&cfg)?;
    write_outputs(&outcome, &dir)?;
    let mut w = csv::Writer::from_writer(std::io::stdout());
    for s in &outcome.summaries {
        w.serialize(s).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn validate_basis(a: ValidateBasisArgs) -> Result<()> {
    let world = a.world.world()?;
    let variants: Vec<BasisVariant> = match a.variant {
        VariantArg::Attributed => vec![BasisVariant::Attributed],
        VariantArg::RandomFaces => vec![BasisVariant::RandomFaces],
        VariantArg::RandomVectors => vec![BasisVariant::RandomVectors],
        VariantArg::All => vec![
            BasisVariant::Attributed,
            BasisVariant::RandomFaces,
            BasisVariant::RandomVectors,
        ],
    };
    let mut table = String::from("variant,n,threshold_cos,fraction_within,mean_angle_deg\n");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
    }
    for v in variants {
        let rep =
            validate_universal_basis(&world, v, &a.attribute, a.k, a.n, a.threshold, a.world.seed)?;
        let name = serde_json::to_value(v)
            .ok()
            .and_then(|x| x.as_str().map(String::from))
            .unwrap_or_default();
        let mean_deg = if rep.angles.is_empty() {
            f64::NAN
        } else {
            rep.angles.iter().map(|x| x.to_degrees()).sum::<f64>() / rep.angles.len() as f64
        };
        table.push_str(&format!(
            "{name},{},{},{},{}\n",
            rep.angles.len(),
            rep.threshold_cos,
            rep.fraction_within,
            mean_deg
        ));
        if let Some(dir) = &a.out {
            fs::write(
                dir.join(format!("histogram_{name}.csv")),
                rep.histogram.to_csv(),
            )?;
        }
    }
    print!("{table}");
    if let Some(dir) = &a.out {
        fs::write(dir.join("summary.csv"), &table)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let summaries = experiment::aggregate(&a.dir)?;
    match &a.out {
        Some(p) => experiment::write_summaries(p, &summaries)?,
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for s in &summaries {
                w.serialize(s).map_err(|e| Error::Format(e.to_string()))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
