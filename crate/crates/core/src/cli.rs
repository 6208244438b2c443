//! The `posemae` command line.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags or configuration),
//! 2 for data errors (missing or malformed files, mismatched meshes).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attack::{generate_adversarial, AttackConfig, AttackMethod};
use crate::geom::{canonicalize, read_mesh, sor, write_mesh, Canonical, Mesh, MeshFormat, PointCloud, SorParams};
use crate::loss::{pmd, PMD_UNIT};
use crate::model::{load_checkpoint, Model};
use crate::synth::{load_dataset, make_dataset, write_dataset};
use crate::train::{evaluate, stream_rng, Config, EvalOptions, TrainError, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "posemae", version, about = "Pose transfer, adversarial attacks and robust training on meshes")]
pub struct Cli {
    /// Seed for every random stream; overrides `seed` from the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Mesh format for reading and writing, instead of inferring it from the extension.
    #[arg(long, global = true, value_parser = parse_format)]
    pub format: Option<MeshFormat>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_format(s: &str) -> Result<MeshFormat, String> {
    MeshFormat::parse_name(s).map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic figure dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Transfer the pose of one mesh onto an identity mesh.
    Transfer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        identity: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Craft an adversarial pose cloud against a model.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        identity: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long)]
        out: PathBuf,
        /// Report CSV; defaults to the output path with a `.csv` extension.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a model on the test splits and print the report as CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also score adversarial poses crafted against the model.
        #[arg(long)]
        attack: bool,
        #[command(flatten)]
        attack_args: AttackArgs,
        /// Triples per split; 0 scores all of them.
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
    /// Statistical outlier removal on a point cloud.
    Sor {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SorParams::default().k)]
        k: usize,
        #[arg(long, default_value_t = SorParams::default().alpha)]
        alpha: f64,
    },
}

/// Overrides for the attack section of the configuration.
#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub method: Option<AttackMethod>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

impl AttackArgs {
    fn apply(&self, cfg: &mut AttackConfig) {
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(e) = self.eps {
            cfg.eps = e;
        }
        if let Some(t) = self.iterations {
            cfg.iterations = t;
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            Config::parse(&text)?
        }
        None => Config::toy(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn read(path: &Path, format: Option<MeshFormat>) -> Result<Mesh, CliError> {
    read_mesh(path, format).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, mesh: &Mesh, format: Option<MeshFormat>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(data_err)?;
    }
    write_mesh(path, mesh, format).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_model(dir: &Path) -> Result<Model, CliError> {
    load_checkpoint(dir).map(|c| c.model).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn canonical(mesh: &Mesh) -> Result<(Mesh, Canonical), CliError> {
    canonicalize(mesh).map_err(|e| CliError::Data(format!("{}: {e}", mesh.name)))
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let seed = cfg.train.seed;
    match &cli.command {
        Command::GenData { out } => {
            let data = make_dataset(&cfg.data, &mut stream_rng(seed, "data", 0)).map_err(data_err)?;
            write_dataset(out, &data).map_err(data_err)?;
            log::info!("wrote {} meshes to {}", data.meshes.len(), out.display());
        }
        Command::Train { data, out, resume } => {
            let dataset = load_dataset(data).map_err(data_err)?;
            let mut cfg = cfg;
            let metrics = cfg.train.metrics_path.get_or_insert_with(|| out.join("metrics.csv")).clone();
            std::fs::create_dir_all(out).map_err(data_err)?;
            std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(data_err)?;
            let mut trainer = match resume {
                Some(dir) => Trainer::resume(dir, cfg, &dataset)?,
                None => Trainer::from_config(cfg, &dataset)?,
            };
            trainer.fit(Some(out))?;
            log::info!("metrics in {}", metrics.display());
        }
        Command::Transfer { model, pose, identity, out } => {
            let model = load_model(model)?;
            let (pose, _) = canonical(&read(pose, cli.format)?)?;
            let (id, frame) = canonical(&read(identity, cli.format)?)?;
            let result = model.transfer(&pose.cloud(), &id, &mut stream_rng(seed, "transfer", 0)).map_err(data_err)?;
            write(out, &result.with_vertices(frame.invert_points(&result.vertices)), cli.format)?;
        }
        Command::Attack { model, pose, identity, gt, attack, out, report } => {
            let mut acfg = cfg.attack;
            attack.apply(&mut acfg);
            acfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let model = load_model(model)?;
            let (pose, pose_frame) = canonical(&read(pose, cli.format)?)?;
            let (id, _) = canonical(&read(identity, cli.format)?)?;
            let (gt, _) = canonical(&read(gt, cli.format)?)?;
            if id.len() != gt.len() {
                return Err(CliError::Data(format!(
                    "identity has {} vertices but ground truth has {}",
                    id.len(),
                    gt.len()
                )));
            }
            let clean =
                model.transfer(&pose.cloud(), &id, &mut stream_rng(seed, "attack-clean", 0)).map_err(data_err)?;
            let outcome = generate_adversarial(
                &model,
                &pose.cloud(),
                &id.vertices,
                &gt.vertices,
                &acfg,
                &mut stream_rng(seed, "attack", 0),
            )
            .map_err(data_err)?;
            if let Some(w) = &outcome.warning {
                log::warn!("{w}");
            }
            let adv = model.transfer(&outcome.sample, &id, &mut stream_rng(seed, "attack-adv", 0)).map_err(data_err)?;
            let points = pose_frame.invert_points(&outcome.sample.points);
            write(out, &Mesh::from_points(points, "adversarial"), cli.format.or(Some(MeshFormat::Ply)))?;

            let mut csv = String::from("metric,value\n");
            let pmd_clean = pmd(&clean.vertices, &gt.vertices).map_err(data_err)? / PMD_UNIT;
            let pmd_adv = pmd(&adv.vertices, &gt.vertices).map_err(data_err)? / PMD_UNIT;
            let _ = writeln!(csv, "method,{}", acfg.method);
            let _ = writeln!(csv, "eps,{}", acfg.eps);
            let _ = writeln!(csv, "pmd_clean_x1e4,{pmd_clean}");
            let _ = writeln!(csv, "pmd_adversarial_x1e4,{pmd_adv}");
            let _ = writeln!(csv, "perturbation_l2,{}", outcome.l2);
            let _ = writeln!(csv, "perturbation_linf,{}", outcome.linf);
            let _ = writeln!(csv, "points_in,{}", pose.len());
            let _ = writeln!(csv, "points_kept,{}", outcome.sample.len());
            let report = report.clone().unwrap_or_else(|| out.with_extension("csv"));
            std::fs::write(&report, csv).map_err(data_err)?;
        }
        Command::Eval { model, data, attack, attack_args, samples } => {
            let mut acfg = cfg.attack;
            attack_args.apply(&mut acfg);
            acfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let model = load_model(model)?;
            let dataset = load_dataset(data).map_err(data_err)?;
            let opts =
                EvalOptions { samples: *samples, attack: attack.then_some(acfg), seed, ..EvalOptions::default() };
            print!("{}", evaluate(&model, &dataset, &opts)?.to_csv());
        }
        Command::Sor { input, out, k, alpha } => {
            let mesh = read(input, cli.format)?;
            let r = sor(&PointCloud::new(mesh.vertices), SorParams { k: *k, alpha: *alpha })
                .map_err(|e| CliError::Usage(e.to_string()))?;
            log::info!("removed {} of {} points", r.removed.len(), r.kept.len() + r.removed.len());
            write(out, &Mesh::from_points(r.cloud.points, "filtered"), cli.format.or(Some(MeshFormat::Ply)))?;
        }
    }
    Ok(())
}
