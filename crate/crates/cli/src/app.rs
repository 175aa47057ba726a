//! Command-line surface: flag definitions and subcommand dispatch.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use advx_core::attacks::{AttackMethod, ZooParams};
use advx_core::cube::DEFAULT_LEVELS;
use advx_core::projection::{ProjectionConfig, ProjectionMethod, TsneParams};
use advx_core::tensornet::{Architecture, TrainConfig};
use advx_store::api::{router, serve, DEFAULT_PORT};
use advx_store::{read_bundle, write_bundle};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult, Stage};
use crate::pipeline::{self, DemoConfig};

#[derive(Debug, Parser)]
#[command(name = "advx", version, about = "Adversarial example workbench: train, attack, project, bundle and serve")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic 10-class image set in CIFAR-10 binary layout.
    MakeFixture(FixtureArgs),
    /// Train a fixture network and save its weights and card.
    TrainModel(TrainArgs),
    /// Attack a dataset at every ε of a grid and write a sweep directory.
    Attack(AttackArgs),
    /// Project the embeddings of sweep directories to 2-D.
    Project(ProjectArgs),
    /// Bin projected sweep directories into multi-level cubes.
    BuildCube(CubeArgs),
    /// Validate finished sweeps and write an artifact bundle.
    Bundle(BundleArgs),
    /// Serve bundles over the read-only HTTP API.
    Serve(ServeArgs),
    /// Run the whole recipe (three models, FGSM and ZOO) into one bundle.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    CnnA,
    CnnB,
}

impl From<ModelArg> for Architecture {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::CnnA => Architecture::CnnA,
            ModelArg::CnnB => Architecture::CnnB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Fgsm,
    Zoo,
}

impl From<MethodArg> for AttackMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fgsm => AttackMethod::Fgsm,
            MethodArg::Zoo => AttackMethod::Zoo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProjectionArg {
    Pca,
    Tsne,
}

impl From<ProjectionArg> for ProjectionMethod {
    fn from(p: ProjectionArg) -> Self {
        match p {
            ProjectionArg::Pca => ProjectionMethod::Pca,
            ProjectionArg::Tsne => ProjectionMethod::Tsne,
        }
    }
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Directory receiving train.bin and test.bin.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub train: usize,
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data in CIFAR-10 binary layout.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Keep at most this many images, stratified by class.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_enum, default_value = "cnn-a")]
    pub model: ModelArg,
    /// Model name used inside bundles. Defaults to the output file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// Fraction of every mini-batch replaced by FGSM examples.
    #[arg(long, default_value_t = 0.0)]
    pub adv_train_fraction: f32,
    /// L∞ budget of the adversarial training examples.
    #[arg(long, default_value_t = 0.03)]
    pub adv_epsilon: f32,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight file to write; the card goes next to it as `.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ZooArgs {
    /// ZOO iterations per image and ε.
    #[arg(long, default_value_t = ZooParams::default().iterations)]
    pub zoo_iterations: usize,
    /// Coordinates estimated per ZOO iteration.
    #[arg(long, default_value_t = ZooParams::default().coords_per_iter)]
    pub zoo_coords: usize,
    #[arg(long, default_value_t = ZooParams::default().step_size)]
    pub zoo_step: f64,
    /// Weight of the misclassification loss.
    #[arg(long, default_value_t = ZooParams::default().c)]
    pub zoo_c: f64,
}

impl ZooArgs {
    fn params(&self) -> ZooParams {
        ZooParams {
            iterations: self.zoo_iterations,
            coords_per_iter: self.zoo_coords,
            step_size: self.zoo_step,
            c: self.zoo_c,
            ..ZooParams::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Data to attack, in CIFAR-10 binary layout.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Weight file written by `train-model`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Comma-separated ascending grid starting at 0. Defaults to the
    /// method's standard grid.
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f32>>,
    #[command(flatten)]
    pub zoo: ZooArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sweep directory to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectionArgs {
    #[arg(long, value_enum, default_value = "pca")]
    pub projection: ProjectionArg,
    /// t-SNE runs aligned and averaged.
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, default_value_t = TsneParams::default().perplexity)]
    pub perplexity: f64,
    #[arg(long, default_value_t = TsneParams::default().iterations)]
    pub tsne_iterations: usize,
}

impl ProjectionArgs {
    fn config(&self, seed: u64) -> CliResult<ProjectionConfig> {
        if self.runs == 0 {
            return Err(CliError::usage("project", "--runs must be at least 1"));
        }
        if !(self.perplexity > 0.0) || self.tsne_iterations == 0 {
            return Err(CliError::usage("project", "perplexity and t-SNE iterations must be positive"));
        }
        Ok(ProjectionConfig {
            method: self.projection.into(),
            runs: self.runs,
            seed,
            tsne: TsneParams {
                perplexity: self.perplexity,
                iterations: self.tsne_iterations,
                ..TsneParams::default()
            },
        })
    }
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Sweep directories, updated in place.
    #[arg(required = true)]
    pub sweeps: Vec<PathBuf>,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CubeArgs {
    /// Sweep directories, updated in place.
    #[arg(required = true)]
    pub sweeps: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    pub levels: usize,
}

#[derive(Debug, Args)]
pub struct BundleArgs {
    /// The data every sweep was attacked on.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Finished sweep directories.
    #[arg(required = true)]
    pub sweeps: Vec<PathBuf>,
    #[arg(long, default_value = "demo")]
    pub name: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bundle directory to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Bundle directories; the first is served by default.
    #[arg(required = true)]
    pub bundles: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Built web UI served at `/`.
    #[arg(long)]
    pub ui: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Test data in CIFAR-10 binary layout. Requires --train-dataset;
    /// without both a synthetic fixture is generated.
    #[arg(long, requires = "train_dataset")]
    pub dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    pub train_dataset: Option<PathBuf>,
    /// Test instances attacked and bundled.
    #[arg(long, default_value_t = 1000)]
    pub limit: usize,
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Training images generated for the synthetic fixture.
    #[arg(long, default_value_t = 5000)]
    pub fixture_train: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    pub levels: usize,
    #[command(flatten)]
    pub zoo: ZooArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bundle directory to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// Sizes the worker pool from `ADVX_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("ADVX_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage("setup", format!("ADVX_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::usage("setup", e.to_string()))
}

fn model_name(explicit: Option<&str>, out: &Path) -> CliResult<String> {
    match explicit {
        Some(name) => Ok(name.to_string()),
        None => out
            .file_stem()
            .and_then(|s| s.to_str())
            .map(str::to_string)
            .ok_or_else(|| CliError::usage("train", "cannot derive a model name from --out; pass --name")),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::MakeFixture(a) => {
            let (train, test) = pipeline::make_fixture(&a.out, a.train, a.test, a.seed)?;
            println!("wrote {} and {}", train.display(), test.display());
        }
        Command::TrainModel(a) => {
            let name = model_name(a.name.as_deref(), &a.out)?;
            if !pipeline::valid_name(&name) {
                return Err(CliError::usage("train", format!("model name {name:?} is not a plain file name")));
            }
            let cfg = TrainConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                learning_rate: a.learning_rate,
                seed: a.seed,
                adversarial_fraction: a.adv_train_fraction,
                adversarial_epsilon: a.adv_epsilon,
            };
            cfg.validate().map_err(|e| CliError::usage("train", e.to_string()))?;
            let data = pipeline::load_dataset(&a.dataset, a.limit)?;
            let model = pipeline::train_model(&name, a.model.into(), &data, &cfg)?;
            pipeline::save_model(&a.out, &model)?;
            let loss = model.card.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!("trained {name} on {} images, final epoch loss {loss:.4}", data.len());
        }
        Command::Attack(a) => {
            let cfg = pipeline::attack_config(a.method.into(), a.epsilons.clone(), a.zoo.params(), a.seed)?;
            let model = pipeline::load_model(&a.model)?;
            let data = pipeline::load_dataset(&a.dataset, a.limit)?;
            let sweep = pipeline::run_attack(model, &data, cfg)?;
            pipeline::write_sweep(&a.out, &sweep, "attack")?;
            for g in &sweep.groups {
                let acc = advx_store::AccuracyRecord::of(&g.predictions);
                println!("epsilon {}: robust accuracy {:.4}", g.epsilon, acc.robust);
            }
        }
        Command::Project(a) => {
            let cfg = a.projection.config(a.seed)?;
            let mut sweeps = read_all(&a.sweeps, "project")?;
            for (dir, sweep) in a.sweeps.iter().zip(&mut sweeps) {
                pipeline::project_sweep(sweep, &cfg)?;
                pipeline::write_sweep(dir, sweep, "project")?;
                println!("projected {}", dir.display());
            }
        }
        Command::BuildCube(a) => {
            if a.levels == 0 {
                return Err(CliError::usage("build-cube", "--levels must be at least 1"));
            }
            let mut sweeps = read_all(&a.sweeps, "build-cube")?;
            for (dir, sweep) in a.sweeps.iter().zip(&mut sweeps) {
                pipeline::build_sweep_cubes(sweep, a.levels)?;
                pipeline::write_sweep(dir, sweep, "build-cube")?;
                println!("binned {}", dir.display());
            }
        }
        Command::Bundle(a) => {
            if !pipeline::valid_name(&a.name) {
                return Err(CliError::usage("bundle", format!("bundle name {:?} is not a plain file name", a.name)));
            }
            let sweeps = read_all(&a.sweeps, "bundle")?;
            let data = pipeline::load_dataset(&a.dataset, a.limit)?;
            let bundle = pipeline::assemble_bundle(&a.name, a.seed, data, sweeps)?;
            let manifest = write_bundle(&a.out, &bundle).stage("bundle")?;
            println!("wrote {} with {} artifact groups", a.out.display(), manifest.group_count());
        }
        Command::Serve(a) => serve_bundles(&a)?,
        Command::Demo(a) => {
            let cfg = DemoConfig {
                data: a.dataset.clone().zip(a.train_dataset.clone()).map(|(test, train)| (train, test)),
                fixture_train: a.fixture_train,
                train_limit: a.train_limit,
                limit: a.limit,
                epochs: a.epochs,
                seed: a.seed,
                projection: a.projection.config(a.seed)?,
                levels: a.levels,
                zoo: a.zoo.params(),
            };
            let manifest = pipeline::run_demo(&cfg, &a.out)?;
            println!("wrote {} with {} artifact groups", a.out.display(), manifest.group_count());
        }
    }
    Ok(())
}

fn read_all(dirs: &[PathBuf], stage: &'static str) -> CliResult<Vec<pipeline::Sweep>> {
    dirs.iter().map(|d| pipeline::read_sweep(d, stage)).collect()
}

fn serve_bundles(a: &ServeArgs) -> CliResult<()> {
    const STAGE: &str = "serve";
    if let Some(ui) = &a.ui {
        if !ui.is_dir() {
            return Err(CliError::usage(STAGE, format!("--ui {} is not a directory", ui.display())));
        }
    }
    let mut loaded = Vec::with_capacity(a.bundles.len());
    for dir in &a.bundles {
        let (manifest, bundle) = read_bundle(dir)
            .map_err(|e| CliError::new(STAGE, crate::error::Failure::Format, format!("{}: {e}", dir.display())))?;
        if loaded.iter().any(|(m, _): &(advx_store::Manifest, _)| m.name == manifest.name) {
            return Err(CliError::consistency(STAGE, format!("two bundles are named {}", manifest.name)));
        }
        loaded.push((manifest, bundle));
    }
    let app = router(loaded, a.ui.clone());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::usage(STAGE, e.to_string()))?;
    runtime.block_on(async {
        let addr = SocketAddr::new(a.host, a.port);
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::usage(STAGE, format!("cannot listen on {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::usage(STAGE, e.to_string()))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        serve(listener, app)
            .await
            .map_err(|e| CliError::usage(STAGE, e.to_string()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_epsilon_lists_and_defaults() {
        let cli = Cli::try_parse_from([
            "advx", "attack", "--dataset", "d.bin", "--model", "m.advxnet", "--method", "zoo", "--epsilons", "0,0.1",
            "--out", "s",
        ])
        .unwrap();
        let Command::Attack(a) = cli.command else { panic!("not attack") };
        assert_eq!(a.epsilons, Some(vec![0.0, 0.1]));
        assert_eq!(a.zoo.zoo_iterations, 300);
        assert_eq!(a.method, MethodArg::Zoo);
    }

    #[test]
    fn rejects_unknown_model() {
        let err = Cli::try_parse_from(["advx", "train-model", "--dataset", "d", "--model", "vgg", "--out", "m"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn demo_needs_both_datasets() {
        assert!(Cli::try_parse_from(["advx", "demo", "--dataset", "t.bin", "--out", "b"]).is_err());
        assert!(Cli::try_parse_from(["advx", "demo", "--out", "b"]).is_ok());
    }

    #[test]
    fn model_names_default_to_file_stem() {
        assert_eq!(model_name(None, Path::new("models/cnn-b.advxnet")).unwrap(), "cnn-b");
        assert_eq!(model_name(Some("x"), Path::new("y.advxnet")).unwrap(), "x");
    }
}
