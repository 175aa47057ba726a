//! Pipeline stages shared by the subcommands and the demo recipe.
//!
//! Stages hand work to each other through files:
//!
//! * datasets in CIFAR-10 binary layout;
//! * models as `<name>.advxnet` weights next to a `<name>.json` card;
//! * sweep directories, one attacked ε grid each, filled in by `attack`,
//!   then `project`, then `build-cube`, and finally packed by `bundle`.
//!
//! A sweep directory holds `sweep.json`, a copy of the attacked model as
//! `model.advxnet`, and one subdirectory per ε with `noise.f32`, `conf.f32`,
//! `pred.json` and `embed.f32`, later joined by `coords.f32` and `cube.json`.

use std::fs;
use std::path::{Path, PathBuf};

use advx_core::attacks::{attack_sweep, AttackConfig, AttackMethod, ZooParams};
use advx_core::cube::{build_cube, BinCube};
use advx_core::dataset::{ingest_cifar10, Dataset, SynthConfig};
use advx_core::projection::{project_levels, ProjectionConfig, ProjectionMethod};
use advx_core::tensornet::{train, weights, Architecture, Network, Shape3, TrainConfig};
use advx_store::format::{decode_f32, encode_f32, CONFIDENCE_MAGIC, COORDS_MAGIC, NOISE_MAGIC};
use advx_store::{
    epsilon_dir, write_bundle, AccuracyRecord, Artifact, AttackRun, Bundle, GroupEntry, Manifest, ModelEntry,
    Predictions,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, Stage};

pub const MODEL_FORMAT: &str = "advx-model/1";
pub const SWEEP_FORMAT: &str = "advx-sweep/1";
/// Penultimate embeddings of a sweep group, `count` values in all.
pub const EMBEDDING_MAGIC: &[u8; 8] = b"ADVXEMB1";

const SWEEP_MANIFEST: &str = "sweep.json";
const SWEEP_WEIGHTS: &str = "model.advxnet";

fn read(stage: &'static str, path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::format(stage, format!("{}: {e}", path.display())))
}

fn write(stage: &'static str, path: &Path, bytes: &[u8]) -> CliResult<()> {
    let fail = |e: std::io::Error| CliError::format(stage, format!("{}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(fail)?;
    }
    fs::write(path, bytes).map_err(fail)
}

fn to_json<T: Serialize>(stage: &'static str, value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).stage(stage)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Names become directory and file names inside bundles.
pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Reads a CIFAR-10 binary file, keeping at most `limit` instances with
/// per-class stratification.
pub fn load_dataset(path: &Path, limit: Option<usize>) -> CliResult<Dataset> {
    if limit == Some(0) {
        return Err(CliError::usage("ingest", "--limit must be at least 1"));
    }
    let data = ingest_cifar10(path, limit)
        .map_err(|e| CliError::format("ingest", format!("{}: {e}", path.display())))?;
    if data.is_empty() {
        return Err(CliError::format("ingest", format!("{} holds no records", path.display())));
    }
    Ok(data)
}

/// Writes a synthetic fixture as `train.bin` and `test.bin` under `out`.
pub fn make_fixture(out: &Path, train_count: usize, test_count: usize, seed: u64) -> CliResult<(PathBuf, PathBuf)> {
    if train_count == 0 || test_count == 0 {
        return Err(CliError::usage("fixture", "both splits need at least one image"));
    }
    let split = synth(train_count, test_count, seed)?;
    let train_path = out.join("train.bin");
    let test_path = out.join("test.bin");
    write("fixture", &train_path, &split.0.to_cifar_bytes().stage("fixture")?)?;
    write("fixture", &test_path, &split.1.to_cifar_bytes().stage("fixture")?)?;
    Ok((train_path, test_path))
}

fn synth(train_count: usize, test_count: usize, seed: u64) -> CliResult<(Dataset, Dataset)> {
    let cfg = SynthConfig {
        train: train_count,
        test: test_count,
        seed,
        ..SynthConfig::default()
    };
    let split = cfg.generate().stage("fixture")?;
    Ok((split.train, split.test))
}

/// Identity of the exact instances a sweep was computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub count: usize,
    pub classes: Vec<String>,
    pub image_shape: Shape3,
    /// SHA-256 over every label byte and little-endian pixel value.
    pub digest: String,
}

impl DatasetInfo {
    pub fn of(data: &Dataset) -> CliResult<Self> {
        let image_shape = data
            .image_shape()
            .ok_or_else(|| CliError::consistency("ingest", "the dataset is empty"))?;
        let mut hash = Sha256::new();
        for (img, &y) in data.images().iter().zip(data.labels()) {
            hash.update([y as u8]);
            for v in img.data() {
                hash.update(v.to_le_bytes());
            }
        }
        Ok(DatasetInfo {
            count: data.len(),
            classes: data.class_names().to_vec(),
            image_shape,
            digest: hex::encode(hash.finalize()),
        })
    }
}

/// Metadata stored next to a weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub format: String,
    pub name: String,
    pub architecture: String,
    pub adv_train_fraction: f32,
    pub train: TrainConfig,
    pub train_count: usize,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub card: ModelCard,
    pub network: Network,
}

impl TrainedModel {
    pub fn architecture(&self) -> CliResult<Architecture> {
        self.card
            .architecture
            .parse()
            .map_err(|e: advx_core::Error| CliError::format("model", e.to_string()))
    }

    fn entry(&self) -> CliResult<ModelEntry> {
        Ok(ModelEntry {
            name: self.card.name.clone(),
            architecture: self.architecture()?,
            adv_train_fraction: self.card.adv_train_fraction,
            network: self.network.clone(),
        })
    }
}

/// Path of the card belonging to a weight file.
pub fn card_path(weights_path: &Path) -> PathBuf {
    weights_path.with_extension("json")
}

/// Initializes a fixture network for `data` and trains it.
pub fn train_model(name: &str, arch: Architecture, data: &Dataset, cfg: &TrainConfig) -> CliResult<TrainedModel> {
    if !valid_name(name) {
        return Err(CliError::usage("train", format!("model name {name:?} is not a plain file name")));
    }
    cfg.validate().map_err(|e| CliError::usage("train", e.to_string()))?;
    let shape = data
        .image_shape()
        .ok_or_else(|| CliError::consistency("train", "the training set is empty"))?;
    let net = Network::fixture(arch, shape, data.class_count(), cfg.seed).stage("train")?;
    let (network, report) = train(net, data, cfg).stage("train")?;
    Ok(TrainedModel {
        card: ModelCard {
            format: MODEL_FORMAT.into(),
            name: name.into(),
            architecture: arch.name().into(),
            adv_train_fraction: cfg.adversarial_fraction,
            train: cfg.clone(),
            train_count: data.len(),
            epoch_losses: report.epoch_losses,
        },
        network,
    })
}

pub fn save_model(path: &Path, model: &TrainedModel) -> CliResult<()> {
    write("train", path, &weights::encode(&model.network))?;
    write("train", &card_path(path), &to_json("train", &model.card)?)
}

pub fn load_model(path: &Path) -> CliResult<TrainedModel> {
    let network = weights::decode(&read("model", path)?)
        .map_err(|e| CliError::format("model", format!("{}: {e}", path.display())))?;
    let card_file = card_path(path);
    let card: ModelCard = serde_json::from_slice(&read("model", &card_file)?)
        .map_err(|e| CliError::format("model", format!("{}: {e}", card_file.display())))?;
    if card.format != MODEL_FORMAT {
        return Err(CliError::format(
            "model",
            format!("{} has format {:?}, expected {MODEL_FORMAT:?}", card_file.display(), card.format),
        ));
    }
    let model = TrainedModel { card, network };
    model.architecture()?;
    Ok(model)
}

/// One ε of an attack sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGroup {
    pub epsilon: f32,
    /// `N × p` signed perturbations.
    pub noise: Vec<f32>,
    pub predictions: Predictions,
    /// `N × K` adversarial confidences.
    pub confidences: Vec<f32>,
    /// `N × width` adversarial penultimate embeddings.
    pub embeddings: Vec<f32>,
    pub coords: Option<Vec<[f32; 2]>>,
    pub cube: Option<BinCube>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionInfo {
    pub method: ProjectionMethod,
    pub runs: usize,
    pub seed: u64,
}

/// An attacked ε grid for one model, with its later projection and cubes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub model: TrainedModel,
    pub config: AttackConfig,
    pub dataset: DatasetInfo,
    pub embedding_width: usize,
    pub groups: Vec<SweepGroup>,
    pub projection: Option<ProjectionInfo>,
    pub levels: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct SweepManifest {
    format: String,
    model: ModelCard,
    config: AttackConfig,
    dataset: DatasetInfo,
    embedding_width: usize,
    groups: Vec<GroupEntry>,
    projection: Option<ProjectionInfo>,
    levels: Option<usize>,
}

impl Sweep {
    fn label(&self) -> String {
        format!("{}/{}", self.model.card.name, self.config.method.name())
    }
}

/// Attack settings after flag validation.
pub fn attack_config(method: AttackMethod, epsilons: Option<Vec<f32>>, zoo: ZooParams, seed: u64) -> CliResult<AttackConfig> {
    let mut cfg = AttackConfig::new(method, epsilons.unwrap_or_else(|| method.default_epsilons()));
    cfg.zoo = zoo;
    cfg.seed = seed;
    cfg.validate().map_err(|e| CliError::usage("attack", e.to_string()))?;
    if method == AttackMethod::Zoo {
        let z = &cfg.zoo;
        if z.coords_per_iter == 0 || !(z.h > 0.0) || !(z.step_size > 0.0) {
            return Err(CliError::usage(
                "attack",
                "ZOO needs positive coordinates per iteration, step size and probe width",
            ));
        }
    }
    Ok(cfg)
}

/// Attacks every instance of `data` at every ε of the grid.
pub fn run_attack(model: TrainedModel, data: &Dataset, config: AttackConfig) -> CliResult<Sweep> {
    config.validate().map_err(|e| CliError::usage("attack", e.to_string()))?;
    let net = &model.network;
    if data.class_count() != net.class_count() {
        return Err(CliError::consistency(
            "attack",
            format!(
                "model {} predicts {} classes but the dataset has {}",
                model.card.name,
                net.class_count(),
                data.class_count()
            ),
        ));
    }
    if data.image_shape() != Some(net.input_shape()) {
        return Err(CliError::consistency(
            "attack",
            format!("model {} expects {} images", model.card.name, net.input_shape()),
        ));
    }
    let dataset = DatasetInfo::of(data)?;
    let levels = attack_sweep(net, data, &config).stage("attack")?;
    let groups = levels
        .iter()
        .map(|level| {
            let inst = &level.instances;
            SweepGroup {
                epsilon: level.epsilon,
                noise: inst.iter().flat_map(|i| i.noise.iter().copied()).collect(),
                predictions: Predictions {
                    epsilon: level.epsilon,
                    true_label: inst.iter().map(|i| i.true_label).collect(),
                    clean: inst.iter().map(|i| i.clean_prediction).collect(),
                    adversarial: inst.iter().map(|i| i.adv_prediction).collect(),
                },
                confidences: inst
                    .iter()
                    .flat_map(|i| i.adv_confidences.iter().map(|&c| c as f32))
                    .collect(),
                embeddings: inst.iter().flat_map(|i| i.adv_embedding.iter().copied()).collect(),
                coords: None,
                cube: None,
            }
        })
        .collect();
    Ok(Sweep {
        embedding_width: net.embedding_width(),
        model,
        config,
        dataset,
        groups,
        projection: None,
        levels: None,
    })
}

/// Projects every ε level into one shared 2-D frame. Coordinates are kept
/// at `f32` precision, the precision they are stored with. Any cubes built
/// on earlier coordinates are dropped.
pub fn project_sweep(sweep: &mut Sweep, cfg: &ProjectionConfig) -> CliResult<()> {
    if cfg.runs == 0 {
        return Err(CliError::usage("project", "--runs must be at least 1"));
    }
    let width = sweep.embedding_width;
    let levels: Vec<Vec<Vec<f32>>> = sweep
        .groups
        .iter()
        .map(|g| g.embeddings.chunks(width).map(<[f32]>::to_vec).collect())
        .collect();
    let coords = project_levels(&levels, cfg).stage("project")?;
    for (group, c) in sweep.groups.iter_mut().zip(coords) {
        group.coords = Some(c.iter().map(|p| [p[0] as f32, p[1] as f32]).collect());
        group.cube = None;
    }
    sweep.projection = Some(ProjectionInfo {
        method: cfg.method,
        runs: cfg.runs,
        seed: cfg.seed,
    });
    sweep.levels = None;
    Ok(())
}

/// Bins every projected ε level into `levels` grid levels.
pub fn build_sweep_cubes(sweep: &mut Sweep, levels: usize) -> CliResult<()> {
    if levels == 0 {
        return Err(CliError::usage("build-cube", "--levels must be at least 1"));
    }
    let label = sweep.label();
    let classes = sweep.dataset.classes.len();
    for group in &mut sweep.groups {
        let coords = group.coords.as_ref().ok_or_else(|| {
            CliError::consistency("build-cube", format!("sweep {label} has no coordinates; run `advx project` first"))
        })?;
        let wide: Vec<[f64; 2]> = coords.iter().map(|c| [c[0] as f64, c[1] as f64]).collect();
        let ids: Vec<usize> = (0..wide.len()).collect();
        group.cube = Some(build_cube(&wide, &group.predictions.adversarial, &ids, levels, classes).stage("build-cube")?);
    }
    sweep.levels = Some(levels);
    Ok(())
}

pub fn write_sweep(dir: &Path, sweep: &Sweep, stage: &'static str) -> CliResult<()> {
    let mut entries = Vec::with_capacity(sweep.groups.len());
    for g in &sweep.groups {
        let name = epsilon_dir(g.epsilon);
        let gdir = dir.join(&name);
        write(stage, &gdir.join("noise.f32"), &encode_f32(NOISE_MAGIC, &g.noise))?;
        write(stage, &gdir.join("conf.f32"), &encode_f32(CONFIDENCE_MAGIC, &g.confidences))?;
        write(stage, &gdir.join("pred.json"), &to_json(stage, &g.predictions)?)?;
        write(stage, &gdir.join("embed.f32"), &encode_f32(EMBEDDING_MAGIC, &g.embeddings))?;
        let coords_file = gdir.join("coords.f32");
        let cube_file = gdir.join("cube.json");
        match &g.coords {
            Some(c) => write(stage, &coords_file, &encode_f32(COORDS_MAGIC, &c.concat()))?,
            None => remove_stale(stage, &coords_file)?,
        }
        match &g.cube {
            Some(c) => write(stage, &cube_file, &to_json(stage, c)?)?,
            None => remove_stale(stage, &cube_file)?,
        }
        entries.push(GroupEntry {
            epsilon: g.epsilon,
            path: name,
        });
    }
    write(stage, &dir.join(SWEEP_WEIGHTS), &weights::encode(&sweep.model.network))?;
    let manifest = SweepManifest {
        format: SWEEP_FORMAT.into(),
        model: sweep.model.card.clone(),
        config: sweep.config.clone(),
        dataset: sweep.dataset.clone(),
        embedding_width: sweep.embedding_width,
        groups: entries,
        projection: sweep.projection.clone(),
        levels: sweep.levels,
    };
    write(stage, &dir.join(SWEEP_MANIFEST), &to_json(stage, &manifest)?)
}

fn remove_stale(stage: &'static str, path: &Path) -> CliResult<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => {
            Err(CliError::format(stage, format!("{}: {e}", path.display())))
        }
        _ => Ok(()),
    }
}

fn read_f32(stage: &'static str, path: &Path, magic: &[u8; 8], expect: usize) -> CliResult<Vec<f32>> {
    let values = decode_f32(magic, &read(stage, path)?)
        .map_err(|e| CliError::format(stage, format!("{}: {e}", path.display())))?;
    if values.len() != expect {
        return Err(CliError::consistency(
            stage,
            format!("{} holds {} values, expected {expect}", path.display(), values.len()),
        ));
    }
    Ok(values)
}

pub fn read_sweep(dir: &Path, stage: &'static str) -> CliResult<Sweep> {
    let manifest_file = dir.join(SWEEP_MANIFEST);
    let m: SweepManifest = serde_json::from_slice(&read(stage, &manifest_file)?)
        .map_err(|e| CliError::format(stage, format!("{}: {e}", manifest_file.display())))?;
    if m.format != SWEEP_FORMAT {
        return Err(CliError::format(
            stage,
            format!("{} has format {:?}, expected {SWEEP_FORMAT:?}", manifest_file.display(), m.format),
        ));
    }
    let weights_file = dir.join(SWEEP_WEIGHTS);
    let network = weights::decode(&read(stage, &weights_file)?)
        .map_err(|e| CliError::format(stage, format!("{}: {e}", weights_file.display())))?;
    let n = m.dataset.count;
    let classes = m.dataset.classes.len();
    let p = m.dataset.image_shape.len();
    let mut groups = Vec::with_capacity(m.groups.len());
    for entry in &m.groups {
        if !valid_name(&entry.path) {
            return Err(CliError::format(stage, format!("unsafe group path {:?}", entry.path)));
        }
        let gdir = dir.join(&entry.path);
        let pred_file = gdir.join("pred.json");
        let predictions: Predictions = serde_json::from_slice(&read(stage, &pred_file)?)
            .map_err(|e| CliError::format(stage, format!("{}: {e}", pred_file.display())))?;
        let lens = [
            predictions.true_label.len(),
            predictions.clean.len(),
            predictions.adversarial.len(),
        ];
        if lens.iter().any(|&l| l != n) || predictions.epsilon != entry.epsilon {
            return Err(CliError::consistency(
                stage,
                format!("{} does not describe {n} instances at epsilon {}", pred_file.display(), entry.epsilon),
            ));
        }
        let coords_file = gdir.join("coords.f32");
        let coords = if coords_file.exists() {
            let flat = read_f32(stage, &coords_file, COORDS_MAGIC, 2 * n)?;
            Some(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
        } else {
            None
        };
        let cube_file = gdir.join("cube.json");
        let cube = if cube_file.exists() {
            let cube: BinCube = serde_json::from_slice(&read(stage, &cube_file)?)
                .map_err(|e| CliError::format(stage, format!("{}: {e}", cube_file.display())))?;
            Some(cube)
        } else {
            None
        };
        groups.push(SweepGroup {
            epsilon: entry.epsilon,
            noise: read_f32(stage, &gdir.join("noise.f32"), NOISE_MAGIC, n * p)?,
            confidences: read_f32(stage, &gdir.join("conf.f32"), CONFIDENCE_MAGIC, n * classes)?,
            embeddings: read_f32(stage, &gdir.join("embed.f32"), EMBEDDING_MAGIC, n * m.embedding_width)?,
            predictions,
            coords,
            cube,
        });
    }
    if m.projection.is_some() && groups.iter().any(|g| g.coords.is_none()) {
        return Err(CliError::consistency(stage, format!("{} is missing coordinates", dir.display())));
    }
    if m.levels.is_some() && groups.iter().any(|g| g.cube.is_none()) {
        return Err(CliError::consistency(stage, format!("{} is missing cubes", dir.display())));
    }
    let model = TrainedModel { card: m.model, network };
    model.architecture()?;
    Ok(Sweep {
        model,
        config: m.config,
        dataset: m.dataset,
        embedding_width: m.embedding_width,
        groups,
        projection: m.projection,
        levels: m.levels,
    })
}

/// Packs finished sweeps over `data` into a validated bundle.
pub fn assemble_bundle(name: &str, seed: u64, data: Dataset, sweeps: Vec<Sweep>) -> CliResult<Bundle> {
    const STAGE: &str = "bundle";
    if !valid_name(name) {
        return Err(CliError::usage(STAGE, format!("bundle name {name:?} is not a plain file name")));
    }
    let first = sweeps
        .first()
        .ok_or_else(|| CliError::usage(STAGE, "at least one sweep directory is required"))?;
    let info = DatasetInfo::of(&data)?;
    let projection = first.projection.clone();
    let levels = first.levels;
    for s in &sweeps {
        let label = s.label();
        if s.dataset != info {
            return Err(CliError::consistency(
                STAGE,
                format!("sweep {label} was computed on a different dataset than the one being bundled"),
            ));
        }
        let Some(p) = &s.projection else {
            return Err(CliError::consistency(STAGE, format!("sweep {label} has no projection; run `advx project`")));
        };
        if s.levels.is_none() {
            return Err(CliError::consistency(STAGE, format!("sweep {label} has no cubes; run `advx build-cube`")));
        }
        if Some(p) != projection.as_ref() || s.levels != levels {
            return Err(CliError::consistency(
                STAGE,
                format!("sweep {label} was projected or binned with different settings than the others"),
            ));
        }
    }
    let projection = projection.expect("checked above");
    let levels = levels.expect("checked above");

    let mut models: Vec<ModelEntry> = Vec::new();
    let mut runs = Vec::with_capacity(sweeps.len());
    for s in sweeps {
        let entry = s.model.entry()?;
        match models.iter().find(|m| m.name == entry.name) {
            Some(existing) if existing != &entry => {
                return Err(CliError::consistency(
                    STAGE,
                    format!("two different models are both named {}", entry.name),
                ));
            }
            Some(_) => {}
            None => models.push(entry),
        }
        let groups = s
            .groups
            .into_iter()
            .map(|g| Artifact {
                epsilon: g.epsilon,
                accuracy: AccuracyRecord::of(&g.predictions),
                noise: g.noise,
                predictions: g.predictions,
                confidences: g.confidences,
                coords: g.coords.expect("projected sweep"),
                cube: g.cube.expect("binned sweep"),
            })
            .collect();
        runs.push(AttackRun {
            model: s.model.card.name.clone(),
            config: s.config,
            groups,
        });
    }
    let bundle = Bundle {
        name: name.into(),
        seed,
        dataset: data,
        models,
        runs,
        projection: projection.method,
        projection_runs: projection.runs,
        levels,
    };
    bundle.validate().stage(STAGE)?;
    Ok(bundle)
}

/// One model of the demo recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoModel {
    pub name: &'static str,
    pub architecture: Architecture,
    pub adv_train_fraction: f32,
}

/// The depth pair (CNN-A against CNN-B) and the training pair (standard
/// CNN-A against adversarially trained CNN-A).
pub const DEMO_MODELS: [DemoModel; 3] = [
    DemoModel {
        name: "cnn-a",
        architecture: Architecture::CnnA,
        adv_train_fraction: 0.0,
    },
    DemoModel {
        name: "cnn-b",
        architecture: Architecture::CnnB,
        adv_train_fraction: 0.0,
    },
    DemoModel {
        name: "cnn-a-adv",
        architecture: Architecture::CnnA,
        adv_train_fraction: 0.5,
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    /// Training and test files in CIFAR-10 layout. Without them a synthetic
    /// fixture is generated from the seed.
    pub data: Option<(PathBuf, PathBuf)>,
    /// Training images generated for the synthetic fixture.
    pub fixture_train: usize,
    pub train_limit: Option<usize>,
    /// Test instances attacked and bundled.
    pub limit: usize,
    pub epochs: usize,
    pub seed: u64,
    pub projection: ProjectionConfig,
    pub levels: usize,
    pub zoo: ZooParams,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            data: None,
            fixture_train: 5000,
            train_limit: None,
            limit: 1000,
            epochs: 10,
            seed: 0,
            projection: ProjectionConfig::default(),
            levels: advx_core::cube::DEFAULT_LEVELS,
            zoo: ZooParams::default(),
        }
    }
}

fn progress(stage: &str, message: &str) {
    eprintln!("[{stage}] {message}");
}

/// Runs the whole recipe and writes the bundle to `out`.
pub fn run_demo(cfg: &DemoConfig, out: &Path) -> CliResult<Manifest> {
    if cfg.limit == 0 || cfg.fixture_train == 0 || cfg.train_limit == Some(0) {
        return Err(CliError::usage("demo", "instance counts must be at least 1"));
    }
    if cfg.levels == 0 || cfg.projection.runs == 0 {
        return Err(CliError::usage("demo", "--levels and --runs must be at least 1"));
    }
    let seed = cfg.seed;
    let attacks = [
        attack_config(AttackMethod::Fgsm, None, cfg.zoo.clone(), seed)?,
        attack_config(AttackMethod::Zoo, None, cfg.zoo.clone(), seed)?,
    ];
    let train_cfg = |fraction: f32| TrainConfig {
        epochs: cfg.epochs,
        seed,
        adversarial_fraction: fraction,
        adversarial_epsilon: AttackMethod::Fgsm.default_epsilons().last().copied().unwrap_or(0.0),
        ..TrainConfig::default()
    };
    for m in DEMO_MODELS {
        train_cfg(m.adv_train_fraction)
            .validate()
            .map_err(|e| CliError::usage("demo", e.to_string()))?;
    }

    let (train_set, test_set) = match &cfg.data {
        Some((train_path, test_path)) => (load_dataset(train_path, cfg.train_limit)?, load_dataset(test_path, Some(cfg.limit))?),
        None => {
            progress("fixture", &format!("generating {} training images", cfg.fixture_train));
            let (train_set, test_set) = synth(cfg.fixture_train, cfg.limit, seed)?;
            let train_set = match cfg.train_limit {
                Some(l) => train_set.stratified(l),
                None => train_set,
            };
            (train_set, test_set.stratified(cfg.limit))
        }
    };

    let mut sweeps = Vec::new();
    for m in DEMO_MODELS {
        progress("train", &format!("{} on {} images", m.name, train_set.len()));
        let model = train_model(m.name, m.architecture, &train_set, &train_cfg(m.adv_train_fraction))?;
        for attack in &attacks {
            progress("attack", &format!("{} {} on {} images", m.name, attack.method.name(), test_set.len()));
            let mut sweep = run_attack(model.clone(), &test_set, attack.clone())?;
            project_sweep(&mut sweep, &cfg.projection)?;
            build_sweep_cubes(&mut sweep, cfg.levels)?;
            sweeps.push(sweep);
        }
    }
    let bundle = assemble_bundle("demo", seed, test_set, sweeps)?;
    progress("bundle", &format!("writing {}", out.display()));
    write_bundle(out, &bundle).stage("bundle")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names() {
        assert!(valid_name("cnn-a_2.v1"));
        for bad in ["", ".", "..", "a/b", "a b"] {
            assert!(!valid_name(bad), "{bad:?}");
        }
    }

    #[test]
    fn attack_flags_are_checked_up_front() {
        let zoo = ZooParams::default();
        let cfg = attack_config(AttackMethod::Zoo, Some(vec![0.0, 0.1]), zoo.clone(), 3).unwrap();
        assert_eq!(cfg.epsilons, vec![0.0, 0.1]);
        assert_eq!(cfg.seed, 3);
        let err = attack_config(AttackMethod::Fgsm, Some(vec![0.01]), zoo.clone(), 0).unwrap_err();
        assert_eq!(err.kind, crate::error::Failure::Usage);
        let bad = ZooParams {
            coords_per_iter: 0,
            ..zoo
        };
        assert!(attack_config(AttackMethod::Zoo, None, bad, 0).is_err());
    }

    #[test]
    fn dataset_digest_tracks_content() {
        let (a, _) = synth(20, 1, 1).unwrap();
        let info = DatasetInfo::of(&a).unwrap();
        assert_eq!(info, DatasetInfo::of(&a.clone()).unwrap());
        assert_eq!(info.count, 20);
        let shifted = a.subset(&(1..20).chain(0..1).collect::<Vec<_>>());
        assert_ne!(info.digest, DatasetInfo::of(&shifted).unwrap().digest);
    }
}
