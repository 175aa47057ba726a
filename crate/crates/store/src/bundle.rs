use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use advx_core::attacks::{AttackConfig, AttackMethod, SweepLevel};
use advx_core::cube::{build_cube, BinCube};
use advx_core::dataset::{Dataset, MAX_CLASSES};
use advx_core::projection::ProjectionMethod;
use advx_core::tensornet::{weights, Architecture, ImageTensor, Network, Shape3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::format::{self, CLEAN_IMAGES_MAGIC, CONFIDENCE_MAGIC, COORDS_MAGIC, NOISE_MAGIC};
use crate::{Result, StoreError};

pub const BUNDLE_FORMAT: &str = "advx-bundle/1";

/// Class display colors, chosen to stay distinguishable up to twelve classes.
pub const PALETTE: [&str; MAX_CLASSES] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf", "#393b79", "#f7b6d2",
];

const MANIFEST: &str = "manifest.json";
const CLEAN_IMAGES: &str = "images/clean.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub index: usize,
    pub name: String,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub architecture: String,
    pub adv_train_fraction: f32,
    pub file: String,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub epsilon: f32,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub model: String,
    pub config: AttackConfig,
    pub groups: Vec<GroupEntry>,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub name: String,
    pub seed: u64,
    pub instance_count: usize,
    pub image_shape: Shape3,
    pub classes: Vec<ClassInfo>,
    pub models: Vec<ModelInfo>,
    pub runs: Vec<RunInfo>,
    pub projection: ProjectionMethod,
    pub projection_runs: usize,
    pub levels: usize,
    /// SHA-256 of every other file, keyed by bundle-relative path.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn group_count(&self) -> usize {
        self.runs.iter().map(|r| r.groups.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEntry {
    pub name: String,
    pub architecture: Architecture,
    pub adv_train_fraction: f32,
    pub network: Network,
}

/// Contents of `pred.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub epsilon: f32,
    pub true_label: Vec<usize>,
    pub clean: Vec<usize>,
    pub adversarial: Vec<usize>,
}

/// Contents of `accuracy.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub epsilon: f32,
    pub count: usize,
    pub natural: f64,
    pub robust: f64,
}

impl AccuracyRecord {
    pub fn of(p: &Predictions) -> Self {
        let n = p.true_label.len();
        let hits = |pred: &[usize]| pred.iter().zip(&p.true_label).filter(|(a, b)| a == b).count();
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        AccuracyRecord {
            epsilon: p.epsilon,
            count: n,
            natural: frac(hits(&p.clean)),
            robust: frac(hits(&p.adversarial)),
        }
    }
}

/// Everything stored for one (model, attack, ε).
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub epsilon: f32,
    /// `N × p`, planar per image.
    pub noise: Vec<f32>,
    pub predictions: Predictions,
    /// Adversarial softmax confidences, `N × classes`.
    pub confidences: Vec<f32>,
    /// Normalized projection coordinates.
    pub coords: Vec<[f32; 2]>,
    pub cube: BinCube,
    pub accuracy: AccuracyRecord,
}

impl Artifact {
    pub fn adversarial_image(&self, original: &ImageTensor, id: usize) -> Result<ImageTensor> {
        let p = original.len();
        let noise = self
            .noise
            .get(id * p..(id + 1) * p)
            .ok_or_else(|| StoreError::Consistency(format!("no noise for instance {id}")))?;
        let data = original.data().iter().zip(noise).map(|(o, n)| o + n).collect();
        Ok(ImageTensor::clipped(data, original.shape())?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRun {
    pub model: String,
    pub config: AttackConfig,
    /// One artifact per ε, in grid order.
    pub groups: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub name: String,
    pub seed: u64,
    pub dataset: Dataset,
    pub models: Vec<ModelEntry>,
    pub runs: Vec<AttackRun>,
    pub projection: ProjectionMethod,
    pub projection_runs: usize,
    pub levels: usize,
}

/// Directory name of an ε group, the shortest decimal that round-trips.
pub fn epsilon_dir(epsilon: f32) -> String {
    format!("{epsilon}")
}

fn group_path(model: &str, method: AttackMethod, epsilon: f32) -> String {
    format!("artifacts/{model}/{}/{}", method.name(), epsilon_dir(epsilon))
}

/// Packs one sweep level with its projection into a storable artifact.
///
/// Coordinates are rounded to `f32` before binning, so the stored cube is
/// exactly the cube of the stored coordinates.
pub fn artifact_from_level(level: &SweepLevel, coords: &[[f64; 2]], levels: usize, class_count: usize) -> Result<Artifact> {
    let n = level.instances.len();
    if coords.len() != n {
        return Err(StoreError::Consistency(format!(
            "{} coordinates for {n} instances at epsilon {}",
            coords.len(),
            level.epsilon
        )));
    }
    let coords: Vec<[f32; 2]> = coords.iter().map(|c| [c[0] as f32, c[1] as f32]).collect();
    let predictions = Predictions {
        epsilon: level.epsilon,
        true_label: level.instances.iter().map(|i| i.true_label).collect(),
        clean: level.instances.iter().map(|i| i.clean_prediction).collect(),
        adversarial: level.instances.iter().map(|i| i.adv_prediction).collect(),
    };
    let wide: Vec<[f64; 2]> = coords.iter().map(|c| [c[0] as f64, c[1] as f64]).collect();
    let ids: Vec<usize> = level.instances.iter().map(|i| i.instance_id).collect();
    let cube = build_cube(&wide, &predictions.adversarial, &ids, levels, class_count)?;
    Ok(Artifact {
        epsilon: level.epsilon,
        noise: level.instances.iter().flat_map(|i| i.noise.iter().copied()).collect(),
        confidences: level
            .instances
            .iter()
            .flat_map(|i| i.adv_confidences.iter().map(|&c| c as f32))
            .collect(),
        coords,
        cube,
        accuracy: AccuracyRecord::of(&predictions),
        predictions,
    })
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn inconsistent(msg: impl Into<String>) -> StoreError {
    StoreError::Consistency(msg.into())
}

impl Bundle {
    pub fn model(&self, name: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn run(&self, model: &str, method: AttackMethod) -> Option<&AttackRun> {
        self.runs.iter().find(|r| r.model == model && r.config.method == method)
    }

    /// Cross-component checks: shapes, lengths, ids, grids and derived
    /// statistics must agree.
    pub fn validate(&self) -> Result<()> {
        let data = &self.dataset;
        let n = data.len();
        let k = data.class_count();
        if n == 0 {
            return Err(inconsistent("the dataset is empty"));
        }
        if k > MAX_CLASSES {
            return Err(inconsistent(format!("{k} classes exceed the limit of {MAX_CLASSES}")));
        }
        let shape = data.image_shape().expect("non-empty dataset");
        let p = shape.len();
        for (i, img) in data.images().iter().enumerate() {
            if ImageTensor::from_bytes(&img.to_bytes(), shape)? != *img {
                return Err(inconsistent(format!("image {i} is not on the 8-bit pixel grid")));
            }
        }
        if self.levels == 0 {
            return Err(inconsistent("a bundle needs at least one cube level"));
        }
        if self.projection_runs == 0 {
            return Err(inconsistent("a bundle needs at least one projection run"));
        }

        let mut names = BTreeSet::new();
        for m in &self.models {
            if !valid_name(&m.name) {
                return Err(inconsistent(format!("model name {:?} is not a plain file name", m.name)));
            }
            if !names.insert(m.name.as_str()) {
                return Err(inconsistent(format!("model {:?} listed twice", m.name)));
            }
            if m.network.input_shape() != shape {
                return Err(inconsistent(format!(
                    "model {} expects {} images, the dataset holds {shape}",
                    m.name,
                    m.network.input_shape()
                )));
            }
            if m.network.class_count() != k {
                return Err(inconsistent(format!(
                    "model {} has {} outputs for {k} classes",
                    m.name,
                    m.network.class_count()
                )));
            }
        }

        let mut seen = BTreeSet::new();
        for run in &self.runs {
            let label = format!("{}/{}", run.model, run.config.method.name());
            if self.model(&run.model).is_none() {
                return Err(inconsistent(format!("{label}: unknown model")));
            }
            if !seen.insert((run.model.as_str(), run.config.method.name())) {
                return Err(inconsistent(format!("{label}: listed twice")));
            }
            run.config.validate().map_err(|e| inconsistent(format!("{label}: {e}")))?;
            if run.groups.len() != run.config.epsilons.len() {
                return Err(inconsistent(format!(
                    "{label}: {} groups for {} epsilons",
                    run.groups.len(),
                    run.config.epsilons.len()
                )));
            }
            let clean = &run.groups[0].predictions.adversarial;
            for (g, &eps) in run.groups.iter().zip(&run.config.epsilons) {
                let at = format!("{label}/{}", epsilon_dir(eps));
                if g.epsilon != eps || g.predictions.epsilon != eps || g.accuracy.epsilon != eps {
                    return Err(inconsistent(format!("{at}: epsilon does not match the grid")));
                }
                let pr = &g.predictions;
                if pr.true_label.len() != n || pr.clean.len() != n || pr.adversarial.len() != n {
                    return Err(inconsistent(format!("{at}: predictions for a different instance count")));
                }
                if pr.true_label != data.labels() {
                    return Err(inconsistent(format!("{at}: true labels differ from the dataset")));
                }
                if pr.clean != *clean {
                    return Err(inconsistent(format!("{at}: clean predictions differ from the epsilon 0 group")));
                }
                if pr.adversarial.iter().chain(&pr.clean).any(|&c| c >= k) {
                    return Err(inconsistent(format!("{at}: prediction out of class range")));
                }
                if g.noise.len() != n * p {
                    return Err(inconsistent(format!("{at}: {} noise values, expected {}", g.noise.len(), n * p)));
                }
                if g.confidences.len() != n * k {
                    return Err(inconsistent(format!("{at}: {} confidences, expected {}", g.confidences.len(), n * k)));
                }
                if g.coords.len() != n {
                    return Err(inconsistent(format!("{at}: {} coordinates for {n} instances", g.coords.len())));
                }
                if g.coords.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(inconsistent(format!("{at}: coordinates outside [0, 1]")));
                }
                if eps == 0.0 && g.noise.iter().any(|&v| v != 0.0) {
                    return Err(inconsistent(format!("{at}: non-zero noise at epsilon 0")));
                }
                for (id, img) in data.images().iter().enumerate() {
                    let adv = g.adversarial_image(img, id)?;
                    let dist = run.config.norm.distance(img.data(), adv.data());
                    if dist > eps as f64 + 1e-6 {
                        return Err(inconsistent(format!("{at}: instance {id} perturbed by {dist} > {eps}")));
                    }
                }
                if g.accuracy != AccuracyRecord::of(pr) {
                    return Err(inconsistent(format!("{at}: accuracy does not match the predictions")));
                }
                let wide: Vec<[f64; 2]> = g.coords.iter().map(|c| [c[0] as f64, c[1] as f64]).collect();
                let ids: Vec<usize> = (0..n).collect();
                if build_cube(&wide, &pr.adversarial, &ids, self.levels, k)? != g.cube {
                    return Err(inconsistent(format!("{at}: cube does not match coordinates and predictions")));
                }
            }
        }
        Ok(())
    }

    /// Re-runs every model on the stored adversarial images and compares
    /// with the stored predictions.
    pub fn verify_predictions(&self) -> Result<()> {
        for run in &self.runs {
            let model = self.model(&run.model).ok_or_else(|| inconsistent("unknown model"))?;
            for g in &run.groups {
                for (id, img) in self.dataset.images().iter().enumerate() {
                    let adv = g.adversarial_image(img, id)?;
                    let pred = model.network.predict(&adv)?.label;
                    if pred != g.predictions.adversarial[id] {
                        return Err(inconsistent(format!(
                            "{}/{}/{}: instance {id} predicted {pred}, stored {}",
                            run.model,
                            run.config.method.name(),
                            epsilon_dir(g.epsilon),
                            g.predictions.adversarial[id]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn encode_files(&self) -> Result<BTreeMap<String, Vec<u8>>> {
        let mut files = BTreeMap::new();
        let records: Vec<Vec<u8>> = self
            .dataset
            .images()
            .iter()
            .zip(self.dataset.labels())
            .map(|(img, &y)| {
                let mut r = Vec::with_capacity(img.len() + 1);
                r.push(y as u8);
                r.extend(img.to_bytes());
                r
            })
            .collect();
        files.insert(CLEAN_IMAGES.to_string(), format::encode_records(CLEAN_IMAGES_MAGIC, &records));
        for m in &self.models {
            files.insert(format!("models/{}.advxnet", m.name), weights::encode(&m.network));
        }
        for run in &self.runs {
            for g in &run.groups {
                let dir = group_path(&run.model, run.config.method, g.epsilon);
                let coords: Vec<f32> = g.coords.iter().flatten().copied().collect();
                files.insert(format!("{dir}/noise.f32"), format::encode_f32(NOISE_MAGIC, &g.noise));
                files.insert(format!("{dir}/conf.f32"), format::encode_f32(CONFIDENCE_MAGIC, &g.confidences));
                files.insert(format!("{dir}/coords.f32"), format::encode_f32(COORDS_MAGIC, &coords));
                files.insert(format!("{dir}/pred.json"), to_json(&g.predictions));
                files.insert(format!("{dir}/cube.json"), to_json(&g.cube));
                files.insert(format!("{dir}/accuracy.json"), to_json(&g.accuracy));
            }
        }
        Ok(files)
    }

    fn manifest(&self, files: &BTreeMap<String, Vec<u8>>) -> Manifest {
        let shape = self.dataset.image_shape().expect("validated non-empty");
        Manifest {
            format: BUNDLE_FORMAT.to_string(),
            name: self.name.clone(),
            seed: self.seed,
            instance_count: self.dataset.len(),
            image_shape: shape,
            classes: self
                .dataset
                .class_names()
                .iter()
                .enumerate()
                .map(|(index, name)| ClassInfo {
                    index,
                    name: name.clone(),
                    color: PALETTE[index].to_string(),
                })
                .collect(),
            models: self
                .models
                .iter()
                .map(|m| ModelInfo {
                    name: m.name.clone(),
                    architecture: m.architecture.name().to_string(),
                    adv_train_fraction: m.adv_train_fraction,
                    file: format!("models/{}.advxnet", m.name),
                    param_count: m.network.param_count(),
                })
                .collect(),
            runs: self
                .runs
                .iter()
                .map(|r| RunInfo {
                    model: r.model.clone(),
                    config: r.config.clone(),
                    groups: r
                        .groups
                        .iter()
                        .map(|g| GroupEntry {
                            epsilon: g.epsilon,
                            path: group_path(&r.model, r.config.method, g.epsilon),
                        })
                        .collect(),
                })
                .collect(),
            projection: self.projection,
            projection_runs: self.projection_runs,
            levels: self.levels,
            files: files
                .iter()
                .map(|(path, bytes)| (path.clone(), hex::encode(Sha256::digest(bytes))))
                .collect(),
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("plain data serializes");
    out.push(b'\n');
    out
}

/// Validates `bundle`, then writes it under `root`. Nothing is written if
/// validation fails.
pub fn write_bundle(root: impl AsRef<Path>, bundle: &Bundle) -> Result<Manifest> {
    let root = root.as_ref();
    bundle.validate()?;
    let files = bundle.encode_files()?;
    let manifest = bundle.manifest(&files);
    for (rel, bytes) in &files {
        let path = root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| StoreError::io(&path, e))?;
    }
    let path = root.join(MANIFEST);
    fs::write(&path, to_json(&manifest)).map_err(|e| StoreError::io(&path, e))?;
    Ok(manifest)
}

fn parse_json<T: serde::de::DeserializeOwned>(file: &str, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| StoreError::format(file, e.to_string()))
}

/// Reads a bundle, verifying every checksum and all cross-component
/// invariants.
pub fn read_bundle(root: impl AsRef<Path>) -> Result<(Manifest, Bundle)> {
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST);
    let raw = fs::read(&manifest_path).map_err(|e| StoreError::io(&manifest_path, e))?;
    let manifest: Manifest = parse_json(MANIFEST, &raw)?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(StoreError::format(
            MANIFEST,
            format!("unsupported bundle format {:?}", manifest.format),
        ));
    }

    let mut files = BTreeMap::new();
    for (rel, digest) in &manifest.files {
        if rel.split('/').any(|part| !valid_name(part)) {
            return Err(StoreError::format(MANIFEST, format!("unsafe path {rel:?}")));
        }
        let path = root.join(rel);
        let bytes = fs::read(&path).map_err(|e| StoreError::io(&path, e))?;
        if hex::encode(Sha256::digest(&bytes)) != *digest {
            return Err(StoreError::Integrity { file: rel.clone() });
        }
        files.insert(rel.clone(), bytes);
    }
    let file = |rel: &str| {
        files
            .get(rel)
            .ok_or_else(|| StoreError::format(MANIFEST, format!("{rel} is not listed")))
    };

    let shape = manifest.image_shape;
    let records = format::decode_records(CLEAN_IMAGES_MAGIC, file(CLEAN_IMAGES)?, shape.len() + 1)
        .map_err(|m| StoreError::format(CLEAN_IMAGES, m))?;
    let mut images = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in &records {
        labels.push(r[0] as usize);
        images.push(ImageTensor::from_bytes(&r[1..], shape)?);
    }
    let class_names = manifest.classes.iter().map(|c| c.name.clone()).collect();
    let dataset = Dataset::new(images, labels, class_names)
        .map_err(|e| StoreError::format(CLEAN_IMAGES, e.to_string()))?;
    if dataset.len() != manifest.instance_count {
        return Err(inconsistent(format!(
            "manifest lists {} instances, {CLEAN_IMAGES} holds {}",
            manifest.instance_count,
            dataset.len()
        )));
    }

    let mut models = Vec::new();
    for m in &manifest.models {
        let network = weights::decode(file(&m.file)?).map_err(|e| StoreError::format(&m.file, e.to_string()))?;
        models.push(ModelEntry {
            name: m.name.clone(),
            architecture: m.architecture.parse()?,
            adv_train_fraction: m.adv_train_fraction,
            network,
        });
    }

    let mut runs = Vec::new();
    for r in &manifest.runs {
        let mut groups = Vec::new();
        for g in &r.groups {
            let rel = |name: &str| format!("{}/{name}", g.path);
            let f32s = |name: &str, magic| -> Result<Vec<f32>> {
                let path = rel(name);
                format::decode_f32(magic, file(&path)?).map_err(|m| StoreError::format(&path, m))
            };
            let coords_flat = f32s("coords.f32", COORDS_MAGIC)?;
            if coords_flat.len() % 2 != 0 {
                return Err(StoreError::format(rel("coords.f32"), "odd number of coordinates"));
            }
            groups.push(Artifact {
                epsilon: g.epsilon,
                noise: f32s("noise.f32", NOISE_MAGIC)?,
                confidences: f32s("conf.f32", CONFIDENCE_MAGIC)?,
                coords: coords_flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
                predictions: parse_json(&rel("pred.json"), file(&rel("pred.json"))?)?,
                cube: parse_json(&rel("cube.json"), file(&rel("cube.json"))?)?,
                accuracy: parse_json(&rel("accuracy.json"), file(&rel("accuracy.json"))?)?,
            });
        }
        runs.push(AttackRun {
            model: r.model.clone(),
            config: r.config.clone(),
            groups,
        });
    }

    let bundle = Bundle {
        name: manifest.name.clone(),
        seed: manifest.seed,
        dataset,
        models,
        runs,
        projection: manifest.projection,
        projection_runs: manifest.projection_runs,
        levels: manifest.levels,
    };
    bundle.validate()?;
    Ok((manifest, bundle))
}
