//! Package and checkpoint directories.
//!
//! ```text
//! <dir>/manifest.json          metadata, architecture, blob index
//! <dir>/weights/<name>.bin     one blob per tensor, little-endian, row-major
//! ```
//!
//! Network weights are stored as f32, optimizer moments as f64. Every blob
//! carries a SHA-256 in the manifest. Saving the same model twice yields
//! identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use autograd::{numel, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::StyleModel;
use crate::nets::{ArchSpec, Critic, Encoder, Module};
use crate::optim::{Adam, AdamConfig, Moments};
use crate::stage1::Stage1Schedule;
use crate::stage2::Stage2Record;

pub const FORMAT: &str = "modify-style-package";
pub const FORMAT_VERSION: &str = "1.0";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_DIR: &str = "weights";

const ENCODER: &str = "encoder";
const DECODER: &str = "decoder";
const REMAPPER: &str = "remapper";
const CRITIC: &str = "critic";
const ADAPTED: &str = "adapted_encoder";
const OPTIM: &str = "optim";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackageKind {
    Model,
    Checkpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub config: AdamConfig,
    pub steps: u64,
    pub parameters: Vec<String>,
}

/// Everything in the manifest except the blob index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackageInfo {
    pub format: String,
    pub version: String,
    pub kind: PackageKind,
    pub arch: ArchSpec,
    pub seed: u64,
    pub iteration: u64,
    pub schedule: Option<Stage1Schedule>,
    pub stage2: Option<Stage2Record>,
    /// Effective configuration of the producing command, if any.
    pub config: BTreeMap<String, String>,
    /// Optional creation stamp; excluded from [`Manifest::canonical_checksum`].
    pub created: Option<String>,
}

impl PackageInfo {
    pub fn new(arch: &ArchSpec, seed: u64, iteration: u64) -> Self {
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION.into(),
            kind: PackageKind::Model,
            arch: arch.clone(),
            seed,
            iteration,
            schedule: None,
            stage2: None,
            config: BTreeMap::new(),
            created: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub info: PackageInfo,
    pub optimizers: BTreeMap<String, OptimizerRecord>,
    pub parameters: Vec<BlobEntry>,
}

impl Manifest {
    /// SHA-256 of the manifest with `created` cleared.
    pub fn canonical_checksum(&self) -> String {
        let mut m = self.clone();
        m.info.created = None;
        let bytes = serde_json::to_vec(&m).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn fingerprint(&self) -> String {
        self.canonical_checksum()[..16].to_string()
    }
}

/// The stage-1 deliverable, or a stage-2 result when `adapted_encoder` is set.
#[derive(Clone, Debug)]
pub struct StyleModelPackage {
    pub info: PackageInfo,
    pub model: StyleModel,
    pub adapted_encoder: Option<Encoder>,
}

impl StyleModelPackage {
    /// The encoder used for stylization: the adapted one if present.
    pub fn stylizing_encoder(&self) -> &Encoder {
        self.adapted_encoder.as_ref().unwrap_or(&self.model.encoder)
    }
}

/// A package plus optimizer state, for resuming training.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub package: StyleModelPackage,
    pub optimizers: BTreeMap<String, Adam>,
}

struct Blob {
    name: String,
    tensor: Tensor,
    dtype: Dtype,
}

fn encode_blob(t: &Tensor, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.numel() * dtype.size());
    for &v in t.data() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

fn decode_blob(bytes: &[u8], dtype: Dtype, shape: &[usize]) -> Tensor {
    let data = match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    Tensor::new(shape, data)
}

fn module_blobs(group: &str, m: &dyn ModuleRef, out: &mut Vec<Blob>) {
    for p in m.param_list() {
        out.push(Blob {
            name: format!("{group}.{}", p.0),
            tensor: p.1,
            dtype: Dtype::F32,
        });
    }
}

/// Object-safe view of a module's parameters.
trait ModuleRef {
    fn param_list(&self) -> Vec<(String, Tensor)>;
}

impl<M: Module> ModuleRef for M {
    fn param_list(&self) -> Vec<(String, Tensor)> {
        self.params()
            .iter()
            .map(|p| (p.name().to_string(), p.value().clone()))
            .collect()
    }
}

fn package_blobs(pkg: &StyleModelPackage) -> Vec<Blob> {
    let mut blobs = Vec::new();
    let m = &pkg.model;
    module_blobs(ENCODER, &m.encoder, &mut blobs);
    module_blobs(DECODER, &m.decoder, &mut blobs);
    module_blobs(REMAPPER, &m.remapper, &mut blobs);
    if let Some(c) = &m.critic {
        module_blobs(CRITIC, c, &mut blobs);
    }
    if let Some(e) = &pkg.adapted_encoder {
        module_blobs(ADAPTED, e, &mut blobs);
    }
    blobs
}

fn write_dir(path: &Path, info: &PackageInfo, optimizers: BTreeMap<String, OptimizerRecord>, blobs: Vec<Blob>) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Package(format!("invalid package path {}", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = parent.join(format!(".{file_name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(tmp.join(WEIGHTS_DIR))?;

    let mut parameters = Vec::with_capacity(blobs.len());
    for b in blobs {
        let bytes = encode_blob(&b.tensor, b.dtype);
        let file = format!("{WEIGHTS_DIR}/{}.bin", b.name);
        fs::write(tmp.join(&file), &bytes)?;
        parameters.push(BlobEntry {
            name: b.name,
            shape: b.tensor.shape().to_vec(),
            dtype: b.dtype,
            file,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest {
        info: info.clone(),
        optimizers,
        parameters,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(tmp.join(MANIFEST_FILE), text)?;

    if path.exists() {
        let replaceable = path.join(MANIFEST_FILE).is_file() || fs::read_dir(path)?.next().is_none();
        if !replaceable {
            fs::remove_dir_all(&tmp)?;
            return Err(Error::Package(format!(
                "{} exists and is not a package; refusing to overwrite",
                path.display()
            )));
        }
        fs::remove_dir_all(path)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_package(pkg: &StyleModelPackage, path: &Path) -> Result<()> {
    let mut info = pkg.info.clone();
    info.kind = PackageKind::Model;
    write_dir(path, &info, BTreeMap::new(), package_blobs(pkg))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut info = ckpt.package.info.clone();
    info.kind = PackageKind::Checkpoint;
    let mut blobs = package_blobs(&ckpt.package);
    let mut records = BTreeMap::new();
    for (key, opt) in &ckpt.optimizers {
        for (i, mo) in opt.moments.iter().enumerate() {
            for (which, t) in [("m", &mo.m), ("v", &mo.v)] {
                blobs.push(Blob {
                    name: format!("{OPTIM}.{key}.{i:04}.{which}"),
                    tensor: t.clone(),
                    dtype: Dtype::F64,
                });
            }
        }
        records.insert(
            key.clone(),
            OptimizerRecord {
                config: opt.config,
                steps: opt.steps,
                parameters: opt.moments.iter().map(|m| m.name.clone()).collect(),
            },
        );
    }
    write_dir(path, &info, records, blobs)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.info.format != FORMAT {
        return Err(Error::Package(format!("unknown format `{}`", manifest.info.format)));
    }
    let major = manifest.info.version.split('.').next().unwrap_or("");
    if major != FORMAT_VERSION.split('.').next().expect("version has a major") {
        return Err(Error::Version(manifest.info.version.clone()));
    }
    Ok(manifest)
}

fn read_blobs(path: &Path, manifest: &Manifest) -> Result<BTreeMap<String, Tensor>> {
    let mut out = BTreeMap::new();
    for e in &manifest.parameters {
        let bytes = fs::read(path.join(&e.file))?;
        let expected = numel(&e.shape) * e.dtype.size();
        if bytes.len() != expected {
            return Err(Error::BlobLength {
                name: e.name.clone(),
                expected,
                found: bytes.len(),
            });
        }
        if hex::encode(Sha256::digest(&bytes)) != e.sha256 {
            return Err(Error::Checksum(e.name.clone()));
        }
        if out.insert(e.name.clone(), decode_blob(&bytes, e.dtype, &e.shape)).is_some() {
            return Err(Error::Package(format!("parameter `{}` listed twice", e.name)));
        }
    }
    Ok(out)
}

fn load_group<M: Module>(m: &mut M, group: &str, blobs: &mut BTreeMap<String, Tensor>) -> Result<()> {
    m.load_values(|name| blobs.remove(&format!("{group}.{name}")))
}

fn has_group(blobs: &BTreeMap<String, Tensor>, group: &str) -> bool {
    let prefix = format!("{group}.");
    blobs.keys().any(|k| k.starts_with(&prefix))
}

fn load_dir(path: &Path, spec: Option<&ArchSpec>) -> Result<(Manifest, StyleModelPackage, BTreeMap<String, Tensor>)> {
    let manifest = read_manifest(path)?;
    let arch = spec.unwrap_or(&manifest.info.arch).clone();
    arch.validate()?;
    let mut blobs = read_blobs(path, &manifest)?;

    let mut model = StyleModel::new(&arch, 0)?;
    load_group(&mut model.encoder, ENCODER, &mut blobs)?;
    load_group(&mut model.decoder, DECODER, &mut blobs)?;
    load_group(&mut model.remapper, REMAPPER, &mut blobs)?;
    model.critic = if has_group(&blobs, CRITIC) {
        let mut c = Critic::new(&arch.critic, 0)?;
        load_group(&mut c, CRITIC, &mut blobs)?;
        Some(c)
    } else {
        None
    };
    let adapted_encoder = if has_group(&blobs, ADAPTED) {
        let mut e = Encoder::new(&arch.encoder, 0)?;
        load_group(&mut e, ADAPTED, &mut blobs)?;
        Some(e)
    } else {
        None
    };
    let mut info = manifest.info.clone();
    info.arch = arch;
    let pkg = StyleModelPackage {
        info,
        model,
        adapted_encoder,
    };
    Ok((manifest, pkg, blobs))
}

fn reject_extra(blobs: &BTreeMap<String, Tensor>) -> Result<()> {
    match blobs.keys().next() {
        Some(name) => Err(Error::ExtraParameter(name.clone())),
        None => Ok(()),
    }
}

pub fn load_package(path: &Path) -> Result<StyleModelPackage> {
    let (_, pkg, blobs) = load_dir(path, None)?;
    reject_extra(&blobs)?;
    Ok(pkg)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint_with_spec(path, None)
}

/// Loads a checkpoint into networks built from `spec` instead of the
/// manifest's own architecture; mismatches name the offending parameter.
pub fn load_checkpoint_with_spec(path: &Path, spec: Option<&ArchSpec>) -> Result<Checkpoint> {
    let (manifest, package, mut blobs) = load_dir(path, spec)?;
    if manifest.info.kind != PackageKind::Checkpoint {
        return Err(Error::Package(format!("{} is not a checkpoint", path.display())));
    }
    let mut optimizers = BTreeMap::new();
    for (key, rec) in &manifest.optimizers {
        let mut moments = Vec::with_capacity(rec.parameters.len());
        for (i, name) in rec.parameters.iter().enumerate() {
            let mut take = |which: &str| {
                let blob = format!("{OPTIM}.{key}.{i:04}.{which}");
                blobs.remove(&blob).ok_or(Error::MissingParameter(blob))
            };
            let (m, v) = (take("m")?, take("v")?);
            moments.push(Moments {
                name: name.clone(),
                m,
                v,
            });
        }
        optimizers.insert(
            key.clone(),
            Adam {
                config: rec.config,
                steps: rec.steps,
                moments,
            },
        );
    }
    reject_extra(&blobs)?;
    Ok(Checkpoint { package, optimizers })
}

/// Files in a package that the manifest does not index. Indexed weight
/// files are verified against their recorded length and checksum, so an
/// empty result means the package holds only weights and metadata.
pub fn scan_package(path: &Path) -> Result<Vec<PathBuf>> {
    let manifest = read_manifest(path)?;
    read_blobs(path, &manifest)?;
    let mut expected: BTreeSet<PathBuf> = manifest.parameters.iter().map(|e| path.join(&e.file)).collect();
    expected.insert(path.join(MANIFEST_FILE));
    let mut offending = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
            } else if !expected.contains(&p) {
                offending.push(p);
            }
        }
    }
    Ok(offending)
}
