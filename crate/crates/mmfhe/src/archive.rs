//! On-disk party archives.
//!
//! An archive is a directory holding `manifest.json` and one `class-<label>.bin`
//! per class. The binary files store every model parameter as little-endian
//! `f64` matrices preceded by `u64` row and column counts, so parameters
//! round-trip bit for bit.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use mmfhe_core::autoencoder::{CdmmaModel, WideCdmmaModel};
use mmfhe_core::fuzzy::{AttributeBank, FuzzyAttribute, MembershipKind};
use mmfhe_core::kernel::KernelParams;
use mmfhe_core::learner::MembershipMappingModel;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_ID: &str = "mmfhe-party-archive";
pub const FORMAT_VERSION: u32 = 1;
const CLASS_MAGIC: &[u8; 4] = b"MMFC";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MembershipSpec {
    Gaussian,
    StudentT { nu: f64 },
}

impl From<MembershipKind> for MembershipSpec {
    fn from(k: MembershipKind) -> Self {
        match k {
            MembershipKind::Gaussian => MembershipSpec::Gaussian,
            MembershipKind::StudentT { nu } => MembershipSpec::StudentT { nu },
        }
    }
}

impl From<MembershipSpec> for MembershipKind {
    fn from(k: MembershipSpec) -> Self {
        match k {
            MembershipSpec::Gaussian => MembershipKind::Gaussian,
            MembershipSpec::StudentT { nu } => MembershipKind::StudentT { nu },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub layers: usize,
    pub subspace_dim: usize,
    pub r_grid: Vec<f64>,
    pub nu: f64,
    pub membership: MembershipSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub label: u32,
    pub file: String,
    pub train_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub n_b: u32,
    pub seed: u64,
    pub input_dim: usize,
    pub hyper: Hyperparams,
    pub classes: Vec<ClassEntry>,
}

/// Everything one party keeps after training.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyArchive {
    pub manifest: Manifest,
    pub bank: AttributeBank,
}

impl PartyArchive {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if self.manifest.classes.len() != self.bank.entries.len() {
            return Err(Error::input("manifest and attribute bank disagree on the class count"));
        }
        for (entry, (label, attr)) in self.manifest.classes.iter().zip(&self.bank.entries) {
            if entry.label != *label {
                return Err(Error::input(format!("manifest lists class {} where the bank has {label}", entry.label)));
            }
            let path = dir.join(&entry.file);
            let mut buf = Vec::new();
            write_wide(&mut buf, &attr.model);
            fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::input(e.to_string()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        if manifest.format != FORMAT_ID || manifest.version != FORMAT_VERSION {
            return Err(Error::input(format!(
                "{}: unsupported archive {} v{}",
                path.display(),
                manifest.format,
                manifest.version
            )));
        }
        let kind = MembershipKind::from(manifest.hyper.membership);
        let mut entries = Vec::with_capacity(manifest.classes.len());
        for c in &manifest.classes {
            let path = safe_join(dir, &c.file)?;
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let model = read_wide(&mut bytes.as_slice()).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
            if model.output_dim() != manifest.input_dim {
                return Err(Error::input(format!("{}: model dimension does not match manifest", path.display())));
            }
            entries.push((c.label, FuzzyAttribute { model, kind }));
        }
        Ok(Self { manifest, bank: AttributeBank::new(entries)? })
    }
}

pub fn class_file_name(label: u32) -> String {
    format!("class-{label}.bin")
}

fn safe_join(dir: &Path, file: &str) -> Result<PathBuf> {
    let p = Path::new(file);
    if p.components().count() != 1 || p.is_absolute() {
        return Err(Error::input(format!("archive file name {file:?} must be a bare file name")));
    }
    Ok(dir.join(p))
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    put_u64(out, m.nrows() as u64);
    put_u64(out, m.ncols() as u64);
    for v in m.iter() {
        put_f64(out, *v);
    }
}

fn write_wide(out: &mut Vec<u8>, model: &WideCdmmaModel) {
    out.extend_from_slice(CLASS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u64(out, model.submodels.len() as u64);
    for sub in &model.submodels {
        put_u64(out, sub.layers.len() as u64);
        for (layer, proj) in sub.layers.iter().zip(&sub.projections) {
            put_f64(out, layer.nu);
            put_f64(out, layer.beta_inv);
            put_f64(out, layer.kernel.sigma2());
            put_matrix(out, &DMatrix::from_row_slice(1, layer.kernel.dim(), layer.kernel.weights()));
            put_matrix(out, &layer.alpha);
            put_matrix(out, &layer.inducing);
            put_matrix(out, proj);
        }
    }
}

type ReadResult<T> = std::result::Result<T, String>;

fn get<const N: usize>(r: &mut &[u8]) -> ReadResult<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| "truncated class file".to_string())?;
    Ok(b)
}

fn get_u64(r: &mut &[u8]) -> ReadResult<u64> {
    Ok(u64::from_le_bytes(get(r)?))
}

fn get_f64(r: &mut &[u8]) -> ReadResult<f64> {
    Ok(f64::from_le_bytes(get(r)?))
}

fn get_count(r: &mut &[u8], what: &str) -> ReadResult<usize> {
    let v = get_u64(r)?;
    // Each counted item needs at least 8 bytes, which bounds hostile headers.
    if v > (r.len() / 8 + 1) as u64 {
        return Err(format!("{what} count {v} exceeds the file size"));
    }
    Ok(v as usize)
}

fn get_matrix(r: &mut &[u8]) -> ReadResult<DMatrix<f64>> {
    let rows = get_u64(r)?;
    let cols = get_u64(r)?;
    let len = rows.checked_mul(cols).filter(|l| l.checked_mul(8).is_some_and(|b| b <= r.len() as u64));
    let len = len.ok_or_else(|| format!("matrix header {rows}x{cols} exceeds the file size"))? as usize;
    let data = (0..len).map(|_| get_f64(r)).collect::<ReadResult<Vec<_>>>()?;
    Ok(DMatrix::from_vec(rows as usize, cols as usize, data))
}

fn read_wide(r: &mut &[u8]) -> ReadResult<WideCdmmaModel> {
    if &get::<4>(r)? != CLASS_MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(get(r)?);
    if version != FORMAT_VERSION {
        return Err(format!("unsupported class file version {version}"));
    }
    let n_sub = get_count(r, "submodel")?;
    let mut submodels = Vec::with_capacity(n_sub);
    for _ in 0..n_sub {
        let n_layers = get_count(r, "layer")?;
        let mut layers = Vec::with_capacity(n_layers);
        let mut projections = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let nu = get_f64(r)?;
            let beta_inv = get_f64(r)?;
            let sigma2 = get_f64(r)?;
            let weights = get_matrix(r)?;
            let kernel = KernelParams::new(sigma2, weights.as_slice().to_vec()).map_err(|e| e.to_string())?;
            let alpha = get_matrix(r)?;
            let inducing = get_matrix(r)?;
            let proj = get_matrix(r)?;
            if inducing.ncols() != kernel.dim() || alpha.nrows() != inducing.nrows() || proj.nrows() != kernel.dim() {
                return Err("inconsistent layer shapes".into());
            }
            layers.push(MembershipMappingModel { alpha, inducing, kernel, nu, beta_inv });
            projections.push(proj);
        }
        if layers.is_empty() {
            return Err("submodel without layers".into());
        }
        submodels.push(CdmmaModel { layers, projections });
    }
    if submodels.is_empty() {
        return Err("model without submodels".into());
    }
    let p = submodels[0].projections[0].ncols();
    if submodels.iter().flat_map(|s| s.projections.iter().zip(&s.layers)).any(|(q, l)| q.ncols() != p || l.alpha.ncols() != p) {
        return Err("inconsistent output dimensions".into());
    }
    if !r.is_empty() {
        return Err(format!("{} trailing bytes", r.len()));
    }
    Ok(WideCdmmaModel { submodels })
}
