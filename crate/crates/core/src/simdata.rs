//! Synthetic ground truth, mock observations and the on-disk dataset store.
//!
//! Ground-truth convergence fields are Gaussian random fields with an
//! isotropic power-law spectrum, built by shaping white noise in Fourier
//! space. Observations apply the forward operator and add measurement
//! noise. A dataset on disk is a manifest plus one field file per sample;
//! every field is regenerable bit-exactly from the manifest seeds, and the
//! calibration and test splits share one configuration, differing only in
//! their seed substreams.
//!
//! # Field file format
//!
//! Little-endian binary, bit-exact:
//!
//! ```text
//! magic     8 bytes   "SSCBFLD1"
//! n_rows    u32
//! n_cols    u32
//! dtype     u8        0 = real f64, 1 = complex128 as interleaved (re, im) f64 pairs
//! payload   row-major f64 values
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::{ComplexField, Field, RealField};
use crate::operators::{dft_frequency, ForwardOperator, GaussianNoiseModel, MassMappingOperator};
use crate::rng::StreamKey;

const MAGIC: &[u8; 8] = b"SSCBFLD1";
const DTYPE_REAL: u8 = 0;
const DTYPE_COMPLEX: u8 = 1;

const LABEL_KAPPA: u64 = 0x10;
const LABEL_OBS_NOISE: u64 = 0x11;

/// Gaussian-random-field settings: grid size, spectral slope `beta`, pivot
/// scale `k0` and the generation seed. The spectrum is
/// `P(r) ~ (r + k0)^-beta` over the centered radial frequency `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfConfig {
    pub n: usize,
    pub beta: f64,
    pub k0: f64,
    pub seed: u64,
}

impl GrfConfig {
    pub fn new(n: usize, beta: f64, k0: f64, seed: u64) -> Result<Self> {
        let cfg = GrfConfig { n, beta, k0, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "grid side must be even and at least 2, got {}",
                self.n
            )));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "spectral index must be positive, got {}",
                self.beta
            )));
        }
        if !(self.k0 >= 0.0) || !self.k0.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "pivot scale must be non-negative, got {}",
                self.k0
            )));
        }
        Ok(())
    }
}

impl Default for GrfConfig {
    fn default() -> Self {
        GrfConfig { n: 64, beta: 2.0, k0: 1.0, seed: 0 }
    }
}

/// Draw one ground-truth convergence field.
///
/// White noise is shaped with the amplitude filter `(r + k0)^(-beta/2)` in
/// Fourier space; the real part of the inverse transform is then normalized
/// to mean zero and unit variance. Deterministic given the seed.
pub fn simulate_convergence(cfg: &GrfConfig) -> Result<RealField> {
    cfg.validate()?;
    let n = cfg.n;
    let mut rng = StreamKey::new(cfg.seed).rng();
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n * n];
    for r in 0..n {
        let ky = dft_frequency(r, n) as f64;
        for c in 0..n {
            let kx = dft_frequency(c, n) as f64;
            let radius = (kx * kx + ky * ky).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let amplitude = if radius + cfg.k0 > 0.0 {
                (radius + cfg.k0).powf(-cfg.beta / 2.0)
            } else {
                0.0
            };
            spectrum[r * n + c] = Complex64::new(re, im) * amplitude;
        }
    }
    fft::ifft2(&mut spectrum, n, n);
    let mut values = fft::real_parts(&spectrum);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in values.iter_mut() {
        *v -= mean;
    }
    let var = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
    if var <= 0.0 {
        return Err(Error::InvalidValue("degenerate random field".into()));
    }
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v /= std;
    }
    Ok(RealField::new_unchecked(n, n, values))
}

/// Push a ground-truth field through the forward process: `gamma = A kappa + e`.
pub fn make_observation<R: Rng>(
    kappa: &RealField,
    op: &dyn ForwardOperator,
    noise: &GaussianNoiseModel,
    rng: &mut R,
) -> Result<ComplexField> {
    let measured = op.apply(kappa)?;
    noise.perturb(&measured, rng).into_complex()
}

/// Write a field in the binary format above.
pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    let (n_rows, n_cols) = field.shape();
    if n_rows > u32::MAX as usize || n_cols > u32::MAX as usize {
        return Err(Error::InvalidValue("field dimensions overflow the file format".into()));
    }
    let mut buf = Vec::with_capacity(17 + 8 * field.real_component_len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(n_rows as u32).to_le_bytes());
    buf.extend_from_slice(&(n_cols as u32).to_le_bytes());
    match field {
        Field::Real(f) => {
            buf.push(DTYPE_REAL);
            for v in f.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Field::Complex(f) => {
            buf.push(DTYPE_COMPLEX);
            for v in f.values() {
                buf.extend_from_slice(&v.re.to_le_bytes());
                buf.extend_from_slice(&v.im.to_le_bytes());
            }
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a field written by [`write_field`]. Truncated or malformed files
/// yield [`Error::BadFormat`], never a panic.
pub fn read_field(path: &Path) -> Result<Field> {
    let buf = fs::read(path)?;
    if buf.len() < 17 {
        return Err(Error::BadFormat(format!("{}: truncated header", path.display())));
    }
    if &buf[0..8] != MAGIC {
        return Err(Error::BadFormat(format!("{}: bad magic", path.display())));
    }
    let n_rows = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let n_cols = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let dtype = buf[16];
    let count = n_rows
        .checked_mul(n_cols)
        .ok_or_else(|| Error::BadFormat(format!("{}: dimension overflow", path.display())))?;
    let values_per_entry = match dtype {
        DTYPE_REAL => 1,
        DTYPE_COMPLEX => 2,
        other => {
            return Err(Error::BadFormat(format!("{}: unknown dtype {other}", path.display())))
        }
    };
    let expected = 17 + 8 * count * values_per_entry;
    if buf.len() < expected {
        return Err(Error::BadFormat(format!("{}: truncated payload", path.display())));
    }
    if buf.len() > expected {
        return Err(Error::BadFormat(format!("{}: trailing data", path.display())));
    }
    let mut floats = buf[17..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    match dtype {
        DTYPE_REAL => Ok(Field::Real(RealField::new(n_rows, n_cols, floats.collect())?)),
        _ => {
            let mut values = Vec::with_capacity(count);
            while let (Some(re), Some(im)) = (floats.next(), floats.next()) {
                values.push(Complex64::new(re, im));
            }
            Ok(Field::Complex(ComplexField::new(n_rows, n_cols, values)?))
        }
    }
}

/// Power-spectrum parameters stored in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfParams {
    pub beta: f64,
    pub k0: f64,
}

/// Everything needed to regenerate a dataset bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub grid_n: usize,
    pub noise_sigma: f64,
    pub grf: GrfParams,
    pub seed_root: u64,
    pub n_calibration: usize,
    pub n_test: usize,
    pub format_version: u32,
}

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        GrfConfig::new(self.grid_n, self.grf.beta, self.grf.k0, 0)?;
        GaussianNoiseModel::new(self.noise_sigma)?;
        if self.n_calibration == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig("both splits need at least one sample".into()));
        }
        if self.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::BadFormat(format!(
                "unsupported manifest version {}",
                self.format_version
            )));
        }
        Ok(())
    }
}

/// Dataset split. Both splits are drawn from the same configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Calibration,
    Test,
}

impl Split {
    fn dir_name(self) -> &'static str {
        match self {
            Split::Calibration => "calibration",
            Split::Test => "test",
        }
    }

    fn stream_label(self) -> u64 {
        match self {
            Split::Calibration => 0x20,
            Split::Test => 0x21,
        }
    }
}

/// A dataset on disk. Ground-truth reads are counted so experiments can
/// audit that calibration in self-supervised mode never touches the truth.
#[derive(Debug)]
pub struct Dataset {
    dir: PathBuf,
    manifest: DatasetManifest,
    ground_truth_reads: AtomicUsize,
}

impl Dataset {
    /// Generate every field file and write the manifest last.
    pub fn generate(dir: &Path, manifest: &DatasetManifest) -> Result<Dataset> {
        manifest.validate()?;
        fs::create_dir_all(dir.join(Split::Calibration.dir_name()))?;
        fs::create_dir_all(dir.join(Split::Test.dir_name()))?;
        write_fields(dir, manifest)?;
        let json = serde_json::to_string_pretty(manifest)?;
        fs::write(dir.join("manifest.json"), json + "\n")?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest: manifest.clone(),
            ground_truth_reads: AtomicUsize::new(0),
        })
    }

    /// Open an existing dataset.
    pub fn open(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(Error::MissingData(format!(
                "no manifest at {}",
                manifest_path.display()
            )));
        }
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
        manifest.validate()?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            ground_truth_reads: AtomicUsize::new(0),
        })
    }

    /// Rewrite all field files from the manifest seeds.
    pub fn regenerate(&self) -> Result<()> {
        fs::create_dir_all(self.dir.join(Split::Calibration.dir_name()))?;
        fs::create_dir_all(self.dir.join(Split::Test.dir_name()))?;
        write_fields(&self.dir, &self.manifest)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn n_samples(&self, split: Split) -> usize {
        match split {
            Split::Calibration => self.manifest.n_calibration,
            Split::Test => self.manifest.n_test,
        }
    }

    fn check_index(&self, split: Split, index: usize) -> Result<()> {
        if index >= self.n_samples(split) {
            return Err(Error::MissingData(format!(
                "sample {index} out of range for {:?}",
                split
            )));
        }
        Ok(())
    }

    /// Load one observation. Free of ground-truth access.
    pub fn observation(&self, split: Split, index: usize) -> Result<ComplexField> {
        self.check_index(split, index)?;
        read_field(&gamma_path(&self.dir, split, index))?.into_complex()
    }

    /// Load one ground-truth field. Every call is counted.
    pub fn ground_truth(&self, split: Split, index: usize) -> Result<RealField> {
        self.check_index(split, index)?;
        self.ground_truth_reads.fetch_add(1, Ordering::SeqCst);
        match read_field(&kappa_path(&self.dir, split, index))? {
            Field::Real(f) => Ok(f),
            Field::Complex(_) => Err(Error::BadFormat("ground truth must be real".into())),
        }
    }

    /// How many ground-truth fields have been read through this handle.
    pub fn ground_truth_reads(&self) -> usize {
        self.ground_truth_reads.load(Ordering::SeqCst)
    }
}

fn kappa_path(dir: &Path, split: Split, index: usize) -> PathBuf {
    dir.join(split.dir_name()).join(format!("kappa_{index:05}.fld"))
}

fn gamma_path(dir: &Path, split: Split, index: usize) -> PathBuf {
    dir.join(split.dir_name()).join(format!("gamma_{index:05}.fld"))
}

/// Generate one sample pair deterministically from the manifest seeds.
fn generate_sample(
    manifest: &DatasetManifest,
    op: &MassMappingOperator,
    noise: &GaussianNoiseModel,
    split: Split,
    index: usize,
) -> Result<(RealField, ComplexField)> {
    let root = StreamKey::new(manifest.seed_root).child(split.stream_label());
    let kappa_seed = root.child(LABEL_KAPPA).child(index as u64).value();
    let grf = GrfConfig {
        n: manifest.grid_n,
        beta: manifest.grf.beta,
        k0: manifest.grf.k0,
        seed: kappa_seed,
    };
    let kappa = simulate_convergence(&grf)?;
    let mut noise_rng = root.child(LABEL_OBS_NOISE).child(index as u64).rng();
    let gamma = make_observation(&kappa, op, noise, &mut noise_rng)?;
    Ok((kappa, gamma))
}

fn write_fields(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let op = MassMappingOperator::new(manifest.grid_n)?;
    let noise = GaussianNoiseModel::new(manifest.noise_sigma)?;
    let mut jobs = Vec::new();
    for split in [Split::Calibration, Split::Test] {
        let count = match split {
            Split::Calibration => manifest.n_calibration,
            Split::Test => manifest.n_test,
        };
        for index in 0..count {
            jobs.push((split, index));
        }
    }
    jobs.into_par_iter().try_for_each(|(split, index)| -> Result<()> {
        let (kappa, gamma) = generate_sample(manifest, &op, &noise, split, index)?;
        write_field(&kappa_path(dir, split, index), &Field::Real(kappa))?;
        write_field(&gamma_path(dir, split, index), &Field::Complex(gamma))?;
        Ok(())
    })
}
