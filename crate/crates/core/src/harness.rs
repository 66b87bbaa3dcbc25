//! End-to-end experiment orchestration.
//!
//! A run has two phases. Calibration reconstructs every calibration
//! observation, bootstraps per-image score quantiles, estimates each
//! observation's score from the data alone (or takes the true score in
//! oracle mode), and searches the scale factor per confidence level.
//! Coverage then evaluates the calibrated sets on the disjoint test split,
//! alongside the unconformalized equivariant and parametric heuristics at
//! unit scale.
//!
//! Ground truth is touched only by coverage evaluation and by oracle-mode
//! calibration; in self-supervised mode the calibration path has no access
//! to the truth, which the dataset's read counter can audit.
//!
//! Per-observation artifacts (bootstrap scores, score estimates) are cached
//! as JSON keyed by a config digest, so re-calibration at a new target level
//! or error rate reuses them. All parallel maps collect in index order;
//! results are bitwise independent of the worker count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::{quantile_from_scores, run_bootstrap, BootstrapConfig, BootstrapMode};
use crate::error::{Error, Result};
use crate::field::{Field, Measurement};
use crate::operators::{ForwardOperator, GaussianNoiseModel, MassMappingOperator};
use crate::rcps::{calibrate_lambda, evaluate_coverage, CalibrationResult, RcpsConfig};
use crate::reconstruct::{KaiserSquires, KaiserSquiresConfig, Reconstructor};
use crate::rng::StreamKey;
use crate::scores::{score, sure_estimate, ScoreKind, SureConfig};
use crate::simdata::{Dataset, DatasetManifest, Split};
use crate::transforms::TransformSamplerConfig;

const LABEL_BOOTSTRAP: u64 = 0x30;
const LABEL_SURE: u64 = 0x31;

pub const CALIBRATION_CSV_HEADER: &str = "alpha,delta,lambda_star,empirical_risk,ucb,n_cal";
pub const COVERAGE_CSV_HEADER: &str =
    "nominal_level,lambda_star,coverage_conformal,coverage_equivariant_raw,coverage_parametric_raw,ucb,n_cal,n_test";
pub const OBSERVATIONS_CSV_HEADER: &str = "obs,sure,true_score";

/// Where the per-observation score estimates come from during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Estimates computed from the observations alone.
    SelfSupervisedSure,
    /// True scores against the known ground truth; validation baseline.
    OracleGroundTruth,
}

/// Full experiment settings on top of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub bootstrap_mode: BootstrapMode,
    pub n_bootstrap: usize,
    pub score_kind: ScoreKind,
    pub sure: SureConfig,
    pub delta: f64,
    pub lambda_grid: Vec<f64>,
    /// Nominal coverage levels, strictly increasing within (0, 1).
    pub levels: Vec<f64>,
    pub calibration_mode: CalibrationMode,
    pub smoothing_sigma: f64,
    pub sampler: TransformSamplerConfig,
    pub seed: u64,
}

/// Round to ten decimals; keeps arithmetic-generated levels printable.
pub fn round_level(x: f64) -> f64 {
    (x * 1e10).round() / 1e10
}

/// Levels 0.05 through 0.95 in steps of 0.05.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|i| round_level(i as f64 * 0.05)).collect()
}

impl ExperimentConfig {
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        if self.n_bootstrap == 0 {
            return Err(Error::InvalidConfig("bootstrap sample count must be positive".into()));
        }
        self.sure.validate()?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.levels.is_empty() {
            return Err(Error::InvalidConfig("at least one confidence level is required".into()));
        }
        for &level in &self.levels {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::InvalidConfig(format!("level {level} outside (0, 1)")));
            }
        }
        for pair in self.levels.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::InvalidConfig("levels must be strictly increasing".into()));
            }
        }
        // Grid requirements are shared with the per-level search config.
        RcpsConfig::new(0.5, self.delta, self.lambda_grid.clone())?;
        if !(self.smoothing_sigma >= 0.0) || !self.smoothing_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "smoothing sigma must be finite and non-negative, got {}",
                self.smoothing_sigma
            )));
        }
        self.sampler.validate()?;
        if self.sampler.n != manifest.grid_n {
            return Err(Error::InvalidConfig(format!(
                "sampler grid {} does not match dataset grid {}",
                self.sampler.n, manifest.grid_n
            )));
        }
        Ok(())
    }
}

/// Everything computed once per observation and reused across levels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationArtifacts {
    pub scores_equivariant: Option<Vec<f64>>,
    pub scores_parametric: Option<Vec<f64>>,
    pub sure: Option<f64>,
    pub true_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct ArtifactNeeds {
    equivariant: bool,
    parametric: bool,
    sure: bool,
    true_score: bool,
}

/// Per-level calibration outcome. An infeasible level is recorded, not
/// fatal.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCalibration {
    pub nominal_level: f64,
    pub alpha: f64,
    pub delta: f64,
    pub result: Option<CalibrationResult>,
    pub failure: Option<String>,
}

#[derive(Debug)]
pub struct CalibrationRun {
    pub levels: Vec<LevelCalibration>,
    pub observations: Vec<ObservationArtifacts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub nominal_level: f64,
    pub lambda_star: f64,
    pub coverage_conformal: f64,
    pub coverage_equivariant_raw: f64,
    pub coverage_parametric_raw: f64,
    pub ucb: f64,
    pub n_cal: usize,
    pub n_test: usize,
}

#[derive(Debug, Default)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub warnings: Vec<String>,
}

struct Components {
    op: Arc<dyn ForwardOperator>,
    rec: KaiserSquires,
    noise: GaussianNoiseModel,
}

fn build_components(manifest: &DatasetManifest, cfg: &ExperimentConfig) -> Result<Components> {
    let op: Arc<dyn ForwardOperator> = Arc::new(MassMappingOperator::new(manifest.grid_n)?);
    let rec = KaiserSquires::new(op.clone(), KaiserSquiresConfig::new(cfg.smoothing_sigma)?)?;
    let noise = GaussianNoiseModel::new(manifest.noise_sigma)?;
    Ok(Components { op, rec, noise })
}

fn split_label(split: Split) -> u64 {
    match split {
        Split::Calibration => 0x40,
        Split::Test => 0x41,
    }
}

/// Cache identity: everything that determines per-observation artifacts.
/// Target levels, the error rate and the search grid are deliberately
/// excluded so re-calibration reuses the cache.
#[derive(Serialize)]
struct CacheKey<'a> {
    manifest: &'a DatasetManifest,
    n_bootstrap: usize,
    score_kind: ScoreKind,
    sure: &'a SureConfig,
    smoothing_sigma: f64,
    sampler: &'a TransformSamplerConfig,
    seed: u64,
    split: Split,
    index: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    digest: String,
    artifacts: ObservationArtifacts,
}

fn artifact_digest(manifest: &DatasetManifest, cfg: &ExperimentConfig, split: Split, index: usize) -> Result<String> {
    let key = CacheKey {
        manifest,
        n_bootstrap: cfg.n_bootstrap,
        score_kind: cfg.score_kind,
        sure: &cfg.sure,
        smoothing_sigma: cfg.smoothing_sigma,
        sampler: &cfg.sampler,
        seed: cfg.seed,
        split,
        index,
    };
    let json = serde_json::to_string(&key)?;
    let hash = Sha256::digest(json.as_bytes());
    Ok(hash.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn cache_path(dir: &Path, split: Split, index: usize) -> std::path::PathBuf {
    let prefix = match split {
        Split::Calibration => "cal",
        Split::Test => "test",
    };
    dir.join(format!("{prefix}_{index:05}.json"))
}

fn read_cache(path: &Path, digest: &str) -> Option<ObservationArtifacts> {
    let text = fs::read_to_string(path).ok()?;
    let entry: CacheEntry = serde_json::from_str(&text).ok()?;
    (entry.digest == digest).then_some(entry.artifacts)
}

/// Fill any missing needed artifact fields. Returns whether anything new
/// was computed.
fn fill_artifacts(
    artifacts: &mut ObservationArtifacts,
    needs: &ArtifactNeeds,
    dataset: &Dataset,
    components: &Components,
    cfg: &ExperimentConfig,
    split: Split,
    index: usize,
) -> Result<bool> {
    let mut changed = false;
    let needs_any_boot = (needs.equivariant && artifacts.scores_equivariant.is_none())
        || (needs.parametric && artifacts.scores_parametric.is_none());
    let needs_sure = needs.sure && artifacts.sure.is_none();
    let needs_true = needs.true_score && artifacts.true_score.is_none();
    if !needs_any_boot && !needs_sure && !needs_true {
        return Ok(false);
    }

    let y: Measurement = Field::Complex(dataset.observation(split, index)?);
    let obs_key = StreamKey::new(cfg.seed).child(split_label(split)).child(index as u64);
    let boot_seed = obs_key.child(LABEL_BOOTSTRAP).value();
    let Components { op, rec, noise } = components;

    if needs.equivariant && artifacts.scores_equivariant.is_none() {
        let bcfg = BootstrapConfig {
            n_samples: cfg.n_bootstrap,
            mode: BootstrapMode::Equivariant,
            seed: boot_seed,
        };
        let summary =
            run_bootstrap(&y, rec, op.as_ref(), noise, &cfg.sampler, cfg.score_kind, &bcfg)?;
        artifacts.scores_equivariant = Some(summary.scores);
        changed = true;
    }
    if needs.parametric && artifacts.scores_parametric.is_none() {
        let bcfg = BootstrapConfig {
            n_samples: cfg.n_bootstrap,
            mode: BootstrapMode::Parametric,
            seed: boot_seed,
        };
        let summary =
            run_bootstrap(&y, rec, op.as_ref(), noise, &cfg.sampler, cfg.score_kind, &bcfg)?;
        artifacts.scores_parametric = Some(summary.scores);
        changed = true;
    }
    if needs_sure {
        let estimate = sure_estimate(
            cfg.score_kind,
            &y,
            rec,
            op.as_ref(),
            noise,
            &cfg.sure,
            obs_key.child(LABEL_SURE),
        )?;
        artifacts.sure = Some(estimate);
        changed = true;
    }
    if needs_true {
        let kappa = dataset.ground_truth(split, index)?;
        let xhat = rec.reconstruct(&y)?;
        artifacts.true_score = Some(score(cfg.score_kind, &kappa, &xhat, op.as_ref())?);
        changed = true;
    }
    Ok(changed)
}

fn compute_artifacts(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    split: Split,
    needs: ArtifactNeeds,
    cache_dir: Option<&Path>,
) -> Result<Vec<ObservationArtifacts>> {
    let components = build_components(dataset.manifest(), cfg)?;
    if let Some(dir) = cache_dir {
        fs::create_dir_all(dir)?;
    }
    (0..dataset.n_samples(split))
        .into_par_iter()
        .map(|index| -> Result<ObservationArtifacts> {
            let digest = artifact_digest(dataset.manifest(), cfg, split, index)?;
            let path = cache_dir.map(|dir| cache_path(dir, split, index));
            let mut artifacts = path
                .as_deref()
                .and_then(|p| read_cache(p, &digest))
                .unwrap_or_default();
            let changed =
                fill_artifacts(&mut artifacts, &needs, dataset, &components, cfg, split, index)?;
            if changed {
                if let Some(p) = &path {
                    let entry = CacheEntry { digest, artifacts: artifacts.clone() };
                    fs::write(p, serde_json::to_string(&entry)?)?;
                }
            }
            Ok(artifacts)
        })
        .collect()
}

fn primary_scores<'a>(
    artifacts: &'a ObservationArtifacts,
    mode: BootstrapMode,
) -> Result<&'a [f64]> {
    let scores = match mode {
        BootstrapMode::Equivariant => artifacts.scores_equivariant.as_deref(),
        BootstrapMode::Parametric => artifacts.scores_parametric.as_deref(),
    };
    scores.ok_or_else(|| Error::MissingData("bootstrap scores missing from artifacts".into()))
}

/// Calibrate the scale factor per confidence level on the calibration
/// split. Bootstrap and score-estimate work happens once per observation
/// and is shared across levels.
pub fn run_calibration(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    cache_dir: Option<&Path>,
) -> Result<CalibrationRun> {
    cfg.validate(dataset.manifest())?;
    let needs = ArtifactNeeds {
        equivariant: cfg.bootstrap_mode == BootstrapMode::Equivariant,
        parametric: cfg.bootstrap_mode == BootstrapMode::Parametric,
        sure: cfg.calibration_mode == CalibrationMode::SelfSupervisedSure,
        true_score: cfg.calibration_mode == CalibrationMode::OracleGroundTruth,
    };
    let observations = compute_artifacts(dataset, cfg, Split::Calibration, needs, cache_dir)?;
    let estimates: Vec<f64> = observations
        .iter()
        .map(|o| match cfg.calibration_mode {
            CalibrationMode::SelfSupervisedSure => o.sure,
            CalibrationMode::OracleGroundTruth => o.true_score,
        })
        .map(|v| v.ok_or_else(|| Error::MissingData("score estimate missing".into())))
        .collect::<Result<_>>()?;

    let levels = cfg
        .levels
        .iter()
        .map(|&level| -> Result<LevelCalibration> {
            let alpha = 1.0 - level;
            let quantiles: Vec<f64> = observations
                .iter()
                .map(|o| quantile_from_scores(primary_scores(o, cfg.bootstrap_mode)?, alpha))
                .collect::<Result<_>>()?;
            let rcps = RcpsConfig::new(alpha, cfg.delta, cfg.lambda_grid.clone())?;
            match calibrate_lambda(&estimates, &quantiles, &rcps) {
                Ok(result) => Ok(LevelCalibration {
                    nominal_level: level,
                    alpha,
                    delta: cfg.delta,
                    result: Some(result),
                    failure: None,
                }),
                Err(Error::CalibrationInfeasible(msg)) => Ok(LevelCalibration {
                    nominal_level: level,
                    alpha,
                    delta: cfg.delta,
                    result: None,
                    failure: Some(msg),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CalibrationRun { levels, observations })
}

/// Evaluate calibrated and heuristic coverage on the test split. The
/// conformal column scales the configured bootstrap quantiles by the
/// calibrated factor; the raw columns use unit scale with equivariant and
/// parametric quantiles respectively.
pub fn run_coverage(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    levels: &[LevelCalibration],
    cache_dir: Option<&Path>,
) -> Result<CoverageReport> {
    cfg.validate(dataset.manifest())?;
    let needs =
        ArtifactNeeds { equivariant: true, parametric: true, sure: false, true_score: true };
    let observations = compute_artifacts(dataset, cfg, Split::Test, needs, cache_dir)?;
    let true_scores: Vec<f64> = observations
        .iter()
        .map(|o| o.true_score.ok_or_else(|| Error::MissingData("true score missing".into())))
        .collect::<Result<_>>()?;

    let mut report = CoverageReport::default();
    for lc in levels {
        let Some(result) = &lc.result else {
            report.warnings.push(format!(
                "level {} skipped: calibration unavailable ({})",
                lc.nominal_level,
                lc.failure.as_deref().unwrap_or("unknown")
            ));
            continue;
        };
        let q_equivariant: Vec<f64> = observations
            .iter()
            .map(|o| {
                quantile_from_scores(
                    o.scores_equivariant.as_deref().expect("computed above"),
                    lc.alpha,
                )
            })
            .collect::<Result<_>>()?;
        let q_parametric: Vec<f64> = observations
            .iter()
            .map(|o| {
                quantile_from_scores(
                    o.scores_parametric.as_deref().expect("computed above"),
                    lc.alpha,
                )
            })
            .collect::<Result<_>>()?;
        let q_primary = match cfg.bootstrap_mode {
            BootstrapMode::Equivariant => &q_equivariant,
            BootstrapMode::Parametric => &q_parametric,
        };
        report.rows.push(CoverageRow {
            nominal_level: lc.nominal_level,
            lambda_star: result.lambda_star,
            coverage_conformal: evaluate_coverage(&true_scores, q_primary, result.lambda_star)?,
            coverage_equivariant_raw: evaluate_coverage(&true_scores, &q_equivariant, 1.0)?,
            coverage_parametric_raw: evaluate_coverage(&true_scores, &q_parametric, 1.0)?,
            ucb: result.ucb_at_lambda,
            n_cal: result.n_calibration,
            n_test: observations.len(),
        });
    }
    Ok(report)
}

/// Write the per-level calibration table. Infeasible levels are omitted;
/// coverage later skips them with a warning.
pub fn write_calibration_csv(path: &Path, levels: &[LevelCalibration]) -> Result<()> {
    let mut out = String::from(CALIBRATION_CSV_HEADER);
    out.push('\n');
    for lc in levels {
        if let Some(r) = &lc.result {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                lc.alpha, lc.delta, r.lambda_star, r.empirical_risk_at_lambda, r.ucb_at_lambda,
                r.n_calibration
            );
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a calibration table back into level records.
pub fn read_calibration_csv(path: &Path) -> Result<Vec<LevelCalibration>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CALIBRATION_CSV_HEADER => {}
        other => {
            return Err(Error::BadFormat(format!(
                "calibration csv header mismatch: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut levels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::BadFormat(format!(
                "calibration csv line {}: expected 6 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::BadFormat(format!("calibration csv line {}: {e}", lineno + 2)))
        };
        let alpha = parse(fields[0])?;
        let delta = parse(fields[1])?;
        let lambda_star = parse(fields[2])?;
        let empirical_risk = parse(fields[3])?;
        let ucb = parse(fields[4])?;
        let n_cal = fields[5].parse::<usize>().map_err(|e| {
            Error::BadFormat(format!("calibration csv line {}: {e}", lineno + 2))
        })?;
        levels.push(LevelCalibration {
            nominal_level: round_level(1.0 - alpha),
            alpha,
            delta,
            result: Some(CalibrationResult {
                lambda_star,
                empirical_risk_at_lambda: empirical_risk,
                ucb_at_lambda: ucb,
                n_calibration: n_cal,
            }),
            failure: None,
        });
    }
    Ok(levels)
}

/// Write the plot-ready coverage table.
pub fn write_coverage_csv(path: &Path, report: &CoverageReport) -> Result<()> {
    let mut out = String::from(COVERAGE_CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.nominal_level,
            r.lambda_star,
            r.coverage_conformal,
            r.coverage_equivariant_raw,
            r.coverage_parametric_raw,
            r.ucb,
            r.n_cal,
            r.n_test
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a coverage table; the header must match exactly.
pub fn read_coverage_csv(path: &Path) -> Result<Vec<CoverageRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == COVERAGE_CSV_HEADER => {}
        other => {
            return Err(Error::BadFormat(format!(
                "coverage csv header mismatch: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::BadFormat(format!(
                "coverage csv line {}: expected 8 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::BadFormat(format!("coverage csv line {}: {e}", lineno + 2)))
        };
        let parse_count = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|e| Error::BadFormat(format!("coverage csv line {}: {e}", lineno + 2)))
        };
        rows.push(CoverageRow {
            nominal_level: parse(fields[0])?,
            lambda_star: parse(fields[1])?,
            coverage_conformal: parse(fields[2])?,
            coverage_equivariant_raw: parse(fields[3])?,
            coverage_parametric_raw: parse(fields[4])?,
            ucb: parse(fields[5])?,
            n_cal: parse_count(fields[6])?,
            n_test: parse_count(fields[7])?,
        });
    }
    Ok(rows)
}

/// Write the per-observation estimate table for the calibration store.
pub fn write_observations_csv(path: &Path, observations: &[ObservationArtifacts]) -> Result<()> {
    let mut out = String::from(OBSERVATIONS_CSV_HEADER);
    out.push('\n');
    for (i, o) in observations.iter().enumerate() {
        let sure = o.sure.map(|v| v.to_string()).unwrap_or_default();
        let true_score = o.true_score.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{i},{sure},{true_score}");
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rcps::default_lambda_grid;
    use crate::simdata::{DatasetManifest, GrfParams, MANIFEST_FORMAT_VERSION};

    fn small_manifest() -> DatasetManifest {
        DatasetManifest {
            grid_n: 16,
            noise_sigma: 0.5,
            grf: GrfParams { beta: 2.0, k0: 1.0 },
            seed_root: 7,
            n_calibration: 24,
            n_test: 24,
            format_version: MANIFEST_FORMAT_VERSION,
        }
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            bootstrap_mode: BootstrapMode::Equivariant,
            n_bootstrap: 12,
            score_kind: ScoreKind::MeasurementSpace,
            sure: SureConfig { n_probes: 4, ..SureConfig::default() },
            delta: 0.1,
            lambda_grid: default_lambda_grid(),
            levels: vec![0.3, 0.5, 0.7],
            calibration_mode: CalibrationMode::SelfSupervisedSure,
            smoothing_sigma: 1.0 / 0.29,
            sampler: TransformSamplerConfig::reference(16),
            seed: 99,
        }
    }

    fn small_dataset(dir: &Path) -> Dataset {
        Dataset::generate(dir, &small_manifest()).unwrap()
    }

    #[test]
    fn config_validation_checks_levels_and_grid() {
        let manifest = small_manifest();
        let mut cfg = small_config();
        cfg.levels = vec![0.5, 0.5];
        assert!(cfg.validate(&manifest).is_err());
        let mut cfg = small_config();
        cfg.levels = vec![0.0];
        assert!(cfg.validate(&manifest).is_err());
        let mut cfg = small_config();
        cfg.sampler.n = 32;
        assert!(cfg.validate(&manifest).is_err());
        assert!(small_config().validate(&manifest).is_ok());
    }

    #[test]
    fn self_supervised_calibration_never_reads_truth() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = small_dataset(dir.path());
        let cfg = small_config();
        let run = run_calibration(&dataset, &cfg, None).unwrap();
        assert_eq!(dataset.ground_truth_reads(), 0);
        assert_eq!(run.levels.len(), 3);
        assert_eq!(run.observations.len(), 24);
        for o in &run.observations {
            assert!(o.sure.is_some());
            assert!(o.true_score.is_none());
            assert_eq!(o.scores_equivariant.as_ref().unwrap().len(), 12);
        }
    }

    #[test]
    fn oracle_calibration_reads_truth_once_per_observation() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = small_dataset(dir.path());
        let cfg = ExperimentConfig {
            calibration_mode: CalibrationMode::OracleGroundTruth,
            ..small_config()
        };
        let _ = run_calibration(&dataset, &cfg, None).unwrap();
        assert_eq!(dataset.ground_truth_reads(), 24);
    }

    #[test]
    fn coverage_report_is_complete_and_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = small_dataset(dir.path());
        let cfg = small_config();
        let run = run_calibration(&dataset, &cfg, None).unwrap();
        let report = run_coverage(&dataset, &cfg, &run.levels, None).unwrap();
        assert_eq!(report.rows.len() + report.warnings.len(), 3);
        for row in &report.rows {
            for c in [
                row.coverage_conformal,
                row.coverage_equivariant_raw,
                row.coverage_parametric_raw,
            ] {
                assert!((0.0..=1.0).contains(&c));
            }
            assert_eq!(row.n_test, 24);
        }
    }

    #[test]
    fn infeasible_levels_are_recorded_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = small_dataset(dir.path());
        // alpha = 1 - 0.99 = 0.01 < UCB(0, 24, 0.1) = 0.091: infeasible.
        let cfg = ExperimentConfig { levels: vec![0.5, 0.99], ..small_config() };
        let run = run_calibration(&dataset, &cfg, None).unwrap();
        assert!(run.levels[0].result.is_some());
        assert!(run.levels[1].result.is_none());
        assert!(run.levels[1].failure.is_some());
        let report = run_coverage(&dataset, &cfg, &run.levels, None).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn cache_round_trip_reproduces_results() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = small_dataset(dir.path());
        let cfg = small_config();
        let cache = dir.path().join("cache");
        let cold = run_calibration(&dataset, &cfg, Some(&cache)).unwrap();
        let warm = run_calibration(&dataset, &cfg, Some(&cache)).unwrap();
        assert_eq!(cold.observations, warm.observations);
        assert_eq!(cold.levels, warm.levels);
        // A cache entry exists per calibration observation.
        let entries = fs::read_dir(&cache).unwrap().count();
        assert_eq!(entries, 24);
    }

    #[test]
    fn cache_is_invalidated_by_seed_change() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = small_dataset(dir.path());
        let cfg = small_config();
        let cache = dir.path().join("cache");
        let a = run_calibration(&dataset, &cfg, Some(&cache)).unwrap();
        let reseeded = ExperimentConfig { seed: 100, ..cfg };
        let b = run_calibration(&dataset, &reseeded, Some(&cache)).unwrap();
        assert_ne!(a.observations, b.observations);
    }

    #[test]
    fn oracle_and_sure_share_cached_bootstrap_scores() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = small_dataset(dir.path());
        let cfg = small_config();
        let cache = dir.path().join("cache");
        let sure_run = run_calibration(&dataset, &cfg, Some(&cache)).unwrap();
        let oracle_cfg = ExperimentConfig {
            calibration_mode: CalibrationMode::OracleGroundTruth,
            ..cfg
        };
        let oracle_run = run_calibration(&dataset, &oracle_cfg, Some(&cache)).unwrap();
        for (a, b) in sure_run.observations.iter().zip(&oracle_run.observations) {
            assert_eq!(a.scores_equivariant, b.scores_equivariant);
        }
        // Merged cache now carries both estimate kinds.
        let entry: CacheEntry = serde_json::from_str(
            &fs::read_to_string(cache.join("cal_00000.json")).unwrap(),
        )
        .unwrap();
        assert!(entry.artifacts.sure.is_some());
        assert!(entry.artifacts.true_score.is_some());
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let levels = vec![
            LevelCalibration {
                nominal_level: 0.9,
                alpha: round_level(1.0 - 0.9),
                delta: 0.1,
                result: Some(CalibrationResult {
                    lambda_star: 0.75,
                    empirical_risk_at_lambda: 0.05,
                    ucb_at_lambda: 0.09,
                    n_calibration: 40,
                }),
                failure: None,
            },
            LevelCalibration {
                nominal_level: 0.95,
                alpha: round_level(1.0 - 0.95),
                delta: 0.1,
                result: None,
                failure: Some("floor".into()),
            },
        ];
        let cal_path = dir.path().join("calibration.csv");
        write_calibration_csv(&cal_path, &levels).unwrap();
        let back = read_calibration_csv(&cal_path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].nominal_level, 0.9);
        assert_eq!(back[0].result.unwrap().lambda_star, 0.75);

        let report = CoverageReport {
            rows: vec![CoverageRow {
                nominal_level: 0.9,
                lambda_star: 0.75,
                coverage_conformal: 0.88,
                coverage_equivariant_raw: 1.0,
                coverage_parametric_raw: 0.0,
                ucb: 0.09,
                n_cal: 40,
                n_test: 40,
            }],
            warnings: vec![],
        };
        let cov_path = dir.path().join("coverage.csv");
        write_coverage_csv(&cov_path, &report).unwrap();
        let rows = read_coverage_csv(&cov_path).unwrap();
        assert_eq!(rows, report.rows);

        fs::write(&cov_path, "wrong,header\n1,2\n").unwrap();
        assert!(matches!(read_coverage_csv(&cov_path), Err(Error::BadFormat(_))));
    }

    #[test]
    fn observations_csv_has_sure_column() {
        let dir = tempfile::tempdir().unwrap();
        let obs = vec![
            ObservationArtifacts { sure: Some(0.5), ..Default::default() },
            ObservationArtifacts { sure: None, true_score: Some(0.25), ..Default::default() },
        ];
        let path = dir.path().join("observations.csv");
        write_observations_csv(&path, &obs).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "obs,sure,true_score");
        assert_eq!(lines.next().unwrap(), "0,0.5,");
        assert_eq!(lines.next().unwrap(), "1,,0.25");
    }

    #[test]
    fn oracle_and_sure_lambdas_agree_statistically() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest { n_calibration: 48, ..small_manifest() };
        let dataset = Dataset::generate(dir.path(), &manifest).unwrap();
        let cfg = ExperimentConfig { levels: vec![0.5, 0.7], ..small_config() };
        let sure_run = run_calibration(&dataset, &cfg, None).unwrap();
        let oracle_cfg = ExperimentConfig {
            calibration_mode: CalibrationMode::OracleGroundTruth,
            ..cfg
        };
        let oracle_run = run_calibration(&dataset, &oracle_cfg, None).unwrap();
        for (s, o) in sure_run.levels.iter().zip(&oracle_run.levels) {
            let (Some(rs), Some(ro)) = (&s.result, &o.result) else {
                panic!("both modes should be feasible at these levels");
            };
            let ratio = rs.lambda_star / ro.lambda_star;
            assert!(
                (0.5..=2.0).contains(&ratio),
                "lambda ratio {ratio} at level {} outside statistical agreement band",
                s.nominal_level
            );
        }
    }
}
