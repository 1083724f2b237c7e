//! Run configuration: a JSON document merged with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subspace_stability::gradients::{GradientConfig, GradientMode, DEFAULT_STEP};
use subspace_stability::gsa::{MorrisConfig, MORRIS_INSET, MORRIS_LEVELS, MORRIS_TRAJECTORIES, SOBOL_GLOBAL_N, SOBOL_LOCAL_N};
use subspace_stability::models::{model_by_name, LotkaVolterra, QoiModel, MODEL_NAMES};
use subspace_stability::sampling::ParameterSpace;
use subspace_stability::surrogate::{AicSource, DEFAULT_TEST, DEFAULT_TRAIN};

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "ANALYZE_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "analyze-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Activity,
    Morris,
    Sobol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Global,
    Stability,
    Surrogate,
    Calibrate,
    Gradfield,
}

/// Active dimension: a fixed count or the eigenvalue-gap choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActiveDim {
    #[default]
    Auto,
    Fixed(usize),
}

impl Serialize for ActiveDim {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ActiveDim::Auto => s.serialize_str("auto"),
            ActiveDim::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for ActiveDim {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(ActiveDim::Fixed(n)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for ActiveDim {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(ActiveDim::Auto);
        }
        s.parse().map(ActiveDim::Fixed).map_err(|_| format!("expected a dimension or \"auto\", got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientSection {
    pub mode: GradientMode,
    pub step: f64,
}

impl Default for GradientSection {
    fn default() -> Self {
        GradientSection { mode: GradientMode::FiniteDifference, step: DEFAULT_STEP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorrisSection {
    pub trajectories: usize,
    pub levels: usize,
}

impl Default for MorrisSection {
    fn default() -> Self {
        MorrisSection { trajectories: MORRIS_TRAJECTORIES, levels: MORRIS_LEVELS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SobolSection {
    /// Base sample count for the whole space.
    pub global_n: usize,
    /// Base sample count per region.
    pub local_n: usize,
}

impl Default for SobolSection {
    fn default() -> Self {
        SobolSection { global_n: SOBOL_GLOBAL_N, local_n: SOBOL_LOCAL_N }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub enabled: bool,
    /// Upper bound on both growth rates in the small-growth scenario.
    pub threshold: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection { enabled: false, threshold: 0.125 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSection {
    /// Region by bin multi-index on the `bins` grid.
    pub region: Option<Vec<usize>>,
    /// Region by explicit bounds.
    pub bounds: Option<Bounds>,
    /// Active dimensions to compare; empty means `1..m`.
    pub dims: Vec<usize>,
    pub train: usize,
    pub test: usize,
    pub aic: AicSource,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        SurrogateSection { region: None, bounds: None, dims: Vec::new(), train: DEFAULT_TRAIN, test: DEFAULT_TEST, aic: AicSource::Test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Number of randomly subsampled regions.
    pub regions: usize,
    /// Free-parameter counts; empty means `1..=m`.
    pub ks: Vec<usize>,
    pub iterations: usize,
    pub burn_in: usize,
    pub noise_rel: f64,
    pub near_tie_scale: f64,
    /// Directory of an earlier `stability` run whose rankings are reused.
    pub stability_dir: Option<PathBuf>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            regions: 500,
            ks: Vec::new(),
            iterations: 5000,
            burn_in: 1000,
            noise_rel: 0.01,
            near_tie_scale: 1.0,
            stability_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradfieldSection {
    /// Grid cells per axis; directions are taken at cell centres. The
    /// top-level `bins`, when set, takes precedence.
    pub bins: usize,
    /// Extra points at which to report the direction.
    pub points: Vec<[f64; 2]>,
}

impl Default for GradfieldSection {
    fn default() -> Self {
        GradfieldSection { bins: 20, points: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<String>,
    pub space: Option<Bounds>,
    /// Bins per axis of the region grid.
    pub bins: Option<usize>,
    /// Gradient samples per region.
    pub region_samples: usize,
    /// Gradient samples for the global analysis.
    pub global_samples: usize,
    pub active_dim: ActiveDim,
    pub methods: Option<Vec<Method>>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub experiment: Option<Experiment>,
    /// Integration step of the Lotka-Volterra model (days).
    pub dt: Option<f64>,
    /// Reuse a saved global subspace instead of recomputing it.
    pub global_subspace: Option<PathBuf>,
    pub gradient: GradientSection,
    pub morris: MorrisSection,
    pub sobol: SobolSection,
    pub scenarios: ScenarioSection,
    pub surrogate: SurrogateSection,
    pub calibration: CalibrationSection,
    pub gradfield: GradfieldSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: None,
            space: None,
            bins: None,
            region_samples: 10,
            global_samples: 100_000,
            active_dim: ActiveDim::Auto,
            methods: None,
            seed: 0,
            output_dir: None,
            workers: None,
            experiment: None,
            dt: None,
            global_subspace: None,
            gradient: GradientSection::default(),
            morris: MorrisSection::default(),
            sobol: SobolSection::default(),
            scenarios: ScenarioSection::default(),
            surrogate: SurrogateSection::default(),
            calibration: CalibrationSection::default(),
            gradfield: GradfieldSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Checks every field that can be checked without running anything and
    /// reports all problems at once.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        let model = match self.model.as_deref() {
            None => {
                errs.push(format!("model: required (one of {})", MODEL_NAMES.join(", ")));
                None
            }
            Some(name) => match model_by_name(name) {
                Some(m) => Some(m),
                None => {
                    errs.push(format!("model: unknown model {name:?} (one of {})", MODEL_NAMES.join(", ")));
                    None
                }
            },
        };
        let m = model.as_ref().map(|m| m.dim());
        if let (Some(b), Some(m)) = (&self.space, m) {
            check_bounds("space", b, m, &mut errs);
        }
        if self.bins == Some(0) {
            errs.push("bins: must be at least 1".into());
        }
        if self.region_samples == 0 {
            errs.push("region_samples: must be at least 1".into());
        }
        if self.global_samples == 0 {
            errs.push("global_samples: must be at least 1".into());
        }
        if let (ActiveDim::Fixed(n), Some(m)) = (self.active_dim, m) {
            if n == 0 || n > m {
                errs.push(format!("active_dim: {n} is outside 1..={m}"));
            }
        }
        if let Some(methods) = &self.methods {
            if methods.is_empty() {
                errs.push("methods: at least one method is required".into());
            }
        }
        if self.workers == Some(0) {
            errs.push("workers: must be at least 1".into());
        }
        if let Some(dt) = self.dt {
            if self.model.as_deref().is_some_and(|n| !is_lv(n)) {
                errs.push("dt: only applies to lotka-volterra".into());
            } else if !(dt > 0.0 && dt <= 1.0) {
                errs.push(format!("dt: {dt} must lie in (0, 1]"));
            }
        }
        if !(self.gradient.step > 0.0 && self.gradient.step.is_finite()) {
            errs.push(format!("gradient.step: {} must be positive", self.gradient.step));
        }
        if self.morris.trajectories == 0 {
            errs.push("morris.trajectories: must be at least 1".into());
        }
        if self.morris.levels < 2 || self.morris.levels % 2 != 0 {
            errs.push(format!("morris.levels: {} must be even and at least 2", self.morris.levels));
        }
        if self.sobol.global_n < 2 || self.sobol.local_n < 2 {
            errs.push("sobol: base sample counts must be at least 2".into());
        }
        if !(self.scenarios.threshold > 0.0 && self.scenarios.threshold < 1.0) {
            errs.push(format!("scenarios.threshold: {} must lie in (0, 1)", self.scenarios.threshold));
        }
        if let Some(m) = m {
            if let Some(b) = &self.surrogate.bounds {
                check_bounds("surrogate.bounds", b, m, &mut errs);
            }
            if let Some(r) = &self.surrogate.region {
                if r.len() != m {
                    errs.push(format!("surrogate.region: expected {m} bin indices, got {}", r.len()));
                }
            }
            for &n in &self.surrogate.dims {
                if n == 0 || n >= m {
                    errs.push(format!("surrogate.dims: {n} is outside 1..{m}"));
                }
            }
            for &k in &self.calibration.ks {
                if k == 0 || k > m {
                    errs.push(format!("calibration.ks: {k} is outside 1..={m}"));
                }
            }
        }
        if self.surrogate.region.is_some() && self.surrogate.bounds.is_some() {
            errs.push("surrogate: give either region or bounds, not both".into());
        }
        if self.surrogate.train == 0 || self.surrogate.test == 0 {
            errs.push("surrogate: train and test counts must be positive".into());
        }
        let cal = &self.calibration;
        if cal.regions == 0 {
            errs.push("calibration.regions: must be at least 1".into());
        }
        if cal.iterations == 0 || cal.burn_in + 500 > cal.iterations {
            errs.push(format!(
                "calibration.iterations: {} must exceed burn_in ({}) plus the 500-iteration warm-up",
                cal.iterations, cal.burn_in
            ));
        }
        if !(cal.noise_rel > 0.0) {
            errs.push(format!("calibration.noise_rel: {} must be positive", cal.noise_rel));
        }
        if !(cal.near_tie_scale >= 0.0) {
            errs.push(format!("calibration.near_tie_scale: {} must be nonnegative", cal.near_tie_scale));
        }
        if self.gradfield.bins == 0 {
            errs.push("gradfield.bins: must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(errs.join("\n")))
        }
    }

    pub fn model(&self) -> Result<Box<dyn QoiModel>, CliError> {
        let name = self.model.as_deref().ok_or_else(|| CliError::Usage("model: required".into()))?;
        if is_lv(name) {
            if let Some(dt) = self.dt {
                return Ok(Box::new(LotkaVolterra { dt }));
            }
        }
        model_by_name(name).ok_or_else(|| CliError::Usage(format!("model: unknown model {name:?}")))
    }

    pub fn space(&self, model: &dyn QoiModel) -> Result<ParameterSpace, CliError> {
        let base = model.space();
        match &self.space {
            None => Ok(base),
            Some(b) => ParameterSpace::new(base.names, b.lower.clone(), b.upper.clone())
                .map_err(|e| CliError::Usage(format!("space: {e}"))),
        }
    }

    /// Grid bins, defaulting to 100 per axis in 2-D and 4 otherwise.
    pub fn bins_for(&self, m: usize) -> usize {
        self.bins.unwrap_or(if m <= 2 { 100 } else { 4 })
    }

    pub fn methods_or(&self, default: &[Method]) -> Vec<Method> {
        let mut v = self.methods.clone().unwrap_or_else(|| default.to_vec());
        v.sort();
        v.dedup();
        v
    }

    pub fn gradient_config(&self) -> GradientConfig {
        GradientConfig { mode: self.gradient.mode, step: self.gradient.step, record_value: false }
    }

    pub fn morris_config(&self) -> MorrisConfig {
        MorrisConfig { trajectories: self.morris.trajectories, levels: self.morris.levels, inset: MORRIS_INSET }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// SHA-256 of the fields that influence results, as 16 hex digits.
    /// Output location, worker count and the experiment selector are left out
    /// so they never change output bytes.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.workers = None;
        c.experiment = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn is_lv(name: &str) -> bool {
    matches!(name, "lotka-volterra" | "lv")
}

fn check_bounds(field: &str, b: &Bounds, m: usize, errs: &mut Vec<String>) {
    if b.lower.len() != m || b.upper.len() != m {
        errs.push(format!("{field}: expected {m} lower and upper bounds, got {} and {}", b.lower.len(), b.upper.len()));
        return;
    }
    for (i, (lo, hi)) in b.lower.iter().zip(&b.upper).enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            errs.push(format!("{field}: axis {i} has lower {lo} not below upper {hi}"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_need_a_model() {
        let err = RunConfig::default().validate().unwrap_err();
        assert!(err.to_string().contains("model: required"));
    }

    #[test]
    fn reports_every_bad_field() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"model": "f1", "bins": 0, "active_dim": 3, "morris": {"levels": 3}, "dt": 0.1}"#,
        )
        .unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        for field in ["bins:", "active_dim:", "morris.levels:", "dt:"] {
            assert!(msg.contains(field), "{field} missing from {msg}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"model": "f1", "bogus": 1}"#).is_err());
    }

    #[test]
    fn active_dim_accepts_auto_and_numbers() {
        let c: RunConfig = serde_json::from_str(r#"{"active_dim": "auto"}"#).unwrap();
        assert_eq!(c.active_dim, ActiveDim::Auto);
        let c: RunConfig = serde_json::from_str(r#"{"active_dim": 4}"#).unwrap();
        assert_eq!(c.active_dim, ActiveDim::Fixed(4));
        assert!(serde_json::from_str::<RunConfig>(r#"{"active_dim": "four"}"#).is_err());
    }

    #[test]
    fn hash_ignores_placement_but_not_settings() {
        let a = RunConfig { model: Some("f3".into()), ..RunConfig::default() };
        let b = RunConfig { output_dir: Some("elsewhere".into()), workers: Some(3), ..a.clone() };
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
