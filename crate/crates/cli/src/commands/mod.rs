pub mod calibrate;
pub mod global;
pub mod gradfield;
pub mod stability;
pub mod surrogate;

use subspace_stability::activesub::{activity_scores, ActivityScores, SubspaceResult};
use subspace_stability::models::QoiModel;
use subspace_stability::ranking::format_ranking;
use subspace_stability::sampling::ParameterSpace;
use subspace_stability::stability::{global_analysis, LocalAnalysis, Methods};

use crate::config::{ActiveDim, Method, RunConfig};
use crate::error::CliError;
use crate::output::{OutputDir, Provenance};

/// Model, admissible box and output directory shared by every command.
pub struct Setup {
    pub model: Box<dyn QoiModel>,
    pub space: ParameterSpace,
    pub out: OutputDir,
}

impl Setup {
    pub fn new(config: &RunConfig) -> Result<Self, CliError> {
        let model = config.model()?;
        let space = config.space(model.as_ref())?;
        let out = OutputDir::create(config.output_dir(), Provenance::new(config.hash(), config.seed))?;
        Ok(Setup { model, space, out })
    }

    pub fn names(&self) -> &[String] {
        &self.space.names
    }

    pub fn ranking_text(&self, ranking: &[usize]) -> String {
        format_ranking(ranking, self.names())
    }
}

/// Comparator settings for a global run (`global = true`) or a region.
pub fn methods(config: &RunConfig, selected: &[Method], global: bool) -> Methods {
    Methods {
        morris: selected.contains(&Method::Morris).then(|| config.morris_config()),
        sobol: selected
            .contains(&Method::Sobol)
            .then_some(if global { config.sobol.global_n } else { config.sobol.local_n }),
    }
}

/// Global subspace and scores, loaded from `global_subspace` when given.
/// Comparator rankings are only available from a fresh run.
pub fn global(setup: &Setup, config: &RunConfig, methods: &Methods) -> Result<LocalAnalysis, CliError> {
    let n = match config.active_dim {
        ActiveDim::Auto => None,
        ActiveDim::Fixed(n) => Some(n),
    };
    if let Some(path) = &config.global_subspace {
        if methods.morris.is_some() || methods.sobol.is_some() {
            return Err(CliError::Usage(
                "global_subspace: a saved subspace carries no Morris or Sobol' results; drop those methods".into(),
            ));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("global_subspace: cannot read {}: {e}", path.display())))?;
        let mut sub: SubspaceResult = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("global_subspace: {}: {e}", path.display())))?;
        if sub.dim() != setup.space.dim() {
            return Err(CliError::Usage(format!(
                "global_subspace: {} has dimension {}, model has {}",
                path.display(),
                sub.dim(),
                setup.space.dim()
            )));
        }
        if let Some(n) = n {
            sub = sub.with_dimension(n)?;
        }
        let scores: ActivityScores = activity_scores(&sub);
        return Ok(LocalAnalysis { region_index: None, subspace: sub, scores, morris: None, sobol: None, distance_to_global: 0.0 });
    }
    Ok(global_analysis(
        setup.model.as_ref(),
        &setup.space,
        config.global_samples,
        config.seed,
        n,
        &config.gradient_config(),
        methods,
    )?)
}
