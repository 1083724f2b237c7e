mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subspace_stability::gradients::GradientMode;
use subspace_stability::surrogate::AicSource;

use config::{ActiveDim, Bounds, Experiment, Method, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "analyze", version, about = "Active-subspace sensitivity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Global activity scores, Morris and Sobol' indices.
    Global {
        #[command(flatten)]
        common: Common,
        /// Also run the growth-rate restriction scenarios.
        #[arg(long)]
        scenarios: bool,
        /// Growth-rate bound of the small-growth scenario.
        #[arg(long)]
        scenario_threshold: Option<f64>,
    },
    /// Region-wise sweep: rankings, census, top-k table and distance map.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Continue an interrupted sweep from its regions.csv.
        #[arg(long)]
        resume: bool,
    },
    /// Global versus local reduced-dimension polynomial surrogates on one region.
    Surrogate {
        #[command(flatten)]
        common: Common,
        /// Region as a comma-separated bin multi-index, e.g. 0,0,0,0,0,0.
        #[arg(long)]
        region: Option<String>,
        /// Region as comma-separated lo:hi pairs, e.g. 0:0.125,0:0.125.
        #[arg(long)]
        bounds: Option<String>,
        /// Active dimensions to compare, comma-separated.
        #[arg(long)]
        dims: Option<String>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// RSS used in the AIC: test or train.
        #[arg(long)]
        aic: Option<String>,
    },
    /// Calibration with global versus local top-k parameter subsets.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Number of randomly subsampled regions.
        #[arg(long)]
        regions: Option<usize>,
        /// Free-parameter counts, comma-separated.
        #[arg(long)]
        ks: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        /// Reuse local rankings from an earlier stability run.
        #[arg(long)]
        stability_dir: Option<PathBuf>,
    },
    /// Normalized gradient directions on a grid of a 2-D model.
    Gradfield {
        #[command(flatten)]
        common: Common,
        /// Extra evaluation point x1,x2; may be repeated.
        #[arg(long = "at")]
        at: Vec<String>,
    },
    /// Runs the experiment named by the config's `experiment` key.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gradient samples for the global analysis.
    #[arg(long)]
    samples: Option<usize>,
    /// Gradient samples per region.
    #[arg(long)]
    region_samples: Option<usize>,
    /// Bins per axis of the region grid.
    #[arg(long)]
    bins: Option<usize>,
    /// Active dimension, or "auto".
    #[arg(long)]
    active_dim: Option<ActiveDim>,
    /// Comma-separated subset of activity, morris, sobol.
    #[arg(long)]
    methods: Option<String>,
    /// finite-difference or analytic.
    #[arg(long)]
    gradient: Option<String>,
    /// Saved global subspace (JSON) to reuse.
    #[arg(long)]
    global_subspace: Option<PathBuf>,
    /// Lotka-Volterra integration step in days.
    #[arg(long)]
    dt: Option<f64>,
    /// Output directory; defaults to $ANALYZE_OUTPUT_DIR, then ./analyze-out.
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    /// Worker threads; 1 gives a serial run.
    #[arg(long)]
    workers: Option<usize>,
}

fn list<T: std::str::FromStr>(field: &str, text: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| CliError::Usage(format!("{field}: cannot parse {s:?}"))))
        .collect()
}

fn parse_enum<T: serde::de::DeserializeOwned>(field: &str, text: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(text.to_string()))
        .map_err(|_| CliError::Usage(format!("{field}: unknown value {text:?}")))
}

fn parse_bounds(text: &str) -> Result<Bounds, CliError> {
    let mut b = Bounds { lower: Vec::new(), upper: Vec::new() };
    for pair in text.split(',') {
        let (lo, hi) = pair
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("bounds: expected lo:hi, got {pair:?}")))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bounds: cannot parse {s:?}")));
        b.lower.push(parse(lo)?);
        b.upper.push(parse(hi)?);
    }
    Ok(b)
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.model {
            c.model = Some(v.clone());
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.samples {
            c.global_samples = v;
        }
        if let Some(v) = self.region_samples {
            c.region_samples = v;
        }
        if let Some(v) = self.bins {
            c.bins = Some(v);
        }
        if let Some(v) = self.active_dim {
            c.active_dim = v;
        }
        if let Some(v) = &self.methods {
            c.methods = Some(list::<String>("methods", v)?.iter().map(|s| parse_enum::<Method>("methods", s)).collect::<Result<_, _>>()?);
        }
        if let Some(v) = &self.gradient {
            c.gradient.mode = parse_enum::<GradientMode>("gradient", v)?;
        }
        if let Some(v) = &self.global_subspace {
            c.global_subspace = Some(v.clone());
        }
        if let Some(v) = self.dt {
            c.dt = Some(v);
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = Some(v.clone());
        }
        if let Some(v) = self.workers {
            c.workers = Some(v);
        }
        Ok(c)
    }
}

fn setup_workers(config: &RunConfig) -> Result<(), CliError> {
    if let Some(w) = config.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Failure(format!("cannot start {w} workers: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (mut config, experiment) = match &cli.command {
        Command::Global { common, .. } => (common.resolve()?, Some(Experiment::Global)),
        Command::Stability { common, .. } => (common.resolve()?, Some(Experiment::Stability)),
        Command::Surrogate { common, .. } => (common.resolve()?, Some(Experiment::Surrogate)),
        Command::Calibrate { common, .. } => (common.resolve()?, Some(Experiment::Calibrate)),
        Command::Gradfield { common, .. } => (common.resolve()?, Some(Experiment::Gradfield)),
        Command::Run { common } => {
            let c = common.resolve()?;
            let e = c.experiment;
            (c, e)
        }
    };
    let mut resume = false;
    match cli.command {
        Command::Global { scenarios, scenario_threshold, .. } => {
            if scenarios {
                config.scenarios.enabled = true;
            }
            if let Some(t) = scenario_threshold {
                config.scenarios.threshold = t;
            }
        }
        Command::Stability { resume: r, .. } => resume = r,
        Command::Surrogate { region, bounds, dims, train, test, aic, .. } => {
            if let Some(r) = region {
                config.surrogate.region = Some(list("region", &r)?);
                config.surrogate.bounds = None;
            }
            if let Some(b) = bounds {
                config.surrogate.bounds = Some(parse_bounds(&b)?);
                config.surrogate.region = None;
            }
            if let Some(d) = dims {
                config.surrogate.dims = list("dims", &d)?;
            }
            if let Some(v) = train {
                config.surrogate.train = v;
            }
            if let Some(v) = test {
                config.surrogate.test = v;
            }
            if let Some(v) = aic {
                config.surrogate.aic = parse_enum::<AicSource>("aic", &v)?;
            }
        }
        Command::Calibrate { regions, ks, iterations, burn_in, stability_dir, .. } => {
            let cal = &mut config.calibration;
            if let Some(v) = regions {
                cal.regions = v;
            }
            if let Some(v) = ks {
                cal.ks = list("ks", &v)?;
            }
            if let Some(v) = iterations {
                cal.iterations = v;
            }
            if let Some(v) = burn_in {
                cal.burn_in = v;
            }
            if let Some(v) = stability_dir {
                cal.stability_dir = Some(v);
            }
        }
        Command::Gradfield { at, .. } => {
            for p in at {
                let v: Vec<f64> = list("at", &p)?;
                if v.len() != 2 {
                    return Err(CliError::Usage(format!("at: expected x1,x2, got {p:?}")));
                }
                config.gradfield.points.push([v[0], v[1]]);
            }
        }
        Command::Run { .. } => {}
    }
    config.validate()?;
    let experiment = experiment.ok_or_else(|| CliError::Usage("experiment: required by `run`".into()))?;
    setup_workers(&config)?;
    match experiment {
        Experiment::Global => commands::global::run(&config),
        Experiment::Stability => commands::stability::run(&config, resume),
        Experiment::Surrogate => commands::surrogate::run(&config),
        Experiment::Calibrate => commands::calibrate::run(&config),
        Experiment::Gradfield => commands::gradfield::run(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
