use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tactr_core::shooting::ShooterOptions;

/// Forward statics of tendon-actuated concentric tube robots.
///
/// Exit status: 0 on success, 1 on input errors (every diagnostic is printed
/// to stderr), 2 when the solver fails to converge or a validation check
/// fails.
#[derive(Debug, Parser)]
#[command(name = "tactr", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one scenario and export the shape.
    Solve(SolveArgs),
    /// Solve a family of scenarios along one parameter, warm-starting each
    /// point from the previous one.
    Sweep(SweepArgs),
    /// List or print the bundled scenarios.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Run the oracle comparisons and invariant checks.
    Validate(ValidateArgs),
    /// Convert a JSON solution document to CSV or SVG.
    Export(ExportArgs),
}

#[derive(Debug, Subcommand)]
pub enum PresetAction {
    List,
    Show { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
            OutputFormat::Svg => "svg",
        }
    }
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML, or JSON by extension).
    #[arg(conflicts_with = "preset", required_unless_present = "preset")]
    pub scenario: Option<PathBuf>,
    /// Bundled scenario name (see `tactr preset list`).
    #[arg(long)]
    pub preset: Option<String>,
    /// Override a scenario field, e.g. `--set tubes.0.outer_diameter_mm=1.2`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Use documented placeholders for required inputs left unset.
    #[arg(long)]
    pub accept_placeholders: bool,
}

/// Solver settings. Unset flags keep the scenario's values.
#[derive(Debug, Args, Default)]
pub struct SolverArgs {
    /// RK4 steps per segment [default: 200]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Boundary force tolerance in N [default: 1e-8]
    #[arg(long)]
    pub force_tol: Option<f64>,
    /// Boundary moment tolerance in N·m [default: 1e-10]
    #[arg(long)]
    pub moment_tol: Option<f64>,
    /// Newton iterations per continuation step [default: 50]
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Largest tension increment per continuation step in N [default: 0.5]
    #[arg(long)]
    pub continuation_step: Option<f64>,
    /// Smallest accepted line-search step [default: 1/1024]
    #[arg(long)]
    pub min_step: Option<f64>,
    /// Jacobian perturbation of curvature unknowns in 1/m [default: 1e-6]
    #[arg(long)]
    pub curvature_perturbation: Option<f64>,
    /// Jacobian perturbation of shear-strain unknowns [default: 1e-8]
    #[arg(long)]
    pub strain_perturbation: Option<f64>,
    /// Jacobian perturbation of dilation unknowns [default: 1e-8]
    #[arg(long)]
    pub dilation_perturbation: Option<f64>,
}

impl SolverArgs {
    pub fn apply(&self, o: &mut ShooterOptions) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { o.$field = v; })*
            };
        }
        set!(
            steps => steps_per_segment,
            force_tol => force_tolerance,
            moment_tol => moment_tolerance,
            max_iterations => max_iterations,
            continuation_step => continuation_step,
            min_step => min_step,
            curvature_perturbation => curvature_perturbation,
            strain_perturbation => strain_perturbation,
            dilation_perturbation => dilation_perturbation
        );
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output file [default: $TACTR_OUT_DIR/<name>.<format>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format; inferred from --out when omitted, else csv.
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Also write an SVG of the centerline projections.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("axis").required(true).args(["tendon", "twist_tube"]))]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Sweep the tension of this tendon (N).
    #[arg(long)]
    pub tendon: Option<usize>,
    /// Sweep the base twist of this tube (degrees).
    #[arg(long)]
    pub twist_tube: Option<usize>,
    /// First value of the swept parameter.
    #[arg(long, allow_negative_numbers = true)]
    pub from: f64,
    /// Last value, not below --from.
    #[arg(long, allow_negative_numbers = true)]
    pub to: f64,
    /// Number of sweep points, ends included.
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    /// Directory for per-point exports and summary.csv
    /// [default: $TACTR_OUT_DIR/<name>_sweep]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    /// Also write an SVG per point.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Multiply the main solver's section stiffness (fault injection).
    #[arg(long, default_value_t = 1.0)]
    pub stiffness_scale: f64,
    /// JSON report [default: $TACTR_OUT_DIR/validation.json]
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Solution document written by `solve --format json`.
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
