mod args;
mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use tactr_core::scenario::export::{self, SolutionDocument};
use tactr_core::scenario::{parse_scenario, presets, Format, ParseOptions, Scenario};
use tactr_core::shooting::{shoot, shoot_from, ShootError, Solution};
use tactr_core::validation::{run_validation, ValidationOptions};

use args::{Cli, Command, ExportArgs, OutputFormat, PresetAction, ScenarioArgs, SolveArgs, SweepArgs, ValidateArgs};

const OUT_DIR_VAR: &str = "TACTR_OUT_DIR";

#[derive(Debug)]
enum Failure {
    /// Bad arguments, unreadable or invalid scenario, unwritable output.
    Input(String),
    /// The solver did not converge or a validation check failed.
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    // Usage errors are input errors; clap's own status for them is 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Preset { action } => preset(action),
        Command::Validate(a) => validate(a),
        Command::Export(a) => export_document(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Input(m) | Failure::Numerical(m) => eprintln!("{m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn load_scenario(args: &ScenarioArgs, solver: &args::SolverArgs) -> Result<Scenario> {
    let mut overrides = Vec::new();
    let mut errors = Vec::new();
    for o in &args.overrides {
        match o.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => overrides.push((k.trim().to_string(), v.trim().to_string())),
            _ => errors.push(format!("--set expects PATH=VALUE, got '{o}'")),
        }
    }
    if !errors.is_empty() {
        return Err(Failure::Input(errors.join("\n")));
    }
    let options = ParseOptions {
        overrides,
        accept_placeholders: args.accept_placeholders,
    };
    let parsed = match (&args.scenario, &args.preset) {
        (_, Some(name)) => presets::preset(name, &options),
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
            parse_scenario(&text, Format::from_path(path), &options)
        }
        (None, None) => unreachable!("clap requires a scenario or a preset"),
    };
    let mut scenario = parsed.map_err(|e| Failure::Input(e.to_string()))?;
    solver.apply(&mut scenario.solver);
    scenario
        .solver
        .validate()
        .map_err(|e| Failure::Input(format!("invalid solver options: {e}")))?;
    for p in &scenario.placeholders {
        eprintln!("warning: using placeholder for {p}");
    }
    Ok(scenario)
}

fn format_for(path: &Path) -> OutputFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("json") => OutputFormat::Json,
        Some(e) if e.eq_ignore_ascii_case("svg") => OutputFormat::Svg,
        _ => OutputFormat::Csv,
    }
}

fn render(format: OutputFormat, scenario: &Scenario, solution: &Solution) -> String {
    match format {
        OutputFormat::Csv => export::to_csv(solution, scenario.assembly.tube_count()),
        OutputFormat::Json => export::to_json(scenario, solution),
        OutputFormat::Svg => svg::render(&scenario.name, solution),
    }
}

/// Sibling path with `.report.json` in place of the extension.
fn report_path(out: &Path) -> PathBuf {
    out.with_extension("report.json")
}

fn failure_report(scenario: &Scenario, error: &ShootError) -> String {
    let trace = match error {
        ShootError::NoConvergence { trace, .. } => serde_json::to_value(trace).unwrap(),
        _ => json!([]),
    };
    let doc = json!({
        "scenario_name": scenario.name,
        "scenario_hash": scenario.hash(),
        "converged": false,
        "error": error.to_string(),
        "trace": trace,
    });
    serde_json::to_string_pretty(&doc).unwrap()
}

/// Solver errors caused by the input are reported as input errors; the rest
/// are numerical.
fn classify(error: &ShootError) -> Failure {
    match error {
        ShootError::Model(_) | ShootError::Options(_) | ShootError::InvalidGuess(_) => {
            Failure::Input(error.to_string())
        }
        _ => Failure::Numerical(error.to_string()),
    }
}

fn solve(a: SolveArgs) -> Result<()> {
    let scenario = load_scenario(&a.scenario, &a.solver)?;
    let format = a
        .format
        .or_else(|| a.out.as_deref().map(format_for))
        .unwrap_or(OutputFormat::Csv);
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| out_dir().join(format!("{}.{}", scenario.name, format.extension())));

    let solution = match shoot(&scenario.assembly, &scenario.solver) {
        Ok(s) => s,
        Err(e) => {
            let failure = classify(&e);
            if let Failure::Numerical(_) = failure {
                let report = report_path(&out);
                write(&report, &failure_report(&scenario, &e))?;
                eprintln!("diagnostic report written to {}", report.display());
            }
            return Err(failure);
        }
    };
    write(&out, &render(format, &scenario, &solution))?;
    if let Some(path) = &a.svg {
        write(path, &svg::render(&scenario.name, &solution))?;
    }
    let tip = solution.tip();
    let r = &solution.report;
    println!(
        "converged: {} iterations, {} continuation steps, residual norm {:.3e}",
        r.iterations, r.continuation_steps, r.residual_norm
    );
    println!("tip [m]: {:.9} {:.9} {:.9}", tip.x, tip.y, tip.z);
    println!("wrote {}", out.display());
    Ok(())
}

fn sweep_values(from: f64, to: f64, points: usize) -> Result<Vec<f64>> {
    if !(from.is_finite() && to.is_finite()) || from > to {
        return Err(Failure::Input(format!("sweep range must satisfy from <= to, got {from} .. {to}")));
    }
    if points == 0 {
        return Err(Failure::Input("--points must be at least 1".into()));
    }
    if points == 1 {
        return Ok(vec![from]);
    }
    Ok((0..points)
        .map(|i| from + (to - from) * i as f64 / (points - 1) as f64)
        .collect())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let base = load_scenario(&a.scenario, &a.solver)?;
    let values = sweep_values(a.from, a.to, a.points)?;
    let (axis, unit) = match (a.tendon, a.twist_tube) {
        (Some(j), _) => {
            if j >= base.assembly.tendons.len() {
                return Err(Failure::Input(format!(
                    "--tendon {j} out of range; scenario has {} tendons",
                    base.assembly.tendons.len()
                )));
            }
            (format!("tendon_{j}_tension"), "N")
        }
        (None, Some(k)) => {
            if k >= base.assembly.tube_count() {
                return Err(Failure::Input(format!(
                    "--twist-tube {k} out of range; scenario has {} tubes",
                    base.assembly.tube_count()
                )));
            }
            (format!("tube_{k}_base_twist"), "deg")
        }
        (None, None) => unreachable!("clap requires a sweep axis"),
    };
    let dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| out_dir().join(format!("{}_sweep", base.name)));

    let mut summary = format!("index,{axis}_{unit},converged,tip_x_m,tip_y_m,tip_z_m,iterations,residual_norm\n");
    let mut previous: Option<Solution> = None;
    let mut failures = 0;
    for (i, &value) in values.iter().enumerate() {
        let mut scenario = base.clone();
        match (a.tendon, a.twist_tube) {
            (Some(j), _) => scenario.assembly.tendons[j].tension = value,
            (None, Some(k)) => scenario.assembly.base_twists[k] = value.to_radians(),
            (None, None) => unreachable!(),
        }
        let problems = scenario.assembly.validate();
        if !problems.is_empty() {
            let msg: Vec<String> = problems.iter().map(|p| p.to_string()).collect();
            return Err(Failure::Input(format!("sweep point {value} {unit}: {}", msg.join("; "))));
        }
        let stem = dir.join(format!("point_{i:03}"));
        let warm = previous
            .as_ref()
            .and_then(|p| shoot_from(&scenario.assembly, &scenario.solver, &p.guess, false).ok());
        let result = match warm {
            Some(s) => Ok(s),
            None => shoot(&scenario.assembly, &scenario.solver),
        };
        match result {
            Ok(solution) => {
                let out = stem.with_extension(a.format.extension());
                write(&out, &render(a.format, &scenario, &solution))?;
                if a.svg {
                    write(&stem.with_extension("svg"), &svg::render(&scenario.name, &solution))?;
                }
                let tip = solution.tip();
                writeln!(
                    summary,
                    "{i},{value:.16e},true,{:.16e},{:.16e},{:.16e},{},{:.16e}",
                    tip.x, tip.y, tip.z, solution.report.iterations, solution.report.residual_norm
                )
                .unwrap();
                println!("{axis} = {value} {unit}: tip [m] {:.9} {:.9} {:.9}", tip.x, tip.y, tip.z);
                previous = Some(solution);
            }
            Err(e) => {
                if let Failure::Input(m) = classify(&e) {
                    return Err(Failure::Input(m));
                }
                failures += 1;
                write(&stem.with_extension("report.json"), &failure_report(&scenario, &e))?;
                writeln!(summary, "{i},{value:.16e},false,NaN,NaN,NaN,0,NaN").unwrap();
                eprintln!("{axis} = {value} {unit}: {e}");
                previous = None;
            }
        }
    }
    let summary_path = dir.join("summary.csv");
    write(&summary_path, &summary)?;
    println!("wrote {}", summary_path.display());
    if failures > 0 {
        return Err(Failure::Numerical(format!("{failures} of {} sweep points did not converge", values.len())));
    }
    Ok(())
}

fn preset(action: PresetAction) -> Result<()> {
    match action {
        PresetAction::List => {
            for name in presets::PRESET_NAMES {
                println!("{name}");
            }
            Ok(())
        }
        PresetAction::Show { name } => match presets::preset_text(&name) {
            Some(text) => {
                print!("{text}");
                Ok(())
            }
            None => Err(Failure::Input(format!(
                "unknown preset '{name}'; available: {}",
                presets::PRESET_NAMES.join(", ")
            ))),
        },
    }
}

fn validate(a: ValidateArgs) -> Result<()> {
    if !(a.stiffness_scale.is_finite() && a.stiffness_scale > 0.0) {
        return Err(Failure::Input(format!("--stiffness-scale must be positive, got {}", a.stiffness_scale)));
    }
    let mut options = ValidationOptions {
        stiffness_scale: a.stiffness_scale,
        ..ValidationOptions::default()
    };
    a.solver.apply(&mut options.solver);
    options
        .solver
        .validate()
        .map_err(|e| Failure::Input(format!("invalid solver options: {e}")))?;
    let report = run_validation(&options);
    for c in &report.checks {
        println!(
            "{} {}: measured {:.3e}, tolerance {:.3e}{}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            if c.detail.is_empty() { String::new() } else { format!(" ({})", c.detail) }
        );
    }
    let path = a.report.unwrap_or_else(|| out_dir().join("validation.json"));
    write(&path, &serde_json::to_string_pretty(&report).unwrap())?;
    println!("wrote {}", path.display());
    let failed = report.failures().count();
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} of {} checks failed", report.checks.len())));
    }
    Ok(())
}

fn export_document(a: ExportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", a.input.display())))?;
    let doc: SolutionDocument = serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("{} is not a solution document: {e}", a.input.display())))?;
    let format = a
        .format
        .or_else(|| a.out.as_deref().map(format_for))
        .unwrap_or(OutputFormat::Csv);
    let out = a
        .out
        .unwrap_or_else(|| out_dir().join(format!("{}.{}", doc.scenario_name, format.extension())));
    let body = match format {
        OutputFormat::Csv => {
            let tubes = doc
                .solution
                .stations
                .iter()
                .flat_map(|s| s.tubes.iter().map(|t| t.tube + 1))
                .max()
                .unwrap_or(0);
            export::to_csv(&doc.solution, tubes)
        }
        OutputFormat::Svg => svg::render(&doc.scenario_name, &doc.solution),
        OutputFormat::Json => serde_json::to_string_pretty(&doc).unwrap(),
    };
    write(&out, &body)?;
    println!("wrote {}", out.display());
    Ok(())
}
