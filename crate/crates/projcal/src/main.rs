//! Command-line front end: scenario in, artifacts and report out.
//!
//! Exit codes: 0 on success, 1 when arguments or the scenario fail
//! validation, 2 when a pipeline stage fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use projcal::codec::build_pattern_set;
use projcal::pipeline::{self, PipelineError, Stage, StageSet};
use projcal::scenario::{load_scenario, Scenario};

#[derive(Parser)]
#[command(version, about = "Multi-projector calibration from board-embedded cameras: simulator, pipeline and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline (all stages unless --stages narrows it).
    Run(RunArgs),
    /// Simulate captures and extract projector↔camera correspondences.
    Simulate(CommonArgs),
    /// Measure each camera's misalignment map.
    Compensate(CommonArgs),
    /// Calibrate projectors from persisted correspondences.
    Calibrate(CommonArgs),
    /// Evaluate persisted calibration results.
    Evaluate(CommonArgs),
    /// Export pattern frames as portable graymaps.
    Patterns(PatternsArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario description (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's `outputs.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario's capture and board-pose seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Calibrate against nominal camera positions instead of measured maps.
    #[arg(long)]
    no_compensation: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated subset of simulate,compensate,calibrate,evaluate.
    #[arg(long, value_name = "LIST")]
    stages: Option<String>,
}

#[derive(Args)]
struct PatternsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Projector whose ID bits the exported frames carry.
    #[arg(long, default_value_t = 0)]
    projector: u32,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run_command(args),
        Command::Simulate(args) => stage_command(args, Stage::Simulate),
        Command::Compensate(args) => stage_command(args, Stage::Compensate),
        Command::Calibrate(args) => stage_command(args, Stage::Calibrate),
        Command::Evaluate(args) => stage_command(args, Stage::Evaluate),
        Command::Patterns(args) => patterns_command(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Validation problems exit 1, everything that failed mid-run exits 2.
fn exit_code(err: &PipelineError) -> u8 {
    match err {
        PipelineError::Scenario(_) | PipelineError::UnknownStage { .. } => 1,
        _ => 2,
    }
}

fn load(common: &CommonArgs) -> Result<(Scenario, String, PathBuf), PipelineError> {
    let loaded = load_scenario(&common.scenario)?;
    let mut scenario = loaded.scenario;
    if let Some(seed) = common.seed {
        scenario.override_seed(seed);
    }
    if common.no_compensation {
        scenario.compensation.enabled = false;
    }
    let out = common.out.clone().unwrap_or_else(|| scenario.outputs.directory.clone());
    Ok((scenario, loaded.digest_sha256, out))
}

fn execute(common: &CommonArgs, stages: StageSet) -> Result<(), PipelineError> {
    let (scenario, digest, out) = load(common)?;
    let outcome = pipeline::run(scenario, digest, stages, &out)?;
    println!("stages: {}", outcome.report.stages_run.join(", "));
    if let Some(calibrate) = &outcome.report.calibrate {
        for row in &calibrate.projectors {
            match (&row.intrinsics, &row.error) {
                (Some(k), _) => println!(
                    "projector {}: rms {:.6} px over {} poses (fx {:.2}, fy {:.2}, cx {:.2}, cy {:.2})",
                    row.projector,
                    row.rms_reprojection_px.unwrap_or(f64::NAN),
                    row.poses_used,
                    k.fx,
                    k.fy,
                    k.cx,
                    k.cy
                ),
                (None, Some(e)) => println!("projector {}: failed: {e}", row.projector),
                (None, None) => {}
            }
        }
    }
    println!("report: {}", outcome.out_dir.join(pipeline::REPORT_FILE).display());
    Ok(())
}

fn run_command(args: RunArgs) -> Result<(), PipelineError> {
    let stages = match &args.stages {
        Some(list) => StageSet::parse_list(list)?,
        None => StageSet::all(),
    };
    execute(&args.common, stages)
}

fn stage_command(args: CommonArgs, stage: Stage) -> Result<(), PipelineError> {
    execute(&args, StageSet::single(stage))
}

fn patterns_command(args: PatternsArgs) -> Result<(), PipelineError> {
    let (scenario, _, out) = load(&args.common)?;
    let spec = scenario.pattern_spec()?;
    if args.projector >= spec.num_projectors {
        return Err(PipelineError::Scenario(projcal::scenario::ScenarioError::Invalid {
            field: "--projector".into(),
            reason: format!(
                "projector {} does not exist, the rig has {}",
                args.projector, spec.num_projectors
            ),
        }));
    }
    let patterns = build_pattern_set(&spec).map_err(projcal::scenario::ScenarioError::from)?;
    let dir = out.join("patterns");
    let count = pipeline::export_pattern_frames(&patterns, args.projector, &dir)?;
    println!("wrote {count} frames to {}", dir.display());
    Ok(())
}
