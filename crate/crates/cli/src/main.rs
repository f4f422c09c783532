use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use n2sid_core::bench::{
    eigs_csv, eigs_svg, run_closed_loop_study, run_open_loop_study, scatter_csv, scatter_svg,
    StudyConfig,
};
use n2sid_core::datagen::{open_loop_batch, random_stable_system, ClosedLoopConfig, OpenLoopConfig};
use n2sid_core::error::N2sidError;
use n2sid_core::io::{read_csv_file, write_csv_file, write_model_file};
use n2sid_core::pipeline::{identify, IdentifyConfig, OrderPolicy};
use n2sid_core::solver::{lambda_grid, SolverOptions};

#[derive(Parser)]
#[command(name = "n2sid", about = "Nuclear-norm subspace identification toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identify a state-space model from a CSV data file.
    Identify(IdentifyArgs),
    /// Generate a synthetic identification batch as CSV.
    Generate(GenerateArgs),
    /// Run a Monte-Carlo comparison study.
    Bench(BenchArgs),
}

#[derive(Args)]
struct IdentifyArgs {
    /// Input CSV with header u1..um,y1..yp.
    data: PathBuf,
    /// Past/future window length.
    #[arg(long, default_value_t = 15)]
    s: usize,
    /// Single lambda/N value (overrides the grid).
    #[arg(long)]
    lambda: Option<f64>,
    /// Lambda/N grid as lo:hi:count (log-spaced).
    #[arg(long, value_name = "lo:hi:count")]
    lambda_grid: Option<String>,
    /// Model order: "auto" or an explicit integer.
    #[arg(long, default_value = "auto")]
    order: String,
    /// Sketch width, or "off" to disable sketching.
    #[arg(long, default_value = "22")]
    sketch: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Treat the file as output-only (no input columns).
    #[arg(long)]
    output_only: bool,
    /// Solver residual tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Output model file (JSON); a report is written next to it.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// System order.
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    inputs: usize,
    #[arg(long, default_value_t = 1)]
    outputs: usize,
    #[arg(long, default_value_t = 50)]
    samples: usize,
    /// Innovation standard deviation.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long, default_value = "batch.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Study name: open-loop or closed-loop.
    study: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 15)]
    s: usize,
    /// Output directory for report, CSVs and SVGs.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected lo:hi:count, got '{spec}'"));
    }
    let lo: f64 = parts[0].parse().map_err(|_| format!("bad grid lo '{}'", parts[0]))?;
    let hi: f64 = parts[1].parse().map_err(|_| format!("bad grid hi '{}'", parts[1]))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| format!("bad grid count '{}'", parts[2]))?;
    lambda_grid(count, lo, hi).map_err(|e| e.to_string())
}

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn usage_err(msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

fn classify(e: &N2sidError) -> u8 {
    match e {
        N2sidError::NonConvergence { .. }
        | N2sidError::DegenerateSpectrum(_)
        | N2sidError::IllConditioned { .. }
        | N2sidError::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn cmd_identify(args: &IdentifyArgs) -> u8 {
    let io = match read_csv_file(&args.data) {
        Ok(io) => io,
        Err(e) => return usage_err(e),
    };
    let order = if args.order == "auto" {
        OrderPolicy::Auto { cap: 10 }
    } else {
        match args.order.parse::<usize>() {
            Ok(n) if n >= 1 => OrderPolicy::Fixed(n),
            _ => return usage_err(format!("--order must be 'auto' or a positive integer, got '{}'", args.order)),
        }
    };
    let sketch_width = if args.sketch == "off" {
        None
    } else {
        match args.sketch.parse::<usize>() {
            Ok(q) if q >= 1 => Some(q),
            _ => return usage_err(format!("--sketch must be 'off' or a positive integer, got '{}'", args.sketch)),
        }
    };
    let grid = if let Some(l) = args.lambda {
        if args.lambda_grid.is_some() {
            return usage_err("--lambda and --lambda-grid are mutually exclusive");
        }
        vec![l]
    } else if let Some(spec) = &args.lambda_grid {
        match parse_grid(spec) {
            Ok(g) => g,
            Err(e) => return usage_err(e),
        }
    } else {
        n2sid_core::solver::default_lambda_grid()
    };
    let config = IdentifyConfig {
        s: args.s,
        lambda_grid: grid,
        order,
        sketch_width,
        sketch_seed: args.seed,
        solver: SolverOptions {
            max_iters: args.max_iters,
            primal_tol: args.tol,
            dual_tol: args.tol,
            ..SolverOptions::default()
        },
        output_only: args.output_only,
    };
    let result = match identify(&io, &config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return classify(&e);
        }
    };
    if let Err(e) = write_model_file(&args.out, &result.model) {
        return usage_err(e);
    }
    let report = serde_json::json!({
        "order": result.order,
        "singular_values": result.singular_values,
        "lambda_over_n": result.lambda_over_n,
        "ident_fit": result.ident_fit,
        "iterations": result.diagnostics.iterations,
        "x0": result.x0.as_slice(),
        "model_file": args.out,
    });
    let report_path = args.out.with_extension("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Err(e) = std::fs::write(&report_path, &text) {
        return usage_err(e);
    }
    println!("{text}");
    0
}

fn cmd_generate(args: &GenerateArgs) -> u8 {
    let config = OpenLoopConfig {
        order: args.n,
        num_inputs: args.inputs,
        num_outputs: args.outputs,
        num_samples: args.samples,
        noise_std: args.noise,
        ..OpenLoopConfig::default()
    };
    if let Err(e) = config.validate() {
        return usage_err(e);
    }
    let run = (|| -> n2sid_core::error::Result<()> {
        let model = random_stable_system(&config, args.seed)?;
        let (io, _, _) = open_loop_batch(&model, &config, args.seed)?;
        write_csv_file(&args.out, &io)?;
        Ok(())
    })();
    match run {
        Ok(()) => {
            println!("wrote {} samples to {}", args.samples, args.out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            classify(&e)
        }
    }
}

fn cmd_bench(args: &BenchArgs) -> u8 {
    let study = StudyConfig {
        s: args.s,
        ..StudyConfig::default()
    };
    let report = match args.study.as_str() {
        "open-loop" => run_open_loop_study(args.trials, &OpenLoopConfig::default(), &study, args.seed),
        "closed-loop" => {
            run_closed_loop_study(args.trials, &ClosedLoopConfig::default(), &study, args.seed)
        }
        other => return usage_err(format!("unknown study '{other}' (expected open-loop or closed-loop)")),
    };
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return classify(&e);
        }
    };
    let write = || -> std::io::Result<()> {
        std::fs::create_dir_all(&args.out)?;
        std::fs::write(
            args.out.join("report.json"),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
        std::fs::write(args.out.join("scatter.csv"), scatter_csv(&report))?;
        std::fs::write(args.out.join("eigs.csv"), eigs_csv(&report))?;
        std::fs::write(args.out.join("scatter.svg"), scatter_svg(&report))?;
        std::fs::write(args.out.join("eigs.svg"), eigs_svg(&report))?;
        Ok(())
    };
    if let Err(e) = write() {
        return usage_err(e);
    }
    println!(
        "study={} trials={} win_rate={:.3} mean_fit={:.2} vs {:.2} hash={}",
        report.study,
        report.trials.len(),
        report.summary.win_rate,
        report.summary.n2sid_mean_fit,
        report.summary.n4sid_mean_fit,
        report.canonical_hash()
    );
    0
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap's own help/version paths exit 0; argument errors exit 2.
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match &cli.command {
        Command::Identify(args) => cmd_identify(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Bench(args) => cmd_bench(args),
    };
    ExitCode::from(code)
}
