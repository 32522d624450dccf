use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use tev::analysis::analyze_loop;
use tev::codegen::emit_optimized_program;
use tev::interp::{run_program, Bindings};
use tev::ir::{parse_program, serialize_program, to_json, validate_program, LoopProgram};
use tev::verify::{verify_program, VerifyError, VerifyOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_ANALYSIS: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "tevc", version, about = "Closed-form analysis and elimination of tensor loops")]
struct Cli {
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 200)]
    trials: usize,
    /// Replace the loop's trip count before doing anything else.
    #[arg(long, global = true)]
    trip_count: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a program, then print it back.
    Parse { file: PathBuf },
    /// Print per-variable chains and exit values.
    Analyze { file: PathBuf },
    /// Write the loop-free program.
    Optimize {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a program with the reference interpreter.
    Run {
        file: PathBuf,
        /// JSON object mapping parameter names to {"shape": [...], "data": [...]}.
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        record_headers: bool,
    },
    /// Compare the optimized program with the interpreter on random inputs.
    Verify { file: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn load(path: &Path, trip_count: Option<u64>) -> Result<LoopProgram, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail(EXIT_USAGE, format!("cannot read {}: {e}", path.display())))?;
    let p = parse_program(&text).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
    let diagnostics = validate_program(&p);
    if !diagnostics.is_empty() {
        let lines: Vec<String> = diagnostics.iter().map(|d| d.to_string()).collect();
        return Err(fail(EXIT_USAGE, lines.join("\n")));
    }
    Ok(match trip_count {
        Some(k) if p.lp.is_some() => p.with_trip_count(k),
        _ => p,
    })
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values serialize"));
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Parse { file } => {
            let p = load(file, cli.trip_count)?;
            if cli.json {
                print_json(&to_json(&p));
            } else {
                print!("{}", serialize_program(&p));
            }
        }
        Command::Analyze { file } => {
            let p = load(file, cli.trip_count)?;
            let r = analyze_loop(&p).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
            if cli.json {
                print_json(&r.to_json());
            } else {
                print!("{r}");
            }
            if let Err(e) = emit_optimized_program(&p, &r) {
                return Err(fail(EXIT_ANALYSIS, e.to_string()));
            }
        }
        Command::Optimize { file, output } => {
            let p = load(file, cli.trip_count)?;
            let r = analyze_loop(&p).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
            let q = emit_optimized_program(&p, &r).map_err(|e| fail(EXIT_ANALYSIS, e.to_string()))?;
            let text = serialize_program(&q);
            match output {
                Some(path) => fs::write(path, text)
                    .map_err(|e| fail(EXIT_USAGE, format!("cannot write {}: {e}", path.display())))?,
                None => print!("{text}"),
            }
        }
        Command::Run {
            file,
            inputs,
            record_headers,
        } => {
            let p = load(file, cli.trip_count)?;
            let text = fs::read_to_string(inputs)
                .map_err(|e| fail(EXIT_USAGE, format!("cannot read {}: {e}", inputs.display())))?;
            let env: Bindings = serde_json::from_str(&text)
                .map_err(|e| fail(EXIT_USAGE, format!("bad inputs: {e}")))?;
            let out = run_program(&p, &env, *record_headers).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
            let mut value = json!({ "returns": out.returns });
            if let Some(headers) = out.headers {
                value["headers"] = json!(headers);
            }
            println!("{value}");
        }
        Command::Verify { file } => {
            let p = load(file, None)?;
            let opts = VerifyOptions {
                trials: cli.trials,
                seed: cli.seed,
                trip_count: cli.trip_count,
            };
            let report = match verify_program(&p, &opts) {
                Ok(r) => r,
                Err(VerifyError::Analysis(e)) => return Err(fail(EXIT_USAGE, e.to_string())),
                Err(e @ VerifyError::NotFullyAnalyzable(_)) => return Err(fail(EXIT_ANALYSIS, e.to_string())),
                Err(e) => return Err(fail(EXIT_VERIFY, e.to_string())),
            };
            if cli.json {
                print_json(&serde_json::to_value(&report).expect("report serializes"));
            } else {
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
                println!(
                    "{}: {} of {} trials compared ({} skipped), trip count {}, max abs deviation {:e}, max rel deviation {:e}",
                    if report.pass { "pass" } else { "FAIL" },
                    report.compared,
                    report.trials,
                    report.skipped,
                    report.trip_count,
                    report.max_abs_deviation,
                    report.max_rel_deviation,
                );
                for f in &report.failures {
                    println!("  {f}");
                }
            }
            if !report.pass {
                return Err(fail(EXIT_VERIFY, "verification failed"));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
