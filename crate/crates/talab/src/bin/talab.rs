//! Command-line entry point.

use clap::{Parser, Subcommand, ValueEnum};
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use talab::depthlog::audit::{audit_table, Component};
use talab::error::Error;
use talab::hardlang::{self, GenParams, Task};
use talab::probe::{self, TrainConfig};
use talab::tensora;

#[derive(Parser)]
#[command(
    name = "talab",
    about = "Tensor-attention laboratory: exact float semantics, depth audits, word-problem datasets, and toy training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exhaustively compare the float operations against the reference
    /// evaluation at a small precision; nonzero exit on any mismatch.
    FpAudit {
        /// Precision in bits (small: the check is quadratic in the number
        /// of representable values).
        #[arg(long, default_value_t = 3)]
        p: u32,
        /// Print every mismatch instead of the first few.
        #[arg(long)]
        verbose: bool,
    },
    /// Trace component depths and compare with the closed-form totals.
    DepthAudit {
        /// Component to audit; all of them when omitted.
        #[arg(long)]
        component: Option<String>,
        /// Layer count for the multi-layer model audit.
        #[arg(long, default_value_t = 2)]
        m: u32,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
    },
    /// Random exact-rational trials of the projection swap rule.
    SwapCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a labeled word-problem dataset as JSON lines.
    Gen {
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Builtin name (z2, s3, s5) or a path to a monoid JSON file.
        #[arg(long, default_value = "z2")]
        monoid: String,
        /// Chunk length bound for the closure task.
        #[arg(long, default_value_t = 2)]
        r: usize,
        /// Maximum word length (per word for the membership task).
        #[arg(long, default_value_t = 16)]
        len: usize,
        #[arg(long, default_value_t = 512)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Accepting elements for the closure task, comma separated
        /// (default: the identity).
        #[arg(long)]
        accept: Option<String>,
        /// Accepted linked pairs for the membership task as "s:e" entries,
        /// comma separated (default: identity:identity).
        #[arg(long)]
        pairs: Option<String>,
    },
    /// Train a classifier from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate saved weights on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendArg::Real64)]
        backend: BackendArg,
        /// Precision for the p-bit float backend.
        #[arg(long, default_value_t = 16)]
        precision: u32,
    },
    /// Check analytic gradients against central finite differences.
    GradCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Closure,
    Membership,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Real64,
    Floatp,
}

fn main() -> ExitCode {
    probe::init_thread_pool_from_env();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::FpAudit { p, verbose } => {
            if p > talab::fpx::oracle::MAX_AUDIT_P {
                return Err(Error::BadPrecision {
                    got: p,
                    min: talab::fpx::MIN_P,
                    max: talab::fpx::oracle::MAX_AUDIT_P,
                });
            }
            let report = talab::fpx::oracle::exhaustive_audit(p);
            println!(
                "fp-audit p={}: {} operand pairs, {} checks, {} mismatches",
                report.precision,
                report.pairs,
                report.checks,
                report.mismatches.len()
            );
            let shown = if verbose { report.mismatches.len() } else { 10 };
            for m in report.mismatches.iter().take(shown) {
                match &m.b {
                    Some(b) => {
                        println!("  {}({}, {}): got {}, want {}", m.op, m.a, b, m.got, m.want)
                    }
                    None => println!("  {}({}): got {}, want {}", m.op, m.a, m.got, m.want),
                }
            }
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::DepthAudit { component, m, format } => {
            let components = match component {
                Some(name) => vec![Component::parse(&name, m)?],
                None => Component::all(m),
            };
            let rows = audit_table(&components, 3, 4)?;
            let mut all_match = true;
            match format {
                OutputFormat::Text => {
                    let width = rows.iter().map(|r| r.component.len()).max().unwrap_or(9);
                    println!(
                        "{:<width$}  {:<44}  {:<44}  status",
                        "component", "traced", "expected",
                    );
                    for r in &rows {
                        all_match &= r.matches;
                        println!(
                            "{:<width$}  {:<44}  {:<44}  {}",
                            r.component,
                            r.traced.to_string(),
                            r.expected.to_string(),
                            if r.matches { "match" } else { "MISMATCH" },
                        );
                        if let Some(v) = &r.variant {
                            println!(
                                "{:<width$}  {:<44}  {:<44}  documented variant",
                                "",
                                "",
                                v.to_string(),
                            );
                        }
                    }
                }
                OutputFormat::Csv => {
                    println!("component,traced,expected,matches,variant");
                    for r in &rows {
                        all_match &= r.matches;
                        println!(
                            "{},{},{},{},{}",
                            r.component,
                            r.traced,
                            r.expected,
                            r.matches,
                            r.variant.as_ref().map(|v| v.to_string()).unwrap_or_default(),
                        );
                    }
                }
            }
            Ok(if all_match {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::SwapCheck { trials, seed } => {
            let mismatches = tensora::swap_check_trials(trials, seed)?;
            println!("swap-check: {trials} trials, {mismatches} mismatching entries");
            Ok(if mismatches == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Gen { task, monoid, r, len, count, seed, out, accept, pairs } => {
            let m = load_monoid(&monoid)?;
            let accept_set: BTreeSet<usize> = match accept {
                Some(s) => parse_usize_list(&s)?,
                None => [m.identity].into_iter().collect(),
            };
            let pair_set: BTreeSet<(usize, usize)> = match pairs {
                Some(s) => parse_pair_list(&s)?,
                None => [(m.identity, m.identity)].into_iter().collect(),
            };
            let params = GenParams {
                task: match task {
                    TaskArg::Closure => Task::Closure,
                    TaskArg::Membership => Task::Membership,
                },
                accept: accept_set,
                r,
                pairs: pair_set,
                max_len: len,
                count,
                seed,
            };
            let items = hardlang::gen_dataset(&m, &params)?;
            let file = std::fs::File::create(&out)?;
            hardlang::write_jsonl(std::io::BufWriter::new(file), &items)?;
            let positives: usize = items.iter().map(|i| i.label as usize).sum();
            println!(
                "wrote {} instances ({} positive) to {}",
                items.len(),
                positives,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config } => {
            let cfg: TrainConfig = serde_json::from_str(&std::fs::read_to_string(&config)?)
                .map_err(|e| Error::DataFormatError(format!("{}: {e}", config.display())))?;
            let metrics = probe::train(&cfg)?;
            let last = metrics.rows.last().expect("steps >= 1");
            println!(
                "trained {} steps in {} ms; final batch loss {:.6}",
                last.step, last.wall_ms, last.loss
            );
            println!("train accuracy {:.4}", metrics.final_train_acc);
            if metrics.final_eval_acc >= 0.0 {
                println!("eval accuracy {:.4}", metrics.final_eval_acc);
            }
            println!("forward depth: {}", metrics.depth);
            println!("artifacts in {}", cfg.out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { model, data, backend, precision } => {
            let m = probe::ClassifierModel::load_json(&std::fs::read_to_string(&model)?)?;
            let items =
                hardlang::read_jsonl(std::io::BufReader::new(std::fs::File::open(&data)?))?;
            let acc = match backend {
                BackendArg::Real64 => probe::evaluate(&m, &items)?,
                BackendArg::Floatp => probe::evaluate_floatp(&m, &items, precision)?,
            };
            println!("accuracy {:.4} on {} examples", acc, items.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::GradCheck { config, h, tol } => {
            let cfg: TrainConfig = serde_json::from_str(&std::fs::read_to_string(&config)?)
                .map_err(|e| Error::DataFormatError(format!("{}: {e}", config.display())))?;
            let examples = probe_examples(&cfg);
            let report = probe::grad_check(&cfg.model, cfg.seed, &examples, h, tol)?;
            for (name, worst) in &report.tensors {
                println!("{name:<18}  max rel err {worst:.3e}");
            }
            println!(
                "grad-check: worst {:.3e} against tolerance {:.1e}: {}",
                report.worst,
                report.tolerance,
                if report.passed() { "pass" } else { "FAIL" }
            );
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

/// Deterministic probe batch for gradient checking: short alternating
/// token patterns with both labels.
fn probe_examples(cfg: &TrainConfig) -> Vec<(Vec<usize>, u8)> {
    let n = cfg.model.max_n.min(4).max(1);
    let v = cfg.model.vocab;
    vec![
        ((0..n).map(|i| i % v).collect(), 0),
        ((0..n.saturating_sub(1).max(1)).map(|i| (i + 1) % v).collect(), 1),
    ]
}

fn load_monoid(spec: &str) -> Result<hardlang::FiniteMonoid, Error> {
    match spec {
        "z2" | "s3" | "s5" => hardlang::builtin(spec),
        path => hardlang::FiniteMonoid::from_json(&std::fs::read_to_string(path)?),
    }
}

fn parse_usize_list(s: &str) -> Result<BTreeSet<usize>, Error> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::DataFormatError(format!("bad element {t:?}")))
        })
        .collect()
}

fn parse_pair_list(s: &str) -> Result<BTreeSet<(usize, usize)>, Error> {
    s.split(',')
        .map(|t| {
            let (a, b) = t
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::DataFormatError(format!("bad pair {t:?}, expected s:e")))?;
            Ok((
                a.trim()
                    .parse()
                    .map_err(|_| Error::DataFormatError(format!("bad pair element {a:?}")))?,
                b.trim()
                    .parse()
                    .map_err(|_| Error::DataFormatError(format!("bad pair element {b:?}")))?,
            ))
        })
        .collect()
}
