use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use optcheck_cli::{commands, parse_problem, Command, Form, Mode, RunOptions};

/// Verify first- and second-order optimality conditions of nonsmooth and
/// bilevel programs at a candidate point.
#[derive(Parser)]
#[command(name = "optcheck", version, about)]
struct Cli {
    #[command(subcommand)]
    command: TopCommand,
}

#[derive(Args, Clone)]
struct Common {
    /// Problem file (JSON)
    file: PathBuf,
    /// Seed for all sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Direction/point sample budget
    #[arg(long, default_value_t = 256)]
    samples: usize,
    /// Multiply every tolerance by this factor
    #[arg(long, default_value_t = 1.0)]
    tol_scale: f64,
    /// Emit the full report as JSON on stdout
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Necessary,
    Sufficient,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Sp,
    Fp,
    Both,
}

#[derive(Subcommand)]
enum TopCommand {
    /// First-order necessary condition of a nonsmooth program
    CheckFirst(Common),
    /// Second-order condition of a nonsmooth program
    CheckSecond {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "sufficient")]
        mode: ModeArg,
    },
    /// Constraint-qualification report (A1-A4 + GMFCQ for bilevel files,
    /// MSCQ probe for nonsmooth files)
    CheckCq(Common),
    /// Bilevel checks in the SP/FP reformulations
    Bilevel {
        #[command(subcommand)]
        sub: BilevelSub,
    },
    /// Second-order gph/epi-regularity probes of the problem data
    ProbeRegularity(Common),
    /// Metric-subregularity ratio probe on shrinking balls
    ProbeMscq {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
    },
    /// Quadratic-growth probe around the reference point
    ProbeGrowth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.2)]
        radius: f64,
    },
}

#[derive(Subcommand)]
enum BilevelSub {
    /// First-order necessary conditions
    First {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        form: FormArg,
    },
    /// Second-order conditions
    Second {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        form: FormArg,
        #[arg(long, value_enum, default_value = "sufficient")]
        mode: ModeArg,
    },
    /// Dual first-order multiplier existence
    Dual {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        form: FormArg,
    },
    /// Track the lower-level KKT triple to a nearby parameter
    Track {
        #[command(flatten)]
        common: Common,
        /// Target x, comma separated
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        at: Vec<f64>,
    },
}

fn to_mode(m: ModeArg) -> Mode {
    match m {
        ModeArg::Necessary => Mode::Necessary,
        ModeArg::Sufficient => Mode::Sufficient,
    }
}

fn to_form(f: FormArg) -> Form {
    match f {
        FormArg::Sp => Form::Sp,
        FormArg::Fp => Form::Fp,
        FormArg::Both => Form::Both,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, command) = match cli.command {
        TopCommand::CheckFirst(c) => (c, Command::CheckFirst),
        TopCommand::CheckSecond { common, mode } => {
            (common, Command::CheckSecond { mode: to_mode(mode) })
        }
        TopCommand::CheckCq(c) => (c, Command::CheckCq),
        TopCommand::Bilevel { sub } => match sub {
            BilevelSub::First { common, form } => {
                (common, Command::BilevelFirst { form: to_form(form) })
            }
            BilevelSub::Second { common, form, mode } => (
                common,
                Command::BilevelSecond { form: to_form(form), mode: to_mode(mode) },
            ),
            BilevelSub::Dual { common, form } => {
                (common, Command::BilevelDual { form: to_form(form) })
            }
            BilevelSub::Track { common, at } => (common, Command::BilevelTrack { at }),
        },
        TopCommand::ProbeRegularity(c) => (c, Command::ProbeRegularity),
        TopCommand::ProbeMscq { common, radius } => (common, Command::ProbeMscq { radius }),
        TopCommand::ProbeGrowth { common, radius } => (common, Command::ProbeGrowth { radius }),
    };

    let problem = match parse_problem(&common.file) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(optcheck_cli::EXIT_INPUT_ERROR as u8);
        }
    };
    let opts = RunOptions { seed: common.seed, samples: common.samples, tol_scale: common.tol_scale };
    match commands::run(&problem, &command, &opts) {
        Ok(report) => {
            if common.json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_text());
            }
            ExitCode::from(report.exit_code as u8)
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(optcheck_cli::EXIT_INPUT_ERROR as u8)
        }
    }
}
