//! Problem-file parsing, command dispatch and report emission for the
//! optimality-condition verifier.

pub mod commands;
pub mod format;
pub mod report;

pub use commands::{run, Command, Form, Mode, RunOptions};
pub use format::{parse_problem, parse_problem_str, Instance, LoadedProblem, ParseError, ProblemFile};
pub use report::{VerificationReport, EXIT_CERTIFIED, EXIT_FAILED, EXIT_INCONCLUSIVE, EXIT_INPUT_ERROR};
