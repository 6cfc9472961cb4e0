//! Structured verification reports.
//!
//! Reports serialize with fixed field order and no timestamps, so two runs
//! over the same file and seed produce identical bytes. Every verdict
//! carries either a certificate payload or a witness, and sampling caveats
//! are spelled out rather than implied.

use serde::Serialize;

pub const EXIT_CERTIFIED: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_INPUT_ERROR: i32 = 3;

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub report_version: String,
    pub command: String,
    pub problem_digest: String,
    pub seed: u64,
    pub samples: usize,
    pub tol_scale: f64,
    /// How constraint qualification entered: assumed, probed, or certified.
    pub cq_provenance: String,
    pub checks: Vec<CheckOutcome>,
    pub caveats: Vec<String>,
    pub exit_code: i32,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub verdict: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
    pub details: serde_json::Value,
}

impl VerificationReport {
    pub fn new(command: &str, digest: &str, seed: u64, samples: usize, tol_scale: f64) -> Self {
        VerificationReport {
            report_version: "1".into(),
            command: command.into(),
            problem_digest: digest.into(),
            seed,
            samples,
            tol_scale,
            cq_provenance: "assumed".into(),
            checks: vec![],
            caveats: vec![],
            exit_code: EXIT_CERTIFIED,
        }
    }

    pub fn push(&mut self, outcome: CheckOutcome) {
        self.checks.push(outcome);
    }

    pub fn caveat(&mut self, text: impl Into<String>) {
        self.caveats.push(text.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human summary: one line per check plus caveats.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{} (digest {})\n", self.command, self.problem_digest));
        out.push_str(&format!("cq: {}\n", self.cq_provenance));
        for c in &self.checks {
            out.push_str(&format!("  {:<28} {}", c.name, c.verdict));
            if let Some(m) = c.margin {
                out.push_str(&format!("  margin {m:.9}"));
            }
            if let Some(w) = &c.witness {
                out.push_str(&format!("  witness {w:?}"));
            }
            out.push('\n');
        }
        for c in &self.caveats {
            out.push_str(&format!("  caveat: {c}\n"));
        }
        out.push_str(&format!("exit: {}\n", self.exit_code));
        out
    }
}
