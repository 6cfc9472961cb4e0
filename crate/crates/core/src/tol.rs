//! The single tolerance record shared by every module.
//!
//! All numeric knobs live here so that a run is reproducible from one
//! configuration value. The defaults are the ones the whole test suite is
//! pinned to; `scaled` is the only supported way to relax them.

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    /// Pivot threshold for LU / row reduction (singularity cutoff).
    pub pivot: f64,
    /// Primal feasibility and duality-gap tolerance for LP results.
    pub feasibility: f64,
    /// Deduplication radius for enumerated vertices and directions.
    pub dedup: f64,
    /// Active-set / tie tolerance for min-max selections and cone activity.
    pub activity: f64,
    /// KKT residual required of multipliers and tracked points.
    pub kkt_residual: f64,
    /// Degeneracy tolerance for z = g + xi when classifying projection
    /// branches; deliberately looser than the linear-algebra tolerances so a
    /// kink is never misread as a strict branch.
    pub degenerate_z: f64,
    /// First-order slack: a condition value above `-check_slack` counts as
    /// nonnegative.
    pub check_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            pivot: 1e-10,
            feasibility: 1e-8,
            dedup: 1e-8,
            activity: 1e-9,
            kkt_residual: 1e-8,
            degenerate_z: 1e-7,
            check_slack: 1e-8,
        }
    }
}

impl Tolerances {
    /// Multiply every tolerance by `factor` (CLI `--tol-scale`).
    pub fn scaled(&self, factor: f64) -> Self {
        Tolerances {
            pivot: self.pivot * factor,
            feasibility: self.feasibility * factor,
            dedup: self.dedup * factor,
            activity: self.activity * factor,
            kkt_residual: self.kkt_residual * factor,
            degenerate_z: self.degenerate_z * factor,
            check_slack: self.check_slack * factor,
        }
    }
}
