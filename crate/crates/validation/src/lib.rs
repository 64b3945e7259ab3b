//! Pinned tolerances and reporting for the acceptance suite in
//! `tests/acceptance.rs`.

use std::time::Duration;

/// Relative error allowed between analytic and finite-difference gradients.
pub const GRAD_REL_TOL: f64 = 1e-3;
/// Central-difference step.
pub const GRAD_STEP: f64 = 1e-4;
/// Wall-clock limit for the full-model gradient check.
pub const GRAD_TIME_LIMIT: Duration = Duration::from_secs(60);
/// Deviation of an attention row sum from 1.
pub const ATTENTION_SUM_TOL: f64 = 1e-9;
/// Deviation of the uniform-logit loss from ln 5.
pub const LOSS_ANCHOR_TOL: f64 = 1e-9;
/// Deviation of a clipped gradient norm from the limit.
pub const CLIP_TOL: f64 = 1e-12;
/// Ablation thresholds on mean test micro-F1.
pub const ABLATION_FLOOR: f64 = 0.90;
pub const ABLATION_MARGIN: f64 = 0.05;
pub const ABLATION_TIME_LIMIT: Duration = Duration::from_secs(30 * 60);
/// Copy-task micro-F1 floor.
pub const COPY_F1_FLOOR: f64 = 0.99;

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct Check {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(id: u32, title: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            id,
            title,
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        format!("[{status}] criterion {:>2}: {} | {}", self.id, self.title, self.detail)
    }
}

/// Prints one line per check plus a tally; returns whether all passed.
pub fn report(checks: &[Check]) -> bool {
    for c in checks {
        println!("{}", c.line());
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    println!("acceptance: {passed}/{} criteria passed", checks.len());
    passed == checks.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let c = Check::new(4, "loss anchor", true, "err 0");
        assert_eq!(c.line(), "[PASS] criterion  4: loss anchor | err 0");
        assert!(!report(&[c, Check::new(5, "x", false, "")]));
    }
}
