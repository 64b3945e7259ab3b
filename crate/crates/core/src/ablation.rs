//! Variant × seed ablation on a synthetic task.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{Preset, RunSettings, Variant};
use crate::error::Result;
use crate::synth::{generate, TaskSpec};
use crate::trainer::{train_with, EpochRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub micro_mean: f64,
    pub micro_std: f64,
    pub macro_mean: f64,
    pub macro_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
}

/// Settings shared by every ablation run: the desk preset with a
/// context-free encoder (no self-attention blocks), so any cross-token
/// information has to come from the graph and decoder stages, and a
/// budget of 50 epochs that early stopping does not cut short.
pub fn ablation_settings() -> RunSettings {
    let mut s = Preset::Desk.settings();
    s.model.encoder_layers = 0;
    s.train.learning_rate = 1e-2;
    s.train.epochs = 50;
    s.train.patience = s.train.epochs;
    s
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// For every seed, generates the task with that seed and trains each
/// variant with identical settings apart from the variant itself. Test
/// scores are reported; `observe` sees every finished run.
pub fn run_ablation(
    task: &TaskSpec,
    settings: &RunSettings,
    seeds: &[u64],
    mut observe: impl FnMut(&AblationRow, &[EpochRecord]),
) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let data = generate(&TaskSpec {
            seed,
            ..task.clone()
        })?;
        for variant in Variant::ALL {
            let mut s = settings.clone();
            s.model.variant = variant;
            s.train.seed = seed;
            let outcome = train_with(&s, &data.train, &data.valid, |_| {})?;
            let report = outcome.tagger.evaluate(&data.test, s.train.batch_size)?;
            let row = AblationRow {
                variant,
                seed,
                micro_f1: report.micro.f1,
                macro_f1: report.macro_avg.f1,
                epochs: outcome.history.len(),
            };
            observe(&row, &outcome.history);
            rows.push(row);
        }
    }
    Ok(AblationReport::from_rows(rows))
}

impl AblationReport {
    pub fn from_rows(rows: Vec<AblationRow>) -> Self {
        let summary = Variant::ALL
            .iter()
            .map(|&variant| {
                let runs: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == variant).collect();
                let micro: Vec<f64> = runs.iter().map(|r| r.micro_f1).collect();
                let macro_: Vec<f64> = runs.iter().map(|r| r.macro_f1).collect();
                let (micro_mean, micro_std) = mean_std(&micro);
                let (macro_mean, macro_std) = mean_std(&macro_);
                VariantSummary {
                    variant,
                    runs: runs.len(),
                    micro_mean,
                    micro_std,
                    macro_mean,
                    macro_std,
                }
            })
            .collect();
        Self { rows, summary }
    }

    pub fn summary_for(&self, variant: Variant) -> &VariantSummary {
        self.summary.iter().find(|s| s.variant == variant).expect("every variant summarized")
    }

    /// One line per run, with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,micro_f1,macro_f1,epochs\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.variant.as_str(),
                r.seed,
                r.micro_f1,
                r.macro_f1,
                r.epochs
            );
        }
        out
    }

    /// Mean ± standard deviation per variant.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8}  {:>4}  {:>17}  {:>17}\n", "variant", "runs", "micro-F1", "macro-F1");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{:<8}  {:>4}  {:>8.4} ± {:<6.4}  {:>8.4} ± {:<6.4}",
                s.variant.as_str(),
                s.runs,
                s.micro_mean,
                s.micro_std,
                s.macro_mean,
                s.macro_std
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: Variant, seed: u64, micro: f64) -> AblationRow {
        AblationRow {
            variant,
            seed,
            micro_f1: micro,
            macro_f1: micro / 2.0,
            epochs: 3,
        }
    }

    #[test]
    fn mean_std_hand_values() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn summary_has_one_row_per_variant() {
        let rows = vec![
            row(Variant::Encoder, 1, 0.2),
            row(Variant::Gat, 1, 0.8),
            row(Variant::Full, 1, 0.9),
            row(Variant::Encoder, 2, 0.4),
            row(Variant::Gat, 2, 0.6),
            row(Variant::Full, 2, 0.9),
        ];
        let r = AblationReport::from_rows(rows);
        assert_eq!(r.summary.len(), 3);
        assert!((r.summary_for(Variant::Encoder).micro_mean - 0.3).abs() < 1e-15);
        assert_eq!(r.summary_for(Variant::Full).micro_std, 0.0);
        assert_eq!(r.to_table().lines().count(), 4);
        let csv = r.to_csv();
        assert!(csv.starts_with("variant,seed,micro_f1,macro_f1,epochs\n"));
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.contains("gat,2,0.6,0.3,3"));
    }
}
