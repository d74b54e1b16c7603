use std::fmt;
use std::io::Write;

use serde::Serialize;
use vsod_core::syndata::Sample;
use vsod_core::FusionMode;

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::evaluate::evaluate;
use crate::train::{train, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRun {
    pub seed: u64,
    pub max_f: f64,
    pub mae: f64,
    pub s_measure: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub mode: FusionMode,
    pub runs: Vec<AblationRun>,
    pub max_f_mean: f64,
    pub max_f_spread: f64,
    pub mae_mean: f64,
    pub mae_spread: f64,
}

/// Mean and population standard deviation.
fn mean_spread(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl AblationRow {
    fn new(mode: FusionMode, runs: Vec<AblationRun>) -> Self {
        let (max_f_mean, max_f_spread) = mean_spread(runs.iter().map(|r| r.max_f));
        let (mae_mean, mae_spread) = mean_spread(runs.iter().map(|r| r.mae));
        AblationRow {
            mode,
            runs,
            max_f_mean,
            max_f_spread,
            mae_mean,
            mae_spread,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, mode: FusionMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "| mode | max F | MAE |")?;
        writeln!(f, "|---|---|---|")?;
        for r in &self.rows {
            writeln!(
                f,
                "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} |",
                r.mode, r.max_f_mean, r.max_f_spread, r.mae_mean, r.mae_spread
            )?;
        }
        Ok(())
    }
}

/// Trains every (mode, seed) pair from `base` and scores it on `eval`. Runs
/// that share a seed share model initialization order, data order and
/// augmentation draws; only the fusion mode differs.
pub fn ablate(
    base: &TrainConfig,
    modes: &[FusionMode],
    seeds: &[u64],
    train_set: &[Sample],
    eval_set: &[Sample],
    log: &mut dyn Write,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(HarnessError::Input("ablation needs at least one seed".into()));
    }
    if modes.is_empty() {
        return Err(HarnessError::Input("ablation needs at least one fusion mode".into()));
    }
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig {
                fusion_mode: mode,
                seed,
                ..base.clone()
            };
            let mut trainer = Trainer::new(cfg, train_set.to_vec())?;
            let outcome = train(&mut trainer, None, &mut std::io::sink())?;
            let eval = evaluate(trainer.model(), eval_set, None)?;
            let run = AblationRun {
                seed,
                max_f: eval.report.max_f_beta,
                mae: eval.report.mae,
                s_measure: eval.report.s_measure,
                final_loss: outcome.log.last().map_or(f64::NAN, |l| l.total),
            };
            writeln!(
                log,
                "ablate mode {mode} seed {seed} max_f {:.4} mae {:.4} s {:.4}",
                run.max_f, run.mae, run.s_measure
            )
            .map_err(|e| HarnessError::io("<log>", e))?;
            runs.push(run);
        }
        rows.push(AblationRow::new(mode, runs));
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_is_population_deviation() {
        let (m, s) = mean_spread([1.0, 3.0].into_iter());
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(mean_spread([0.7].into_iter()), (0.7, 0.0));
    }
}
