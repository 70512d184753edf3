//! Trains each requested variant under one budget and scores it on a test set.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Variant};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pair, EMode, MetricReport};
use crate::model::ModelSpec;
use crate::train::{dataset_loss, predict_samples, train};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub sm: f64,
    pub wfm: f64,
    pub em: f64,
    pub mae: f64,
    pub train_loss: f64,
    pub params: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(0).max(7);
        let mut s = format!(
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>9}  {:>9}\n",
            "Variant", "Sm", "Fwb", "Em", "MAE", "trainloss", "params"
        );
        for r in &self.rows {
            writeln!(
                s,
                "{:<width$}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6.3}  {:>9.4}  {:>9}",
                r.variant, r.sm, r.wfm, r.em, r.mae, r.train_loss, r.params
            )
            .expect("string write");
        }
        s
    }

    /// Writes `ablation.json` and `ablation.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("ablation.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("ablation.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))
    }
}

/// One row per variant, in the given order. Every configuration is checked
/// before any training starts.
pub fn run_ablation(variants: &[Variant], base: &RunConfig, train_set: &[Sample], test_set: &[Sample]) -> Result<AblationTable> {
    if test_set.is_empty() {
        return Err(Error::Input("test set is empty".into()));
    }
    let cfgs: Vec<RunConfig> = variants
        .iter()
        .map(|v| RunConfig {
            variant: v.clone(),
            ..base.clone()
        })
        .collect();
    for c in &cfgs {
        ModelSpec::from_config(c)?;
    }
    let mut table = AblationTable::default();
    for cfg in &cfgs {
        log::info!("training {}", cfg.variant);
        let t = train(cfg, train_set)?;
        let preds = predict_samples(&t.model, &t.params, test_set, cfg.batch)?;
        let results = preds
            .iter()
            .zip(test_set)
            .map(|(p, s)| evaluate_pair(&s.id, p, &s.mask, EMode::Adaptive))
            .collect::<Result<Vec<_>>>()?;
        let report = MetricReport::from_results(results, Vec::new());
        table.rows.push(AblationRow {
            variant: cfg.variant.name(),
            sm: report.aggregate.sm,
            wfm: report.aggregate.wfm,
            em: report.aggregate.em,
            mae: report.aggregate.mae,
            train_loss: dataset_loss(&t.model, &t.params, train_set, cfg.batch)?,
            params: t.params.num_scalars(),
        });
    }
    Ok(table)
}
