use crate::encoder::MtlModel;
use crate::error::Result;
use crate::trainer::{finetune, EncodedTask, FinetuneConfig, GateSource};

/// Best dev metric after fine-tuning with each gate source.
#[derive(Clone, Debug, PartialEq)]
pub struct GateComparison {
    pub rows: Vec<(GateSource, f64)>,
}

/// Fine-tunes `model` on `task` once per source, all with the same seed.
pub fn compare_gate_sources(
    model: &MtlModel<f32>,
    task: &EncodedTask,
    sources: &[GateSource],
    config: &FinetuneConfig,
) -> Result<GateComparison> {
    let rows = sources
        .iter()
        .map(|s| {
            let cfg = FinetuneConfig {
                gate_source: s.clone(),
                ..config.clone()
            };
            Ok((s.clone(), finetune(model, task, &cfg)?.best_metric))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GateComparison { rows })
}

impl GateComparison {
    pub fn table(&self, metric: &str) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(s, v)| vec![s.to_string(), format!("{v:.4}")])
            .collect();
        crate::analysis::text_table(&["gate", metric], &rows)
    }
}
