//! Parameter and FLOPs accounting and routing diagnostics.

mod flops;
mod gates;
mod params;
mod routing;

pub use flops::{flops_per_token, FlopsReport, PathMacs};
pub use gates::{compare_gate_sources, GateComparison};
pub use params::{count_model_params, count_params, ParamCountReport};
pub use routing::{
    entropy_bits, routing_csv, routing_stats, total_variation, trace_routing, LayerRouting, RoutingStats, TaskHistogram,
};

/// Left-aligned first column, right-aligned remaining columns.
pub fn text_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut width: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = width[i])
                } else {
                    format!("{c:>w$}", w = width[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out += &line(
        width
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    );
    for r in rows {
        out += &line(r.iter().take(cols).map(String::as_str).collect());
    }
    out
}

impl ParamCountReport {
    pub fn table(&self) -> String {
        let rows = [
            ("per_expert", self.per_expert),
            ("expert_params", self.expert_params),
            ("additional_expert_params", self.additional_expert_params),
            ("gating_params", self.gating_params),
            ("attention_params", self.attention_params),
            ("norm_params", self.norm_params),
            ("embedding_params", self.embedding_params),
            ("head_params", self.head_params),
            ("total", self.total),
        ];
        let rows: Vec<Vec<String>> = rows.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]).collect();
        text_table(&["component", "parameters"], &rows)
    }

    pub fn csv(&self) -> String {
        format!(
            "component,parameters\nper_expert,{}\nexpert_params,{}\nadditional_expert_params,{}\ngating_params,{}\nattention_params,{}\nnorm_params,{}\nembedding_params,{}\nhead_params,{}\ntotal,{}\n",
            self.per_expert,
            self.expert_params,
            self.additional_expert_params,
            self.gating_params,
            self.attention_params,
            self.norm_params,
            self.embedding_params,
            self.head_params,
            self.total
        )
    }
}

impl FlopsReport {
    pub fn table(&self) -> String {
        let row = |name: &str, m: u64, d: u64| vec![name.to_string(), m.to_string(), d.to_string()];
        let rows = vec![
            row("attention", self.model.attention, self.dense_equivalent.attention),
            row("ffn_path", self.model.ffn, self.dense_equivalent.ffn),
            row("gate", self.model.gate, self.dense_equivalent.gate),
            row("total_per_token", self.model.total(), self.dense_equivalent.total()),
            row("head_per_example", self.head_per_example, self.head_per_example),
        ];
        let mut out = text_table(&["macs", "model", "dense"], &rows);
        out += &format!("gate overhead: {:.4}% of ffn path\n", 100.0 * self.gate_fraction());
        out
    }

    pub fn csv(&self) -> String {
        format!(
            "component,model,dense\nattention,{},{}\nffn_path,{},{}\ngate,{},{}\ntotal_per_token,{},{}\nhead_per_example,{},{}\n",
            self.model.attention,
            self.dense_equivalent.attention,
            self.model.ffn,
            self.dense_equivalent.ffn,
            self.model.gate,
            self.dense_equivalent.gate,
            self.model.total(),
            self.dense_equivalent.total(),
            self.head_per_example,
            self.head_per_example
        )
    }
}
