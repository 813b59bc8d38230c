//! Line-delimited and aligned-column rendering of metric reports and
//! compression curves.

use super::{CompressionStats, EvalError, MetricReport};
use std::path::Path;

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_metric_jsonl(path: &Path, reports: &[MetricReport]) -> Result<(), EvalError> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn format_metric_table(title: &str, reports: &[MetricReport]) -> String {
    let mut rows = vec![vec![
        "label".to_string(),
        "split".into(),
        "n".into(),
        "wer%".into(),
        "bias-wer%".into(),
        "S".into(),
        "D".into(),
        "I".into(),
        "ref".into(),
        "ent-ref".into(),
    ]];
    for r in reports {
        rows.push(vec![
            r.label.clone(),
            r.split.clone(),
            r.n_decode.to_string(),
            format!("{:.2}", r.wer * 100.0),
            format!("{:.2}", r.bias_wer * 100.0),
            r.substitutions.to_string(),
            r.deletions.to_string(),
            r.insertions.to_string(),
            r.ref_words.to_string(),
            r.entity_ref_words.to_string(),
        ]);
    }
    render(title, rows)
}

pub fn write_compression_jsonl(path: &Path, stats: &CompressionStats) -> Result<(), EvalError> {
    let mut out = String::new();
    for row in &stats.rows {
        let mut v = serde_json::to_value(row).expect("row serializes");
        v["k"] = serde_json::json!(stats.k);
        out.push_str(&v.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn format_compression_table(stats: &CompressionStats) -> String {
    let mut rows = vec![vec![
        "n".to_string(),
        "examples".into(),
        "rho_audio med".into(),
        "q1".into(),
        "q3".into(),
        "rho_context med".into(),
        "q1".into(),
        "q3".into(),
    ]];
    for r in &stats.rows {
        rows.push(vec![
            r.n.to_string(),
            r.examples.to_string(),
            format!("{:.4}", r.audio_median),
            format!("{:.4}", r.audio_q1),
            format!("{:.4}", r.audio_q3),
            format!("{:.4}", r.context_median),
            format!("{:.4}", r.context_q1),
            format!("{:.4}", r.context_q3),
        ]);
    }
    render(&format!("compression rates (K={})", stats.k), rows)
}

fn render(title: &str, rows: Vec<Vec<String>>) -> String {
    let cols = rows[0].len();
    let mut widths = vec![0usize; cols];
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = format!("# {title}\n");
    for (ri, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:>width$}", width = widths[i]))
            .collect();
        out.push_str(&line.join("  "));
        out.push('\n');
        if ri == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
