use std::io::Write;

use super::eval::{MetricRecord, SampleScore};
use super::state::StepRecord;
use crate::error::Result;

/// One JSON object per line.
pub fn write_jsonl<T: serde::Serialize, W: Write>(out: &mut W, items: &[T]) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut *out, it).map_err(|e| crate::Error::Input(e.to_string()))?;
        writeln!(out).map_err(|e| crate::Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn write_step_log<W: Write>(out: &mut W, steps: &[StepRecord]) -> Result<()> {
    write_jsonl(out, steps)
}

/// Fixed-width table, one row per task.
pub fn metrics_table(history: &[MetricRecord]) -> String {
    let mut s = format!(
        "{:>4} {:>7} {:>6} {:>8} {:>8} {:>8}\n",
        "task", "classes", "tau", "avg", "auth", "unseen"
    );
    for r in history {
        s += &format!(
            "{:>4} {:>7} {:>6.3} {:>8.4} {:>8.4} {:>8}\n",
            r.task_index,
            r.num_classes,
            r.tau,
            r.avg_acc,
            r.auth_acc,
            r.unseen_acc.map_or("-".into(), |u| format!("{u:.4}"))
        );
    }
    s
}

/// Per-class accuracy of one record, sorted by class name.
pub fn per_class_table(rec: &MetricRecord) -> String {
    let w = rec.per_class_acc.keys().map(|k| k.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    for (k, v) in &rec.per_class_acc {
        s += &format!("{k:<w$} {v:.4}\n");
    }
    s
}

pub fn write_scores_csv<W: Write>(out: &mut W, scores: &[SampleScore]) -> Result<()> {
    let io = |e| crate::Error::io("<output>", e);
    writeln!(out, "class,holdout,predicted,max_prob").map_err(io)?;
    for s in scores {
        writeln!(
            out,
            "{},{},{},{:.17}",
            s.class,
            s.holdout,
            s.predicted.as_deref().unwrap_or("unseen"),
            s.max_prob
        )
        .map_err(io)?;
    }
    Ok(())
}
