//! Delimiter-separated run outputs: training history, prediction dump,
//! confusion matrix, and two-column plot data.

use std::fmt::Write as _;
use std::path::Path;

use remnet_core::eval::PredictionRecord;
use remnet_core::train::EpochRecord;

use crate::error::{IoError, IoResult};

pub fn write_text(path: &Path, text: &str) -> IoResult<()> {
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

/// `epoch  lr  train_loss  val_loss`, full precision.
pub fn format_history(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch\tlr\ttrain_loss\tval_loss\n");
    for r in history {
        writeln!(s, "{}\t{:e}\t{:e}\t{:e}", r.epoch, r.lr, r.train_loss, r.val_loss).unwrap();
    }
    s
}

pub fn parse_history(text: &str, origin: &Path) -> IoResult<Vec<EpochRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || IoError::schema(origin, i + 1, "expected epoch, lr, train_loss, val_loss");
        if f.len() != 4 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        out.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            lr: num(f[1])?,
            train_loss: num(f[2])?,
            val_loss: num(f[3])?,
        });
    }
    Ok(out)
}

/// One line per image: path, true and predicted label, vote tally and the
/// per-cluster labels (comma-separated).
pub fn format_predictions(records: &[PredictionRecord], paths: &[String]) -> String {
    let mut s = String::from("path\ttrue_label\tpredicted\ttally\tcluster_labels\n");
    let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    for (r, p) in records.iter().zip(paths) {
        let t = r.true_label.map_or_else(|| "-".to_string(), |t| t.to_string());
        writeln!(s, "{p}\t{t}\t{}\t{}\t{}", r.final_label, join(&r.tally), join(&r.cluster_labels)).unwrap();
    }
    s
}

/// Rows are true classes, columns predictions.
pub fn format_confusion(matrix: &[Vec<usize>]) -> String {
    let mut s = String::new();
    for row in matrix {
        s.push_str(&row.iter().map(ToString::to_string).collect::<Vec<_>>().join("\t"));
        s.push('\n');
    }
    s
}

/// Two whitespace-separated columns with a commented header.
pub fn format_xy(x_name: &str, y_name: &str, points: &[(usize, f64)]) -> String {
    let mut s = format!("# {x_name} {y_name}\n");
    for (x, y) in points {
        writeln!(s, "{x} {y}").unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_round_trips_exactly() {
        let h = vec![
            EpochRecord {
                epoch: 1,
                lr: 1e-3,
                train_loss: 1.0 / 3.0,
                val_loss: 0.1 + 0.2,
            },
            EpochRecord {
                epoch: 2,
                lr: 5e-4,
                train_loss: f64::MIN_POSITIVE,
                val_loss: 2.5,
            },
        ];
        assert_eq!(parse_history(&format_history(&h), Path::new("h")).unwrap(), h);
    }

    #[test]
    fn xy_format() {
        assert_eq!(format_xy("n", "acc", &[(1, 50.0), (20, 97.5)]), "# n acc\n1 50\n20 97.5\n");
    }
}
