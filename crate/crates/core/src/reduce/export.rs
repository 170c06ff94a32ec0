use std::path::{Path, PathBuf};

use super::plan::MergePlan;
use super::uncurl::SimilarityReport;
use crate::error::{Error, Result};

/// Writes `layer_{id}.csv` per reported layer into `dir` with columns
/// `expert, f0..f{D-1}, label, frequency`. Discarded experts get an empty
/// label. Returns the written paths.
pub fn export_clusters(report: &SimilarityReport, plan: &MergePlan, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for lr in &report.layers {
        let lp = plan.layer(lr.layer).ok_or_else(|| {
            Error::validation(format!("plan has no entry for layer {}", lr.layer))
        })?;
        let path = dir.join(format!("layer_{}.csv", lr.layer));
        let csv_err = |e: csv::Error| Error::io(&path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        let d = lr.embedding.cols();
        let mut header = vec!["expert".to_string()];
        header.extend((0..d).map(|k| format!("f{k}")));
        header.extend(["label".to_string(), "frequency".to_string()]);
        w.write_record(&header).map_err(csv_err)?;
        for e in 0..lr.embedding.rows() {
            let mut rec = vec![e.to_string()];
            rec.extend(lr.embedding.row(e).iter().map(|v| v.to_string()));
            rec.push(lp.labels[e].map(|l| l.to_string()).unwrap_or_default());
            rec.push(lr.frequencies[e].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
