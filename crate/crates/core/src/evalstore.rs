//! Append-only evaluation store: one JSON-lines file per UTC day plus an
//! in-memory index rebuilt by scanning the files on open.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::to_canonical_line;
use crate::pipeline::PipelineOverrides;
use crate::predictor::JobOutput;
use crate::registry::{HardwareFilter, HardwareSpec};
use crate::tracing::TraceLevel;
use crate::version::{Version, VersionConstraint};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("evaluation `{evaluation_id}` from agent `{agent_id}` already stored with different content")]
    Conflict { evaluation_id: String, agent_id: String },
    #[error("store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt record in {file} line {line}: {reason}")]
    Corrupt { file: String, line: usize, reason: String },
}

/// One agent's completed result for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEvaluation {
    pub evaluation_id: String,
    pub agent_id: String,
    pub model: String,
    pub model_version: Version,
    pub framework: String,
    pub framework_version: Version,
    pub hardware: HardwareSpec,
    #[serde(default)]
    pub overrides: PipelineOverrides,
    #[serde(default)]
    pub trace_level: TraceLevel,
    pub latency_ms: f64,
    pub result: JobOutput,
    pub stored_at: String,
}

impl StoredEvaluation {
    pub fn key(&self) -> (String, String) {
        (self.evaluation_id.clone(), self.agent_id.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoreQuery {
    pub model: Option<String>,
    pub model_constraint: Option<VersionConstraint>,
    pub framework: Option<String>,
    pub framework_constraint: Option<VersionConstraint>,
    pub hardware: HardwareFilter,
}

impl StoreQuery {
    pub fn matches(&self, r: &StoredEvaluation) -> bool {
        let name_ok = |want: &Option<String>, have: &str| want.as_deref().is_none_or(|w| w.eq_ignore_ascii_case(have));
        name_ok(&self.model, &r.model)
            && self.model_constraint.as_ref().is_none_or(|c| c.satisfies(&r.model_version))
            && name_ok(&self.framework, &r.framework)
            && self
                .framework_constraint
                .as_ref()
                .is_none_or(|c| c.satisfies(&r.framework_version))
            && self.hardware.matches(&r.hardware)
    }
}

#[derive(Debug, Default)]
struct Index {
    records: Vec<StoredEvaluation>,
    by_key: BTreeMap<(String, String), usize>,
}

/// The store. One writer at a time appends; readers only ever see records
/// that were fully written.
#[derive(Debug)]
pub struct EvalStore {
    dir: Option<PathBuf>,
    index: RwLock<Index>,
}

impl EvalStore {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            index: RwLock::new(Index::default()),
        }
    }

    /// Opens (creating if needed) a store directory and loads its records.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("results-") && n.ends_with(".jsonl"))
            })
            .collect();
        files.sort();
        let mut index = Index::default();
        for file in files {
            let reader = BufReader::new(fs::File::open(&file)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: StoredEvaluation = match serde_json::from_str(&line) {
                    Ok(r) => r,
                    // a torn final line from a crash mid-append is skipped
                    Err(e) if e.is_eof() => continue,
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            file: file.display().to_string(),
                            line: i + 1,
                            reason: e.to_string(),
                        })
                    }
                };
                let key = rec.key();
                if !index.by_key.contains_key(&key) {
                    let pos = index.records.len();
                    index.by_key.insert(key, pos);
                    index.records.push(rec);
                }
            }
        }
        Ok(Self {
            dir: Some(dir),
            index: RwLock::new(index),
        })
    }

    /// Stores a record. Re-putting identical content is a no-op.
    pub fn put(&self, rec: StoredEvaluation) -> Result<(), StoreError> {
        let mut index = self.index.write().expect("store poisoned");
        let key = rec.key();
        if let Some(&i) = index.by_key.get(&key) {
            if to_canonical_line(&index.records[i]) == to_canonical_line(&rec) {
                return Ok(());
            }
            return Err(StoreError::Conflict {
                evaluation_id: key.0,
                agent_id: key.1,
            });
        }
        if let Some(dir) = &self.dir {
            let file = dir.join(format!("results-{}.jsonl", chrono::Utc::now().format("%Y-%m-%d")));
            let mut line = to_canonical_line(&rec);
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(file)?;
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        let pos = index.records.len();
        index.by_key.insert(key, pos);
        index.records.push(rec);
        Ok(())
    }

    pub fn get(&self, evaluation_id: &str, agent_id: &str) -> Option<StoredEvaluation> {
        let index = self.index.read().expect("store poisoned");
        index
            .by_key
            .get(&(evaluation_id.to_string(), agent_id.to_string()))
            .map(|&i| index.records[i].clone())
    }

    pub fn for_evaluation(&self, evaluation_id: &str) -> Vec<StoredEvaluation> {
        let index = self.index.read().expect("store poisoned");
        index
            .records
            .iter()
            .filter(|r| r.evaluation_id == evaluation_id)
            .cloned()
            .collect()
    }

    /// Matching records in insertion order.
    pub fn query(&self, q: &StoreQuery) -> Vec<StoredEvaluation> {
        let index = self.index.read().expect("store poisoned");
        index.records.iter().filter(|r| q.matches(r)).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("store poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Human label for an override set, e.g. "Color Layout Pitfall".
pub fn variant_label(overrides: &PipelineOverrides) -> String {
    let known = |k: &str, v: &str| -> Option<&'static str> {
        match (k, v.to_ascii_lowercase().as_str()) {
            ("color_layout", _) => Some("Color Layout Pitfall"),
            ("data_layout", _) => Some("Data Layout Pitfall"),
            ("crop", "skip" | "off" | "none") | ("crop.percentage", _) => Some("Crop Pitfall"),
            ("order_policy", _) => Some("Type Conversion Pitfall"),
            ("jpeg_decoder" | "dct_method", _) => Some("Decode Pitfall"),
            _ => None,
        }
    };
    if overrides.is_empty() {
        return "Baseline".into();
    }
    let mut labels: Vec<String> = Vec::new();
    for (k, v) in &overrides.0 {
        let label = known(k, v).map(str::to_string).unwrap_or_else(|| format!("{k}={v}"));
        if !labels.contains(&label) {
            labels.push(label);
        }
    }
    labels.join(" + ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub model: String,
    pub variant: String,
    pub n_samples: usize,
    pub top1: String,
    pub top5: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub model: String,
    pub variant: String,
    pub runs: usize,
    pub latency_ms: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SummaryTable {
    pub accuracy: Vec<AccuracyRow>,
    pub latency: Vec<LatencyRow>,
}

impl SummaryTable {
    /// Plain-text rendering with aligned columns.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let acc: Vec<[String; 4]> = self
            .accuracy
            .iter()
            .map(|r| [r.model.clone(), r.variant.clone(), r.top1.clone(), r.top5.clone()])
            .collect();
        out.push_str(&render_rows(["Model", "Variant", "Top1", "Top5"], &acc));
        if !self.latency.is_empty() {
            out.push('\n');
            let lat: Vec<[String; 4]> = self
                .latency
                .iter()
                .map(|r| [r.model.clone(), r.variant.clone(), r.runs.to_string(), r.latency_ms.clone()])
                .collect();
            out.push_str(&render_rows(["Model", "Variant", "Runs", "Latency (ms)"], &lat));
        }
        out
    }
}

fn render_rows(header: [&str; 4], rows: &[[String; 4]]) -> String {
    let mut widths = header.map(str::len);
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: [&str; 4]| -> String {
        let parts: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut out = line(header);
    let sep: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&format!("|-{}-|\n", sep.join("-|-")));
    for r in rows {
        out.push_str(&line([&r[0], &r[1], &r[2], &r[3]]));
    }
    out
}

/// Accuracy and latency rows per model and variant. Accuracy is pooled
/// over samples, latency averaged over runs. Rows follow first appearance.
pub fn summary_table(records: &[StoredEvaluation]) -> SummaryTable {
    struct Acc {
        n: usize,
        top1_hits: f64,
        top5_hits: f64,
        runs: usize,
        latency: f64,
    }
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Acc> = BTreeMap::new();
    for r in records {
        let key = (r.model.clone(), variant_label(&r.overrides));
        let g = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            Acc {
                n: 0,
                top1_hits: 0.0,
                top5_hits: 0.0,
                runs: 0,
                latency: 0.0,
            }
        });
        if let Some(m) = &r.result.metrics {
            g.n += m.n_samples;
            g.top1_hits += m.top1 * m.n_samples as f64;
            g.top5_hits += m.top5 * m.n_samples as f64;
        }
        g.runs += 1;
        g.latency += r.latency_ms;
    }
    let mut table = SummaryTable::default();
    for key in order {
        let g = &groups[&key];
        if g.n > 0 {
            table.accuracy.push(AccuracyRow {
                model: key.0.clone(),
                variant: key.1.clone(),
                n_samples: g.n,
                top1: format!("{:.4}", g.top1_hits / g.n as f64),
                top5: format!("{:.4}", g.top5_hits / g.n as f64),
            });
        }
        table.latency.push(LatencyRow {
            model: key.0,
            variant: key.1,
            runs: g.runs,
            latency_ms: format!("{:.4}", g.latency / g.runs as f64),
        });
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::AccuracyReport;

    pub(crate) fn sample(id: &str, agent: &str, tf: &str, top1: f64) -> StoredEvaluation {
        StoredEvaluation {
            evaluation_id: id.into(),
            agent_id: agent.into(),
            model: "Inception_v3".into(),
            model_version: "1.0.0".parse().unwrap(),
            framework: "TensorFlow".into(),
            framework_version: tf.parse().unwrap(),
            hardware: HardwareSpec {
                architecture: "amd64".into(),
                ..Default::default()
            },
            overrides: PipelineOverrides::default(),
            trace_level: TraceLevel::None,
            latency_ms: 2.5,
            result: JobOutput {
                model: "Inception_v3".into(),
                model_version: "1.0.0".into(),
                framework: "TensorFlow".into(),
                backend: "reference_linear".into(),
                container: None,
                environment: Default::default(),
                outputs: vec![],
                metrics: Some(AccuracyReport {
                    n_samples: 4,
                    top1,
                    top5: 1.0,
                }),
                trace: vec![],
            },
            stored_at: "2020-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn put_get_and_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let store = EvalStore::open(dir.path()).unwrap();
        let rec = sample("e1", "a", "1.13.0", 1.0);
        store.put(rec.clone()).unwrap();
        store.put(rec.clone()).unwrap();
        assert_eq!(store.len(), 1);
        assert!(matches!(
            store.put(sample("e1", "a", "1.13.0", 0.5)),
            Err(StoreError::Conflict { .. })
        ));
        store.put(sample("e1", "b", "2.0.0", 0.5)).unwrap();
        assert_eq!(store.get("e1", "a"), Some(rec.clone()));

        let reopened = EvalStore::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 2);
        assert_eq!(reopened.get("e1", "a"), Some(rec));
    }

    #[test]
    fn constraint_queries() {
        let store = EvalStore::in_memory();
        store.put(sample("e1", "a", "1.13.0", 1.0)).unwrap();
        let q = |c: &str| StoreQuery {
            framework_constraint: Some(VersionConstraint::parse(c).unwrap()),
            ..Default::default()
        };
        assert_eq!(store.query(&q("^1.x")).len(), 1);
        assert!(store.query(&q("^2.x")).is_empty());
    }

    #[test]
    fn table_rows_per_variant() {
        assert!(summary_table(&[]).accuracy.is_empty());
        let base = sample("e1", "a", "1.13.0", 1.0);
        let mut bgr = sample("e2", "a", "1.13.0", 0.25);
        bgr.overrides = PipelineOverrides::new().with("color_layout", "BGR");
        let t = summary_table(&[base, bgr]);
        let rows: Vec<_> = t.accuracy.iter().map(|r| (r.variant.as_str(), r.top1.as_str())).collect();
        assert_eq!(rows, [("Baseline", "1.0000"), ("Color Layout Pitfall", "0.2500")]);
        assert!(t.render().contains("Color Layout Pitfall"));
    }
}
