//! Delimited tables and cluster analytics.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::head::{argmax, MetricReport};
use crate::train::{EpochRecord, Evaluation, RunData, SweepParam, SweepRow};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("delimited text: {0}")]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, ReportError>;

/// A header plus string rows, written as comma-separated text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| ReportError::Io {
            path: "<memory>".into(),
            source: e.into_error(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv()?)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

const METRIC_COLUMNS: [&str; 6] = ["accuracy", "precision", "recall", "f1", "macro_f1", "rmse"];

fn metric_cells(m: &MetricReport) -> Vec<String> {
    [m.accuracy, m.precision, m.recall, m.f1, m.macro_f1, m.rmse]
        .iter()
        .map(|v| v.to_string())
        .collect()
}

/// One row per split per epoch.
pub fn epoch_table(history: &[EpochRecord]) -> Table {
    let mut t = Table::new(["epoch", "split", "step_loss", "loss"].into_iter().chain(METRIC_COLUMNS));
    for r in history {
        for (split, s) in [("train", &r.train), ("validation", &r.validation)] {
            let step = match (split, r.step_loss) {
                ("train", Some(l)) => l.to_string(),
                _ => String::new(),
            };
            let mut row = vec![r.epoch.to_string(), split.into(), step, s.loss.to_string()];
            row.extend(metric_cells(&s.metrics));
            t.push(row);
        }
    }
    t
}

/// One row per evaluated split.
pub fn metrics_table(evals: &[&Evaluation]) -> Table {
    let mut t = Table::new(["split", "items", "loss"].into_iter().chain(METRIC_COLUMNS));
    for e in evals {
        let mut row = vec![
            e.split.name().to_string(),
            e.members.len().to_string(),
            e.loss.to_string(),
        ];
        row.extend(metric_cells(&e.metrics));
        t.push(row);
    }
    t
}

pub fn sweep_table(param: SweepParam, rows: &[SweepRow]) -> Table {
    let mut header = vec![param.name().to_string(), "best_epoch".into()];
    for prefix in ["val", "test"] {
        header.extend(METRIC_COLUMNS.iter().map(|c| format!("{prefix}_{c}")));
    }
    let mut t = Table::new(header);
    for r in rows {
        let mut row = vec![r.value.to_string(), r.best_epoch.to_string()];
        row.extend(metric_cells(&r.validation));
        row.extend(metric_cells(&r.test));
        t.push(row);
    }
    t
}

/// Hard-assignment counts and frequent terms per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub class_names: Vec<String>,
    /// `counts[cluster][class]`.
    pub counts: Vec<Vec<u64>>,
    /// Most frequent non-stopword tokens per cluster, with counts.
    pub top_terms: Vec<Vec<(String, u64)>>,
}

impl ClusterReport {
    pub fn clusters(&self) -> usize {
        self.counts.len()
    }

    /// Rows: clusters; columns: classes plus a total.
    pub fn distribution_table(&self) -> Table {
        let header = std::iter::once("cluster".to_string())
            .chain(self.class_names.iter().cloned())
            .chain(std::iter::once("total".to_string()));
        let mut t = Table::new(header);
        for (k, row) in self.counts.iter().enumerate() {
            let mut cells = vec![k.to_string()];
            cells.extend(row.iter().map(u64::to_string));
            cells.push(row.iter().sum::<u64>().to_string());
            t.push(cells);
        }
        t
    }

    pub fn terms_table(&self) -> Table {
        let mut t = Table::new(["cluster", "rank", "token", "count"]);
        for (k, terms) in self.top_terms.iter().enumerate() {
            for (rank, (tok, n)) in terms.iter().enumerate() {
                t.push(vec![k.to_string(), (rank + 1).to_string(), tok.clone(), n.to_string()]);
            }
        }
        t
    }

    /// Grouped bar chart of the distribution table.
    pub fn svg_bar_chart(&self) -> String {
        const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];
        let classes = self.class_names.len().max(1);
        let bar = 18.0;
        let group = bar * classes as f64 + 14.0;
        let (left, top, height) = (40.0, 20.0, 200.0);
        let width = left + group * self.clusters() as f64 + 20.0 + 110.0;
        let max = self.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
            top + height + 40.0
        );
        s.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>\n",
            y = top + height,
            x2 = width - 110.0
        ));
        for (k, row) in self.counts.iter().enumerate() {
            let x0 = left + 7.0 + group * k as f64;
            for (c, &n) in row.iter().enumerate() {
                let h = height * n as f64 / max;
                s.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{bar}\" height=\"{h}\" fill=\"{}\"><title>{n}</title></rect>\n",
                    x0 + bar * c as f64,
                    top + height - h,
                    PALETTE[c % PALETTE.len()]
                ));
            }
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">cluster {k}</text>\n",
                x0 + bar * classes as f64 / 2.0,
                top + height + 16.0
            ));
        }
        for (c, name) in self.class_names.iter().enumerate() {
            let y = top + 14.0 * c as f64;
            let x = width - 100.0;
            s.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>\n",
                PALETTE[c % PALETTE.len()],
                x + 14.0,
                y + 9.0,
                escape_xml(name)
            ));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Counts hard assignments per (cluster, class) and the `top_n` most frequent
/// tokens per cluster over the assigned comments, skipping `stopwords`.
/// Term ties are broken alphabetically.
pub fn cluster_report(
    eval: &Evaluation,
    data: &RunData,
    clusters: usize,
    stopwords: &HashSet<String>,
    top_n: usize,
) -> ClusterReport {
    let classes = data.labels.len();
    let mut counts = vec![vec![0u64; classes]; clusters];
    let mut freq: Vec<HashMap<&str, u64>> = vec![HashMap::new(); clusters];
    for a in &eval.assignments {
        let k = argmax(&a.q);
        let sample = &data.samples[a.sample];
        counts[k][sample.label] += 1;
        for w in &sample.comment_words[a.comment] {
            if !stopwords.contains(w) {
                *freq[k].entry(w.as_str()).or_default() += 1;
            }
        }
    }
    let top_terms = freq
        .into_iter()
        .map(|f| {
            let mut terms: Vec<(String, u64)> =
                f.into_iter().map(|(w, n)| (w.to_string(), n)).collect();
            terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            terms.truncate(top_n);
            terms
        })
        .collect();
    ClusterReport {
        class_names: data.labels.names().to_vec(),
        counts,
        top_terms,
    }
}

/// `sample_id, comment_idx, cluster_argmax, q_0 … q_{K-1}` per real comment.
pub fn assignment_table(eval: &Evaluation, data: &RunData, clusters: usize) -> Table {
    let header = ["sample_id", "comment_idx", "cluster_argmax"]
        .into_iter()
        .map(String::from)
        .chain((0..clusters).map(|k| format!("q_{k}")));
    let mut t = Table::new(header);
    for a in &eval.assignments {
        let mut row = vec![
            data.samples[a.sample].id.clone(),
            a.comment.to_string(),
            argmax(&a.q).to_string(),
        ];
        row.extend(a.q.iter().map(f64::to_string));
        t.push(row);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_awkward_cells() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["x,y".into(), "quote \" inside".into()]);
        t.push(vec!["".into(), "line\nbreak".into()]);
        let back = Table::from_csv(&t.to_csv().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn distribution_marginals() {
        let r = ClusterReport {
            class_names: vec!["real".into(), "fake".into()],
            counts: vec![vec![3, 1], vec![0, 0], vec![2, 5]],
            top_terms: vec![vec![], vec![], vec![]],
        };
        let t = r.distribution_table();
        assert_eq!(t.rows[1], vec!["1", "0", "0", "0"]);
        assert_eq!(t.rows[2][3], "7");
        let svg = r.svg_bar_chart();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 6 + 2);
    }
}
