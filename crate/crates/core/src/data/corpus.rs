use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// One article with its comment thread and veracity label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsSample {
    pub id: String,
    pub text: String,
    pub label: usize,
    pub comments: Vec<String>,
}

/// Class names indexed by label id, as declared in a corpus header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn new(names: Vec<String>) -> Self {
        LabelMap { names }
    }

    pub fn binary() -> Self {
        LabelMap::new(vec!["real".into(), "fake".into()])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    fn from_header(map: BTreeMap<String, usize>, line: usize) -> Result<Self, DataError> {
        let m = map.len();
        if m < 2 {
            return Err(DataError::Malformed {
                line,
                message: "label map needs at least two classes".into(),
            });
        }
        let mut names = vec![String::new(); m];
        for (name, idx) in map {
            if idx >= m || !names[idx].is_empty() {
                return Err(DataError::Malformed {
                    line,
                    message: format!("label indices must be a permutation of 0..{m}"),
                });
            }
            names[idx] = name;
        }
        Ok(LabelMap { names })
    }

    fn to_header(&self) -> BTreeMap<String, usize> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect()
    }
}

#[derive(Deserialize, Serialize)]
struct Header {
    labels: BTreeMap<String, usize>,
}

#[derive(Deserialize, Serialize)]
struct Record {
    id: String,
    text: String,
    label: String,
    #[serde(default)]
    comments: Vec<String>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<(LabelMap, Vec<NewsSample>), DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_corpus(&text)
}

/// Parses the line-delimited corpus format: a header object
/// `{"labels": {name: index, ...}}` followed by one record object per line.
pub fn parse_corpus(text: &str) -> Result<(LabelMap, Vec<NewsSample>), DataError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let Some((hline, header)) = lines.next() else {
        return Err(DataError::NoRecords);
    };
    let header: Header = serde_json::from_str(header).map_err(|e| DataError::Malformed {
        line: hline,
        message: format!("bad header: {e}"),
    })?;
    let labels = LabelMap::from_header(header.labels, hline)?;

    let mut samples = Vec::new();
    for (line, raw) in lines {
        let rec: Record = serde_json::from_str(raw).map_err(|e| DataError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let label = labels
            .index_of(&rec.label)
            .ok_or_else(|| DataError::UnknownLabel {
                line,
                label: rec.label.clone(),
            })?;
        samples.push(NewsSample {
            id: rec.id,
            text: rec.text,
            label,
            comments: rec.comments,
        });
    }
    if samples.is_empty() {
        return Err(DataError::NoRecords);
    }
    Ok((labels, samples))
}

/// Corpus file contents: header line, then one record per line.
pub fn format_corpus(labels: &LabelMap, samples: &[NewsSample]) -> String {
    let mut out = String::new();
    let header = Header {
        labels: labels.to_header(),
    };
    out.push_str(&serde_json::to_string(&header).expect("header"));
    out.push('\n');
    for s in samples {
        let rec = Record {
            id: s.id.clone(),
            text: s.text.clone(),
            label: labels.name(s.label).to_string(),
            comments: s.comments.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(
    path: impl AsRef<Path>,
    labels: &LabelMap,
    samples: &[NewsSample],
) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, format_corpus(labels, samples)).map_err(|e| DataError::io(path, e))
}
