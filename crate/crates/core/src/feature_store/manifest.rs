use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::format::{read_features, FeatureMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub transcript: String,
    /// model tag -> feature file, relative to the manifest directory.
    pub features: IndexMap<String, PathBuf>,
}

/// Corpus index: one JSON object per line, paths relative to the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub records: Vec<UtteranceRecord>,
    /// Canonical combination order, taken from the first record's key order.
    pub model_tags: Vec<String>,
}

impl Manifest {
    pub fn new(dir: impl Into<PathBuf>, records: Vec<UtteranceRecord>) -> Result<Self> {
        let model_tags = records
            .first()
            .map(|r| r.features.keys().cloned().collect())
            .unwrap_or_default();
        let m = Manifest {
            dir: dir.into(),
            records,
            model_tags,
        };
        m.check_structure()?;
        Ok(m)
    }

    fn check_structure(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.id.is_empty() {
                return Err(Error::Manifest("empty utterance id".into()));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate utterance id {:?}", r.id)));
            }
            for tag in &self.model_tags {
                if !r.features.contains_key(tag) {
                    return Err(Error::Manifest(format!(
                        "record {:?} has no features for model {tag:?}",
                        r.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: UtteranceRecord = serde_json::from_str(line)
                .map_err(|e| Error::Manifest(format!("line {}: {e}", lineno + 1)))?;
            records.push(rec);
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::new(dir, records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for r in &self.records {
            let ordered = UtteranceRecord {
                id: r.id.clone(),
                transcript: r.transcript.clone(),
                features: self
                    .model_tags
                    .iter()
                    .map(|t| (t.clone(), r.features[t].clone()))
                    .collect(),
            };
            serde_json::to_writer(&mut out, &ordered)
                .map_err(|e| Error::Manifest(e.to_string()))?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn feature_path(&self, record: &UtteranceRecord, tag: &str) -> Result<PathBuf> {
        record
            .features
            .get(tag)
            .map(|p| self.dir.join(p))
            .ok_or_else(|| Error::TagMissing(tag.to_string()))
    }

    pub fn require_tags(&self, tags: &[String]) -> Result<()> {
        for t in tags {
            if !self.model_tags.contains(t) {
                return Err(Error::TagMissing(t.clone()));
            }
        }
        Ok(())
    }

    /// Reads the features of `record` for `tags`, in that order, checking
    /// that each file's embedded tag matches its manifest key.
    pub fn load_features(&self, record: &UtteranceRecord, tags: &[String]) -> Result<Vec<FeatureMatrix>> {
        tags.iter()
            .map(|tag| {
                let fm = read_features(self.feature_path(record, tag)?)?;
                if &fm.model_tag != tag {
                    return Err(Error::Manifest(format!(
                        "record {:?}: file for {tag:?} carries tag {:?}",
                        record.id, fm.model_tag
                    )));
                }
                Ok(fm)
            })
            .collect()
    }

    /// The first `n` records and the rest, as two manifests over the same directory.
    pub fn split_at(&self, n: usize) -> Result<(Manifest, Manifest)> {
        if n > self.records.len() {
            return Err(Error::Manifest(format!(
                "cannot split {} records at {n}",
                self.records.len()
            )));
        }
        let part = |records: &[UtteranceRecord]| Manifest {
            dir: self.dir.clone(),
            records: records.to_vec(),
            model_tags: self.model_tags.clone(),
        };
        Ok((part(&self.records[..n]), part(&self.records[n..])))
    }

    /// Checks every referenced file parses and carries the right tag.
    pub fn validate_files(&self) -> Result<()> {
        for r in &self.records {
            self.load_features(r, &self.model_tags)?;
        }
        Ok(())
    }
}
