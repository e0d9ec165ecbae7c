//! CSV dataset manifests (`clip_id,wav_path,label`) and cluster assignment
//! files (`clip_id,cluster`).

use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clip_id: String,
    pub wav_path: PathBuf,
    /// Empty in the file means unlabeled.
    #[serde(deserialize_with = "empty_is_none")]
    pub label: Option<String>,
}

fn empty_is_none<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.is_empty()))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

fn unique<'a>(ids: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    let dups: Vec<&str> = ids.filter(|id| !seen.insert(*id)).collect();
    if dups.is_empty() {
        Ok(())
    } else {
        Err(Error::Input(format!("{what}: duplicate clip ids {dups:?}")))
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).at(path)?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<File>, path: &Path, expect: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().ne(expect.iter().copied()) {
        return Err(Error::Format(format!(
            "{}: header must be {:?}, found {:?}",
            path.display(),
            expect.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        unique(rows.iter().map(|r| r.clip_id.as_str()), "manifest")?;
        if let Some(r) = rows.iter().find(|r| r.clip_id.is_empty()) {
            return Err(Error::Input(format!(
                "manifest row for {:?} has an empty clip id",
                r.wav_path
            )));
        }
        Ok(DatasetManifest { rows })
    }

    /// Reads a manifest; relative WAV paths are resolved against the
    /// manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = open(path)?;
        check_header(&mut rdr, path, &["clip_id", "wav_path", "label"])?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut rows = Vec::new();
        for row in rdr.deserialize() {
            let mut row: ManifestRow = row?;
            if row.wav_path.is_relative() {
                row.wav_path = base.join(&row.wav_path);
            }
            rows.push(row);
        }
        DatasetManifest::new(rows)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(File::create(path).at(path)?);
        w.write_record(["clip_id", "wav_path", "label"])?;
        for r in &self.rows {
            w.write_record([
                r.clip_id.as_str(),
                &r.wav_path.to_string_lossy(),
                r.label.as_deref().unwrap_or(""),
            ])?;
        }
        w.flush().at(path)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn label_of(&self, clip_id: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.clip_id == clip_id)
            .and_then(|r| r.label.as_deref())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub clip_id: String,
    pub cluster: usize,
}

pub fn save_assignments(path: impl AsRef<Path>, rows: &[Assignment]) -> Result<()> {
    let path = path.as_ref();
    unique(rows.iter().map(|r| r.clip_id.as_str()), "assignments")?;
    let mut w = csv::Writer::from_writer(File::create(path).at(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["clip_id", "cluster"])?;
    }
    w.flush().at(path)
}

pub fn load_assignments(path: impl AsRef<Path>) -> Result<Vec<Assignment>> {
    let path = path.as_ref();
    let mut rdr = open(path)?;
    check_header(&mut rdr, path, &["clip_id", "cluster"])?;
    let rows = rdr.deserialize().collect::<Result<Vec<Assignment>, _>>()?;
    unique(rows.iter().map(|r| r.clip_id.as_str()), "assignments")?;
    Ok(rows)
}
