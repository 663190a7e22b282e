//! Output files: provenance headers, staged writes and CSV/JSONL helpers.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{data, file_err, Result};

/// Version of the harness artifact layout (probe and figure files).
pub const ARTIFACT_SCHEMA: u32 = 1;

/// Stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec_hash: String,
    pub root_seed: u64,
    pub schema: u32,
}

impl Provenance {
    pub fn new(spec_hash: &str, root_seed: u64) -> Self {
        Self { spec_hash: spec_hash.to_owned(), root_seed, schema: ARTIFACT_SCHEMA }
    }

    /// First line of every CSV file.
    pub fn csv_comment(&self) -> String {
        format!("# softthink schema={} spec_hash={} root_seed={}\n", self.schema, self.spec_hash, self.root_seed)
    }
}

/// A directory filled under a temporary name and renamed into place on
/// [`Staging::commit`]. Dropped uncommitted, it is deleted.
pub struct Staging {
    dir: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl Staging {
    /// Stages `target`, an existing or future directory whose parent may not
    /// exist yet.
    pub fn new(target: &Path) -> Result<Self> {
        let parent = target.parent().ok_or_else(|| data(format!("{} has no parent", target.display())))?;
        let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        fs::create_dir_all(parent).map_err(file_err(parent))?;
        let dir = parent.join(format!(".{name}.staging"));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(file_err(&dir))?;
        }
        fs::create_dir(&dir).map_err(file_err(&dir))?;
        Ok(Self { dir, target: target.to_path_buf(), committed: false })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Replaces the target directory with the staged one.
    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(file_err(&self.target))?;
        }
        fs::rename(&self.dir, &self.target).map_err(file_err(&self.target))?;
        self.committed = true;
        Ok(self.target.clone())
    }

    /// Moves each staged file into the target directory, replacing files of
    /// the same name and leaving other files there alone.
    pub fn merge(mut self) -> Result<PathBuf> {
        fs::create_dir_all(&self.target).map_err(file_err(&self.target))?;
        let mut entries: Vec<_> = fs::read_dir(&self.dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let dest = self.target.join(entry.file_name());
            fs::rename(entry.path(), &dest).map_err(file_err(&dest))?;
        }
        fs::remove_dir(&self.dir).map_err(file_err(&self.dir))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(file_err(path))?))
}

/// Header object on the first line, then one object per row.
pub fn write_jsonl<H: Serialize, R: Serialize>(path: &Path, header: &H, rows: &[R]) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<H: DeserializeOwned, R: DeserializeOwned>(path: &Path) -> Result<(H, Vec<R>)> {
    let reader = BufReader::new(File::open(path).map_err(file_err(path))?);
    let mut lines = reader.lines();
    let first = lines.next().ok_or_else(|| data(format!("{}: empty file", path.display())))??;
    let header = serde_json::from_str(&first)?;
    let rows = lines
        .filter(|l| l.as_ref().map_or(true, |s| !s.is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// CSV with a provenance comment line, a header row and string fields.
pub fn write_csv(path: &Path, provenance: &Provenance, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(provenance.csv_comment().as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest string that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}
