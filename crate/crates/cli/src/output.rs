//! Output files: a leading `# config_hash=... master_seed=...` line, then a
//! CSV header and rows (comma-separated, LF endings). Files are written to a
//! temporary sibling and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct OutputDir {
    root: PathBuf,
    comment: String,
}

impl OutputDir {
    pub fn create(root: &Path, comment: String) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), comment })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Write `header` and `rows` under the comment line.
    pub fn write_csv<I, S>(&self, rel: &str, header: &str, rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut text = format!("{}\n{header}\n", self.comment);
        for row in rows {
            text.push_str(row.as_ref());
            text.push('\n');
        }
        self.write_raw(rel, &text)
    }

    /// Write `body` (already containing its header row) under the comment line.
    pub fn write_csv_body(&self, rel: &str, body: &str) -> Result<PathBuf> {
        self.write_raw(rel, &format!("{}\n{body}", self.comment))
    }

    pub fn write_raw(&self, rel: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

/// Shortest round-trip decimal form; `NaN`, `inf` and `-inf` spelled out.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:e}")
    }
}

/// Strip commas and newlines so free text fits in one CSV field.
pub fn field(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_round_trips() {
        for v in [0.0, 1.0, -2.5, 1e-300, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(f64::NAN), "nan");
        assert_eq!(num(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn files_start_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path(), "# config_hash=ab master_seed=1".into()).unwrap();
        let p = out.write_csv("sub/x.csv", "a,b", ["1,2", "3,4"]).unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "# config_hash=ab master_seed=1\na,b\n1,2\n3,4\n");
        assert_eq!(fs::read_dir(dir.path().join("sub")).unwrap().count(), 1);
    }
}
