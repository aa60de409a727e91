//! File formats and atomic writes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Lossless text form of a double: 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(|e| CliError::io(dir.display(), e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| CliError::io(path.display(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path.display(), e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Collects output files; each is written atomically and checksummed.
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), contents.as_bytes())?;
        self.files.push(OutputFile {
            path: name.to_string(),
            bytes: contents.len(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
        });
        Ok(())
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

pub fn timestamp(t: SystemTime) -> String {
    humantime::format_rfc3339_millis(t).to_string()
}

/// One row per level of the binned histogram.
pub struct Histogram<'a> {
    pub salaries: &'a [f64],
    /// `[class][level]`; integer counts print without a fraction.
    pub counts: HistogramCounts<'a>,
    pub density: &'a [f64],
    pub model_density: &'a [f64],
}

pub enum HistogramCounts<'a> {
    Integer(&'a [Vec<u64>]),
    Real(&'a [Vec<f64>]),
}

impl HistogramCounts<'_> {
    fn classes(&self) -> usize {
        match self {
            HistogramCounts::Integer(c) => c.len(),
            HistogramCounts::Real(c) => c.len(),
        }
    }

    fn cell(&self, j: usize, i: usize) -> String {
        match self {
            HistogramCounts::Integer(c) => c[j][i].to_string(),
            HistogramCounts::Real(c) => num(c[j][i]),
        }
    }
}

pub fn histogram_header(classes: usize) -> String {
    let mut h = String::from("level_index,salary_kusd");
    for j in 1..=classes {
        let _ = write!(h, ",count_class{j}");
    }
    h.push_str(",density_total,model_density_total");
    h
}

impl Histogram<'_> {
    pub fn to_csv(&self) -> String {
        let k = self.counts.classes();
        let mut out = histogram_header(k);
        out.push('\n');
        for (i, s) in self.salaries.iter().enumerate() {
            let _ = write!(out, "{i},{}", num(*s));
            for j in 0..k {
                let _ = write!(out, ",{}", self.counts.cell(j, i));
            }
            let _ = writeln!(out, ",{},{}", num(self.density[i]), num(self.model_density[i]));
        }
        out
    }
}

/// Salaries and total densities read back from a histogram CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramData {
    pub salaries: Vec<f64>,
    pub density: Vec<f64>,
}

pub fn read_histogram(path: &Path) -> Result<HistogramData, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let (cs, cd) = (column("salary_kusd")?, column("density_total")?);
    let mut data = HistogramData {
        salaries: Vec::new(),
        density: Vec::new(),
    };
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |c: usize| -> Result<f64, CliError> {
            rec.get(c)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(format!("row {}: unreadable number", row + 2)))
        };
        data.salaries.push(field(cs)?);
        data.density.push(field(cd)?);
    }
    if data.salaries.is_empty() {
        return Err(bad("no rows".into()));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0e-300, 123456.789, 0.0] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn header_is_exact() {
        assert_eq!(
            histogram_header(2),
            "level_index,salary_kusd,count_class1,count_class2,density_total,model_density_total"
        );
    }

    #[test]
    fn histogram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = Histogram {
            salaries: &[20.0, 50.0, 80.0],
            counts: HistogramCounts::Integer(&[vec![1, 2, 1]]),
            density: &[0.25, 0.5, 0.25],
            model_density: &[0.2, 0.6, 0.2],
        };
        let mut set = OutputSet::create(dir.path()).unwrap();
        set.write("h.csv", &h.to_csv()).unwrap();
        let back = read_histogram(&dir.path().join("h.csv")).unwrap();
        assert_eq!(back.salaries, vec![20.0, 50.0, 80.0]);
        assert_eq!(back.density, vec![0.25, 0.5, 0.25]);
        assert_eq!(set.files()[0].sha256.len(), 64);
        let only: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(only.len(), 1);
    }
}
