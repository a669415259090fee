//! Longitudinal CSV input, result files and number formatting.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use coxkl::{Dataset, Interval, MarkedRealization};
use serde::{Deserialize, Serialize};

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Observed data on the original time scale, with subject identifiers in
/// order of first appearance (or manifest order).
#[derive(Debug, Clone)]
pub struct LongitudinalData {
    pub ids: Vec<String>,
    /// Points per subject on the original time scale.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct Row {
    subject_id: String,
    x: String,
    y: String,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    subject_id: String,
}

impl LongitudinalData {
    /// Reads `subject_id,x,y` rows; `manifest` optionally lists every
    /// subject, including those without rows.
    pub fn read(path: &Path, manifest: Option<&Path>) -> Result<Self> {
        Self::read_with(path, manifest, None)
    }

    /// Like [`read`](Self::read), with `known` standing in for the
    /// manifest when none is given.
    pub fn read_with(path: &Path, manifest: Option<&Path>, known: Option<&[String]>) -> Result<Self> {
        let mut ids: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut declared = false;
        if let (None, Some(known)) = (manifest, known) {
            for id in known {
                index.insert(id.clone(), ids.len());
                ids.push(id.clone());
            }
            declared = true;
        }
        if let Some(m) = manifest {
            let mut rdr = csv::Reader::from_path(m).with_context(|| format!("opening {}", m.display()))?;
            for (i, rec) in rdr.deserialize::<ManifestRow>().enumerate() {
                let rec = rec.with_context(|| format!("{}: line {}", m.display(), i + 2))?;
                if index.insert(rec.subject_id.clone(), ids.len()).is_some() {
                    bail!("{}: line {}: duplicate subject {}", m.display(), i + 2, rec.subject_id);
                }
                ids.push(rec.subject_id);
            }
            declared = true;
        }
        let mut x: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
        let mut y: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let rec = rec.with_context(|| format!("{}: line {line}", path.display()))?;
            let parse = |s: &str, what: &str| -> Result<f64> {
                let v: f64 = s.trim().parse().with_context(|| format!("{}: line {line}: invalid {what} {s:?}", path.display()))?;
                if !v.is_finite() {
                    bail!("{}: line {line}: {what} is not finite", path.display());
                }
                Ok(v)
            };
            let (xv, yv) = (parse(&rec.x, "x")?, parse(&rec.y, "y")?);
            let k = match index.get(&rec.subject_id) {
                Some(&k) => k,
                None if declared => bail!("{}: line {line}: subject {} is not in the manifest", path.display(), rec.subject_id),
                None => {
                    index.insert(rec.subject_id.clone(), ids.len());
                    ids.push(rec.subject_id);
                    x.push(Vec::new());
                    y.push(Vec::new());
                    ids.len() - 1
                }
            };
            x[k].push(xv);
            y[k].push(yv);
        }
        if ids.is_empty() {
            bail!("{}: no subjects", path.display());
        }
        Ok(Self { ids, x, y })
    }

    /// Maps the points onto `[0, 1]` and checks them against `domain`.
    pub fn normalized(&self, domain: Interval) -> Result<Dataset> {
        let mut out = Vec::with_capacity(self.ids.len());
        for (k, id) in self.ids.iter().enumerate() {
            let mut xs = Vec::with_capacity(self.x[k].len());
            for &t in &self.x[k] {
                if !domain.contains(t) {
                    bail!("subject {id}: x = {t} lies outside the domain [{}, {}]", domain.lo, domain.hi);
                }
                xs.push(to_unit(domain, t));
            }
            out.push(MarkedRealization::new(xs, self.y[k].clone()).with_context(|| format!("subject {id}"))?);
        }
        Ok(Dataset::new(out, Interval::unit())?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut data = String::from("subject_id,x,y\n");
        let mut manifest = String::from("subject_id\n");
        for (k, id) in self.ids.iter().enumerate() {
            manifest.push_str(id);
            manifest.push('\n');
            for (t, v) in self.x[k].iter().zip(&self.y[k]) {
                data.push_str(&format!("{id},{},{}\n", num(*t), num(*v)));
            }
        }
        write(&dir.join("data.csv"), &data)?;
        write(&dir.join("subjects.csv"), &manifest)
    }
}

pub fn to_unit(domain: Interval, t: f64) -> f64 {
    ((t - domain.lo) / domain.length()).clamp(0.0, 1.0)
}

pub fn from_unit(domain: Interval, x: f64) -> f64 {
    domain.lo + x * domain.length()
}

/// Parses `lo,hi`.
pub fn parse_domain(s: &str) -> Result<Interval> {
    let v = parse_list(s)?;
    if v.len() != 2 {
        bail!("domain must be given as lo,hi");
    }
    Ok(Interval::new(v[0], v[1])?)
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("invalid number {p:?}")))
        .collect()
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("invalid count {p:?}")))
        .collect()
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

/// Writes a matrix with a leading label column.
pub fn matrix_csv(corner: &str, row_labels: &[String], col_labels: &[String], m: &nalgebra::DMatrix<f64>) -> String {
    let mut out = String::from(corner);
    for c in col_labels {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (i, r) in row_labels.iter().enumerate() {
        out.push_str(r);
        for j in 0..m.ncols() {
            out.push(',');
            out.push_str(&num(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn labels(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|k| format!("{prefix}_{k}")).collect()
}
