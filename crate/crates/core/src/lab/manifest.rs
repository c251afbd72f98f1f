//! Result manifest and tidy plot data.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LabError, Result};

/// JSON has no NaN or infinity; those are written as null and read back as NaN.
mod nullable {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalar {
    pub name: String,
    #[serde(with = "nullable")]
    pub value: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunOutput {
    pub name: String,
    pub files: Vec<PathBuf>,
    pub scalars: Vec<Scalar>,
}

impl RunOutput {
    pub fn new(name: impl Into<String>) -> Self {
        RunOutput { name: name.into(), ..Default::default() }
    }

    pub fn scalar(&mut self, name: impl Into<String>, value: f64) {
        self.scalars.push(Scalar { name: name.into(), value });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: usize,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// One long-format row: experiment, frame, eps, the abscissa (r, t, step...)
/// and one measured quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub experiment: String,
    pub frame: String,
    pub eps: f64,
    pub var: String,
    #[serde(with = "nullable")]
    pub at: f64,
    pub quantity: String,
    #[serde(with = "nullable")]
    pub value: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResultManifest {
    pub experiment: String,
    pub frame: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub threads: usize,
    pub wall_time_s: f64,
    pub complete: bool,
    pub error: Option<String>,
    pub runs: Vec<RunOutput>,
    pub checks: Vec<Check>,
    pub plot: Vec<PlotRow>,
}

impl ResultManifest {
    /// All runs finished and every check passed.
    pub fn passed(&self) -> bool {
        self.complete && self.checks.iter().all(|c| c.pass)
    }

    /// Canonical text of every scalar, bit patterns included; equal digests
    /// mean bit-identical summaries.
    pub fn scalar_digest(&self) -> String {
        let mut s = String::new();
        for r in &self.runs {
            for x in &r.scalars {
                s.push_str(&format!("{}/{}={:016x}\n", r.name, x.name, x.value.to_bits()));
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| LabError::InvalidParameter(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::from(e).context(path.display().to_string()))?;
        serde_json::from_str(&text).map_err(|e| LabError::Parse { line: e.line(), column: e.column(), msg: e.to_string() })
    }
}

/// Minimal CSV writer; values are plain numbers or strings without commas.
pub struct Csv {
    w: std::io::BufWriter<std::fs::File>,
    pub path: PathBuf,
}

impl Csv {
    pub fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(w, "{}", header.join(","))?;
        Ok(Csv { w, path })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.w, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.w.flush()?;
        Ok(self.path)
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn point(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// Writes plot_data.csv (long format) and one wide file per experiment with
/// columns frame, eps, <abscissa>, <quantities...>.
pub fn emit_plot_data(manifest: &ResultManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    if manifest.runs.is_empty() || manifest.plot.is_empty() {
        return Err(LabError::ManifestIncomplete(format!("no plottable outputs in '{}' manifest", manifest.experiment)));
    }
    for r in &manifest.runs {
        for f in &r.files {
            if !f.exists() {
                return Err(LabError::ManifestIncomplete(format!("missing output {}", f.display())));
            }
        }
    }
    let mut files = Vec::new();
    let mut long = Csv::create(dir.join("plot_data.csv"), &["experiment", "frame", "eps", "var", "at", "quantity", "value"])?;
    for p in &manifest.plot {
        long.row(&[p.experiment.clone(), p.frame.clone(), num(p.eps), p.var.clone(), num(p.at), p.quantity.clone(), num(p.value)])?;
    }
    files.push(long.finish()?);

    let mut experiments: Vec<&str> = Vec::new();
    for p in &manifest.plot {
        if !experiments.contains(&p.experiment.as_str()) {
            experiments.push(&p.experiment);
        }
    }
    for e in experiments {
        let rows: Vec<&PlotRow> = manifest.plot.iter().filter(|p| p.experiment == e).collect();
        let var = rows[0].var.clone();
        let mut quantities: Vec<&str> = Vec::new();
        let mut keys: Vec<(String, u64, u64)> = Vec::new();
        for p in &rows {
            if !quantities.contains(&p.quantity.as_str()) {
                quantities.push(&p.quantity);
            }
            let k = (p.frame.clone(), p.eps.to_bits(), p.at.to_bits());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut header = vec!["frame", "eps", var.as_str()];
        header.extend(quantities.iter());
        let mut csv = Csv::create(dir.join(format!("plot_{e}.csv")), &header)?;
        for (frame, eps, at) in &keys {
            let mut fields = vec![frame.clone(), num(f64::from_bits(*eps)), num(f64::from_bits(*at))];
            for q in &quantities {
                let v = rows
                    .iter()
                    .find(|p| &p.frame == frame && p.eps.to_bits() == *eps && p.at.to_bits() == *at && p.quantity == *q)
                    .map_or(String::new(), |p| num(p.value));
                fields.push(v);
            }
            csv.row(&fields)?;
        }
        files.push(csv.finish()?);
    }
    Ok(files)
}
