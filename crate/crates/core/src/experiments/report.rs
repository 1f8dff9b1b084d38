use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stats::Estimate;

/// One checked claim: passes when `measured <= threshold` (or `>=` for
/// lower bounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    /// `"<="` or `">="`
    pub relation: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Criterion {
    pub fn at_most(name: &str, measured: f64, threshold: f64) -> Self {
        Criterion {
            name: name.into(),
            measured,
            threshold,
            relation: "<=".into(),
            passed: measured <= threshold,
            detail: String::new(),
        }
    }

    pub fn at_least(name: &str, measured: f64, threshold: f64) -> Self {
        Criterion {
            name: name.into(),
            measured,
            threshold,
            relation: ">=".into(),
            passed: measured >= threshold,
            detail: String::new(),
        }
    }

    /// `|estimate - target| <= k * stderr`.
    pub fn within_stderr(name: &str, estimate: &Estimate, target: f64, k: f64) -> Self {
        Criterion::at_most(name, (estimate.mean - target).abs(), k * estimate.stderr)
            .with_detail(format!("estimate {} ± {} vs {}", estimate.mean, estimate.stderr, target))
    }

    /// `|a - b| <= k * sqrt(se_a^2 + se_b^2) + allowance`.
    pub fn agree(name: &str, a: &Estimate, b: &Estimate, k: f64, allowance: f64) -> Self {
        Criterion::at_most(
            name,
            (a.mean - b.mean).abs(),
            k * a.stderr.hypot(b.stderr) + allowance,
        )
        .with_detail(format!("{} ± {} vs {} ± {}", a.mean, a.stderr, b.mean, b.stderr))
    }

    /// `|measured / target - 1| <= tol`.
    pub fn relative(name: &str, measured: f64, target: f64, tol: f64) -> Self {
        Criterion::at_most(name, (measured / target - 1.0).abs(), tol)
            .with_detail(format!("{measured} vs {target}"))
    }

    pub fn with_detail(mut self, detail: String) -> Self {
        self.detail = detail;
        self
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {:.6e} {} {:.6e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.relation,
            self.threshold
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// A named table of columns written as CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataTable {
    pub file: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DataTable {
    pub fn new(file: &str, columns: &[&str]) -> Self {
        DataTable {
            file: file.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub seed: u64,
    pub n: usize,
    pub refine: usize,
    pub n_paths: usize,
    pub metrics: BTreeMap<String, f64>,
    pub criteria: Vec<Criterion>,
    pub passed: bool,
    pub files: Vec<String>,
    #[serde(skip)]
    pub(crate) data: Vec<DataTable>,
}

impl Report {
    pub(crate) fn new(experiment: &str, seed: u64, n: usize, refine: usize, n_paths: usize) -> Self {
        Report {
            experiment: experiment.into(),
            seed,
            n,
            refine,
            n_paths,
            metrics: BTreeMap::new(),
            criteria: Vec::new(),
            passed: true,
            files: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn estimate(&mut self, name: &str, e: &Estimate) {
        self.metric(name, e.mean);
        self.metric(&format!("{name}_stderr"), e.stderr);
    }

    pub fn check(&mut self, c: Criterion) {
        self.passed &= c.passed;
        self.criteria.push(c);
    }

    pub(crate) fn table(&mut self, t: DataTable) {
        self.files.push(t.file.clone());
        self.data.push(t);
    }

    pub fn data(&self) -> &[DataTable] {
        &self.data
    }

    pub fn failures(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter().filter(|c| !c.passed)
    }

    pub fn write_data(&mut self, dir: &Path) -> Result<()> {
        for t in &self.data {
            let file = std::fs::File::create(dir.join(&t.file))?;
            t.write_csv(std::io::BufWriter::new(file))?;
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text)?;
        Ok(())
    }
}
