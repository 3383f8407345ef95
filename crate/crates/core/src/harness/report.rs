//! Machine-readable run reports: one JSON document per run plus CSV tables.
//!
//! Reports are deterministic for a fixed seed: no timestamps, fixed field
//! order, and shortest-roundtrip float formatting everywhere.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dichotomy::ContractionCertificate;
use crate::error::Result;
use crate::harness::config::Config;

/// One aggregated check: worst observed value against its bound.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub check: String,
    pub samples: usize,
    pub worst: f64,
    pub bound: f64,
    pub pass: bool,
    pub note: String,
}

impl Verdict {
    pub fn new(check: &str, samples: usize, worst: f64, bound: f64) -> Self {
        Self {
            check: check.into(),
            samples,
            worst,
            bound,
            pass: worst <= bound,
            note: String::new(),
        }
    }

    pub fn skipped(check: &str, note: &str) -> Self {
        Self {
            check: check.into(),
            samples: 0,
            worst: 0.0,
            bound: 0.0,
            pass: true,
            note: note.into(),
        }
    }

    pub fn with_note(mut self, note: &str) -> Self {
        self.note = note.into();
        self
    }
}

/// One conjugacy-identity residual with its tolerance provenance.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualRow {
    pub check: String,
    pub orbit: usize,
    pub n: usize,
    pub m: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub picard: f64,
    pub f_tail: f64,
    pub truncation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub m: usize,
    pub n: usize,
    pub upper: f64,
    pub tail_sum_from_n: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub q_bound: f64,
    pub product: f64,
    pub satisfied: bool,
    pub max_residual: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub seed: u64,
    pub pass: bool,
    pub certificate: Option<ContractionCertificate>,
    pub verdicts: Vec<Verdict>,
    pub residuals: Vec<ResidualRow>,
    pub decay: Vec<DecayRow>,
    pub sweep: Vec<SweepRow>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
    pub config: Config,
}

impl Report {
    pub fn new(command: &str, seed: u64, config: Config) -> Self {
        Self {
            command: command.into(),
            seed,
            pass: true,
            certificate: None,
            verdicts: Vec::new(),
            residuals: Vec::new(),
            decay: Vec::new(),
            sweep: Vec::new(),
            warnings: Vec::new(),
            files: Vec::new(),
            config,
        }
    }

    pub fn push_verdict(&mut self, v: Verdict) {
        self.pass &= v.pass;
        self.verdicts.push(v);
    }

    pub fn push_residual(&mut self, r: ResidualRow) {
        self.pass &= r.pass;
        self.residuals.push(r);
    }

    /// Writes `report.json` and all CSV tables under `out`, recording the
    /// emitted file names in the report itself.
    pub fn write(&mut self, out: &Path) -> Result<PathBuf> {
        let tables = out.join("tables");
        std::fs::create_dir_all(&tables)?;

        if !self.residuals.is_empty() {
            let mut csv =
                String::from("check,orbit,n,m,residual,tolerance,picard,f_tail,truncation,pass\n");
            for r in &self.residuals {
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.check,
                    r.orbit,
                    r.n,
                    r.m,
                    r.residual,
                    r.tolerance,
                    r.picard,
                    r.f_tail,
                    r.truncation,
                    r.pass
                )
                .expect("string write");
            }
            std::fs::write(tables.join("residuals.csv"), csv)?;
            self.files.push("tables/residuals.csv".into());
        }

        if !self.decay.is_empty() {
            let mut csv = String::from("m,n,upper,tail_sum_from_n\n");
            for r in &self.decay {
                writeln!(csv, "{},{},{},{}", r.m, r.n, r.upper, r.tail_sum_from_n)
                    .expect("string write");
            }
            std::fs::write(tables.join("decay.csv"), csv)?;
            self.files.push("tables/decay.csv".into());
        }

        if !self.sweep.is_empty() {
            let mut csv =
                String::from("parameter,value,q_bound,product,satisfied,max_residual,pass\n");
            for r in &self.sweep {
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    r.parameter,
                    r.value,
                    r.q_bound,
                    r.product,
                    r.satisfied,
                    r.max_residual.map_or(String::new(), |x| x.to_string()),
                    r.pass
                )
                .expect("string write");
            }
            std::fs::write(tables.join("sweep.csv"), csv)?;
            self.files.push("tables/sweep.csv".into());
        }

        let path = out.join("report.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json)?;
        Ok(path)
    }

    /// One line per verdict on stdout (suppressed by `--quiet`).
    pub fn print_summary(&self, quiet: bool) {
        if quiet {
            return;
        }
        if let Some(cert) = &self.certificate {
            println!(
                "certificate: q_bound={} K(1)={} product={} satisfied={}",
                cert.q_bound, cert.k1, cert.product, cert.satisfied
            );
        }
        for v in &self.verdicts {
            let status = if v.pass { "PASS" } else { "FAIL" };
            if v.note.is_empty() {
                println!(
                    "{status} {} (samples={}, worst={}, bound={})",
                    v.check, v.samples, v.worst, v.bound
                );
            } else {
                println!("{status} {} ({})", v.check, v.note);
            }
        }
        let failed_rows = self.residuals.iter().filter(|r| !r.pass).count();
        if !self.residuals.is_empty() {
            println!(
                "residuals: {} rows, {} failing",
                self.residuals.len(),
                failed_rows
            );
        }
        for w in &self.warnings {
            println!("warning: {w}");
        }
        println!(
            "{}: {}",
            self.command,
            if self.pass { "PASS" } else { "FAIL" }
        );
    }
}
