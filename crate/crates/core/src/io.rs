//! CSV and TOML files: datasets with a metadata sidecar, cluster outputs,
//! error reports and predicted series.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::data::{Dataset, Split, TimeGrid, Trajectory};
use crate::emulators::{EvaluationReport, SeriesPrediction};
use crate::error::{Error, Result};
use crate::params::{ParameterVector, N_PARAMS, PARAM_NAMES};
use crate::synthgen::{GeneratorConfig, RegimeMix};

/// How a synthetic dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorMeta {
    pub seed: u64,
    pub noise_std: f64,
    pub levels: usize,
    pub perturbation: f64,
    pub mix: RegimeMix,
}

impl GeneratorMeta {
    pub fn new(cfg: &GeneratorConfig, mix: &RegimeMix) -> Self {
        Self {
            seed: cfg.seed,
            noise_std: cfg.noise_std,
            levels: cfg.levels,
            perturbation: cfg.perturbation,
            mix: *mix,
        }
    }
}

/// Sidecar written next to every dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub n_samples: usize,
    pub m: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl DatasetMeta {
    pub fn new(grid: &TimeGrid, n_samples: usize, generator: Option<GeneratorMeta>) -> Self {
        Self {
            n_samples,
            m: grid.len(),
            t_min: grid.first(),
            t_max: grid.last(),
            times: grid.times().to_vec(),
            generator,
            split: None,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        if self.times.len() != self.m {
            return Err(Error::Format(format!("metadata lists {} times but m = {}", self.times.len(), self.m)));
        }
        TimeGrid::from_times(self.times.clone())
    }
}

/// `data.csv` → `data.meta.toml`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

fn header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = PARAM_NAMES.iter().map(|s| s.to_string()).collect();
    for series in ["t", "ln_kd", "gamma1", "gamma2"] {
        h.extend((1..=m).map(|k| format!("{series}_{k}")));
    }
    h
}

/// Writes the dataset CSV (one row per sample: parameters, times, ln Kd,
/// gamma1, gamma2) and its TOML sidecar, which also records the split.
pub fn write_dataset(ds: &Dataset, path: &Path, meta: &DatasetMeta) -> Result<()> {
    let m = meta.m;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(m))?;
    for t in ds.samples() {
        if t.len() != m {
            return Err(Error::ShapeMismatch { expected: m, got: t.len() });
        }
        let mut rec: Vec<String> = t.params.to_array().iter().map(|v| v.to_string()).collect();
        for s in [t.grid.times(), &t.ln_kd, &t.gamma1, &t.gamma2] {
            rec.extend(s.iter().map(|v| v.to_string()));
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    let meta = DatasetMeta {
        n_samples: ds.len(),
        split: ds.split().cloned(),
        ..meta.clone()
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(meta_path(path), text)?;
    Ok(())
}

fn parse(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} value `{field}`")))
}

pub fn read_meta(csv: &Path) -> Result<DatasetMeta> {
    let path = meta_path(csv);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::MissingInput(format!("dataset metadata {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads a dataset written by [`write_dataset`], restoring the split
/// recorded in the sidecar.
pub fn read_dataset(path: &Path) -> Result<(Dataset, DatasetMeta)> {
    let meta = read_meta(path)?;
    let grid = meta.grid()?;
    let m = grid.len();
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != header(m) {
        return Err(Error::Format(format!("{} does not have the dataset header for m = {m}", path.display())));
    }
    let mut samples = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let nums: Vec<f64> = rec.iter().map(|f| parse(f, "dataset")).collect::<Result<_>>()?;
        let p = ParameterVector::from_slice(&nums[..N_PARAMS])?;
        p.validate()?;
        let series = &nums[N_PARAMS..];
        if series[..m] != *grid.times() {
            return Err(Error::Format(format!("row {row}: times differ from the metadata grid")));
        }
        samples.push(Trajectory::new(
            p,
            grid.clone(),
            series[m..2 * m].to_vec(),
            series[2 * m..3 * m].to_vec(),
            series[3 * m..].to_vec(),
        )?);
    }
    if samples.len() != meta.n_samples {
        return Err(Error::Format(format!(
            "{} has {} rows but metadata says {}",
            path.display(),
            samples.len(),
            meta.n_samples
        )));
    }
    let mut ds = Dataset::new(samples)?;
    if let Some(split) = &meta.split {
        ds = ds.with_split(split.clone())?;
    }
    Ok((ds, meta))
}

/// Parameter vectors, one per row, with the parameter names as header and
/// an optional `ln_kd0` column (initial value for dynamic formulations).
pub fn read_params(path: &Path) -> Result<(Vec<ParameterVector>, Option<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let cols: Vec<usize> = PARAM_NAMES
        .iter()
        .map(|name| find(name).ok_or_else(|| Error::Format(format!("{} has no `{name}` column", path.display()))))
        .collect::<Result<_>>()?;
    let init_col = find("ln_kd0");
    let mut params = Vec::new();
    let mut init = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: Vec<f64> = cols
            .iter()
            .zip(PARAM_NAMES)
            .map(|(&c, name)| parse(&rec[c], name))
            .collect::<Result<_>>()?;
        let p = ParameterVector::from_slice(&v)?;
        p.validate()?;
        params.push(p);
        if let Some(c) = init_col {
            init.push(parse(&rec[c], "ln_kd0")?);
        }
    }
    Ok((params, init_col.map(|_| init)))
}

pub fn write_params(path: &Path, params: &[ParameterVector]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PARAM_NAMES)?;
    for p in params {
        w.write_record(p.to_array().iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// `(t, gamma1, gamma2)` for one series.
pub type GammaSeries = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Predictor series in long form: columns `row, t, gamma1, gamma2`, grouped
/// by `row` (the index into the parameter file) with ascending `t`.
pub fn read_gamma(path: &Path) -> Result<Vec<GammaSeries>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::Format(format!("{}: expected columns row,t,gamma1,gamma2", path.display())));
        }
        let row: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad row index `{}`", &rec[0])))?;
        if row > out.len() {
            return Err(Error::Format(format!("row {row} appears before row {}", out.len())));
        }
        if row == out.len() {
            out.push(Default::default());
        }
        let entry = &mut out[row];
        entry.0.push(parse(&rec[1], "t")?);
        entry.1.push(parse(&rec[2], "gamma1")?);
        entry.2.push(parse(&rec[3], "gamma2")?);
    }
    Ok(out)
}

pub fn write_gamma(path: &Path, series: &[(&[f64], &[f64], &[f64])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "t", "gamma1", "gamma2"])?;
    for (row, (t, g1, g2)) in series.iter().enumerate() {
        for k in 0..t.len() {
            w.write_record([row.to_string(), t[k].to_string(), g1[k].to_string(), g2[k].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `sample, label` for every training member.
pub fn write_memberships<W: Write>(model: &ClusterModel, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sample", "label"])?;
    for (s, l) in model.members.iter().zip(&model.labels) {
        out.write_record([s.to_string(), l.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// One row per snapshot: `t, centroid_0, ..., centroid_{k-1}` (standardized).
pub fn write_centroids<W: Write>(model: &ClusterModel, grid: &TimeGrid, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["t".to_string()];
    head.extend((0..model.k).map(|c| format!("centroid_{c}")));
    out.write_record(head)?;
    for (k, t) in grid.times().iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(model.centroids.iter().map(|c| c[k].to_string()));
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-sample errors: one row per test sample and a final `average` row.
pub fn write_sample_errors<W: Write>(report: &EvaluationReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sample", "cluster", "eps", "coverage"])?;
    for s in &report.samples {
        out.write_record([
            s.sample.to_string(),
            s.prediction.cluster.to_string(),
            s.error.to_string(),
            s.coverage.to_string(),
        ])?;
    }
    out.write_record(["average", "", &report.average.to_string(), &report.coverage.to_string()])?;
    out.flush()?;
    Ok(())
}

/// One line of an error table: a method under one clustering setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub clustering: String,
    pub method: String,
    pub errors: Vec<f64>,
    pub average: f64,
    pub coverage: f64,
}

impl ReportRow {
    pub fn new(clustering: &str, method: &str, report: &EvaluationReport) -> Self {
        Self {
            clustering: clustering.into(),
            method: method.into(),
            errors: report.samples.iter().map(|s| s.error).collect(),
            average: report.average,
            coverage: report.coverage,
        }
    }
}

/// Columns `clustering, method, eps_1..eps_N, average`.
pub fn write_report<W: Write>(rows: &[ReportRow], w: W) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.errors.len());
    if rows.iter().any(|r| r.errors.len() != n) {
        return Err(Error::InvalidArgument("report rows differ in test-sample count".into()));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["clustering".to_string(), "method".to_string()];
    head.extend((1..=n).map(|i| format!("eps_{i}")));
    head.push("average".into());
    out.write_record(head)?;
    for r in rows {
        let mut rec = vec![r.clustering.clone(), r.method.clone()];
        rec.extend(r.errors.iter().map(|e| e.to_string()));
        rec.push(r.average.to_string());
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Fixed-width text rendering of an error table.
pub fn format_report(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    let n = rows.first().map_or(0, |r| r.errors.len());
    s.push_str(&format!("{:<12} {:<8}", "clustering", "method"));
    for i in 1..=n {
        s.push_str(&format!(" {:>8}", format!("eps_{i}")));
    }
    s.push_str(&format!(" {:>8} {:>8}\n", "average", "coverage"));
    for r in rows {
        s.push_str(&format!("{:<12} {:<8}", r.clustering, r.method));
        for e in &r.errors {
            s.push_str(&format!(" {e:>8.4}"));
        }
        s.push_str(&format!(" {:>8.4} {:>8.3}\n", r.average, r.coverage));
    }
    s
}

/// Long form: `row, k, t, mean, lo, hi`.
pub fn write_predictions<W: Write>(grid: &TimeGrid, preds: &[SeriesPrediction], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["row", "cluster", "k", "t", "mean", "lo", "hi"])?;
    for (row, p) in preds.iter().enumerate() {
        for (k, t) in grid.times().iter().enumerate() {
            out.write_record([
                row.to_string(),
                p.cluster.to_string(),
                k.to_string(),
                t.to_string(),
                p.mean[k].to_string(),
                p.lo[k].to_string(),
                p.hi[k].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
