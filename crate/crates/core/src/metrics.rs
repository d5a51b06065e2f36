//! Per-iteration measurements and log-log rate fits.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::engine::{MetricSink, SchemeState};
use crate::environment::{Environment, LabeledData, Sample};
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 8] = [
    "t",
    "gap_sq",
    "consensus_sq_norm",
    "consensus_sq",
    "risk",
    "risk_se",
    "grad_norm_sq",
    "accuracy",
];

/// Measurements at one recorded iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRecord {
    pub t: u64,
    /// `‖avg(theta^t) - theta_PS‖^2`, when `theta_PS` is known.
    pub gap_sq: Option<f64>,
    /// `(1/n)‖Q^t‖_F^2`.
    pub consensus_sq_norm: f64,
    /// `‖Q^t‖_F^2`.
    pub consensus_sq: f64,
    /// `f(avg(theta^t); avg(theta^t))`.
    pub risk: Option<f64>,
    /// Standard error of `risk` (0 when computed exactly).
    pub risk_se: Option<f64>,
    /// `‖∇f(avg(theta^t); avg(theta^t))‖^2`.
    pub grad_norm_sq: Option<f64>,
    /// Mean shifted-test accuracy over agents.
    pub accuracy: Option<f64>,
}

impl MetricRecord {
    /// Value of the named CSV column.
    pub fn get(&self, metric: &str) -> Result<Option<f64>> {
        Ok(match metric {
            "t" => Some(self.t as f64),
            "gap_sq" => self.gap_sq,
            "consensus_sq_norm" => Some(self.consensus_sq_norm),
            "consensus_sq" => Some(self.consensus_sq),
            "risk" => self.risk,
            "risk_se" => self.risk_se,
            "grad_norm_sq" => self.grad_norm_sq,
            "accuracy" => self.accuracy,
            other => return Err(Error::Config(format!("unknown metric {other:?}"))),
        })
    }
}

/// The records of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<MetricRecord>,
    pub diverged_at: Option<u64>,
}

impl Trajectory {
    /// `(t, value)` pairs of one metric, skipping records where it is absent.
    pub fn series(&self, metric: &str) -> Result<Vec<(f64, f64)>> {
        series(&self.records, metric)
    }
}

pub fn series(records: &[MetricRecord], metric: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if let Some(v) = r.get(metric)? {
            out.push((r.t as f64, v));
        }
    }
    Ok(out)
}

/// `(‖Q‖_F^2, ‖Q‖_F^2 / n)` where `Q` holds each agent's deviation from the
/// network average.
pub fn consensus_error(state: &SchemeState) -> (f64, f64) {
    consensus_error_raw(state.raw(), state.n(), state.dim())
}

/// [`consensus_error`] for an `n x d` matrix with one agent per row.
pub fn consensus_error_matrix(theta: &DMatrix<f64>) -> (f64, f64) {
    let (n, d) = theta.shape();
    let mut raw = Vec::with_capacity(n * d);
    for i in 0..n {
        raw.extend(theta.row(i).iter());
    }
    consensus_error_raw(&raw, n, d)
}

fn consensus_error_raw(theta: &[f64], n: usize, d: usize) -> (f64, f64) {
    let mut total = 0.0;
    for k in 0..d {
        let mean = (0..n).map(|i| theta[i * d + k]).sum::<f64>() / n as f64;
        total += (0..n).map(|i| (theta[i * d + k] - mean).powi(2)).sum::<f64>();
    }
    (total, total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub standard_error: f64,
}

/// `f(theta; theta) = (1/n) Σ_i E_{Z ~ D_i(theta)} ℓ(theta; Z)` evaluated
/// exactly: in closed form for Gaussian populations, by a full pass over the
/// shifted dataset for strategic ones.
pub fn performative_risk_exact(env: &Environment, theta: &DVector<f64>) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..env.n() {
        total += env.frozen_risk(i, theta, theta)?;
    }
    Ok(total / env.n() as f64)
}

/// Monte Carlo `f(theta; theta)` with `mc` samples per agent.
pub fn performative_risk<R: RngCore + ?Sized>(
    env: &Environment,
    theta: &DVector<f64>,
    mc: usize,
    rng: &mut R,
) -> Result<RiskEstimate> {
    if mc == 0 {
        return Err(Error::InvalidSize("performative risk needs mc >= 1".into()));
    }
    let n = env.n() as f64;
    let mut value = 0.0;
    let mut var = 0.0;
    for i in 0..env.n() {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..mc {
            let z: Sample = env.sample(i, theta, rng)?;
            let l = env.loss().value(theta, &z)?;
            sum += l;
            sq += l * l;
        }
        let m = mc as f64;
        let mean = sum / m;
        let sample_var = if mc > 1 { (sq - m * mean * mean).max(0.0) / (m - 1.0) } else { 0.0 };
        value += mean / n;
        var += sample_var / m / (n * n);
    }
    Ok(RiskEstimate {
        value,
        standard_error: var.sqrt(),
    })
}

/// `‖(1/n) Σ_i ∇f_i(theta; theta)‖^2`, exact.
pub fn decoupled_grad_norm(env: &Environment, theta: &DVector<f64>) -> Result<f64> {
    Ok(env.frozen_mean_gradient(theta, theta)?.norm_squared())
}

/// Decisions to evaluate in [`shifted_test_accuracy`].
#[derive(Debug, Clone, Copy)]
pub enum Decisions<'a> {
    /// One decision used by every agent.
    Shared(&'a DVector<f64>),
    /// Agent `i` uses its own row of the state.
    PerAgent(&'a SchemeState),
}

/// Mean over agents of the accuracy of agent `i`'s classifier on the test
/// set shifted by `eps_i` times its decision. Predictions are positive when
/// the score is `>= 0`, i.e. ties at probability 1/2 count as positive.
pub fn shifted_test_accuracy(env: &Environment, decisions: Decisions<'_>, test: &LabeledData) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Config("shifted accuracy needs a non-empty test split".into()));
    }
    if test.dim() != env.dim() {
        return Err(Error::Shape {
            expected: env.dim(),
            got: test.dim(),
        });
    }
    let mut total = 0.0;
    for i in 0..env.n() {
        let theta: &[f64] = match decisions {
            Decisions::Shared(th) => th.as_slice(),
            Decisions::PerAgent(s) => s.agent(i),
        };
        let eps = env.population(i).eps();
        let mut correct = 0usize;
        for k in 0..test.len() {
            let score: f64 = test
                .features(k)
                .iter()
                .zip(theta)
                .map(|(x, t)| (x + eps * t) * t)
                .sum();
            let predicted = if score >= 0.0 { 1.0 } else { 0.0 };
            if predicted == test.label(k) {
                correct += 1;
            }
        }
        total += correct as f64 / test.len() as f64;
    }
    Ok(total / env.n() as f64)
}

/// Which recorded points a rate fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateWindow {
    /// Keep the last `fraction` of the recorded points...
    pub fraction: f64,
    /// ...that also have `t >= t_min`.
    pub t_min: f64,
}

impl Default for RateWindow {
    fn default() -> Self {
        Self {
            fraction: 0.5,
            t_min: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub metric: String,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub window: [f64; 2],
    pub points: usize,
}

/// Least squares of `log value` against `log t` over the tail window.
///
/// If the window holds non-positive values it is shrunk to start after the
/// last of them. Fewer than 10 usable points is an error.
pub fn rate_fit(metric: &str, series: &[(f64, f64)], window: RateWindow) -> Result<RateFit> {
    if !(window.fraction > 0.0 && window.fraction <= 1.0) {
        return Err(Error::Config(format!("window fraction must be in (0, 1], got {}", window.fraction)));
    }
    let start = series.len() - ((series.len() as f64 * window.fraction).ceil() as usize).min(series.len());
    let mut tail: Vec<(f64, f64)> = series[start..].iter().copied().filter(|p| p.0 >= window.t_min && p.0 > 0.0).collect();
    if let Some(last_bad) = tail.iter().rposition(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
        log::warn!(
            "{metric}: non-positive value at t={} inside the fit window; shrinking it",
            tail[last_bad].0
        );
        tail.drain(..=last_bad);
    }
    if tail.len() < 10 {
        return Err(Error::FitUnavailable(format!(
            "{metric}: {} usable points in window, need 10",
            tail.len()
        )));
    }
    let xs: Vec<f64> = tail.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::FitUnavailable(format!("{metric}: all points share one t")));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        metric: metric.to_string(),
        slope,
        intercept: my - slope * mx,
        r2,
        window: [tail[0].0, tail[tail.len() - 1].0],
        points: tail.len(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records as metric CSV.
pub fn write_metrics_csv<W: Write>(out: W, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
    w.write_record(CSV_HEADER).map_err(map)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            fmt_opt(r.gap_sq),
            r.consensus_sq_norm.to_string(),
            r.consensus_sq.to_string(),
            fmt_opt(r.risk),
            fmt_opt(r.risk_se),
            fmt_opt(r.grad_norm_sq),
            fmt_opt(r.accuracy),
        ])
        .map_err(map)?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn save_metrics_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics_csv(std::io::BufWriter::new(file), records)
}

/// Parses metric CSV.
pub fn read_metrics_csv<R: Read>(input: R, origin: &Path) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::Dataset {
            path: origin.into(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Dataset {
            path: origin.into(),
            line: 1,
            msg: format!("unexpected header {:?}", header),
        });
    }
    let mut out = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let line = k + 2;
        let bad = |msg: String| Error::Dataset {
            path: origin.into(),
            line,
            msg,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let opt = |j: usize| -> Result<Option<f64>> {
            let s = &row[j];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| bad(format!("column {}: {e}", CSV_HEADER[j])))
            }
        };
        let req = |j: usize| -> Result<f64> { opt(j)?.ok_or_else(|| bad(format!("column {} is empty", CSV_HEADER[j]))) };
        out.push(MetricRecord {
            t: row[0].parse().map_err(|e| bad(format!("column t: {e}")))?,
            gap_sq: opt(1)?,
            consensus_sq_norm: req(2)?,
            consensus_sq: req(3)?,
            risk: opt(4)?,
            risk_se: opt(5)?,
            grad_norm_sq: opt(6)?,
            accuracy: opt(7)?,
        });
    }
    Ok(out)
}

pub fn load_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_metrics_csv(std::io::BufReader::new(file), path)
}

/// Linearly interpolated percentile (`q` in `[0, 100]`) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Cross-seed summary of one metric at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t: u64,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
}

/// Mean and 5/50/95 percentiles across runs for every iteration recorded by
/// at least one run.
pub fn aggregate(runs: &[Vec<MetricRecord>], metrics: &[&str]) -> Result<Vec<AggregateRow>> {
    let mut ts: Vec<u64> = runs.iter().flat_map(|r| r.iter().map(|m| m.t)).collect();
    ts.sort_unstable();
    ts.dedup();
    let mut out = Vec::new();
    for &t in &ts {
        for &metric in metrics {
            let mut vals = Vec::new();
            for run in runs {
                if let Some(rec) = run.iter().find(|m| m.t == t) {
                    if let Some(v) = rec.get(metric)? {
                        vals.push(v);
                    }
                }
            }
            if vals.is_empty() {
                continue;
            }
            out.push(AggregateRow {
                t,
                metric: metric.to_string(),
                count: vals.len(),
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                p05: percentile(&vals, 5.0),
                p50: percentile(&vals, 50.0),
                p95: percentile(&vals, 95.0),
            });
        }
    }
    Ok(out)
}

/// Mean of a metric across runs at each iteration all runs recorded.
pub fn mean_series(runs: &[Vec<MetricRecord>], metric: &str) -> Result<Vec<(f64, f64)>> {
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    'outer: for (k, rec) in first.iter().enumerate() {
        let mut sum = 0.0;
        for run in runs {
            match run.get(k) {
                Some(r) if r.t == rec.t => match r.get(metric)? {
                    Some(v) => sum += v,
                    None => continue 'outer,
                },
                _ => continue 'outer,
            }
        }
        out.push((rec.t as f64, sum / runs.len() as f64));
    }
    Ok(out)
}

/// Which metrics a [`Recorder`] computes besides the consensus error.
#[derive(Debug, Clone, Default)]
pub struct RecorderOptions {
    pub theta_ps: Option<DVector<f64>>,
    pub risk: bool,
    pub grad_norm: bool,
    pub test: Option<Arc<LabeledData>>,
}

/// [`MetricSink`] producing a [`Trajectory`].
pub struct Recorder<'a> {
    env: &'a Environment,
    options: RecorderOptions,
    trajectory: Trajectory,
}

impl<'a> Recorder<'a> {
    pub fn new(env: &'a Environment, options: RecorderOptions) -> Self {
        Self {
            env,
            options,
            trajectory: Trajectory::default(),
        }
    }

    pub fn measure(&self, state: &SchemeState) -> Result<MetricRecord> {
        let avg = state.average();
        let (raw, norm) = consensus_error(state);
        let finite = avg.iter().all(|v| v.is_finite());
        let risk = if self.options.risk {
            Some(if finite { performative_risk_exact(self.env, &avg)? } else { f64::INFINITY })
        } else {
            None
        };
        let grad = if self.options.grad_norm {
            Some(if finite { decoupled_grad_norm(self.env, &avg)? } else { f64::INFINITY })
        } else {
            None
        };
        let accuracy = match &self.options.test {
            Some(test) => Some(shifted_test_accuracy(self.env, Decisions::PerAgent(state), test)?),
            None => None,
        };
        Ok(MetricRecord {
            t: state.t(),
            gap_sq: self.options.theta_ps.as_ref().map(|ps| (&avg - ps).norm_squared()),
            consensus_sq_norm: norm,
            consensus_sq: raw,
            risk,
            risk_se: risk.map(|_| 0.0),
            grad_norm_sq: grad,
            accuracy,
        })
    }

    pub fn finish(mut self, diverged_at: Option<u64>) -> Trajectory {
        self.trajectory.diverged_at = diverged_at;
        self.trajectory
    }
}

impl MetricSink for Recorder<'_> {
    fn record(&mut self, state: &SchemeState) -> Result<()> {
        let rec = self.measure(state)?;
        self.trajectory.records.push(rec);
        Ok(())
    }
}
