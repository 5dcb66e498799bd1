//! Command-line front end: sweeps, specific-layout curves, comparison reports
//! and figure presets, all emitted as CSV.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analytic::{
    delta_transfer_uniform, expected_source_error, expected_target_error_uniform, ptilde_beneficial_ranges,
    target_error_specific, ExtendedError,
};
use crate::error::{Error, Result};
use crate::model::{check_feasible, BetaSpec, ConfigFile, CoordinateLayout, ProblemConfig, RelationSpec};
use crate::montecarlo::{
    empirical_delta_transfer_with_threads, estimate_mean_risk, estimate_source_risk, EmpiricalEstimate, SweepPoint,
};

pub const DEFAULT_UNIFORM_TRIALS: usize = 250;
pub const DEFAULT_SPECIFIC_TRIALS: usize = 750;
pub const DEFAULT_DELTA_TRIALS: usize = 500;
pub const DEFAULT_DELTA_M: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Analytic,
    Mc,
    Both,
}

impl Mode {
    fn analytic(self) -> bool {
        matches!(self, Mode::Analytic | Mode::Both)
    }
    fn mc(self) -> bool {
        matches!(self, Mode::Mc | Mode::Both)
    }
}

/// What a sweep evaluates at each point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Quantity {
    /// Expected target error over uniform layouts.
    Target,
    /// Expected source error over uniform S.
    Source,
    /// ΔE_transfer; Monte Carlo uses the empirical per-parameter estimator.
    Delta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Knob {
    P,
    PTilde,
    T,
    SigmaEtaSq,
}

impl Knob {
    fn is_integer(self) -> bool {
        !matches!(self, Knob::SigmaEtaSq)
    }
}

impl FromStr for Knob {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(Knob::P),
            "p_tilde" | "ptilde" => Ok(Knob::PTilde),
            "t" => Ok(Knob::T),
            "sigma_eta_sq" => Ok(Knob::SigmaEtaSq),
            _ => Err(Error::InvalidArgument(format!("unknown knob '{s}' (p, p_tilde, t, sigma_eta_sq)"))),
        }
    }
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Knob::P => "p",
            Knob::PTilde => "p_tilde",
            Knob::T => "t",
            Knob::SigmaEtaSq => "sigma_eta_sq",
        })
    }
}

/// A swept knob and its values.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub knob: Knob,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn integers(knob: Knob, values: impl IntoIterator<Item = usize>) -> Self {
        Self { knob, values: values.into_iter().map(|v| v as f64).collect() }
    }
}

impl FromStr for Axis {
    type Err = Error;
    /// `knob=start:end[:step]` (inclusive) or `knob=v1,v2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, range) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("axis '{s}' must look like knob=start:end[:step]")))?;
        let knob: Knob = name.trim().parse()?;
        let values = parse_values(range.trim())?;
        if knob.is_integer() && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(Error::InvalidArgument(format!("{knob} takes non-negative integers")));
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument(format!("axis '{s}' is empty")));
        }
        Ok(Self { knob, values })
    }
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("not a number: '{s}'")))
}

fn parse_values(s: &str) -> Result<Vec<f64>> {
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let (start, end) = (parse_num(parts[0])?, parse_num(parts[1])?);
        let step = match parts.len() {
            2 => 1.0,
            3 => parse_num(parts[2])?,
            _ => return Err(Error::InvalidArgument(format!("bad range '{s}'"))),
        };
        if step.is_nan() || step <= 0.0 || end < start {
            return Err(Error::InvalidArgument(format!("range '{s}' must have start ≤ end and a positive step")));
        }
        // index-based so that float steps do not accumulate error
        let count = ((end - start) / step + 1e-9).floor() as usize;
        Ok((0..=count).map(|i| start + i as f64 * step).collect())
    } else {
        s.split(',').map(parse_num).collect()
    }
}

/// Values for the knobs that are not swept. `None` means: p̃ = d, p = 0,
/// t = 0, σ_η² from the configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Fixed {
    pub p_tilde: Option<usize>,
    pub p: Option<usize>,
    pub t: Option<usize>,
    pub sigma_eta_sq: Option<f64>,
}

impl Fixed {
    fn set(&mut self, knob: Knob, value: f64) {
        match knob {
            Knob::P => self.p = Some(value as usize),
            Knob::PTilde => self.p_tilde = Some(value as usize),
            Knob::T => self.t = Some(value as usize),
            Knob::SigmaEtaSq => self.sigma_eta_sq = Some(value),
        }
    }

    fn parse_into(&mut self, s: &str) -> Result<()> {
        let axis: Axis = s.parse()?;
        if axis.values.len() != 1 {
            return Err(Error::InvalidArgument(format!("--fix '{s}' must give a single value")));
        }
        self.set(axis.knob, axis.values[0]);
        Ok(())
    }
}

/// A 1-D or 2-D sweep over uniform-layout quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub mode: Mode,
    pub quantity: Quantity,
    pub axis1: Axis,
    pub axis2: Option<Axis>,
    pub fixed: Fixed,
    pub trials: usize,
    pub master_seed: u64,
    pub threads: usize,
    /// Transferred parameters per trial of the empirical ΔE estimator.
    pub m: usize,
}

impl SweepSpec {
    pub fn curve(axis: Axis, fixed: Fixed) -> Self {
        Self {
            mode: Mode::Analytic,
            quantity: Quantity::Target,
            axis1: axis,
            axis2: None,
            fixed,
            trials: DEFAULT_UNIFORM_TRIALS,
            master_seed: 0,
            threads: 0,
            m: DEFAULT_DELTA_M,
        }
    }

    pub fn plane(axis1: Axis, axis2: Axis, fixed: Fixed) -> Self {
        Self { axis2: Some(axis2), ..Self::curve(axis1, fixed) }
    }

    fn validate(&self) -> Result<()> {
        if let Some(a2) = &self.axis2 {
            if a2.knob == self.axis1.knob {
                return Err(Error::InvalidArgument("the two axes must differ".into()));
            }
        }
        if self.quantity != Quantity::Target {
            for a in std::iter::once(&self.axis1).chain(&self.axis2) {
                if matches!(a.knob, Knob::P | Knob::T) {
                    return Err(Error::InvalidArgument(format!(
                        "the {:?} quantity does not depend on {}",
                        self.quantity, a.knob
                    )));
                }
            }
        }
        if self.mode.mc() && self.trials < 2 {
            return Err(Error::InvalidArgument("Monte Carlo needs at least 2 trials".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Infeasible (p̃, p, t) combination; no value.
    Eliminated,
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub id: u64,
    pub p_tilde: Option<usize>,
    pub p: Option<usize>,
    pub t: Option<usize>,
    pub sigma_eta_sq: f64,
    pub status: Status,
    pub analytic: Option<ExtendedError>,
    pub mc: Option<EmpiricalEstimate>,
}

/// Rows plus whether the status column is emitted (planes only).
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub rows: Vec<Row>,
    pub with_status: bool,
}

const HEADER: [&str; 10] =
    ["id", "p_tilde", "p", "t", "sigma_eta_sq", "analytic", "mc_mean", "mc_stderr", "trials", "seed"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Table {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header: Vec<&str> = HEADER.to_vec();
        if self.with_status {
            header.push("status");
        }
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.id.to_string(),
                opt(r.p_tilde),
                opt(r.p),
                opt(r.t),
                r.sigma_eta_sq.to_string(),
                opt(r.analytic),
                opt(r.mc.map(|m| m.mean)),
                opt(r.mc.map(|m| m.stderr)),
                opt(r.mc.map(|m| m.trials)),
                opt(r.mc.map(|m| m.master_seed)),
            ];
            if self.with_status {
                rec.push(match r.status {
                    Status::Ok => "ok".into(),
                    Status::Eliminated => "eliminated".into(),
                });
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }
}

fn point_config(config: &ProblemConfig, sigma: Option<f64>) -> Result<ProblemConfig> {
    match sigma {
        Some(s) if s != config.sigma_eta_sq() => config.with_sigma_eta_sq(s),
        _ => Ok(config.clone()),
    }
}

fn evaluate_point(config: &ProblemConfig, spec: &SweepSpec, id: u64, fixed: Fixed, keep_eliminated: bool) -> Result<Option<Row>> {
    let d = config.d();
    let cfg = point_config(config, fixed.sigma_eta_sq)?;
    let p_tilde = fixed.p_tilde.unwrap_or(d);
    let mut row = Row {
        id,
        p_tilde: Some(p_tilde),
        p: None,
        t: None,
        sigma_eta_sq: cfg.sigma_eta_sq(),
        status: Status::Ok,
        analytic: None,
        mc: None,
    };
    match spec.quantity {
        Quantity::Target => {
            let (p, t) = (fixed.p.unwrap_or(0), fixed.t.unwrap_or(0));
            row.p = Some(p);
            row.t = Some(t);
            if check_feasible(d, p_tilde, p, t).is_err() {
                return Ok(keep_eliminated.then_some(Row { status: Status::Eliminated, ..row }));
            }
            if spec.mode.analytic() {
                row.analytic = Some(expected_target_error_uniform(&cfg, p_tilde, p, t)?);
            }
            if spec.mode.mc() {
                let point = SweepPoint::uniform(id, p_tilde, p, t);
                row.mc = Some(estimate_mean_risk(&cfg, &point, spec.trials, spec.master_seed, spec.threads)?);
            }
        }
        Quantity::Source => {
            if p_tilde == 0 || p_tilde > d {
                return Ok(keep_eliminated.then_some(Row { status: Status::Eliminated, ..row }));
            }
            if spec.mode.analytic() {
                row.analytic = Some(expected_source_error(&cfg, p_tilde)?);
            }
            if spec.mode.mc() {
                row.mc = Some(estimate_source_risk(&cfg, p_tilde, spec.trials, spec.master_seed ^ id, spec.threads)?);
            }
        }
        Quantity::Delta => {
            if p_tilde == 0 || p_tilde > d {
                return Ok(keep_eliminated.then_some(Row { status: Status::Eliminated, ..row }));
            }
            if spec.mode.analytic() {
                row.analytic = Some(delta_transfer_uniform(&cfg, p_tilde)?);
            }
            if spec.mode.mc() && p_tilde >= spec.m {
                let est = empirical_delta_transfer_with_threads(
                    &cfg,
                    p_tilde,
                    spec.m,
                    spec.trials,
                    spec.master_seed ^ id,
                    spec.threads,
                )?;
                // The estimator targets ΔE·d/‖β‖²; report it on the ΔE scale.
                let scale = cfg.beta_norm_sq() / d as f64;
                row.mc = Some(EmpiricalEstimate { mean: est.mean * scale, stderr: est.stderr * scale, ..est });
            }
        }
    }
    Ok(Some(row))
}

/// One row per feasible point of a 1-D sweep; infeasible points are skipped.
pub fn run_curve(config: &ProblemConfig, spec: &SweepSpec) -> Result<Table> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (i, &v) in spec.axis1.values.iter().enumerate() {
        let mut fixed = spec.fixed;
        fixed.set(spec.axis1.knob, v);
        if let Some(row) = evaluate_point(config, spec, i as u64, fixed, false)? {
            rows.push(row);
        }
    }
    Ok(Table { rows, with_status: false })
}

/// Long-format 2-D sweep; infeasible cells are kept with status "eliminated".
pub fn run_plane(config: &ProblemConfig, spec: &SweepSpec) -> Result<Table> {
    spec.validate()?;
    let axis2 = spec.axis2.as_ref().ok_or_else(|| Error::InvalidArgument("a plane needs two axes".into()))?;
    let mut rows = Vec::new();
    let mut id = 0u64;
    for &v1 in &spec.axis1.values {
        for &v2 in &axis2.values {
            let mut fixed = spec.fixed;
            fixed.set(spec.axis1.knob, v1);
            fixed.set(axis2.knob, v2);
            rows.extend(evaluate_point(config, spec, id, fixed, true)?);
            id += 1;
        }
    }
    Ok(Table { rows, with_status: true })
}

/// How F grows with p for a fixed S and T: F(p) is the first p entries of `order`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LayoutScript {
    pub s: Vec<usize>,
    pub t: Vec<usize>,
    pub order: Vec<usize>,
}

impl LayoutScript {
    /// F grows by ascending index over [d] \ T.
    pub fn ascending(d: usize, s: Vec<usize>, t: Vec<usize>) -> Self {
        let order = (1..=d).filter(|c| !t.contains(c)).collect();
        Self { s, t, order }
    }

    /// S = [d] and t evenly spaced transferred coordinates round(k·d/t), k = 1..t.
    pub fn evenly_spaced(d: usize, t: usize) -> Self {
        let tset: Vec<usize> = (1..=t).map(|k| ((k * d) as f64 / t as f64).round() as usize).collect();
        Self::ascending(d, (1..=d).collect(), tset)
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            s: Vec<usize>,
            t: Vec<usize>,
            order: Option<Vec<usize>>,
            d: Option<usize>,
        }
        let raw: Raw = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(match raw.order {
            Some(order) => Self { s: raw.s, t: raw.t, order },
            None => {
                let d = raw
                    .d
                    .ok_or_else(|| Error::InvalidArgument("layout script needs 'order' or 'd'".into()))?;
                Self::ascending(d, raw.s, raw.t)
            }
        })
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let mut seen = vec![false; d + 1];
        for &c in &self.order {
            if c == 0 || c > d {
                return Err(Error::InvalidLayout(format!("script coordinate {c} outside [1, {d}]")));
            }
            if seen[c] {
                return Err(Error::InvalidLayout(format!("script repeats coordinate {c}")));
            }
            if self.t.contains(&c) {
                return Err(Error::InvalidLayout(format!("script coordinate {c} is also transferred")));
            }
            seen[c] = true;
        }
        self.layout(d, 0).map(|_| ())
    }

    pub fn max_p(&self) -> usize {
        self.order.len()
    }

    pub fn layout(&self, d: usize, p: usize) -> Result<CoordinateLayout> {
        if p > self.order.len() {
            return Err(Error::InvalidLayout(format!("script has only {} coordinates, asked for p = {p}", self.order.len())));
        }
        CoordinateLayout::from_sets(d, self.s.clone(), self.order[..p].to_vec(), self.t.clone())
    }
}

/// Settings for a specific-layout curve.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecificSpec {
    pub mode: Mode,
    /// `None`: every p the script allows.
    pub p_values: Option<Vec<usize>>,
    pub trials: usize,
    pub master_seed: u64,
    pub threads: usize,
    /// Added to every point id, so several curves can share a seed without sharing streams.
    pub id_offset: u64,
}

impl Default for SpecificSpec {
    fn default() -> Self {
        Self { mode: Mode::Analytic, p_values: None, trials: DEFAULT_SPECIFIC_TRIALS, master_seed: 0, threads: 0, id_offset: 0 }
    }
}

pub fn run_specific(config: &ProblemConfig, script: &LayoutScript, spec: &SpecificSpec) -> Result<Table> {
    let d = config.d();
    script.validate(d)?;
    let ps = spec.p_values.clone().unwrap_or_else(|| (0..=script.max_p()).collect());
    let mut rows = Vec::new();
    for (i, &p) in ps.iter().enumerate() {
        let layout = script.layout(d, p)?;
        let id = spec.id_offset + i as u64;
        let analytic = if spec.mode.analytic() { Some(target_error_specific(config, &layout)?) } else { None };
        let mc = if spec.mode.mc() {
            let point = SweepPoint::specific(id, layout.clone());
            Some(estimate_mean_risk(config, &point, spec.trials, spec.master_seed, spec.threads)?)
        } else {
            None
        };
        rows.push(Row {
            id,
            p_tilde: Some(layout.p_tilde()),
            p: Some(p),
            t: Some(layout.t_count()),
            sigma_eta_sq: config.sigma_eta_sq(),
            status: Status::Ok,
            analytic,
            mc,
        });
    }
    Ok(Table { rows, with_status: false })
}

/// Agreement between analytic values and Monte Carlo means.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    /// (row id, z-score) for every row with a finite analytic value and an MC estimate.
    pub z_scores: Vec<(u64, f64)>,
    pub max_abs_z: f64,
    pub fraction_within: f64,
    pub threshold: f64,
}

impl CompareReport {
    /// At least one comparable point and ≥ 95% of them within 3σ.
    pub fn passed(&self) -> bool {
        !self.z_scores.is_empty() && self.fraction_within >= 0.95
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "id,z")?;
        for (id, z) in &self.z_scores {
            writeln!(f, "{id},{z:.4}")?;
        }
        writeln!(f, "points compared: {}", self.z_scores.len())?;
        writeln!(f, "max |z|: {:.4}", self.max_abs_z)?;
        writeln!(f, "fraction within {}σ: {:.4}", self.threshold, self.fraction_within)?;
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn z_of(analytic: f64, mean: f64, stderr: f64) -> f64 {
    EmpiricalEstimate { mean, stderr, trials: 0, master_seed: 0 }.z_score(analytic)
}

/// z = (mc_mean − analytic)/mc_stderr per comparable row.
pub fn compare_report(rows: &[Row]) -> CompareReport {
    let pairs: Vec<(u64, f64, f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.id, r.analytic?.value()?, r.mc?.mean, r.mc?.stderr)))
        .collect();
    compare_values(&pairs)
}

fn compare_values(pairs: &[(u64, f64, f64, f64)]) -> CompareReport {
    let threshold = 3.0;
    let z_scores: Vec<(u64, f64)> = pairs.iter().map(|&(id, a, m, s)| (id, z_of(a, m, s))).collect();
    let max_abs_z = z_scores.iter().map(|(_, z)| z.abs()).fold(0.0, f64::max);
    let within = z_scores.iter().filter(|(_, z)| z.abs() <= threshold).count();
    let fraction_within = if z_scores.is_empty() { 0.0 } else { within as f64 / z_scores.len() as f64 };
    CompareReport { z_scores, max_abs_z, fraction_within, threshold }
}

/// Builds a report from a CSV written by this tool.
pub fn compare_csv<R: std::io::Read>(reader: R) -> Result<CompareReport> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("CSV lacks a '{name}' column")))
    };
    let (ci, ca, cm, cs) = (col("id")?, col("analytic")?, col("mc_mean")?, col("mc_stderr")?);
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let (a, m, s) = (get(ca), get(cm), get(cs));
        if a.is_empty() || a == "inf" || m.is_empty() || s.is_empty() {
            continue;
        }
        let id = get(ci).parse::<u64>().map_err(|_| Error::InvalidArgument("bad id".into()))?;
        pairs.push((id, parse_num(&a)?, parse_num(&m)?, parse_num(&s)?));
    }
    Ok(compare_values(&pairs))
}

/// Beneficial p̃ intervals per σ_η², for plotting over a ΔE plane.
pub fn beneficial_overlay(config: &ProblemConfig, sigmas: &[f64]) -> Result<String> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    out.write_record(["sigma_eta_sq", "p_tilde_lo", "p_tilde_hi"])?;
    for &s in sigmas {
        let cfg = config.with_sigma_eta_sq(s)?;
        let r = ptilde_beneficial_ranges(&cfg)?;
        if r.is_empty() {
            out.write_record([s.to_string(), String::new(), String::new()])?;
        }
        for (lo, hi) in r.intervals {
            out.write_record([s.to_string(), lo.to_string(), hi.to_string()])?;
        }
    }
    Ok(String::from_utf8(out.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("UTF-8"))
}

// ---------------------------------------------------------------------------
// Presets

/// Names accepted by `preset`.
pub const PRESETS: [&str; 14] = [
    "fig1a", "fig1b", "fig1c", "fig1d", "fig1e", "fig1f", "fig1g", "fig1h", "fig2", "fig3a", "fig3b", "fig3c", "fig3d",
    "fig4",
];

const PRESET_T: [usize; 4] = [0, 16, 32, 48];

/// Output of a preset: one or more named CSV tables (the first is the main one).
pub struct PresetOutput {
    pub parts: Vec<(String, String)>,
}

fn reference_with(beta: BetaSpec, relation: RelationSpec, sigma_eta_sq: f64) -> Result<ProblemConfig> {
    ConfigFile { beta, relation, sigma_eta_sq, ..ConfigFile::default() }.build()
}

fn overall_average(d: usize) -> RelationSpec {
    RelationSpec::Dense { matrix: vec![vec![1.0 / d as f64; d]; d] }
}

/// Problem parameters and sweeps behind each figure.
pub fn run_preset(name: &str, mode: Mode, trials: Option<usize>, master_seed: u64, threads: usize) -> Result<PresetOutput> {
    let identity = RelationSpec::IdentityScale { c: 1.0 };
    let la = |k| RelationSpec::LocalAverage { k };
    let d = 80;
    match name {
        "fig1a" | "fig1b" | "fig1c" | "fig1d" | "fig1e" | "fig1f" | "fig1g" | "fig1h" => {
            let (relation, sigma) = match name {
                "fig1a" => (identity, 0.0),
                "fig1b" => (identity, 0.5),
                "fig1c" => (identity, 1.0),
                "fig1d" => (identity, 2.0),
                "fig1e" => (la(3), 0.0),
                "fig1f" => (la(15), 0.0),
                "fig1g" => (la(27), 0.0),
                _ => (overall_average(d), 0.0),
            };
            let cfg = reference_with(BetaSpec::Linear, relation, sigma)?;
            let mut rows = Vec::new();
            for t in PRESET_T {
                let mut spec = SweepSpec::curve(
                    Axis::integers(Knob::P, 0..=d - t),
                    Fixed { p_tilde: Some(d), t: Some(t), ..Fixed::default() },
                );
                spec.mode = mode;
                spec.trials = trials.unwrap_or(DEFAULT_UNIFORM_TRIALS);
                spec.master_seed = master_seed;
                spec.threads = threads;
                let offset = rows.len() as u64;
                rows.extend(run_curve(&cfg, &spec)?.rows.into_iter().map(|r| Row { id: r.id + offset, ..r }));
            }
            Ok(PresetOutput { parts: vec![(String::new(), Table { rows, with_status: false }.to_csv_string()?)] })
        }
        "fig2" => {
            let cfg = reference_with(BetaSpec::Linear, identity, 0.5)?;
            let mut rows = Vec::new();
            for t in PRESET_T {
                let mut spec = SweepSpec::plane(
                    Axis::integers(Knob::PTilde, 1..=d),
                    Axis::integers(Knob::P, 0..=d),
                    Fixed { t: Some(t), ..Fixed::default() },
                );
                spec.mode = mode;
                spec.trials = trials.unwrap_or(DEFAULT_UNIFORM_TRIALS);
                spec.master_seed = master_seed;
                spec.threads = threads;
                let offset = rows.len() as u64;
                rows.extend(run_plane(&cfg, &spec)?.rows.into_iter().map(|r| Row { id: r.id + offset, ..r }));
            }
            Ok(PresetOutput { parts: vec![(String::new(), Table { rows, with_status: true }.to_csv_string()?)] })
        }
        "fig3a" | "fig3b" | "fig3c" | "fig3d" => {
            let relation = match name {
                "fig3a" => la(3),
                "fig3b" => la(15),
                "fig3c" => la(59),
                _ => RelationSpec::DiscreteDerivative,
            };
            let cfg = reference_with(BetaSpec::Piecewise { levels: None }, relation, 0.0)?;
            let sigma_axis = Axis { knob: Knob::SigmaEtaSq, values: parse_values("0:2:0.05")? };
            let sigmas = sigma_axis.values.clone();
            let mut spec = SweepSpec::plane(Axis::integers(Knob::PTilde, 1..=d), sigma_axis, Fixed::default());
            spec.quantity = Quantity::Delta;
            spec.mode = mode;
            spec.trials = trials.unwrap_or(DEFAULT_DELTA_TRIALS);
            spec.master_seed = master_seed;
            spec.threads = threads;
            let plane = run_plane(&cfg, &spec)?.to_csv_string()?;
            Ok(PresetOutput {
                parts: vec![(String::new(), plane), ("ranges".into(), beneficial_overlay(&cfg, &sigmas)?)],
            })
        }
        "fig4" => {
            let mut parts = Vec::new();
            let betas = [("linear", BetaSpec::Linear), ("sparse", BetaSpec::Sparse { frac: 0.25 })];
            let relations = [("identity", identity), ("local_average11", la(11)), ("derivative", RelationSpec::DiscreteDerivative)];
            for (bname, beta) in &betas {
                for (hname, rel) in &relations {
                    let cfg = reference_with(beta.clone(), rel.clone(), 0.5)?;
                    let mut rows = Vec::new();
                    for t in PRESET_T {
                        let script = LayoutScript::evenly_spaced(d, t);
                        let spec = SpecificSpec {
                            mode,
                            p_values: None,
                            trials: trials.unwrap_or(DEFAULT_SPECIFIC_TRIALS),
                            master_seed,
                            threads,
                            id_offset: rows.len() as u64,
                        };
                        rows.extend(run_specific(&cfg, &script, &spec)?.rows);
                    }
                    parts.push((format!("{bname}_{hname}"), Table { rows, with_status: false }.to_csv_string()?));
                }
            }
            Ok(PresetOutput { parts })
        }
        _ => Err(Error::InvalidArgument(format!("unknown preset '{name}'; known: {}", PRESETS.join(", ")))),
    }
}

// ---------------------------------------------------------------------------
// Argument parsing

#[derive(Debug, Parser)]
#[command(name = "ptransfer", version, about = "Parameter transfer between overparameterized linear regressions")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON problem configuration; flags below override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo trials per point (default 250; 750 for `specific`; 500 for ΔE).
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Mode::Analytic)]
    pub mode: Mode,
    /// Output CSV path; stdout if absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Debug, Args, Default)]
pub struct ConfigOverrides {
    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true)]
    pub n_src: Option<usize>,
    #[arg(long, global = true)]
    pub n_tgt: Option<usize>,
    #[arg(long, global = true)]
    pub sigma_xi_sq: Option<f64>,
    #[arg(long, global = true)]
    pub sigma_eps_sq: Option<f64>,
    #[arg(long, global = true)]
    pub sigma_eta_sq: Option<f64>,
    /// linear | sparse:FRAC | piecewise[:L1,L2,...]
    #[arg(long, global = true)]
    pub beta: Option<String>,
    /// identity[:C] | local_average:K | derivative
    #[arg(long, global = true)]
    pub relation: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Swept knob: `p=0:80`, `p_tilde=1:80:1`, `sigma_eta_sq=0:2:0.1`, `t=0,16,32`.
    #[arg(long = "axis", required = true)]
    pub axes: Vec<String>,
    /// Fixed knob, e.g. `t=16`. Unset: p̃ = d, p = 0, t = 0.
    #[arg(long = "fix")]
    pub fixed: Vec<String>,
    #[arg(long, value_enum, default_value_t = Quantity::Target)]
    pub quantity: Quantity,
    /// Transferred parameters per trial for the ΔE estimator.
    #[arg(long, default_value_t = DEFAULT_DELTA_M)]
    pub m: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// 1-D sweep.
    Curve(SweepArgs),
    /// 2-D sweep in long format with a status column.
    Plane(SweepArgs),
    /// Target error along a specific-layout script.
    Specific {
        /// Evenly spaced transferred coordinates with S = [d] (ignored with --layout).
        #[arg(long, default_value_t = 0)]
        t: usize,
        /// JSON script {"s": [...], "t": [...], "order": [...]}.
        #[arg(long)]
        layout: Option<PathBuf>,
        /// p values (default: every prefix length).
        #[arg(long)]
        p: Option<String>,
    },
    /// Analytic vs Monte Carlo report; exits non-zero below 95% agreement.
    Compare {
        /// CSV from an earlier both-mode run; otherwise a sweep is run.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long = "axis")]
        axes: Vec<String>,
        #[arg(long = "fix")]
        fixed: Vec<String>,
        #[arg(long, value_enum, default_value_t = Quantity::Target)]
        quantity: Quantity,
        #[arg(long, default_value_t = DEFAULT_DELTA_M)]
        m: usize,
    },
    /// Figure reproduction data.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        name: String,
    },
}

fn parse_beta(s: &str) -> Result<BetaSpec> {
    let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
    match (kind, arg) {
        ("linear", None) => Ok(BetaSpec::Linear),
        ("sparse", Some(a)) => Ok(BetaSpec::Sparse { frac: parse_num(a)? }),
        ("piecewise", None) => Ok(BetaSpec::Piecewise { levels: None }),
        ("piecewise", Some(a)) => Ok(BetaSpec::Piecewise { levels: Some(parse_values(a)?) }),
        _ => Err(Error::InvalidArgument(format!("bad --beta '{s}'"))),
    }
}

fn parse_relation(s: &str) -> Result<RelationSpec> {
    let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
    match (kind, arg) {
        ("identity" | "identity_scale", None) => Ok(RelationSpec::IdentityScale { c: 1.0 }),
        ("identity" | "identity_scale", Some(a)) => Ok(RelationSpec::IdentityScale { c: parse_num(a)? }),
        ("local_average", Some(a)) => Ok(RelationSpec::LocalAverage {
            k: a.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad neighbourhood '{a}'")))?,
        }),
        ("derivative" | "discrete_derivative", None) => Ok(RelationSpec::DiscreteDerivative),
        _ => Err(Error::InvalidArgument(format!("bad --relation '{s}'"))),
    }
}

/// Flags over config file over built-in defaults.
pub fn resolve_config(global: &GlobalArgs) -> Result<ProblemConfig> {
    let mut file = match &global.config {
        Some(p) => ConfigFile::from_path(p)?,
        None => ConfigFile::default(),
    };
    let o = &global.overrides;
    if let Some(v) = o.d {
        file.d = v;
    }
    if let Some(v) = o.n_src {
        file.n_src = v;
    }
    if let Some(v) = o.n_tgt {
        file.n_tgt = v;
    }
    if let Some(v) = o.sigma_xi_sq {
        file.sigma_xi_sq = v;
    }
    if let Some(v) = o.sigma_eps_sq {
        file.sigma_eps_sq = v;
    }
    if let Some(v) = o.sigma_eta_sq {
        file.sigma_eta_sq = v;
    }
    if let Some(b) = &o.beta {
        file.beta = parse_beta(b)?;
    }
    if let Some(r) = &o.relation {
        file.relation = parse_relation(r)?;
    }
    file.build()
}

fn sweep_spec(global: &GlobalArgs, axes: &[String], fixed: &[String], quantity: Quantity, m: usize) -> Result<SweepSpec> {
    let mut parsed: Vec<Axis> = axes.iter().map(|a| a.parse()).collect::<Result<_>>()?;
    if parsed.is_empty() || parsed.len() > 2 {
        return Err(Error::InvalidArgument("give one --axis for a curve or two for a plane".into()));
    }
    let mut f = Fixed::default();
    for s in fixed {
        f.parse_into(s)?;
    }
    let axis2 = (parsed.len() == 2).then(|| parsed.pop().expect("two axes"));
    let default_trials = if quantity == Quantity::Delta { DEFAULT_DELTA_TRIALS } else { DEFAULT_UNIFORM_TRIALS };
    Ok(SweepSpec {
        mode: global.mode,
        quantity,
        axis1: parsed.pop().expect("one axis"),
        axis2,
        fixed: f,
        trials: global.trials.unwrap_or(default_trials),
        master_seed: global.seed,
        threads: global.threads,
        m,
    })
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    match &cli.command {
        Command::Curve(a) | Command::Plane(a) => {
            let config = resolve_config(g)?;
            let spec = sweep_spec(g, &a.axes, &a.fixed, a.quantity, a.m)?;
            let is_plane = matches!(cli.command, Command::Plane(_));
            if is_plane != spec.axis2.is_some() {
                return Err(Error::InvalidArgument(if is_plane {
                    "plane needs exactly two --axis values".into()
                } else {
                    "curve needs exactly one --axis".into()
                }));
            }
            let table = if is_plane { run_plane(&config, &spec)? } else { run_curve(&config, &spec)? };
            emit(&g.out, &table.to_csv_string()?)?;
            Ok(0)
        }
        Command::Specific { t, layout, p } => {
            let config = resolve_config(g)?;
            let script = match layout {
                Some(path) => LayoutScript::from_json_path(path)?,
                None => LayoutScript::evenly_spaced(config.d(), *t),
            };
            let p_values = match p {
                Some(s) => Some(parse_values(s)?.into_iter().map(|v| v as usize).collect()),
                None => None,
            };
            let spec = SpecificSpec {
                mode: g.mode,
                p_values,
                trials: g.trials.unwrap_or(DEFAULT_SPECIFIC_TRIALS),
                master_seed: g.seed,
                threads: g.threads,
                id_offset: 0,
            };
            emit(&g.out, &run_specific(&config, &script, &spec)?.to_csv_string()?)?;
            Ok(0)
        }
        Command::Compare { input, axes, fixed, quantity, m } => {
            let report = match input {
                Some(path) => compare_csv(std::fs::File::open(path)?)?,
                None => {
                    let config = resolve_config(g)?;
                    let mut spec = sweep_spec(g, axes, fixed, *quantity, *m)?;
                    spec.mode = Mode::Both;
                    let table = if spec.axis2.is_some() { run_plane(&config, &spec)? } else { run_curve(&config, &spec)? };
                    if g.out.is_some() {
                        emit(&g.out, &table.to_csv_string()?)?;
                    }
                    compare_report(&table.rows)
                }
            };
            println!("{report}");
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Preset { name } => {
            let output = run_preset(name, g.mode, g.trials, g.seed, g.threads)?;
            if output.parts.len() > 1 && g.out.is_none() && name == "fig4" {
                return Err(Error::InvalidArgument("fig4 writes one CSV per panel; pass --out".into()));
            }
            for (suffix, text) in &output.parts {
                if suffix.is_empty() {
                    emit(&g.out, text)?;
                } else if let Some(out) = &g.out {
                    std::fs::write(sibling(out, suffix), text)?;
                }
            }
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_parsing() {
        assert_eq!(parse_values("0:4").unwrap(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(parse_values("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_values("0,16,32").unwrap(), vec![0.0, 16.0, 32.0]);
        assert_eq!(parse_values("0:2:0.05").unwrap().len(), 41);
        assert!(parse_values("3:1").is_err());
        assert!(parse_values("0:1:0").is_err());
        assert!("p=0.5:3".parse::<Axis>().is_err());
        assert!("q=1".parse::<Axis>().is_err());
        let a: Axis = "sigma_eta_sq=0:1:0.5".parse().unwrap();
        assert_eq!(a.knob, Knob::SigmaEtaSq);
    }

    #[test]
    fn evenly_spaced_transfer_set() {
        let s = LayoutScript::evenly_spaced(80, 16);
        assert_eq!(s.t, (1..=16).map(|k| 5 * k).collect::<Vec<_>>());
        assert_eq!(s.order.len(), 64);
        for t in [0, 16, 32, 48, 80] {
            let s = LayoutScript::evenly_spaced(80, t);
            s.validate(80).unwrap();
            assert_eq!(s.order.len(), 80 - t);
        }
    }

    #[test]
    fn beta_and_relation_flags() {
        assert_eq!(parse_beta("sparse:0.25").unwrap(), BetaSpec::Sparse { frac: 0.25 });
        assert_eq!(parse_beta("piecewise:1,2").unwrap(), BetaSpec::Piecewise { levels: Some(vec![1.0, 2.0]) });
        assert_eq!(parse_relation("local_average:11").unwrap(), RelationSpec::LocalAverage { k: 11 });
        assert_eq!(parse_relation("identity:1.5").unwrap(), RelationSpec::IdentityScale { c: 1.5 });
        assert!(parse_relation("local_average").is_err());
        assert!(parse_beta("dense").is_err());
    }
}
