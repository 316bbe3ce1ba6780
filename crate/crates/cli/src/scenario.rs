//! Scenario configs, task dispatch and report assembly.

use bmlab::compactness::{
    certify, counterexample_remark, default_window, FamilyGenerator, FunctionFamily, ModulusMode, NormContext,
    NormKind, ProjectionSpec, Schedule, Thresholds,
};
use bmlab::dyadic::{pow2, Cube, LatticeWindow};
use bmlab::field::FieldSpec;
use bmlab::operators::{avg_bm_bound_check, avg_lp_bound_check, exponent_ledger, lebesgue_diff_check, ExponentLedger};
use bmlab::quadrature::QuadratureSpec;
use bmlab::reducing::{ap_characteristic, ap_dimension, norm_mass_equiv, reducing_operator, verify_reducing, ReducingMethod};
use bmlab::spaces::{bm_norm_with, embedding_check, sobolev_norm, EmbeddingCase, NormOptions, RExponent, SpaceParams};
use bmlab::weights::MatrixWeightSpec;
use bmlab::BmError;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::canonical::{self, float_text};

pub const VERSION: &str = env!("BM_LAB_GIT_DESCRIBE");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Norm,
    Reduce,
    Apclass,
    Avgop,
    Compactness,
    Counterexample,
    Embeddings,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Norm => "norm",
            Task::Reduce => "reduce",
            Task::Apclass => "apclass",
            Task::Avgop => "avgop",
            Task::Compactness => "compactness",
            Task::Counterexample => "counterexample",
            Task::Embeddings => "embeddings",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Io(m) => m,
        }
    }
}

impl From<BmError> for CliError {
    fn from(e: BmError) -> Self {
        if e.is_config_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

impl From<canonical::Error> for CliError {
    fn from(e: canonical::Error) -> Self {
        CliError::Numeric(format!("serialization: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormTask {
    pub kind: NormKind,
    pub options: NormOptions,
}

impl Default for NormTask {
    fn default() -> Self {
        Self { kind: NormKind::Bm, options: NormOptions { collect_terms: true, ..NormOptions::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceTask {
    /// Defaults to `params.p`, else 2.
    pub p: Option<f64>,
    pub method: ReducingMethod,
    /// Defaults to the unit cube at the origin.
    pub cubes: Vec<Cube>,
    pub verify_directions: usize,
}

impl Default for ReduceTask {
    fn default() -> Self {
        Self { p: None, method: ReducingMethod::Mvee, cubes: Vec::new(), verify_directions: 64 }
    }
}

/// Cubes `[corner, corner + 2^{-j})` for `j = j_min..=j_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkingFamily {
    pub corner: Vec<f64>,
    pub j_min: i32,
    pub j_max: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApclassTask {
    pub p: Option<f64>,
    pub shrinking: Option<ShrinkingFamily>,
    /// Base cubes for the dimension estimates; defaults to the unit cube.
    pub base_cubes: Vec<Cube>,
    pub i_max: u32,
    pub n_dirs: usize,
    pub dimension: bool,
}

impl Default for ApclassTask {
    fn default() -> Self {
        Self { p: None, shrinking: None, base_cubes: Vec::new(), i_max: 4, n_dirs: 16, dimension: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    pub d_tilde: f64,
    pub dual_d_tilde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LebesgueTask {
    pub points: Vec<Vec<f64>>,
    pub j_max: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvgopTask {
    /// Ordered toward `−∞`.
    pub a_values: Vec<i32>,
    pub lp: bool,
    pub bm: bool,
    /// Given dimensions skip the estimate.
    pub dims: Option<Dimensions>,
    pub base_cubes: Vec<Cube>,
    pub i_max: u32,
    pub n_dirs: usize,
    pub lebesgue: Option<LebesgueTask>,
}

impl Default for AvgopTask {
    fn default() -> Self {
        Self {
            a_values: vec![0, -1, -2, -3, -4, -5],
            lp: true,
            bm: true,
            dims: None,
            base_cubes: Vec::new(),
            i_max: 4,
            n_dirs: 16,
            lebesgue: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompactnessTask {
    pub mode: ModulusMode,
    pub epsilons: Vec<f64>,
    pub thresholds: Thresholds,
    pub norm: NormKind,
}

impl Default for CompactnessTask {
    fn default() -> Self {
        Self { mode: ModulusMode::DyadicAverage, epsilons: vec![0.1], thresholds: Thresholds::default(), norm: NormKind::Bm }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleTask {
    pub n: usize,
    pub p: f64,
    pub t: f64,
    pub windows: Vec<LatticeWindow>,
    pub j_min: i32,
    pub j_max: i32,
}

impl Default for CounterexampleTask {
    fn default() -> Self {
        Self { n: 1, p: 1.0, t: 2.0, windows: Vec::new(), j_min: 1, j_max: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsTask {
    pub cases: Vec<EmbeddingCase>,
    /// Allowed relative excess of a left side over its right side.
    pub slack: f64,
}

impl Default for EmbeddingsTask {
    fn default() -> Self {
        Self {
            cases: vec![
                EmbeddingCase::RMonotone { p: 1.0, t: 2.0, r1: RExponent::Finite(4.0), r2: RExponent::Infinity },
                EmbeddingCase::PMonotone { p1: 1.0, p2: 1.5, t: 2.0, r: RExponent::Finite(4.0) },
                EmbeddingCase::InfinityChain { p: 1.0, t: 2.0 },
            ],
            slack: 0.01,
        }
    }
}

/// A scenario file. Task sections other than the selected one are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub task: Option<Task>,
    /// Defaults to the identity on the shape of the field or family.
    #[serde(default)]
    pub weight: Option<MatrixWeightSpec>,
    #[serde(default)]
    pub params: Option<SpaceParams>,
    #[serde(default)]
    pub field: Option<FieldSpec>,
    #[serde(default)]
    pub family: Option<FamilyGenerator>,
    #[serde(default)]
    pub window: Option<LatticeWindow>,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub seed: u64,
    /// Runtime only; never part of the embedded config.
    #[serde(default, skip_serializing)]
    pub output: Option<String>,
    /// Runtime only; never part of the embedded config.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduce: Option<ReduceTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apclass: Option<ApclassTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avgop: Option<AvgopTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compactness: Option<CompactnessTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<EmbeddingsTask>,
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
}

/// A plot-ready table; the first row is the header.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvFile {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvFile {
    fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub task: Task,
    pub version: &'static str,
    pub config: Value,
    pub config_hash: String,
    /// `ok` or `numeric-failure`.
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Results computed before any failure.
    pub result: Map<String, Value>,
    pub csv_files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub csvs: Vec<CsvFile>,
    pub exit_code: i32,
}

#[derive(Default)]
struct Outputs {
    result: Map<String, Value>,
    csvs: Vec<CsvFile>,
}

impl Outputs {
    fn put<T: Serialize + ?Sized>(&mut self, key: &str, v: &T) -> Result<(), CliError> {
        self.result.insert(key.to_string(), canonical::to_value(v)?);
        Ok(())
    }
}

fn f(v: f64) -> String {
    float_text(v)
}

/// Fills every default and pins the task; the result is what gets hashed.
pub fn resolve(task: Task, mut cfg: ScenarioConfig, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    if let Some(t) = cfg.task {
        if t != task {
            return Err(CliError::Config(format!("config names task {} but {} was requested", t.name(), task.name())));
        }
    }
    cfg.task = Some(task);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.quadrature.validate()?;
    if let Some(w) = &cfg.window {
        w.validate()?;
    }
    match task {
        Task::Norm => {
            let mut t = cfg.norm.take().unwrap_or_default();
            t.options.seed = cfg.seed;
            cfg.norm = Some(t);
        }
        Task::Reduce => cfg.reduce = Some(cfg.reduce.take().unwrap_or_default()),
        Task::Apclass => cfg.apclass = Some(cfg.apclass.take().unwrap_or_default()),
        Task::Avgop => cfg.avgop = Some(cfg.avgop.take().unwrap_or_default()),
        Task::Compactness => {
            cfg.compactness = Some(cfg.compactness.take().unwrap_or_default());
            cfg.schedule = Some(cfg.schedule.take().unwrap_or_default());
        }
        Task::Counterexample => {
            let mut t = cfg.counterexample.take().unwrap_or_default();
            if t.windows.is_empty() {
                t.windows = [(2, 4.0), (4, 16.0), (6, 64.0)]
                    .iter()
                    .map(|&(j, r)| LatticeWindow::new(-j, j, r, t.n))
                    .collect::<bmlab::Result<_>>()?;
            }
            cfg.counterexample = Some(t);
        }
        Task::Embeddings => cfg.embeddings = Some(cfg.embeddings.take().unwrap_or_default()),
    }
    Ok(cfg)
}

pub fn config_hash(config: &Value) -> Result<String, CliError> {
    let text = canonical::to_string(config)?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

/// Runs a scenario. Config errors return `Err`; numeric failures return an
/// outcome with the partial report and exit code 3.
pub fn run_scenario(task: Task, cfg: ScenarioConfig, seed: Option<u64>) -> Result<Outcome, CliError> {
    let cfg = resolve(task, cfg, seed)?;
    let config = canonical::to_value(&cfg)?;
    let config_hash = config_hash(&config)?;
    let mut out = Outputs::default();
    let res = match task {
        Task::Norm => run_norm(&cfg, &mut out),
        Task::Reduce => run_reduce(&cfg, &mut out),
        Task::Apclass => run_apclass(&cfg, &mut out),
        Task::Avgop => run_avgop(&cfg, &mut out),
        Task::Compactness => run_compactness(&cfg, &mut out),
        Task::Counterexample => run_counterexample(&cfg, &mut out),
        Task::Embeddings => run_embeddings(&cfg, &mut out),
    };
    let (status, error, exit_code) = match res {
        Ok(()) => ("ok", None, 0),
        Err(CliError::Numeric(m)) => ("numeric-failure", Some(m), 3),
        Err(e) => return Err(e),
    };
    let csv_files = out.csvs.iter().map(|c| c.name.clone()).collect();
    Ok(Outcome {
        report: Report { task, version: VERSION, config, config_hash, status, error, result: out.result, csv_files },
        csvs: out.csvs,
        exit_code,
    })
}

fn need<'a, T>(v: &'a Option<T>, what: &str, task: Task) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Config(format!("task {} needs `{what}`", task.name())))
}

fn weight_for(cfg: &ScenarioConfig, d: usize, n: usize) -> Result<MatrixWeightSpec, CliError> {
    match &cfg.weight {
        Some(w) => {
            if w.n() != n {
                return Err(CliError::Config(format!("weight acts on R^{} but the data lives on R^{n}", w.n())));
            }
            Ok(w.clone())
        }
        None => Ok(MatrixWeightSpec::identity(d, n)),
    }
}

/// The family, or the single field as a one-member family.
fn suite(cfg: &ScenarioConfig, task: Task) -> Result<FunctionFamily, CliError> {
    match (&cfg.family, &cfg.field) {
        (Some(g), _) => Ok(FunctionFamily::from_generator(g)?),
        (None, Some(f)) => Ok(FunctionFamily::new("single field", vec![("field".into(), f.build()?)])?),
        (None, None) => Err(CliError::Config(format!("task {} needs `family` or `field`", task.name()))),
    }
}

fn unit_cube(n: usize) -> Cube {
    Cube::new(vec![0.0; n], 1.0)
}

fn run_norm(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<(), CliError> {
    let t = cfg.norm.as_ref().expect("resolved");
    let field = need(&cfg.field, "field", Task::Norm)?.build()?;
    let params = need(&cfg.params, "params", Task::Norm)?;
    let window = need(&cfg.window, "window", Task::Norm)?;
    match t.kind {
        NormKind::Bm => {
            let spec = weight_for(cfg, field.d(), field.n())?;
            let mut rep = bm_norm_with(&field, &spec, params, window, &cfg.quadrature, &t.options)?;
            let mut per_scale = CsvFile::new("norm_per_scale.csv", &["j", "value"]);
            for (j, v) in &rep.per_scale {
                per_scale.push(vec![j.to_string(), f(*v)]);
            }
            out.csvs.push(per_scale);
            if !rep.terms.is_empty() {
                let mut terms = CsvFile::new("norm_terms.csv", &["j", "k_hash", "term"]);
                for term in &rep.terms {
                    terms.push(vec![term.j.to_string(), format!("{:016x}", term.k_hash()), f(term.term)]);
                }
                out.csvs.push(terms);
                rep.terms.clear();
            }
            out.put("norm", &rep)
        }
        NormKind::Sobolev { h } => {
            let spec = weight_for(cfg, field.n(), field.n())?;
            let rep = sobolev_norm(&field, &spec, params, window, &cfg.quadrature, h)?;
            out.put("sobolev", &rep)
        }
    }
}

fn run_reduce(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<(), CliError> {
    let t = cfg.reduce.as_ref().expect("resolved");
    let spec = need(&cfg.weight, "weight", Task::Reduce)?;
    let p = t.p.or(cfg.params.map(|s| s.p)).unwrap_or(2.0);
    let cubes = if t.cubes.is_empty() { vec![unit_cube(spec.n())] } else { t.cubes.clone() };
    let mut table = CsvFile::new(
        "reduce.csv",
        &["cube", "side", "certified_c1", "certified_c2", "verified_c1", "verified_c2", "equivalence_ratio"],
    );
    let mut rows = Vec::new();
    for (i, cube) in cubes.iter().enumerate() {
        let op = reducing_operator(spec, cube, p, t.method, &cfg.quadrature, cfg.seed)?;
        let (v1, v2) = verify_reducing(&op, spec, t.verify_directions, cfg.seed.wrapping_add(1), &cfg.quadrature)?;
        let equiv = norm_mass_equiv(spec, cube, p, t.method, &cfg.quadrature, cfg.seed)?;
        table.push(vec![i.to_string(), f(cube.side), f(op.certified_c1), f(op.certified_c2), f(v1), f(v2), f(equiv)]);
        let mut row = Map::new();
        row.insert("operator".into(), canonical::to_value(&op)?);
        row.insert("verified".into(), canonical::to_value(&(v1, v2))?);
        row.insert("equivalence_ratio".into(), canonical::float_value(equiv));
        rows.push(Value::Object(row));
        out.result.insert("operators".into(), Value::Array(rows.clone()));
    }
    out.csvs.push(table);
    Ok(())
}

fn run_apclass(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<(), CliError> {
    let t = cfg.apclass.as_ref().expect("resolved");
    let spec = need(&cfg.weight, "weight", Task::Apclass)?;
    let p = t.p.or(cfg.params.map(|s| s.p)).unwrap_or(2.0);
    let n = spec.n();
    if let Some(s) = &t.shrinking {
        if s.corner.len() != n || s.j_min > s.j_max {
            return Err(CliError::Config("shrinking family needs an n-dimensional corner and j_min <= j_max".into()));
        }
        let cubes: Vec<Cube> = (s.j_min..=s.j_max).map(|j| Cube::new(s.corner.clone(), pow2(-j))).collect();
        let est = ap_characteristic(spec, p, &cubes, &cfg.quadrature)?;
        let values: Vec<f64> = est.per_cube.iter().map(|c| c.value).collect();
        let monotone = values.windows(2).all(|w| w[1] >= w[0]);
        let growth = values.last().copied().unwrap_or(0.0) / values[0];
        let mut curve = CsvFile::new("apclass_shrinking.csv", &["j", "side", "value", "converged"]);
        for (j, c) in (s.j_min..).zip(&est.per_cube) {
            curve.push(vec![j.to_string(), f(c.cube.side), f(c.value), c.converged.to_string()]);
        }
        out.csvs.push(curve);
        out.put("shrinking", &est)?;
        out.put("shrinking_growth", &growth)?;
        out.put("shrinking_monotone", &monotone)?;
    }
    if t.dimension {
        let base = if t.base_cubes.is_empty() { vec![unit_cube(n)] } else { t.base_cubes.clone() };
        let id_est = ap_characteristic(spec, p, &base, &cfg.quadrature)?;
        out.put("characteristic", &id_est)?;
        let dims = ap_dimension(spec, p, &base, t.i_max, t.n_dirs, cfg.seed, &cfg.quadrature)?;
        let mut seqs = CsvFile::new("apclass_dimension.csv", &["base", "i", "log2_value", "dual"]);
        for (dual, all) in [(false, &dims.sequences), (true, &dims.dual_sequences)] {
            for (b, s) in all.iter().enumerate() {
                for (i, v) in s.iter().enumerate() {
                    seqs.push(vec![b.to_string(), i.to_string(), f(*v), dual.to_string()]);
                }
            }
        }
        out.csvs.push(seqs);
        out.put("dimension", &dims)?;
    }
    Ok(())
}

fn ratio_csv(name: &str, rows: &[bmlab::operators::RatioRow]) -> CsvFile {
    let mut c = CsvFile::new(name, &["family_id", "a", "ratio"]);
    for r in rows {
        c.push(vec![r.family_id.clone(), r.a.to_string(), f(r.ratio)]);
    }
    c
}

fn run_avgop(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<(), CliError> {
    let t = cfg.avgop.as_ref().expect("resolved");
    let fam = suite(cfg, Task::Avgop)?;
    let spec = weight_for(cfg, fam.d(), fam.n())?;
    let window = need(&cfg.window, "window", Task::Avgop)?;
    let q = &cfg.quadrature;
    if t.lp {
        let p = cfg.params.map(|s| s.p).unwrap_or(2.0);
        let rep = avg_lp_bound_check(&spec, p, &fam.members, &t.a_values, window, q)?;
        out.csvs.push(ratio_csv("avgop_lp_ratios.csv", &rep.rows));
        out.put("lp", &rep)?;
    }
    if t.bm {
        let params = need(&cfg.params, "params", Task::Avgop)?;
        let ledger: ExponentLedger = match t.dims {
            Some(d) => ExponentLedger::from_fields(fam.n(), params, d.d_tilde, d.dual_d_tilde)?,
            None => {
                let base = if t.base_cubes.is_empty() { vec![unit_cube(fam.n())] } else { t.base_cubes.clone() };
                let dims = ap_dimension(&spec, params.p, &base, t.i_max, t.n_dirs, cfg.seed, q)?;
                out.put("dimension", &dims)?;
                exponent_ledger(fam.n(), params, &dims)?
            }
        };
        out.put("ledger", &ledger)?;
        let rep = avg_bm_bound_check(&spec, params, &fam.members, &t.a_values, window, &ledger, q)?;
        out.csvs.push(ratio_csv("avgop_bm_ratios.csv", &rep.rows));
        let mut c_obs = CsvFile::new("avgop_c_obs.csv", &["a", "c_obs"]);
        for (a, v) in &rep.c_obs_by_a {
            c_obs.push(vec![a.to_string(), f(*v)]);
        }
        out.csvs.push(c_obs);
        out.put("bm", &rep)?;
    }
    if let Some(l) = &t.lebesgue {
        let params = need(&cfg.params, "params", Task::Avgop)?;
        let rep = lebesgue_diff_check(&spec, params, &fam.members[0].1, &l.points, l.j_max, q)?;
        let mut c = CsvFile::new("avgop_lebesgue.csv", &["point", "j", "error"]);
        for (i, curve) in rep.curves.iter().enumerate() {
            for (j, e) in curve.errors.iter().enumerate() {
                c.push(vec![i.to_string(), j.to_string(), f(*e)]);
            }
        }
        out.csvs.push(c);
        out.put("lebesgue", &rep)?;
    }
    Ok(())
}

fn curve_csv(name: &str, ids: &[String], curve: &[bmlab::compactness::CurvePoint]) -> CsvFile {
    let mut header = vec!["param".to_string(), "sup".to_string()];
    header.extend(ids.iter().cloned());
    let mut c = CsvFile { name: name.to_string(), header, rows: Vec::new() };
    for p in curve {
        let mut row = vec![f(p.param), f(p.value)];
        row.extend(p.per_member.iter().map(|v| f(*v)));
        c.push(row);
    }
    c
}

/// Window covering the largest radius and resolving the finest scale of the schedule.
fn compactness_window(schedule: &Schedule, mode: ModulusMode, n: usize) -> Result<LatticeWindow, CliError> {
    let r_max = schedule.radii.iter().copied().fold(1.0, f64::max);
    let m = r_max.log2().ceil().max(0.0) as i32;
    let a = match mode {
        ModulusMode::DyadicAverage => schedule.a_values.last().copied().unwrap_or(-1),
        ModulusMode::Translation => schedule.b_values.last().map_or(-1, |b| b.log2().floor() as i32 - 1),
    }
    .min(-1);
    Ok(default_window(r_max, &ProjectionSpec::new(m, a)?, n)?)
}

fn run_compactness(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<(), CliError> {
    let t = cfg.compactness.as_ref().expect("resolved");
    let schedule = cfg.schedule.as_ref().expect("resolved");
    let generator = need(&cfg.family, "family", Task::Compactness)?;
    let fam = FunctionFamily::from_generator(generator)?;
    let params = *need(&cfg.params, "params", Task::Compactness)?;
    let spec = match t.norm {
        NormKind::Bm => weight_for(cfg, fam.d(), fam.n())?,
        NormKind::Sobolev { .. } => weight_for(cfg, fam.n(), fam.n())?,
    };
    let window = match &cfg.window {
        Some(w) => w.clone(),
        None => compactness_window(schedule, t.mode, fam.n())?,
    };
    let ctx = NormContext { spec: &spec, params, window, q: cfg.quadrature, kind: t.norm };
    let rep = certify(&fam, &ctx, schedule, t.mode, &t.epsilons, &t.thresholds)?;
    out.csvs.push(curve_csv("compactness_tail.csv", &rep.member_ids, &rep.tail_curve));
    out.csvs.push(curve_csv("compactness_modulus.csv", &rep.member_ids, &rep.modulus_curve));
    let mut nets = CsvFile::new("compactness_nets.csv", &["epsilon", "size", "projection_error", "audit_max"]);
    for n in &rep.nets {
        nets.push(vec![f(n.epsilon), n.size.to_string(), f(n.projection_error), f(n.audit_max)]);
    }
    out.csvs.push(nets);
    out.put("compactness", &rep)
}

fn run_counterexample(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<(), CliError> {
    let t = cfg.counterexample.as_ref().expect("resolved");
    let rep = counterexample_remark(t.n, t.p, t.t, &t.windows, (t.j_min, t.j_max), &cfg.quadrature)?;
    let mut norms = CsvFile::new("counterexample_norms.csv", &["j_min", "j_max", "radius", "value", "converged"]);
    for w in &rep.norms {
        norms.push(vec![
            w.window.j_min.to_string(),
            w.window.j_max.to_string(),
            f(w.window.spatial_radius),
            f(w.value),
            w.converged.to_string(),
        ]);
    }
    let mut bounds = CsvFile::new("counterexample_bounds.csv", &["j", "x1", "s", "cube_side", "cube_term", "ball_term"]);
    for r in &rep.rows {
        bounds.push(vec![r.j.to_string(), f(r.x1), f(r.s), f(r.cube.side), f(r.cube_term), f(r.ball_term)]);
    }
    out.csvs.push(norms);
    out.csvs.push(bounds);
    out.put("counterexample", &rep)
}

fn run_embeddings(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<(), CliError> {
    let t = cfg.embeddings.as_ref().expect("resolved");
    let fam = suite(cfg, Task::Embeddings)?;
    let spec = weight_for(cfg, fam.d(), fam.n())?;
    let window = need(&cfg.window, "window", Task::Embeddings)?;
    let rep = embedding_check(&fam.members, &spec, &t.cases, window, &cfg.quadrature)?;
    let mut c = CsvFile::new("embeddings.csv", &["member", "case", "part", "lhs", "rhs", "ratio"]);
    for r in &rep.rows {
        let case = canonical::to_value(&r.case)?;
        let kind = case.get("case").and_then(Value::as_str).unwrap_or("").to_string();
        c.push(vec![r.member.clone(), kind, r.part.to_string(), f(r.lhs), f(r.rhs), f(r.ratio)]);
    }
    out.csvs.push(c);
    out.put("holds", &rep.holds(t.slack))?;
    out.put("embeddings", &rep)
}
