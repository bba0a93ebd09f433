//! Command-line runner: resolves a config from flags, a TOML file and
//! defaults, runs one experiment and writes its report files atomically.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::decompose::{solve_representation, systematic_error_bound, ProbeSet, Representation, Target, SCHEMA};
use crate::error::{Error, Result};
use crate::experiments::appendix::{run_appendix_checks, AppendixConfig};
use crate::experiments::bell::{bell_optimize, run_bell, BellConfig, BellProtocol};
use crate::experiments::g2::{default_thetas, g2_scan};
use crate::experiments::hom::{hom_click_probability, run_hom, HomSource};
use crate::experiments::witness::{run_witness, run_witness4, witness_value, FittedWitness};
use crate::experiments::{grids, product_representation, DetectorModel};
use crate::fock::{truncated_poisson, FockDim};
use crate::noon::{compose_with_fock_representations, noon_decomposition, noon_state, MAX_PHOTONS};
use crate::sampler::{with_threads, RunRecord};
use crate::VERSION;

/// Environment variable overriding the default cutoff.
pub const CUTOFF_ENV: &str = "CSE_LAB_DEFAULT_CUTOFF";
pub const DEFAULT_CUTOFF: usize = 30;
pub const DEFAULT_SEED: u64 = 7;
pub const MAX_CUTOFF: usize = 400;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "cse-lab", version, about = "Signed coherent-state emulation of nonclassical light")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Signed decomposition of a Fock state over phase-averaged probes.
    Decompose(Flags),
    /// Exact NOON decomposition and its composed probe representation.
    Noon(Flags),
    /// Ideal single-photon witness.
    Witness(Flags),
    /// Witness built from four click detectors.
    Witness4(Flags),
    /// Two-photon coincidences behind a balanced beamsplitter.
    Hom(Flags),
    /// Normalized coincidence rate against the phase shift.
    G2(Flags),
    /// Bell test with displaced no-click detectors.
    Bell(Flags),
    /// Error-bound, convergence, sampling-noise and residual checks.
    AppendixChecks(Flags),
}

impl Command {
    fn split(self) -> (Experiment, Flags) {
        match self {
            Command::Decompose(f) => (Experiment::Decompose, f),
            Command::Noon(f) => (Experiment::Noon, f),
            Command::Witness(f) => (Experiment::Witness, f),
            Command::Witness4(f) => (Experiment::Witness4, f),
            Command::Hom(f) => (Experiment::Hom, f),
            Command::G2(f) => (Experiment::G2, f),
            Command::Bell(f) => (Experiment::Bell, f),
            Command::AppendixChecks(f) => (Experiment::AppendixChecks, f),
        }
    }
}

/// Flags shared by every command. Unset flags fall back to the config file,
/// then to per-experiment defaults.
#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// Detector efficiency.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Dark-count probability.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Mode overlap.
    #[arg(long)]
    pub f: Option<f64>,
    /// Trials per emulation.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fock levels per mode.
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores); never changes results.
    #[arg(long)]
    pub threads: Option<usize>,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// NOON photon number.
    #[arg(long = "N")]
    pub photons: Option<usize>,
    /// Fock target of `decompose`.
    #[arg(long)]
    pub target: Option<usize>,
    /// Comma-separated probe amplitudes.
    #[arg(long)]
    pub probes: Option<String>,
    /// Number of phase points of the g2 scan.
    #[arg(long)]
    pub points: Option<usize>,
    /// Bell protocol: setting-clicks or analytic.
    #[arg(long)]
    pub protocol: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Decompose,
    Noon,
    Witness,
    Witness4,
    Hom,
    G2,
    Bell,
    AppendixChecks,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Experiment::Decompose => "decompose",
            Experiment::Noon => "noon",
            Experiment::Witness => "witness",
            Experiment::Witness4 => "witness4",
            Experiment::Hom => "hom",
            Experiment::G2 => "g2",
            Experiment::Bell => "bell",
            Experiment::AppendixChecks => "appendix-checks",
        };
        f.write_str(s)
    }
}

/// Keys accepted in a config file; names match the long flags.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: Option<Experiment>,
    pub eta: Option<f64>,
    pub eps: Option<f64>,
    pub f: Option<f64>,
    pub n: Option<u64>,
    pub seed: Option<u64>,
    pub cutoff: Option<usize>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    #[serde(rename = "N")]
    pub photons: Option<usize>,
    pub target: Option<usize>,
    pub probes: Option<Vec<f64>>,
    pub points: Option<usize>,
    pub protocol: Option<String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Fully resolved and validated job description.
///
/// `threads` and `out` are left out of the serialized form: neither affects
/// the numbers, and reports must not depend on where or how fast they ran.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub detector: DetectorModel,
    pub f: f64,
    #[serde(rename = "N_trials")]
    pub n: u64,
    pub seed: u64,
    pub cutoff: usize,
    pub probes: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub photons: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<BellProtocol>,
    #[serde(skip)]
    pub threads: usize,
    #[serde(skip)]
    pub out: PathBuf,
}

struct Defaults {
    eta: f64,
    eps: f64,
    f: f64,
    n: u64,
}

fn defaults(exp: Experiment) -> Defaults {
    let (eta, eps, f, n) = match exp {
        Experiment::Decompose | Experiment::Noon | Experiment::AppendixChecks => (1.0, 0.0, 1.0, 100_000),
        Experiment::Witness => (1.0, 0.0, 1.0, 100_000),
        Experiment::Witness4 => (0.8, 0.001, 1.0, 100_000),
        // amplitude overlap with f^2 = 0.95
        Experiment::Hom => (0.8, 0.0, 0.95f64.sqrt(), 1_000_000),
        Experiment::G2 => (0.8, 0.001, 0.95, 1_000_000),
        Experiment::Bell => (0.95, 0.0, 1.0, 1_500_000),
    };
    Defaults { eta, eps, f, n }
}

/// Cutoff used when neither a flag nor the config file sets one.
pub fn default_cutoff() -> Result<usize> {
    match std::env::var(CUTOFF_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{CUTOFF_ENV}={v:?} is not a positive integer"))),
        Err(std::env::VarError::NotPresent) => Ok(DEFAULT_CUTOFF),
        Err(e) => Err(Error::Config(format!("{CUTOFF_ENV}: {e}"))),
    }
}

fn parse_probes(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Config(format!("bad probe amplitude {t:?}"))))
        .collect()
}

fn parse_protocol(s: &str) -> Result<BellProtocol> {
    match s {
        "setting-clicks" => Ok(BellProtocol::SettingClicks),
        "analytic" => Ok(BellProtocol::Analytic),
        _ => Err(Error::Config(format!("unknown Bell protocol {s:?}"))),
    }
}

fn default_probes(exp: Experiment, target: usize) -> Option<Vec<f64>> {
    match (exp, target) {
        (Experiment::Decompose, 1) | (Experiment::Decompose, 0) => Some(grids::SINGLE_PHOTON.to_vec()),
        (Experiment::Decompose, 2) => Some(equally_spaced(grids::TWO_PHOTON)),
        (Experiment::Decompose, _) => None,
        _ => Some(grids::SINGLE_PHOTON.to_vec()),
    }
}

fn equally_spaced((k, max): (usize, f64)) -> Vec<f64> {
    (0..k).map(|i| max * i as f64 / (k - 1) as f64).collect()
}

impl RunConfig {
    /// Merges flags over the file over defaults, then validates.
    pub fn resolve(exp: Experiment, flags: &Flags, file: &FileConfig) -> Result<Self> {
        if let Some(e) = file.experiment {
            if e != exp {
                return Err(Error::Config(format!("config file is for {e}, command is {exp}")));
            }
        }
        let d = defaults(exp);
        let probes = match &flags.probes {
            Some(s) => Some(parse_probes(s)?),
            None => file.probes.clone(),
        };
        let target = flags.target.or(file.target);
        let probes = match probes {
            Some(p) => p,
            None => default_probes(exp, target.unwrap_or(1))
                .ok_or_else(|| Error::Config("no default probe grid for this target; pass --probes".into()))?,
        };
        let protocol = match flags.protocol.as_deref().or(file.protocol.as_deref()) {
            Some(s) => Some(parse_protocol(s)?),
            None => (exp == Experiment::Bell).then_some(BellProtocol::SettingClicks),
        };
        let cutoff = match flags.cutoff.or(file.cutoff) {
            Some(c) => c,
            None => default_cutoff()?,
        };
        let cfg = RunConfig {
            experiment: exp,
            detector: DetectorModel {
                eta: flags.eta.or(file.eta).unwrap_or(d.eta),
                eps: flags.eps.or(file.eps).unwrap_or(d.eps),
            },
            f: flags.f.or(file.f).unwrap_or(d.f),
            n: flags.n.or(file.n).unwrap_or(d.n),
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            cutoff,
            probes,
            photons: match exp {
                Experiment::Noon => Some(flags.photons.or(file.photons).unwrap_or(2)),
                _ => None,
            },
            target: match exp {
                Experiment::Decompose => Some(target.unwrap_or(1)),
                _ => None,
            },
            points: match exp {
                Experiment::G2 => Some(flags.points.or(file.points).unwrap_or(12)),
                _ => None,
            },
            protocol,
            threads: flags.threads.or(file.threads).unwrap_or(0),
            out: flags.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every parameter before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        DetectorModel::new(self.detector.eta, self.detector.eps).map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.f) {
            return bad(format!("f must be in [0, 1], got {}", self.f));
        }
        if self.n < 2 {
            return bad(format!("need at least 2 trials, got {}", self.n));
        }
        if !(2..=MAX_CUTOFF).contains(&self.cutoff) {
            return bad(format!("cutoff must be in 2..={MAX_CUTOFF}, got {}", self.cutoff));
        }
        if self.probes.is_empty() {
            return bad("probe grid is empty".into());
        }
        if let Some(r) = self.probes.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return bad(format!("probe amplitudes must be finite and nonnegative, got {r}"));
        }
        let d = FockDim::new(self.cutoff).map_err(|e| Error::Config(e.to_string()))?;
        let mut amps = self.probes.clone();
        if self.experiment == Experiment::Noon {
            amps.extend(equally_spaced(grids::TWO_PHOTON_NOON));
        }
        for r in amps {
            truncated_poisson(r * r, d).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(n) = self.photons {
            if n == 0 || n > MAX_PHOTONS {
                return bad(format!("N must be in 1..={MAX_PHOTONS}, got {n}"));
            }
            if n >= self.cutoff {
                return bad(format!("N = {n} needs a cutoff above {n}"));
            }
        }
        if let Some(t) = self.target {
            if t >= self.cutoff {
                return bad(format!("target |{t}> does not fit in cutoff {}", self.cutoff));
            }
        }
        if self.points == Some(0) {
            return bad("g2 scan needs at least one phase point".into());
        }
        if self.out.is_file() {
            return bad(format!("output path {} is a file", self.out.display()));
        }
        Ok(())
    }
}

/// One output file held in memory until every file of the job is ready.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: Vec<u8>,
}

fn json_file(name: String, value: &Value) -> Result<OutputFile> {
    let mut contents = serde_json::to_vec_pretty(value)?;
    contents.push(b'\n');
    Ok(OutputFile { name, contents })
}

fn csv_file(name: String, header: &[&str], rows: Vec<Vec<f64>>) -> Result<OutputFile> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string())).map_err(io)?;
    }
    let contents = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(OutputFile { name, contents })
}

fn runs_file(name: String, runs: &[RunRecord]) -> Result<OutputFile> {
    let mut contents = Vec::new();
    for r in runs {
        serde_json::to_writer(&mut contents, r)?;
        contents.push(b'\n');
    }
    Ok(OutputFile { name, contents })
}

/// Writes every file through a temporary in the target directory; nothing is
/// renamed into place until all temporaries are written.
pub fn write_outputs(dir: &Path, files: &[OutputFile]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut staged = Vec::with_capacity(files.len());
    for f in files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&f.contents)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, dir.join(&f.name)));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
        written.push(path);
    }
    Ok(written)
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

/// Report skeleton: provenance plus the headline groups.
fn report(cfg: &RunConfig, closed: Value, emulated: Value, variances: Value, required_n: Value) -> Result<Map<String, Value>> {
    let mut m = Map::new();
    m.insert("schema".into(), json!(SCHEMA));
    m.insert("version".into(), json!(VERSION));
    m.insert("experiment".into(), json!(cfg.experiment.to_string()));
    m.insert("config".into(), to_value(cfg)?);
    m.insert("seed".into(), json!(cfg.seed));
    m.insert("closed_form_values".into(), closed);
    m.insert("emulated_values".into(), emulated);
    m.insert("variances".into(), variances);
    m.insert("required_N".into(), required_n);
    Ok(m)
}

/// Copies the fields of `detail` to the top level of the report.
fn merge(mut m: Map<String, Value>, detail: Value) -> Map<String, Value> {
    if let Value::Object(d) = detail {
        for (k, v) in d {
            m.entry(k).or_insert(v);
        }
    }
    m
}

fn single_photon(cfg: &RunConfig) -> Result<Representation> {
    solve_representation(
        &Target::Fock { n: 1 },
        &ProbeSet::phase_averaged(&cfg.probes)?,
        FockDim::new(cfg.cutoff)?,
        1e-12,
    )
}

fn fock_representation(k: usize, cfg: &RunConfig) -> Result<Representation> {
    let probes = match k {
        1 => ProbeSet::phase_averaged(&cfg.probes)?,
        _ => ProbeSet::equally_spaced(grids::TWO_PHOTON_NOON.0, grids::TWO_PHOTON_NOON.1)?,
    };
    solve_representation(&Target::Fock { n: k }, &probes, FockDim::new(cfg.cutoff)?, 1e-12)
}

fn rep_summary(rep: &Representation) -> Value {
    json!({
        "fidelity": rep.fidelity(),
        "zeta": rep.zeta(),
        "zeta_plus": rep.zeta_plus(),
        "zeta_minus": rep.zeta_minus(),
        "probes": rep.probes().len(),
    })
}

fn run_decompose(cfg: &RunConfig) -> Result<Vec<OutputFile>> {
    let n = cfg.target.unwrap_or(1);
    let rep = solve_representation(
        &Target::Fock { n },
        &ProbeSet::phase_averaged(&cfg.probes)?,
        FockDim::new(cfg.cutoff)?,
        1e-12,
    )?;
    let closed = json!({
        "fidelity": rep.fidelity(),
        "zeta": rep.zeta(),
        "error_bound_unit_observable": systematic_error_bound(rep.fidelity(), 1.0)?,
    });
    let mut m = report(cfg, closed, Value::Null, Value::Null, Value::Null)?;
    m.insert("representation".into(), serde_json::from_str(&rep.to_json()?)?);
    let rows = cfg.probes.iter().zip(rep.coefficients()).map(|(a, c)| vec![*a, *c]).collect();
    Ok(vec![
        json_file("decompose.json".into(), &Value::Object(m))?,
        csv_file("decompose.csv".into(), &["amplitude", "coefficient"], rows)?,
    ])
}

fn run_noon(cfg: &RunConfig) -> Result<Vec<OutputFile>> {
    let big_n = cfg.photons.unwrap_or(2);
    let dec = noon_decomposition(big_n)?;
    // exact-operator check on the smallest space holding N photons per mode
    let small = FockDim::new(big_n + 1)?;
    let mut diff = dec.reconstruct(small)?;
    diff.add_scaled(-1.0, &noon_state(big_n, small)?)?;
    let operator_error = diff.matrix().iter().fold(0.0_f64, |m, z| m.max(z.norm()));

    let mut needed: Vec<usize> = vec![dec.split.0, dec.split.1];
    needed.extend(dec.correction_terms.iter().flat_map(|t| [t.j, big_n - t.j]));
    needed.retain(|&k| k > 0);
    needed.sort_unstable();
    needed.dedup();
    let mut reps = BTreeMap::new();
    for k in needed {
        reps.insert(k, fock_representation(k, cfg)?);
    }
    let composed = compose_with_fock_representations(&dec, &reps)?;
    let fock: BTreeMap<String, Value> = reps.iter().map(|(k, r)| (k.to_string(), rep_summary(r))).collect();
    let closed = json!({
        "total_weight": dec.total_weight(),
        "operator_error": operator_error,
        "fidelity": composed.fidelity(),
        "zeta": composed.zeta(),
    });
    let mut m = report(cfg, closed, Value::Null, Value::Null, Value::Null)?;
    m.insert("decomposition".into(), to_value(&dec)?);
    m.insert("fock_representations".into(), to_value(&fock)?);
    m.insert("composed".into(), rep_summary(&composed));
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(["kind", "weight_exact", "weight", "theta", "j"]).map_err(io)?;
    for t in &dec.bs_terms {
        w.write_record(["beamsplitter", &t.weight_exact, &t.weight.to_string(), &t.theta.to_string(), ""])
            .map_err(io)?;
    }
    for t in &dec.correction_terms {
        w.write_record(["fock", &t.weight_exact, &t.weight.to_string(), "", &t.j.to_string()])
            .map_err(io)?;
    }
    let contents = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(vec![
        json_file("noon.json".into(), &Value::Object(m))?,
        OutputFile { name: "noon.csv".into(), contents },
    ])
}

fn witness_grid(f: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
    (0..=300).map(|i| i as f64 / 100.0).map(|a| vec![a, f(a)]).collect()
}

fn run_witness_cli(cfg: &RunConfig, four: bool) -> Result<Vec<OutputFile>> {
    let rep = single_photon(cfg)?;
    let (r, curve) = if four {
        let fitted = FittedWitness::fit(&cfg.detector)?;
        let r = run_witness4(&rep, &cfg.detector, cfg.n, cfg.seed)?;
        (r, witness_grid(|a| fitted.coherent(a)))
    } else {
        (run_witness(&rep, cfg.n, cfg.seed)?, witness_grid(witness_value))
    };
    let closed = json!({"W0": r.w0, "alpha0": r.alpha0, "target": r.target, "represented": r.represented});
    let emulated = json!({"mean": r.mean, "std_error": r.std_error});
    let variances = json!({
        "delta_ab": r.delta_ab,
        "delta_a": r.delta_a,
        "excess_variance": r.excess_variance,
        "variance_empirical": r.variance_empirical,
    });
    let m = merge(report(cfg, closed, emulated, variances, json!(r.required_n))?, to_value(&r)?);
    let run = RunRecord {
        seed: r.seed,
        n: r.n,
        mean: r.mean,
        std_error: r.std_error,
        variance_predicted: r.delta_ab,
        variance_empirical: r.variance_empirical,
    };
    let name = cfg.experiment.to_string();
    Ok(vec![
        json_file(format!("{name}.json"), &Value::Object(m))?,
        csv_file(format!("{name}.csv"), &["alpha", "witness"], curve)?,
        runs_file(format!("{name}.runs.jsonl"), &[run])?,
    ])
}

fn run_hom_cli(cfg: &RunConfig) -> Result<Vec<OutputFile>> {
    let rep = single_photon(cfg)?;
    let pair = product_representation(&rep, &rep)?;
    let r = run_hom(&pair, &cfg.detector, cfg.f, cfg.n, cfg.seed)?;
    let closed = json!({"p12_true": r.p12_true, "p12_represented": r.p12_represented});
    let emulated = json!({"mean": r.mean, "std_error": r.std_error});
    let variances = json!({
        "variance_predicted": r.variance_predicted,
        "variance_empirical": r.variance_empirical,
        "delta_a": r.delta_a,
        "excess_variance": r.excess_variance,
    });
    let m = merge(report(cfg, closed, emulated, variances, json!(r.required_n))?, to_value(&r)?);
    let curve = (0..=20)
        .map(|i| {
            let f = i as f64 / 20.0;
            Ok(vec![f, hom_click_probability(HomSource::TrueState, &cfg.detector, f)?])
        })
        .collect::<Result<_>>()?;
    let run = RunRecord {
        seed: r.seed,
        n: r.n,
        mean: r.mean,
        std_error: r.std_error,
        variance_predicted: r.variance_predicted,
        variance_empirical: r.variance_empirical,
    };
    Ok(vec![
        json_file("hom.json".into(), &Value::Object(m))?,
        csv_file("hom.csv".into(), &["f", "p12_true"], curve)?,
        runs_file("hom.runs.jsonl".into(), &[run])?,
    ])
}

fn run_g2_cli(cfg: &RunConfig) -> Result<Vec<OutputFile>> {
    let rep = single_photon(cfg)?;
    let pair = product_representation(&rep, &rep)?;
    let thetas = default_thetas(cfg.points.unwrap_or(12));
    let points = g2_scan(&thetas, &pair, &cfg.detector, cfg.f, cfg.n, cfg.seed)?;
    let closed: Vec<Value> = points.iter().map(|p| json!({"theta": p.theta, "g2_true": p.g2_true})).collect();
    let emulated: Vec<Value> =
        points.iter().map(|p| json!({"theta": p.theta, "g2": p.g2_emulated, "sigma": p.sigma})).collect();
    let variances: Vec<Value> = points
        .iter()
        .map(|p| json!({"theta": p.theta, "sigma_predicted": p.sigma_predicted}))
        .collect();
    let mut m = report(cfg, json!(closed), json!(emulated), json!(variances), Value::Null)?;
    m.insert("points".into(), to_value(&points)?);
    let rows = points.iter().map(|p| vec![p.theta, p.g2_true, p.g2_emulated, p.sigma]).collect();
    let n = cfg.n as f64;
    let runs: Vec<RunRecord> = points
        .iter()
        .map(|p| RunRecord {
            seed: p.seed,
            n: cfg.n,
            mean: p.g2_emulated,
            std_error: p.sigma,
            variance_predicted: p.sigma_predicted * p.sigma_predicted * n,
            variance_empirical: p.sigma * p.sigma * n,
        })
        .collect();
    Ok(vec![
        json_file("g2.json".into(), &Value::Object(m))?,
        csv_file("g2.csv".into(), &["theta", "g2_true", "g2_emulated", "sigma"], rows)?,
        runs_file("g2.runs.jsonl".into(), &runs)?,
    ])
}

fn run_bell_cli(cfg: &RunConfig) -> Result<Vec<OutputFile>> {
    let rep = single_photon(cfg)?;
    let opt = bell_optimize(&cfg.detector)?;
    let bell = BellConfig::new(opt.mu1, opt.mu2, cfg.detector, rep)?;
    let protocol = cfg.protocol.unwrap_or(BellProtocol::SettingClicks);
    let r = run_bell(&bell, protocol, cfg.n, cfg.seed)?;
    let closed = json!({
        "j0_min": opt.j0,
        "mu1": opt.mu1,
        "mu2": opt.mu2,
        "j0_represented": r.j0_represented,
    });
    let emulated = json!({"mean": r.mean, "std_error": r.std_error});
    let variances = json!({
        "variance_predicted": r.variance_predicted,
        "variance_predicted_analytic": r.variance_predicted_analytic,
        "variance_empirical": r.variance_empirical,
        "excess_variance": r.excess_variance,
    });
    let m = merge(report(cfg, closed, emulated, variances, json!(r.required_n))?, to_value(&r)?);
    let row = vec![vec![r.eta, r.mu1, r.mu2, r.j0_exact, r.j0_represented, r.mean, r.std_error]];
    let run = RunRecord {
        seed: r.seed,
        n: r.n,
        mean: r.mean,
        std_error: r.std_error,
        variance_predicted: r.variance_predicted,
        variance_empirical: r.variance_empirical,
    };
    Ok(vec![
        json_file("bell.json".into(), &Value::Object(m))?,
        csv_file(
            "bell.csv".into(),
            &["eta", "mu1", "mu2", "j0_exact", "j0_represented", "mean", "std_error"],
            row,
        )?,
        runs_file("bell.runs.jsonl".into(), &[run])?,
    ])
}

fn run_appendix_cli(cfg: &RunConfig) -> Result<Vec<OutputFile>> {
    let rep = single_photon(cfg)?;
    let acfg = AppendixConfig { seed: cfg.seed, ..AppendixConfig::default() };
    let r = run_appendix_checks(&rep, &acfg)?;
    let closed = json!({
        "bound_max_ratio": r.bound.max_ratio,
        "mse_mixed_formula": r.mse.mixed_formula,
        "mse_pure_formula": r.mse.pure_formula,
    });
    let emulated = json!({
        "convergence_slope": r.convergence.slope,
        "mse_mixed_empirical": r.mse.mixed_empirical,
        "mse_pure_empirical": r.mse.pure_empirical,
    });
    let mut m = report(cfg, closed, emulated, Value::Null, Value::Null)?;
    m.insert("checks".into(), to_value(&r)?);
    m.insert("appendix_config".into(), to_value(&acfg)?);
    let rows = r
        .convergence
        .sizes
        .iter()
        .zip(&r.convergence.rms_error)
        .map(|(n, e)| vec![*n as f64, *e])
        .collect();
    Ok(vec![
        json_file("appendix-checks.json".into(), &Value::Object(m))?,
        csv_file("appendix-checks.csv".into(), &["N", "rms_error"], rows)?,
    ])
}

/// Computes every output file of a job without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<Vec<OutputFile>> {
    with_threads(cfg.threads, || match cfg.experiment {
        Experiment::Decompose => run_decompose(cfg),
        Experiment::Noon => run_noon(cfg),
        Experiment::Witness => run_witness_cli(cfg, false),
        Experiment::Witness4 => run_witness_cli(cfg, true),
        Experiment::Hom => run_hom_cli(cfg),
        Experiment::G2 => run_g2_cli(cfg),
        Experiment::Bell => run_bell_cli(cfg),
        Experiment::AppendixChecks => run_appendix_cli(cfg),
    })?
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Domain(_)
        | Error::CutoffTooSmall { .. }
        | Error::DimensionMismatch { .. }
        | Error::MissingFockRepresentation(_)
        | Error::NonCoherentProbe => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_NUMERICAL,
    }
}

fn error_kind(code: i32) -> &'static str {
    match code {
        EXIT_CONFIG => "config",
        EXIT_NUMERICAL => "numerical",
        _ => "io",
    }
}

/// Machine-readable error line written to stderr.
pub fn error_json(e: &Error) -> String {
    let code = exit_code(e);
    json!({
        "schema": SCHEMA,
        "status": "error",
        "kind": error_kind(code),
        "exit_code": code,
        "message": e.to_string(),
    })
    .to_string()
}

/// Parses arguments, runs the job and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (exp, flags) = cli.command.split();
    let outcome = (|| {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let cfg = RunConfig::resolve(exp, &flags, &file)?;
        log::info!("running {exp} with seed {}", cfg.seed);
        let files = execute(&cfg)?;
        write_outputs(&cfg.out, &files)
    })();
    match outcome {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}
