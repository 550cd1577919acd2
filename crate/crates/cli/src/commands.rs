use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use degsde::localizer::{build_cover, verify_cover};
use degsde::models::validate;
use degsde::oukernel::SLOPE_GRID;
use degsde::sdesim::{simulate, Ball, Scheme, SimConfig};
use degsde::stats::geomspace;
use degsde::verifier::{
    probe_second_derivative, probe_sup_lp, simulate_battery, FunctionBattery, LawComparison, ZGrid, DEFAULT_LAMBDA_GRID, Z_CRIT,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{load, require, resolve};
use crate::report::{emit, write_file, Clock, Report};
use crate::{CheckArgs, CliError, CompareArgs, CoverArgs, Outcome, ProbeArgs, ProbeKind, SchemeName, SimulateArgs};

pub struct Context {
    pub seed: Option<u64>,
    pub out: Option<String>,
}

impl Context {
    fn base(&self, mut file: Map<String, Value>) -> Map<String, Value> {
        if let Some(s) = self.seed {
            file.insert("seed".into(), Value::from(s));
        }
        file
    }

    fn out(&self) -> Option<&str> {
        self.out.as_deref()
    }
}

fn three() -> f64 {
    3.0
}

fn one() -> usize {
    1
}

fn default_z0(z0: &mut Option<Vec<f64>>, d: usize) -> Result<Vec<f64>, CliError> {
    let z = z0.get_or_insert_with(|| vec![1.0; d]).clone();
    if z.len() != d {
        return Err(CliError::usage(format!("z0 has {} components, the model has d = {d}", z.len())));
    }
    Ok(z)
}

fn sim_config(scheme: SchemeName, h: f64, horizon: f64, level: &mut Option<u32>, substeps: usize) -> SimConfig {
    match scheme {
        SchemeName::Euler => SimConfig::new(Scheme::Euler, h, horizon),
        SchemeName::ExpEuler => SimConfig::new(Scheme::ExpEuler, h, horizon),
        SchemeName::FrozenDyadic => SimConfig::dyadic(*level.get_or_insert(6), substeps, horizon),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<usize>,
    #[serde(rename = "R", default = "three")]
    pub r: f64,
    #[serde(default = "check_probes")]
    pub n_probes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn check_probes() -> usize {
    2000
}

pub fn check(ctx: &Context, file: Map<String, Value>, args: CheckArgs) -> Outcome {
    let clock = Clock::start();
    let cfg: CheckConfig = resolve(ctx.base(file), &args)?;
    let (spec, m) = load(require(cfg.model.as_deref(), "model")?, cfg.d, cfg.d0)?;
    let rep = validate(&m, cfg.r, cfg.n_probes, cfg.seed)?;
    let passed = rep.passed();
    emit(ctx.out(), "report.json", &Report::new("check", &cfg, cfg.seed, &clock, &spec, passed, &rep).to_json()?)?;
    Ok(passed)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<usize>,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeName,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(rename = "T", default = "unit")]
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    #[serde(default = "one")]
    pub substeps: usize,
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_radius: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_scheme() -> SchemeName {
    SchemeName::ExpEuler
}

fn default_h() -> f64 {
    1.0 / 256.0
}

fn unit() -> f64 {
    1.0
}

fn default_n() -> usize {
    100
}

pub fn simulate_cmd(ctx: &Context, file: Map<String, Value>, args: SimulateArgs) -> Outcome {
    let clock = Clock::start();
    let mut cfg: SimulateConfig = resolve(ctx.base(file), &args)?;
    let (spec, m) = load(require(cfg.model.as_deref(), "model")?, cfg.d, cfg.d0)?;
    let z0 = default_z0(&mut cfg.z0, m.dim())?;
    if cfg.scheme != SchemeName::FrozenDyadic && cfg.level.is_some() {
        return Err(CliError::usage("level only applies to the frozen-dyadic scheme"));
    }
    let mut sc = sim_config(cfg.scheme, cfg.h, cfg.t, &mut cfg.level, cfg.substeps).record_every(cfg.record_every);
    if let Some(r) = cfg.stop_radius {
        sc = sc.stopped_at(Ball::centered(m.dim(), r)?);
    }
    let ens = simulate(&m, &z0, &sc, cfg.n, cfg.seed)?;
    match ctx.out() {
        None => {
            let mut w = BufWriter::new(std::io::stdout().lock());
            ens.write_csv(&mut w)?;
            w.flush()?;
        }
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(Path::new(dir).join("data.csv"))?);
            ens.write_csv(&mut w)?;
            w.flush()?;
            let summary = json!({
                "data": "data.csv",
                "scheme_tag": ens.scheme_tag,
                "step": ens.step,
                "n_paths": ens.n_paths(),
                "n_times": ens.n_times(),
                "stopped_paths": ens.stopped.iter().filter(|&&s| s).count(),
                "diverged_fraction": ens.diverged_fraction(),
            });
            write_file(dir, "meta.json", &Report::new("simulate", &cfg, cfg.seed, &clock, &spec, true, summary).to_json()?)?;
        }
    }
    Ok(true)
}


#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<usize>,
    #[serde(default = "scheme_a")]
    pub scheme_a: SchemeName,
    #[serde(default = "default_scheme")]
    pub scheme_b: SchemeName,
    #[serde(default = "headline_h")]
    pub h: f64,
    #[serde(default)]
    pub h_b: Option<f64>,
    #[serde(rename = "T", default = "two")]
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    #[serde(default = "one")]
    pub substeps: usize,
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
    #[serde(default = "compare_n")]
    pub n: usize,
    #[serde(default = "lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub battery: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seed_b: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_shift_b: Option<Vec<f64>>,
    #[serde(default = "z_crit")]
    pub z_crit: f64,
    #[serde(default = "chunk")]
    pub chunk: usize,
}

fn scheme_a() -> SchemeName {
    SchemeName::Euler
}

fn headline_h() -> f64 {
    1.0 / 1024.0
}

fn two() -> f64 {
    2.0
}

fn compare_n() -> usize {
    10_000
}

fn lambda_grid() -> Vec<f64> {
    DEFAULT_LAMBDA_GRID.to_vec()
}

fn z_crit() -> f64 {
    Z_CRIT
}

fn chunk() -> usize {
    2000
}

pub fn compare(ctx: &Context, file: Map<String, Value>, args: CompareArgs) -> Outcome {
    let clock = Clock::start();
    let mut cfg: CompareConfig = resolve(ctx.base(file), &args)?;
    let (spec, m) = load(require(cfg.model.as_deref(), "model")?, cfg.d, cfg.d0)?;
    let z0 = default_z0(&mut cfg.z0, m.dim())?;
    let full = FunctionBattery::default_for(m.dim());
    let battery = match &cfg.battery {
        Some(labels) => full.select(labels)?,
        None => full,
    };
    cfg.battery = Some(battery.labels());
    let seed_b = *cfg.seed_b.get_or_insert(cfg.seed.wrapping_add(1));
    if seed_b == cfg.seed {
        return Err(CliError::usage("the two laws must be simulated with different seeds"));
    }
    let h_b = *cfg.h_b.get_or_insert(cfg.h);
    let model_b = match &cfg.drift_shift_b {
        Some(shift) => m.with_drift_shift(shift.clone())?,
        None => m.clone(),
    };
    let cfg_a = sim_config(cfg.scheme_a, cfg.h, cfg.t, &mut cfg.level, cfg.substeps);
    let cfg_b = sim_config(cfg.scheme_b, h_b, cfg.t, &mut cfg.level, cfg.substeps);
    let est_a = simulate_battery(&m, &z0, &cfg_a, cfg.n, cfg.seed, cfg.chunk, &battery, &cfg.lambda_grid)?;
    let est_b = simulate_battery(&model_b, &z0, &cfg_b, cfg.n, seed_b, cfg.chunk, &battery, &cfg.lambda_grid)?;
    let mut cmp = LawComparison::from_estimates(&battery, &cfg.lambda_grid, est_a, est_b, cfg.z_crit)?;
    if cfg_a.step() != cfg_b.step() {
        let note = format!("step sizes differ ({} vs {}); systematic bias is not part of the z-score", cfg_a.step(), cfg_b.step());
        cmp.caveat = Some(match cmp.caveat.take() {
            Some(c) => format!("{c}; {note}"),
            None => note,
        });
    }
    let passed = cmp.passed;
    let result = json!({
        "scheme_a": cfg_a.scheme.tag(),
        "scheme_b": cfg_b.scheme.tag(),
        "calibration": format!(
            "{} paired tests at |z| <= {}; the null pass rate of this threshold is measured by repeating the comparison over independent seed pairs",
            cmp.pairs.len(),
            cfg.z_crit
        ),
        "comparison": cmp,
    });
    let json = Report::new("compare", &cfg, cfg.seed, &clock, &spec, passed, result).to_json()?;
    if let Some(dir) = ctx.out() {
        write_file(dir, "comparison.csv", &cmp.to_csv())?;
    }
    emit(ctx.out(), "report.json", &json)?;
    Ok(passed)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<usize>,
    pub probe: Option<ProbeKind>,
    #[serde(default)]
    pub at: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

pub fn probe(ctx: &Context, file: Map<String, Value>, args: ProbeArgs) -> Outcome {
    let clock = Clock::start();
    let mut cfg: ProbeConfig = resolve(ctx.base(file), &args)?;
    let (spec, m) = load(require(cfg.model.as_deref(), "model")?, cfg.d, cfg.d0)?;
    let kind = require(cfg.probe, "probe kind (det-slope, sup-lp or d2x)")?;
    let d = m.dim();
    let at = cfg.at.get_or_insert_with(|| vec![0.0; d]).clone();
    if at.len() != d {
        return Err(CliError::usage(format!("--at has {} components, the model has d = {d}", at.len())));
    }
    let ou = m.frozen_ou(&at)?;
    let (passed, result) = match kind {
        ProbeKind::DetSlope => {
            let (lo, hi, n) = SLOPE_GRID;
            let grid = cfg.t_grid.get_or_insert_with(|| geomspace(lo, hi, n));
            let fit = ou.det_smalltime_fit(grid)?;
            let ok = fit.satisfies_bound();
            (ok, json!({ "k": ou.k(), "fit": fit, "satisfies_bound": ok }))
        }
        ProbeKind::SupLp | ProbeKind::D2x => {
            let battery = FunctionBattery::default_for(d);
            let label = cfg.f.get_or_insert_with(|| "gauss-0".into()).clone();
            let f = battery.select(&[label])?.members()[0].clone();
            let lambda = *cfg.lambda.get_or_insert(if kind == ProbeKind::SupLp { 4.0 } else { 8.0 });
            let p = *cfg.p.get_or_insert(ou.p_default());
            let grid = ZGrid::cube(d, *cfg.grid_half_width.get_or_insert(1.0), *cfg.grid_n.get_or_insert(5));
            let budget = *cfg.budget.get_or_insert(200);
            if kind == ProbeKind::SupLp {
                let r = probe_sup_lp(&ou, f.as_ref(), lambda, p, &grid.points(), budget, cfg.seed)?;
                (true, json!(r))
            } else {
                let step = *cfg.fd_step.get_or_insert(0.05);
                let r = probe_second_derivative(&ou, f.as_ref(), lambda, p, &grid, step, budget, cfg.seed)?;
                (true, json!(r))
            }
        }
    };
    emit(ctx.out(), "report.json", &Report::new("probe", &cfg, cfg.seed, &clock, &spec, passed, result).to_json()?)?;
    Ok(passed)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverConfig {
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<usize>,
    #[serde(rename = "R", default = "three")]
    pub r: f64,
    #[serde(default = "gamma")]
    pub gamma: f64,
    #[serde(default = "oversample")]
    pub oversample: usize,
    #[serde(default = "probe_density")]
    pub probe_density: usize,
    #[serde(default)]
    pub seed: u64,
}

fn gamma() -> f64 {
    0.1
}

fn oversample() -> usize {
    4
}

fn probe_density() -> usize {
    16
}

/// Failed chart verdicts listed in a cover report.
const SHOWN_FAILURES: usize = 20;

pub fn cover(ctx: &Context, file: Map<String, Value>, args: CoverArgs) -> Outcome {
    let clock = Clock::start();
    let cfg: CoverConfig = resolve(ctx.base(file), &args)?;
    let (spec, m) = load(require(cfg.model.as_deref(), "model")?, cfg.d, cfg.d0)?;
    let g = cfg.gamma;
    let atlas = match build_cover(&m, cfg.r, &|_| g, cfg.probe_density) {
        Ok(a) => a,
        Err(e @ degsde::Error::Hypothesis { .. }) => {
            let result = json!({ "aborted": e.to_string() });
            emit(ctx.out(), "report.json", &Report::new("cover", &cfg, cfg.seed, &clock, &spec, false, result).to_json()?)?;
            eprintln!("cover aborted: {e}");
            return Ok(false);
        }
        Err(e) => return Err(e.into()),
    };
    let verdict = verify_cover(&atlas, &m, cfg.oversample)?;
    let passed = verdict.passed && atlas.all_verified();
    let failed: Vec<_> = verdict.charts.iter().filter(|c| !c.passed).take(SHOWN_FAILURES).collect();
    let mut result = json!({
        "charts": atlas.charts.len(),
        "min_radius": atlas.min_radius(),
        "eta": atlas.eta,
        "gamma": atlas.gamma,
        "verdict": {
            "passed": verdict.passed,
            "oversample": verdict.oversample,
            "failed_charts": verdict.failed_charts().len(),
            "failures": failed,
            "coverage_points": verdict.coverage_points,
            "coverage_failures": verdict.coverage_failures,
            "coverage_witness": verdict.coverage_witness,
        },
    });
    match ctx.out() {
        Some(dir) => {
            let text = serde_json::to_string(&atlas).map_err(|e| CliError::usage(e.to_string()))?;
            write_file(dir, "atlas.json", &text)?;
            result["atlas"] = json!("atlas.json");
        }
        None => result["atlas"] = json!(atlas),
    }
    emit(ctx.out(), "report.json", &Report::new("cover", &cfg, cfg.seed, &clock, &spec, passed, result).to_json()?)?;
    Ok(passed)
}
