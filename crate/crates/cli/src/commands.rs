use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use msfrail::bootstrap::{piecewise_test_sequence, run_bootstrap_lrt, LrtConfig, LrtHypothesis, LrtReport};
use msfrail::classification::{bootstrap_predictive_study, write_study_csv, CutoffMethod, DecisionRule, StudyConfig};
use msfrail::data::{
    build_transition_panels, label_states, read_binary_panel_csv, read_panel_csv, write_binary_panel_csv,
    write_panel_csv, Pair, StateThresholds, TransitionPanel, TransitionSpec,
};
use msfrail::diagnostics::{
    default_sensitivity_grid, deviance_residuals, mad_sensitivity, write_residual_csv, write_sensitivity_csv,
};
use msfrail::estimation::{fit_em, fit_mle, EmConfig, EmPosterior, FittedModel};
use msfrail::model::{BaselineSpec, FrailtyKind, FrailtySpec, ModelSpec, Segment};
use msfrail::optimize::OptimizerConfig;
use msfrail::prediction::{write_landing_csv, write_matrix_sidecar, AccountHistory, MultistateModel};
use msfrail::simulator::{
    grid_beta, run_ghq_em_grid, simulate_frailty_panel, simulate_multistate, to_repayment_panel, write_grid_csv,
    write_grid_timings, GridConfig, MultistateSimConfig, SimConfig, GRID_BETAS, GRID_SIGMAS,
};
use msfrail::Error;

use crate::config::{comma_list, config_hash, manifest, manifest_path, read_json, require, write_json, VERSION};
use crate::CliError;

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(|e: Error| CliError::Config(e.to_string()))
}

fn thresholds(c1: Option<f64>, c2: Option<f64>) -> Result<StateThresholds, CliError> {
    let d = StateThresholds::default();
    Ok(StateThresholds::new(c1.unwrap_or(d.c1()), c2.unwrap_or(d.c2()))?)
}

fn frailty(kind: &str, segments: Option<&str>) -> Result<FrailtySpec, CliError> {
    Ok(match kind {
        "none" => FrailtySpec::none(),
        "intercept" => FrailtySpec::intercept(),
        "linear" => FrailtySpec::linear(),
        "piecewise" => match segments {
            None => FrailtySpec::piecewise_default(),
            Some(s) => {
                let segs = s
                    .split(',')
                    .map(|seg| {
                        let (a, b) = seg.trim().split_once('-').unwrap_or((seg.trim(), seg.trim()));
                        match (a.parse(), b.parse()) {
                            (Ok(start), Ok(end)) => Ok(Segment { start, end }),
                            _ => Err(CliError::Config(format!("bad segment '{seg}'"))),
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                FrailtySpec::piecewise(segs)?
            }
        },
        _ => return Err(CliError::Config(format!("unknown frailty '{kind}'"))),
    })
}

fn baseline(s: Option<&str>) -> Result<BaselineSpec, CliError> {
    match s.unwrap_or("none") {
        "none" => Ok(BaselineSpec::None),
        "time" => Ok(BaselineSpec::PiecewiseTime),
        other => Err(CliError::Config(format!("unknown baseline '{other}'"))),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Binary panel as written by `simulate`, or a raw repayment panel labeled
/// with the thresholds.
fn load_transition_panel(
    panel: &Path,
    format: Option<&str>,
    pair: Pair,
    c1: Option<f64>,
    c2: Option<f64>,
) -> Result<TransitionPanel, CliError> {
    match format.unwrap_or("binary") {
        "binary" => Ok(read_binary_panel_csv(panel, pair)?),
        "raw" => {
            let data = read_panel_csv(panel)?;
            let mut panels = build_transition_panels(&data, &thresholds(c1, c2)?, &TransitionSpec::new([pair])?)?;
            panels
                .remove(&pair)
                .ok_or_else(|| CliError::Core(Error::Data(format!("no rows at risk for {pair}"))))
        }
        other => Err(CliError::Config(format!("unknown panel format '{other}'"))),
    }
}

#[derive(Serialize, Deserialize)]
pub struct FitReport {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub fit: FittedModel,
}

fn load_fits(paths: &[PathBuf]) -> Result<BTreeMap<Pair, FittedModel>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("at least one --fit is required".into()));
    }
    let mut out = BTreeMap::new();
    for p in paths {
        let r: FitReport = read_json(p)?;
        let pair = r.fit.spec.pair;
        if out.insert(pair, r.fit).is_some() {
            return Err(Error::SpecMismatch(format!("two fitted models for {pair}")).into());
        }
    }
    Ok(out)
}

fn check_covariates(fits: &BTreeMap<Pair, FittedModel>, names: &[String]) -> Result<(), CliError> {
    for f in fits.values() {
        for c in &f.spec.covariate_names {
            if !names.contains(c) {
                return Err(Error::SpecMismatch(format!("fit for {} uses '{c}', absent from the panel", f.spec.pair)).into());
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- simulate

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// `appendix-c` (binary frailty panel) or `multistate` (repayment panel).
    #[arg(long)]
    pub preset: Option<String>,
    /// Row of the β grid (1-8) for the appendix-c preset.
    #[arg(long)]
    pub row: Option<usize>,
    /// Explicit intercept and slopes, comma separated (no preset).
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Individuals or accounts.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pair: Option<String>,
    /// Last observed period (multistate).
    #[arg(long)]
    pub horizon: Option<u32>,
    /// Slope multiplier of the reference system (multistate).
    #[arg(long)]
    pub strength: Option<f64>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let out = require(&a.out, "out")?;
    let mut r = a.clone();
    r.seed = Some(a.seed.unwrap_or(42));
    let seed = r.seed.unwrap();
    match a.preset.as_deref() {
        Some("multistate") => {
            if a.beta.is_some() || a.row.is_some() {
                return Err(CliError::Config("the multistate preset takes no --beta or --row".into()));
            }
            r.n = Some(a.n.unwrap_or(2000));
            r.sigma = Some(a.sigma.unwrap_or(0.5));
            r.horizon = Some(a.horizon.unwrap_or(8));
            r.strength = Some(a.strength.unwrap_or(1.0));
            let th = thresholds(a.c1, a.c2)?;
            r.c1 = Some(th.c1());
            r.c2 = Some(th.c2());
            let cfg = MultistateSimConfig::reference(r.n.unwrap(), r.horizon.unwrap(), r.sigma.unwrap(), r.strength.unwrap(), seed)?;
            let states = simulate_multistate(&cfg)?;
            write_panel_csv(&to_repayment_panel(&states, &th, seed), &out)?;
        }
        Some("appendix-c") | None => {
            let beta = match (a.preset.is_some(), &a.beta, a.row) {
                (true, Some(_), _) => return Err(CliError::Config("--preset and an explicit --beta conflict".into())),
                (false, Some(_), Some(_)) => return Err(CliError::Config("--row and --beta conflict".into())),
                (false, Some(b), None) => comma_list::<f64>(b, "beta")?,
                (_, None, row) => {
                    r.preset = Some("appendix-c".into());
                    r.row = Some(row.unwrap_or(1));
                    grid_beta(r.row.unwrap())?
                }
            };
            r.sigma = Some(a.sigma.unwrap_or(0.8));
            r.n = Some(a.n.unwrap_or(10_000));
            r.pair = Some(a.pair.clone().unwrap_or_else(|| "1,1".into()));
            let sim = SimConfig {
                n_individuals: r.n.unwrap(),
                beta,
                sigma: r.sigma.unwrap(),
                seed,
                ..SimConfig::default()
            };
            let panel = simulate_frailty_panel(&sim, parse(r.pair.as_deref().unwrap())?)?;
            write_binary_panel_csv(&panel, &out)?;
        }
        Some(other) => return Err(CliError::Config(format!("unknown preset '{other}'"))),
    }
    write_json(&manifest_path(&out), &manifest("simulate", &r, Some(seed), &[&out]))
}

// ---------------------------------------------------------------- fit

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// `binary` (account_id, time, y, covariates) or `raw` (repayment panel).
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    /// Comma-separated covariate names (default: all panel covariates).
    #[arg(long)]
    pub covariates: Option<String>,
    /// none | intercept | linear | piecewise
    #[arg(long)]
    pub frailty: Option<String>,
    /// Piecewise segments, e.g. `1-3,4-5,6-7`.
    #[arg(long)]
    pub segments: Option<String>,
    /// none (intercept) | time (one α per period)
    #[arg(long)]
    pub baseline: Option<String>,
    /// ghq | em
    #[arg(long)]
    pub method: Option<String>,
    /// full_history | per_observation (EM only)
    #[arg(long)]
    pub em_posterior: Option<String>,
    #[arg(long)]
    pub quadrature: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn model_spec(
    pair: Pair,
    panel: &TransitionPanel,
    covariates: Option<&str>,
    frailty_kind: &str,
    segments: Option<&str>,
    baseline_kind: Option<&str>,
    quadrature: Option<usize>,
) -> Result<ModelSpec, CliError> {
    let covs = match covariates {
        Some(c) => comma_list::<String>(c, "covariate")?,
        None => panel.covariate_names.clone(),
    };
    let mut spec = ModelSpec::new(pair, frailty(frailty_kind, segments)?, baseline(baseline_kind)?, covs)?;
    if let Some(q) = quadrature {
        spec = spec.with_quadrature_order(q);
    }
    Ok(spec)
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let out = require(&a.out, "out")?;
    let panel_path = require(&a.panel, "panel")?;
    let mut r = a.clone();
    r.pair = Some(a.pair.clone().unwrap_or_else(|| "1,1".into()));
    r.format = Some(a.format.clone().unwrap_or_else(|| "binary".into()));
    r.frailty = Some(a.frailty.clone().unwrap_or_else(|| "intercept".into()));
    r.method = Some(a.method.clone().unwrap_or_else(|| "ghq".into()));
    let pair: Pair = parse(r.pair.as_deref().unwrap())?;
    let panel = load_transition_panel(&panel_path, r.format.as_deref(), pair, a.c1, a.c2)?;
    let spec = model_spec(
        pair,
        &panel,
        a.covariates.as_deref(),
        r.frailty.as_deref().unwrap(),
        a.segments.as_deref(),
        a.baseline.as_deref(),
        a.quadrature,
    )?;
    let fit = match r.method.as_deref().unwrap() {
        "ghq" => fit_mle(&spec, &panel, None, &OptimizerConfig::default())?,
        "em" => {
            let posterior = match a.em_posterior.as_deref().unwrap_or("full_history") {
                "full_history" => EmPosterior::FullHistory,
                "per_observation" => EmPosterior::PerObservation,
                other => return Err(CliError::Config(format!("unknown EM posterior '{other}'"))),
            };
            fit_em(&spec, &panel, None, &EmConfig { posterior, ..EmConfig::default() })?
        }
        other => return Err(CliError::Config(format!("unknown method '{other}'"))),
    };
    let report = FitReport {
        tool: "msfrail".into(),
        version: VERSION.into(),
        config_hash: config_hash(&r),
        config: serde_json::to_value(&r).expect("config serializes"),
        fit,
    };
    write_json(&out, &report)?;
    if !report.fit.converged {
        return Err(CliError::NotConverged(format!(
            "{} fit stopped with gradient norm {:.3e}; model written and flagged",
            pair, report.fit.grad_norm
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- lrt

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrtArgs {
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub covariates: Option<String>,
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub segments: Option<String>,
    /// intercept | linear | piecewise
    #[arg(long)]
    pub full: Option<String>,
    /// none | slope | intercept | segment:K | sequence
    #[arg(long)]
    pub reduced: Option<String>,
    #[arg(long = "B")]
    #[serde(rename = "B")]
    pub b: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub quadrature: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct LrtFileReport<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    seed: u64,
    config: &'a LrtArgs,
    results: Vec<LrtReport>,
}

pub fn lrt(a: &LrtArgs) -> Result<(), CliError> {
    let out = require(&a.out, "out")?;
    let panel_path = require(&a.panel, "panel")?;
    let mut r = a.clone();
    r.pair = Some(a.pair.clone().unwrap_or_else(|| "1,1".into()));
    r.full = Some(a.full.clone().unwrap_or_else(|| "intercept".into()));
    r.reduced = Some(a.reduced.clone().unwrap_or_else(|| "none".into()));
    r.b = Some(a.b.unwrap_or(100));
    r.seed = Some(a.seed.unwrap_or(42));
    r.level = Some(a.level.unwrap_or(0.05));
    let (b, seed) = (r.b.unwrap(), r.seed.unwrap());
    let pair: Pair = parse(r.pair.as_deref().unwrap())?;
    let panel = load_transition_panel(&panel_path, a.format.as_deref(), pair, a.c1, a.c2)?;
    let full = model_spec(
        pair,
        &panel,
        a.covariates.as_deref(),
        r.full.as_deref().unwrap(),
        a.segments.as_deref(),
        a.baseline.as_deref(),
        a.quadrature,
    )?;
    let cfg = LrtConfig {
        level: r.level.unwrap(),
        ..LrtConfig::default()
    };
    let kind = full.frailty.kind;
    let reduced = r.reduced.as_deref().unwrap();
    let results = match (kind, reduced) {
        (FrailtyKind::Piecewise, "sequence") => piecewise_test_sequence(&full, &panel, b, seed, &cfg)?,
        _ => {
            let hyp = match (kind, reduced) {
                (FrailtyKind::Intercept, "none") => LrtHypothesis::intercept_vs_fixed(&full)?,
                (FrailtyKind::Linear, "slope") => LrtHypothesis::slope_given_intercept(&full)?,
                (FrailtyKind::Linear, "intercept") => LrtHypothesis::intercept_given_slope(&full)?,
                (FrailtyKind::Piecewise, "none") => LrtHypothesis::piecewise_global(&full)?,
                (FrailtyKind::Piecewise, s) if s.starts_with("segment:") => {
                    let k: usize = s["segment:".len()..]
                        .parse()
                        .map_err(|_| CliError::Config(format!("bad segment index in '{s}'")))?;
                    if k == 0 {
                        return Err(CliError::Config("segments are numbered from 1".into()));
                    }
                    LrtHypothesis::piecewise_component(&full, k - 1)?
                }
                (_, s) => {
                    return Err(CliError::Config(format!(
                        "reduced model '{s}' is not a supported hypothesis for a {:?} frailty",
                        kind
                    )))
                }
            };
            vec![run_bootstrap_lrt(&hyp, &panel, b, seed, &cfg)?]
        }
    };
    let report = LrtFileReport {
        tool: "msfrail",
        version: VERSION,
        config_hash: config_hash(&r),
        seed,
        config: &r,
        results: results.iter().map(LrtReport::from).collect(),
    };
    write_json(&out, &report)
}

// ---------------------------------------------------------------- predict

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictArgs {
    /// Fitted-model file; repeat once per modeled pair.
    #[arg(long)]
    pub fit: Vec<PathBuf>,
    /// Raw repayment panel supplying states and covariates.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub t1: Option<u32>,
    #[arg(long)]
    pub t2: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON with the per-step and cumulative matrices.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
}

pub fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let out = require(&a.out, "out")?;
    let panel_path = require(&a.panel, "panel")?;
    let t1 = require(&a.t1, "t1")?;
    let t2 = require(&a.t2, "t2")?;
    let fits = load_fits(&a.fit)?;
    let model = MultistateModel::from_fits(&fits)?;
    let states = label_states(&read_panel_csv(&panel_path)?, &thresholds(a.c1, a.c2)?)?;
    check_covariates(&fits, &states.covariate_names)?;
    let mut seqs = Vec::new();
    for acc in states.accounts() {
        let Some(origin) = acc.iter().find(|r| r.time == t1).map(|r| r.state) else { continue };
        let by_time: BTreeMap<u32, Vec<f64>> = acc.iter().map(|r| (r.time, r.covariates.clone())).collect();
        if !(t1 + 1..=t2).all(|t| by_time.contains_key(&t)) {
            continue;
        }
        let history = AccountHistory {
            account_id: acc[0].account_id.clone(),
            covariate_names: states.covariate_names.clone(),
            by_time,
        };
        seqs.push(model.build_matrix_sequence(&history, origin, t1, t2)?);
    }
    write_landing_csv(&seqs, &out)?;
    let mut outputs: Vec<&Path> = vec![&out];
    if let Some(s) = &a.sidecar {
        write_matrix_sidecar(&seqs, s)?;
        outputs.push(s);
    }
    write_json(&manifest_path(&out), &manifest("predict", a, None, &outputs))
}

// ---------------------------------------------------------------- classify

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub fit: Vec<PathBuf>,
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    /// Comma-separated: dc, omcc.
    #[arg(long)]
    pub method: Option<String>,
    /// Comma-separated: plain, std (std_scaled), relative (cutoff_relative), mean (mean_scaled).
    #[arg(long)]
    pub rule: Option<String>,
    /// Horizons as t1-t2 pairs, e.g. `1-2,2-4`.
    #[arg(long)]
    pub horizons: Option<String>,
    #[arg(long = "B")]
    #[serde(rename = "B")]
    pub b: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use every account both to tune and to evaluate.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub in_sample: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn rule(s: &str) -> Result<DecisionRule, CliError> {
    parse(match s {
        "std" => "std_scaled",
        "relative" => "cutoff_relative",
        "mean" => "mean_scaled",
        x => x,
    })
}

pub fn classify(a: &ClassifyArgs) -> Result<(), CliError> {
    let out = require(&a.out, "out")?;
    let panel_path = require(&a.panel, "panel")?;
    let mut r = a.clone();
    r.method = Some(a.method.clone().unwrap_or_else(|| "dc,omcc".into()));
    r.rule = Some(a.rule.clone().unwrap_or_else(|| "plain,std".into()));
    r.horizons = Some(a.horizons.clone().unwrap_or_else(|| "1-2,2-4".into()));
    r.b = Some(a.b.unwrap_or(100));
    r.seed = Some(a.seed.unwrap_or(42));
    r.in_sample = Some(a.in_sample.unwrap_or(false));
    let methods = r
        .method
        .as_deref()
        .unwrap()
        .split(',')
        .map(|m| parse::<CutoffMethod>(m.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let rules = r.rule.as_deref().unwrap().split(',').map(|x| rule(x.trim())).collect::<Result<Vec<_>, _>>()?;
    let horizons = r
        .horizons
        .as_deref()
        .unwrap()
        .split(',')
        .map(|h| {
            let (x, y) = h.trim().split_once('-').ok_or_else(|| CliError::Config(format!("bad horizon '{h}'")))?;
            match (x.parse::<u32>(), y.parse::<u32>()) {
                (Ok(t1), Ok(t2)) if t1 < t2 => Ok((t1, t2)),
                _ => Err(CliError::Config(format!("bad horizon '{h}'"))),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let fits = load_fits(&a.fit)?;
    let model = MultistateModel::from_fits(&fits)?;
    let states = label_states(&read_panel_csv(&panel_path)?, &thresholds(a.c1, a.c2)?)?;
    check_covariates(&fits, &states.covariate_names)?;
    let cfg = StudyConfig {
        horizons,
        methods,
        rules,
        b: r.b.unwrap(),
        seed: r.seed.unwrap(),
        force_full_in_bag: r.in_sample.unwrap(),
    };
    let res = bootstrap_predictive_study(&model, &states, &cfg)?;
    write_study_csv(&res, create(&out)?)?;
    write_json(&manifest_path(&out), &manifest("classify", &r, r.seed, &[&out]))
}

// ---------------------------------------------------------------- diagnose

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub fit: Vec<PathBuf>,
    /// Raw repayment panel.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    /// Residual CSV output.
    #[arg(long)]
    pub residuals: Option<PathBuf>,
    /// Sensitivity CSV output; refits every sub-model per grid point.
    #[arg(long)]
    pub sensitivity: Option<PathBuf>,
    /// `default` or `c1:c2` pairs, comma separated.
    #[arg(long)]
    pub grid: Option<String>,
    /// JSON summary output.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResidualSummary {
    pair: String,
    points: usize,
    share_within_2: f64,
    max_abs: f64,
}

#[derive(Serialize)]
struct DiagnoseReport<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    config: &'a DiagnoseArgs,
    residuals: Vec<ResidualSummary>,
    sensitivity_diagnostics: Vec<String>,
}

pub fn diagnose(a: &DiagnoseArgs) -> Result<(), CliError> {
    let residual_out = require(&a.residuals, "residuals")?;
    let panel_path = require(&a.panel, "panel")?;
    let fits = load_fits(&a.fit)?;
    let data = read_panel_csv(&panel_path)?;
    check_covariates(&fits, &data.covariate_names)?;
    let base = thresholds(a.c1, a.c2)?;
    let panels = build_transition_panels(&data, &base, &TransitionSpec::new(fits.keys().copied())?)?;
    let mut series = Vec::new();
    for (pair, f) in &fits {
        let p = panels
            .get(pair)
            .ok_or_else(|| CliError::Core(Error::Data(format!("no rows at risk for {pair}"))))?;
        series.push(deviance_residuals(f, p)?);
    }
    write_residual_csv(&series, create(&residual_out)?)?;
    let mut sens_diag = Vec::new();
    if let Some(path) = &a.sensitivity {
        let grid = match a.grid.as_deref().unwrap_or("default") {
            "default" => default_sensitivity_grid(),
            g => g
                .split(',')
                .map(|c| {
                    let (x, y) = c.split_once(':').ok_or_else(|| CliError::Config(format!("bad grid point '{c}'")))?;
                    match (x.trim().parse(), y.trim().parse()) {
                        (Ok(c1), Ok(c2)) => Ok(StateThresholds::new(c1, c2)?),
                        _ => Err(CliError::Config(format!("bad grid point '{c}'"))),
                    }
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        let specs: Vec<ModelSpec> = fits.values().map(|f| f.spec.clone()).collect();
        let rep = mad_sensitivity(&data, &base, &grid, &specs, &OptimizerConfig::default())?;
        write_sensitivity_csv(&rep, create(path)?)?;
        sens_diag = rep.diagnostics;
    }
    if let Some(path) = &a.report {
        let residuals = series
            .iter()
            .map(|s| ResidualSummary {
                pair: s.pair.to_string(),
                points: s.points.len(),
                share_within_2: s.share_within(2.0),
                max_abs: s.points.iter().map(|p| p.residual.abs()).fold(0.0, f64::max),
            })
            .collect();
        let report = DiagnoseReport {
            tool: "msfrail",
            version: VERSION,
            config_hash: config_hash(a),
            config: a,
            residuals,
            sensitivity_diagnostics: sens_diag,
        };
        write_json(path, &report)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- ghq-em-grid

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridArgs {
    /// Rows of the β grid, comma separated (default all eight).
    #[arg(long)]
    pub rows: Option<String>,
    /// True σ values, comma separated.
    #[arg(long)]
    pub sigmas: Option<String>,
    /// Individuals per cell.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quadrature: Option<usize>,
    /// full_history | per_observation
    #[arg(long)]
    pub em_posterior: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-cell fit times (kept apart so results stay byte-identical).
    #[arg(long)]
    pub timings: Option<PathBuf>,
}

pub fn ghq_em_grid(a: &GridArgs) -> Result<(), CliError> {
    let out = require(&a.out, "out")?;
    let mut r = a.clone();
    let all_rows = (1..=GRID_BETAS.len()).map(|i| i.to_string()).collect::<Vec<_>>().join(",");
    let all_sigmas = GRID_SIGMAS.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
    r.rows = Some(a.rows.clone().unwrap_or(all_rows));
    r.sigmas = Some(a.sigmas.clone().unwrap_or(all_sigmas));
    r.n = Some(a.n.unwrap_or(10_000));
    r.seed = Some(a.seed.unwrap_or(42));
    r.quadrature = Some(a.quadrature.unwrap_or(msfrail::quadrature::DEFAULT_ORDER));
    r.em_posterior = Some(a.em_posterior.clone().unwrap_or_else(|| "full_history".into()));
    let posterior = match r.em_posterior.as_deref().unwrap() {
        "full_history" => EmPosterior::FullHistory,
        "per_observation" => EmPosterior::PerObservation,
        other => return Err(CliError::Config(format!("unknown EM posterior '{other}'"))),
    };
    let cfg = GridConfig {
        rows: comma_list(r.rows.as_deref().unwrap(), "row")?,
        sigmas: comma_list(r.sigmas.as_deref().unwrap(), "sigma")?,
        n_individuals: r.n.unwrap(),
        seed: r.seed.unwrap(),
        quadrature_order: r.quadrature.unwrap(),
        em: EmConfig { posterior, ..EmConfig::default() },
        ..GridConfig::default()
    };
    let cells = run_ghq_em_grid(&cfg)?;
    write_grid_csv(&cells, create(&out)?)?;
    let mut outputs: Vec<&Path> = vec![&out];
    if let Some(t) = &a.timings {
        write_grid_timings(&cells, t)?;
        outputs.push(t);
    }
    // timings excluded from the manifest config so reruns hash identically
    let mut hashed = r.clone();
    hashed.timings = None;
    write_json(&manifest_path(&out), &manifest("ghq-em-grid", &hashed, r.seed, &outputs[..1]))
}
