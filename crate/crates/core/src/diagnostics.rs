//! Goodness of fit and robustness: aggregated deviance residuals, AUC and
//! threshold-sensitivity of refitted coefficients.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_transition_panels, Pair, PanelDataset, StateThresholds, TransitionPanel, TransitionSpec};
use crate::error::{Error, Result};
use crate::estimation::{fit_mle, FittedModel};
use crate::model::{covariate_indices, ModelSpec};
use crate::optimize::OptimizerConfig;
use crate::prediction::TransitionModel;

/// `a log(a/b)` with `0 log 0 = 0`; `+∞` when `b = 0 < a`.
fn xlogx_ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if b <= 0.0 {
        f64::INFINITY
    } else {
        a * (a / b).ln()
    }
}

/// Signed-root deviance contrast of `o` observed against `e` expected among `n`.
pub fn deviance_residual(o: f64, e: f64, n: f64) -> f64 {
    let dev = 2.0 * (xlogx_ratio(o, e) + xlogx_ratio(n - o, n - e));
    let mag = dev.max(0.0).sqrt();
    if o > e {
        mag
    } else if o < e {
        -mag
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub t: u32,
    pub n: usize,
    pub observed: usize,
    pub expected: f64,
    pub residual: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub pair: Pair,
    pub points: Vec<ResidualPoint>,
}

impl ResidualSeries {
    /// Share of finite residuals with `|D| ≤ bound`.
    pub fn share_within(&self, bound: f64) -> f64 {
        let finite: Vec<f64> = self.points.iter().map(|p| p.residual).filter(|d| d.is_finite()).collect();
        if finite.is_empty() {
            return f64::NAN;
        }
        finite.iter().filter(|d| d.abs() <= bound).count() as f64 / finite.len() as f64
    }
}

/// Per-time residuals with `E(t)` the sum of fitted marginal probabilities
/// over the risk set.
pub fn deviance_residuals(fit: &FittedModel, panel: &TransitionPanel) -> Result<ResidualSeries> {
    if fit.spec.pair != panel.pair {
        return Err(Error::SpecMismatch(format!("fit for {} applied to panel {}", fit.spec.pair, panel.pair)));
    }
    let model = TransitionModel::from_fit(fit)?;
    let idx = covariate_indices(&fit.spec, &panel.covariate_names)?;
    let mut acc: BTreeMap<u32, (usize, usize, f64)> = BTreeMap::new();
    for r in &panel.rows {
        let x: Vec<f64> = idx.iter().map(|&i| r.covariates[i]).collect();
        let q = model.marginal(&x, r.time)?;
        let e = acc.entry(r.time).or_default();
        e.0 += 1;
        e.1 += r.y as usize;
        e.2 += q;
    }
    let points = acc
        .into_iter()
        .map(|(t, (n, o, e))| {
            let d = deviance_residual(o as f64, e, n as f64);
            let note = (!d.is_finite()).then(|| format!("expected count {e:.3e} at a boundary with {o} of {n} observed"));
            ResidualPoint {
                t,
                n,
                observed: o,
                expected: e,
                residual: d,
                note,
            }
        })
        .collect();
    Ok(ResidualSeries { pair: panel.pair, points })
}

pub fn write_residual_csv<W: Write>(series: &[ResidualSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair", "t", "n", "observed", "expected", "residual"])?;
    for s in series {
        for p in &s.points {
            w.write_record([
                s.pair.to_string(),
                p.t.to_string(),
                p.n.to_string(),
                p.observed.to_string(),
                format!("{:.9}", p.expected),
                format!("{:.9}", p.residual),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mann–Whitney AUC with midranks for ties.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n1 = labels.iter().filter(|l| **l).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::InvalidArgument("AUC is undefined with a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(u / (n1 as f64 * n0 as f64))
}

/// Eleven diagonal steps of 0.005 from (0.575, 0.825) to (0.625, 0.875).
pub fn default_sensitivity_grid() -> Vec<StateThresholds> {
    (0..=10)
        .map(|i| {
            let d = 0.005 * i as f64;
            StateThresholds::new(0.575 + d, 0.825 + d).expect("grid thresholds are ordered")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadEntry {
    pub pair: Pair,
    pub covariate: String,
    pub baseline: f64,
    /// Per grid point; absent where the refit was impossible.
    pub estimates: Vec<Option<f64>>,
    /// Mean `|β^(c) − β̂|` over the present grid points.
    pub mad: Option<f64>,
    /// Grid points with `β^(c) ≥ 0`.
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub grid: Vec<(f64, f64)>,
    pub entries: Vec<MadEntry>,
    pub diagnostics: Vec<String>,
}

fn fit_all(
    data: &PanelDataset,
    thresholds: &StateThresholds,
    specs: &[ModelSpec],
    cfg: &OptimizerConfig,
) -> Result<Vec<std::result::Result<FittedModel, String>>> {
    let tspec = TransitionSpec::new(specs.iter().map(|s| s.pair))?;
    let panels = build_transition_panels(data, thresholds, &tspec)?;
    Ok(specs
        .iter()
        .map(|s| match panels.get(&s.pair) {
            Some(p) if !p.is_empty() => fit_mle(s, p, None, cfg).map_err(|e| e.to_string()),
            _ => Err(format!("empty transition panel for {}", s.pair)),
        })
        .collect())
}

/// Refits every sub-model with states relabeled at each grid point and
/// summarizes coefficient movement against the baseline thresholds.
pub fn mad_sensitivity(
    data: &PanelDataset,
    baseline: &StateThresholds,
    grid: &[StateThresholds],
    specs: &[ModelSpec],
    cfg: &OptimizerConfig,
) -> Result<SensitivityReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sensitivity grid is empty".into()));
    }
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no sub-models to refit".into()));
    }
    let base = fit_all(data, baseline, specs, cfg)?;
    let points: Vec<Result<Vec<std::result::Result<FittedModel, String>>>> =
        grid.par_iter().map(|c| fit_all(data, c, specs, cfg)).collect();
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::new();
    let mut diagnostics = Vec::new();
    for (s, spec) in specs.iter().enumerate() {
        let b = match &base[s] {
            Ok(f) if f.converged => f,
            Ok(_) => {
                diagnostics.push(format!("{}: baseline fit did not converge", spec.pair));
                continue;
            }
            Err(e) => {
                diagnostics.push(format!("{}: baseline fit failed: {e}", spec.pair));
                continue;
            }
        };
        for (gi, p) in points.iter().enumerate() {
            match &p[s] {
                Ok(f) if !f.converged => diagnostics.push(format!(
                    "{} at ({}, {}): refit did not converge",
                    spec.pair,
                    grid[gi].c1(),
                    grid[gi].c2()
                )),
                Err(e) => diagnostics.push(format!("{} at ({}, {}): {e}", spec.pair, grid[gi].c1(), grid[gi].c2())),
                _ => {}
            }
        }
        for (k, name) in b.params.beta_names.iter().enumerate() {
            let estimates: Vec<Option<f64>> = points
                .iter()
                .map(|p| match &p[s] {
                    Ok(f) if f.converged => Some(f.params.beta[k]),
                    _ => None,
                })
                .collect();
            let present: Vec<f64> = estimates.iter().flatten().copied().collect();
            let base_v = b.params.beta[k];
            let mad = (!present.is_empty())
                .then(|| present.iter().map(|v| (v - base_v).abs()).sum::<f64>() / present.len() as f64);
            let positive = present.iter().filter(|v| **v >= 0.0).count();
            entries.push(MadEntry {
                pair: spec.pair,
                covariate: name.clone(),
                baseline: base_v,
                negative: present.len() - positive,
                positive,
                estimates,
                mad,
            });
        }
    }
    Ok(SensitivityReport {
        grid: grid.iter().map(|c| (c.c1(), c.c2())).collect(),
        entries,
        diagnostics,
    })
}

pub fn write_sensitivity_csv<W: Write>(report: &SensitivityReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair", "covariate", "baseline", "mad", "n_points", "positive", "negative"])?;
    for e in &report.entries {
        w.write_record([
            e.pair.to_string(),
            e.covariate.clone(),
            format!("{:.9}", e.baseline),
            e.mad.map(|m| format!("{m:.9}")).unwrap_or_default(),
            (e.positive + e.negative).to_string(),
            e.positive.to_string(),
            e.negative.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_examples() {
        assert_eq!(deviance_residual(20.0, 20.0, 100.0), 0.0);
        let direct = (2.0 * (30.0 * 1.5f64.ln() + 70.0 * (70.0f64 / 80.0).ln())).sqrt();
        assert!((deviance_residual(30.0, 20.0, 100.0) - direct).abs() < 1e-12);
        assert!((deviance_residual(30.0, 20.0, 100.0) - 2.373502).abs() < 1e-6);
        let limit = -(2.0 * 100.0 * (100.0f64 / 95.0).ln()).sqrt();
        assert!((deviance_residual(0.0, 5.0, 100.0) - limit).abs() < 1e-12);
        assert_eq!(deviance_residual(3.0, 0.0, 10.0), f64::INFINITY);
        assert_eq!(deviance_residual(7.0, 10.0, 10.0), f64::NEG_INFINITY);
        assert_eq!(deviance_residual(0.0, 0.0, 10.0), 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.2, 0.8], &[false, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.8, 0.2], &[false, true]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        // three positive-negative pairs out of four ordered, one tied
        assert_eq!(auc(&[0.1, 0.4, 0.4, 0.9], &[false, false, true, true]).unwrap(), 0.875);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn default_grid_endpoints() {
        let g = default_sensitivity_grid();
        assert_eq!(g.len(), 11);
        assert!((g[0].c1() - 0.575).abs() < 1e-12 && (g[10].c2() - 0.875).abs() < 1e-12);
    }
}
