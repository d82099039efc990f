//! Maximum-likelihood and EM fitting, Wald inference and MAP frailties.

use std::f64::consts::SQRT_2;

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::data::TransitionPanel;
use crate::error::{Error, Result};
use crate::likelihood::{log_bernoulli, log_sum_exp, logistic, Design, Likelihood, Node};
use crate::model::{FrailtyKind, ModelSpec, ParameterVector, LOG_SIGMA_FLOOR};
use crate::optimize::{minimize, numerical_hessian, Objective, OptimResult, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Ghq,
    Em,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub method: FitMethod,
    pub params: ParameterVector,
    pub loglik: f64,
    pub param_names: Vec<String>,
    /// Second derivatives of `−ℓ` over `θ = [α, β, free log σ]`.
    pub hessian: Vec<Vec<f64>>,
    pub se: Vec<Option<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub used_fallback: bool,
    pub n_rows: usize,
    pub n_accounts: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Observed-data log-likelihood after each EM iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_trace: Option<Vec<f64>>,
}

impl FittedModel {
    pub fn sigmas(&self) -> Vec<f64> {
        self.params.sigmas()
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.params.alpha.values().copied().collect();
        v.extend_from_slice(&self.params.beta);
        v.extend(self.params.log_sigma.iter().flatten());
        v
    }
}

/// `−ℓ` as a minimisation objective.
pub struct NegLogLik<'a>(pub &'a Likelihood);

impl Objective for NegLogLik<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.0.value(x)?)
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.0.value_grad(x)?;
        Ok((-v, g.into_iter().map(|x| -x).collect()))
    }
}

/// Warnings for all-0/all-1 outcomes or a covariate that separates y by itself.
pub fn separation_warnings(panel: &TransitionPanel) -> Vec<String> {
    let mut out = Vec::new();
    let events = panel.rows.iter().filter(|r| r.y).count();
    if events == 0 || events == panel.len() {
        out.push(format!(
            "separation: all outcomes for {} are {}",
            panel.pair,
            u8::from(events > 0)
        ));
        return out;
    }
    for (k, name) in panel.covariate_names.iter().enumerate() {
        let (mut lo1, mut hi1, mut lo0, mut hi0) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for r in &panel.rows {
            let v = r.covariates[k];
            if r.y {
                lo1 = lo1.min(v);
                hi1 = hi1.max(v);
            } else {
                lo0 = lo0.min(v);
                hi0 = hi0.max(v);
            }
        }
        if hi0 < lo1 || hi1 < lo0 {
            out.push(format!("separation: covariate '{name}' perfectly predicts the outcome"));
        }
    }
    out
}

/// Minimises `−ℓ` over `θ` from `theta0` without computing a Hessian.
pub fn optimize_theta(lik: &Likelihood, theta0: &[f64], cfg: &OptimizerConfig) -> Result<OptimResult> {
    let mut r = minimize(&NegLogLik(lik), theta0, cfg)?;
    r.f = -r.f;
    Ok(r)
}

pub fn fit_mle(
    spec: &ModelSpec,
    panel: &TransitionPanel,
    init: Option<&ParameterVector>,
    cfg: &OptimizerConfig,
) -> Result<FittedModel> {
    let lik = Likelihood::new(spec, panel)?;
    let design = lik.design();
    let theta0 = match init {
        Some(p) => design.pack(p)?,
        None => design.pack(&ParameterVector::initial(spec, design.alpha_times()))?,
    };
    let r = optimize_theta(&lik, &theta0, cfg)?;
    let mut warnings = separation_warnings(panel);
    if !r.converged {
        warnings.push(format!(
            "optimizer stopped after {} iterations with gradient norm {:.3e}",
            r.iterations, r.grad_norm
        ));
    }
    assemble(&lik, FitMethod::Ghq, &r.x, r.f, r.converged, r.iterations, r.grad_norm, r.used_fallback, warnings, cfg)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    lik: &Likelihood,
    method: FitMethod,
    theta: &[f64],
    loglik: f64,
    converged: bool,
    iterations: usize,
    grad_norm: f64,
    used_fallback: bool,
    mut warnings: Vec<String>,
    cfg: &OptimizerConfig,
) -> Result<FittedModel> {
    let design = lik.design();
    let hessian = numerical_hessian(
        |x| Ok(lik.value_grad(x)?.1.into_iter().map(|g| -g).collect()),
        theta,
        cfg.hessian_step,
    )?;
    let se = standard_errors(&hessian, design.sigma_offset(), &mut warnings);
    Ok(FittedModel {
        spec: design.spec().clone(),
        method,
        params: design.unpack(theta),
        loglik,
        param_names: design.param_names(),
        hessian,
        se,
        converged,
        iterations,
        grad_norm,
        used_fallback,
        n_rows: design.n_rows(),
        n_accounts: design.n_accounts(),
        warnings,
        em_trace: None,
    })
}

fn inverse_diag(h: &[Vec<f64>], n: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_fn(n, n, |i, j| h[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let inv = Cholesky::new(m)?.inverse();
    Some((0..n).map(|i| inv[(i, i)]).collect())
}

/// `sqrt(diag(H⁻¹))`, falling back to the α/β block when the full matrix is
/// not positive definite (typically a variance component at the clamp).
fn standard_errors(h: &[Vec<f64>], fixed_len: usize, warnings: &mut Vec<String>) -> Vec<Option<f64>> {
    let n = h.len();
    let to_se = |d: Vec<f64>| d.into_iter().map(|v| (v > 0.0).then(|| v.sqrt())).collect::<Vec<_>>();
    if let Some(d) = inverse_diag(h, n) {
        return to_se(d);
    }
    if fixed_len < n {
        if let Some(d) = inverse_diag(h, fixed_len) {
            warnings.push("Hessian not positive definite; fixed-effect SEs conditional on variance components".into());
            let mut se = to_se(d);
            se.resize(n, None);
            return se;
        }
    }
    warnings.push("Hessian not positive definite; standard errors unavailable".into());
    vec![None; n]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
}

/// Two-sided normal p-value floored at 1e-300.
pub fn wald_p_value(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / SQRT_2).max(1e-300)
}

/// Wald tests for the baseline and fixed-effect coefficients.
pub fn wald_tests(fit: &FittedModel) -> Result<Vec<WaldRow>> {
    if !fit.converged {
        return Err(Error::Precondition("Wald tests need a converged fit".into()));
    }
    let n_fixed = fit.params.alpha.len() + fit.params.beta.len();
    let theta = fit.theta();
    Ok((0..n_fixed)
        .map(|k| {
            let est = theta[k];
            let se = fit.se.get(k).copied().flatten();
            let z = se.map(|s| if est == 0.0 { 0.0 } else { est / s });
            WaldRow {
                name: fit.param_names[k].clone(),
                estimate: est,
                se,
                z,
                p_value: z.map(wald_p_value),
            }
        })
        .collect())
}

/// Which outcomes the E-step posterior conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmPosterior {
    /// Each frailty's full outcome block (all rows of the account or segment).
    FullHistory,
    /// Every row separately, with the prior counted once per row.
    PerObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub posterior: EmPosterior,
    pub optimizer: OptimizerConfig,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 200,
            posterior: EmPosterior::FullHistory,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Posterior node weights for one block of rows.
struct Group {
    start: usize,
    end: usize,
    grid: usize,
    /// `(node index, weight)` for non-negligible weights.
    weights: Vec<(usize, f64)>,
}

fn node_offset(d: &Design, node: &Node, r: usize) -> f64 {
    if d.spec.frailty.kind == FrailtyKind::Linear {
        node.ua * d.time[r] as f64 + node.ub
    } else {
        node.ub
    }
}

fn e_step(d: &Design, theta: &[f64], grids: &[Vec<Node>], posterior: EmPosterior) -> Vec<Group> {
    let eta0 = d.eta0(theta);
    let mut blocks: Vec<(usize, usize, usize)> = Vec::new();
    for u in &d.units {
        match posterior {
            EmPosterior::FullHistory => blocks.push((u.start, u.end, u.grid)),
            EmPosterior::PerObservation => (u.start..u.end).for_each(|r| blocks.push((r, r + 1, u.grid))),
        }
    }
    let mut a = Vec::new();
    blocks
        .into_iter()
        .map(|(s, e, g)| {
            let grid = &grids[g];
            a.clear();
            for node in grid {
                let mut v = node.lnw;
                for r in s..e {
                    v += log_bernoulli(d.y[r], eta0[r] + node_offset(d, node, r)).0;
                }
                a.push(v);
            }
            let l = log_sum_exp(&a);
            let weights = a
                .iter()
                .enumerate()
                .map(|(n, v)| (n, (v - l).exp()))
                .filter(|&(_, w)| w > 1e-14)
                .collect();
            Group { start: s, end: e, grid: g, weights }
        })
        .collect()
}

/// Expected complete-data log-likelihood in `(α, β)` with nodes held fixed.
struct MStep<'a> {
    d: &'a Design,
    groups: &'a [Group],
    grids: &'a [Vec<Node>],
    sigma_tail: Vec<f64>,
}

impl MStep<'_> {
    fn full(&self, ab: &[f64]) -> Vec<f64> {
        let mut t = ab.to_vec();
        t.extend_from_slice(&self.sigma_tail);
        t
    }

    fn eval(&self, ab: &[f64], grad: bool) -> (f64, Vec<f64>) {
        let d = self.d;
        let eta0 = d.eta0(&self.full(ab));
        let na = d.alpha_times.len();
        let mut g = if grad { vec![0.0; ab.len()] } else { vec![] };
        let mut v = 0.0;
        for grp in self.groups {
            let grid = &self.grids[grp.grid];
            for &(n, w) in &grp.weights {
                for r in grp.start..grp.end {
                    let (lp, dl) = log_bernoulli(d.y[r], eta0[r] + node_offset(d, &grid[n], r));
                    v += w * lp;
                    if grad {
                        let s = w * dl;
                        if na > 0 {
                            g[d.alpha_idx[r]] += s;
                        }
                        for (k, x) in d.x[r * d.p..(r + 1) * d.p].iter().enumerate() {
                            g[na + k] += s * x;
                        }
                    }
                }
            }
        }
        (v, g)
    }
}

impl Objective for MStep<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.eval(x, false).0)
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.eval(x, true);
        Ok((-v, g.into_iter().map(|x| -x).collect()))
    }
}

/// Closed-form variance update: `σ_c² = Σ ω u² / (number of prior terms)`.
fn sigma_update(d: &Design, groups: &[Group], grids: &[Vec<Node>]) -> Vec<f64> {
    let n_comp = d.spec.frailty.n_components();
    let mut num = vec![0.0; n_comp];
    let mut den = vec![0.0; n_comp];
    for grp in groups {
        let grid = &grids[grp.grid];
        match d.spec.frailty.kind {
            FrailtyKind::Linear => {
                for &(n, w) in &grp.weights {
                    num[0] += w * grid[n].ua * grid[n].ua;
                    num[1] += w * grid[n].ub * grid[n].ub;
                }
                den[0] += 1.0;
                den[1] += 1.0;
            }
            FrailtyKind::Intercept | FrailtyKind::Piecewise => {
                let c = grp.grid;
                for &(n, w) in &grp.weights {
                    num[c] += w * grid[n].ub * grid[n].ub;
                }
                den[c] += 1.0;
            }
            FrailtyKind::None => {}
        }
    }
    num.iter()
        .zip(&den)
        .map(|(n, m)| if *m > 0.0 { (n / m).sqrt() } else { 0.0 })
        .collect()
}

/// EM with quadrature E-step: fixed-effects start, alternating E and M steps
/// until `‖ξ^(k+1) − ξ^(k)‖ < tol` with `ξ = (α, β, σ)` on the natural σ scale.
pub fn fit_em(
    spec: &ModelSpec,
    panel: &TransitionPanel,
    init: Option<&ParameterVector>,
    cfg: &EmConfig,
) -> Result<FittedModel> {
    if spec.frailty.kind == FrailtyKind::None || spec.frailty.is_degenerate() {
        return Err(Error::Precondition("EM needs at least one free variance component".into()));
    }
    let lik = Likelihood::new(spec, panel)?;
    let d = lik.design();
    let nab = d.sigma_offset();

    let mut theta = match init {
        Some(p) => d.pack(p)?,
        None => {
            let fixed_spec = spec.with_frailty(crate::model::FrailtySpec::none())?;
            let fixed = Likelihood::new(&fixed_spec, panel)?;
            let t0 = fixed.design().pack(&ParameterVector::initial(&fixed_spec, fixed.design().alpha_times()))?;
            let r = optimize_theta(&fixed, &t0, &cfg.optimizer)?;
            let mut t = r.x;
            t.extend(std::iter::repeat_n(0.5f64.ln(), d.free.len()));
            t
        }
    };

    let free = d.free.clone();
    let mut trace = vec![lik.value(&theta)?];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let sig = d.sigmas(&theta);
        let grids = d.grids(&sig, lik.rule());
        let groups = e_step(d, &theta, &grids, cfg.posterior);
        let m = MStep {
            d,
            groups: &groups,
            grids: &grids,
            sigma_tail: theta[nab..].to_vec(),
        };
        let r = minimize(&m, &theta[..nab], &cfg.optimizer)?;
        let new_sig = sigma_update(d, &groups, &grids);
        let mut next = r.x;
        next.extend(free.iter().map(|&k| new_sig[k].max(LOG_SIGMA_FLOOR.exp()).ln()));

        let mut step = 0.0;
        for i in 0..nab {
            step += (next[i] - theta[i]).powi(2);
        }
        for (i, _) in free.iter().enumerate() {
            let a = theta[nab + i].max(LOG_SIGMA_FLOOR).exp();
            let b = next[nab + i].max(LOG_SIGMA_FLOOR).exp();
            step += (a - b).powi(2);
        }
        theta = next;
        trace.push(lik.value(&theta)?);
        if step.sqrt() < cfg.tol {
            converged = true;
            break;
        }
    }
    let loglik = *trace.last().expect("trace has the start value");
    let grad_norm = lik
        .value_grad(&theta)?
        .1
        .iter()
        .fold(0.0f64, |m, g| m.max(g.abs()));
    let mut warnings = separation_warnings(panel);
    if !converged {
        warnings.push(format!("EM stopped after {iterations} iterations"));
    }
    let mut fit = assemble(&lik, FitMethod::Em, &theta, loglik, converged, iterations, grad_norm, false, warnings, &cfg.optimizer)?;
    fit.em_trace = Some(trace);
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFrailtyEstimate {
    pub account_id: String,
    /// One entry per frailty component (`[u]`, `[a, b]` or `[u_1..u_K]`).
    pub mode: Vec<f64>,
    /// Negative second derivative of the log-posterior at the mode, per component.
    pub curvature: Vec<f64>,
}

/// Posterior mode of one account's frailty by Newton's method from zero.
pub fn estimate_map_frailty(fit: &FittedModel, panel: &TransitionPanel, account_id: &str) -> Result<MapFrailtyEstimate> {
    let spec = &fit.spec;
    if spec.frailty.kind == FrailtyKind::None {
        return Err(Error::Precondition("MAP frailty needs a frailty spec".into()));
    }
    let rows: Vec<_> = panel.rows.iter().filter(|r| r.account_id == account_id).cloned().collect();
    if rows.is_empty() {
        return Err(Error::Precondition(format!("account {account_id} has no rows")));
    }
    let sub = TransitionPanel::from_rows(panel.pair, panel.covariate_names.clone(), rows)?;
    let d = Design::new(spec, &sub)?;
    // baseline entries for all the account's times must exist in the fit
    let mut params = fit.params.clone();
    params.alpha.retain(|t, _| d.alpha_times().contains(t));
    let theta = d.pack(&params)?;
    let eta0 = d.eta0(&theta);
    let sig = fit.params.sigmas();
    let lin = spec.frailty.kind == FrailtyKind::Linear;

    let blocks: Vec<(Vec<usize>, usize)> = match spec.frailty.kind {
        FrailtyKind::Piecewise => d.units.iter().map(|u| ((u.start..u.end).collect(), u.grid)).collect(),
        _ => vec![((0..d.n_rows()).collect(), 0)],
    };
    let n_comp = spec.frailty.n_components();
    let mut mode = vec![0.0; n_comp];
    let mut curvature = vec![0.0; n_comp];
    for (k, s) in sig.iter().enumerate() {
        if *s == 0.0 {
            curvature[k] = f64::INFINITY;
        }
    }

    for (rows, comp) in blocks {
        let dims: Vec<usize> = if lin { vec![0, 1] } else { vec![comp] };
        let mut u = vec![0.0; dims.len()];
        let active: Vec<bool> = dims.iter().map(|&c| sig[c] > 0.0).collect();
        let objective = |u: &[f64]| -> (f64, Vec<f64>, Vec<Vec<f64>>) {
            let m = u.len();
            let mut val = 0.0;
            let mut g = vec![0.0; m];
            let mut h = vec![vec![0.0; m]; m];
            for &r in &rows {
                let t = d.time[r] as f64;
                let coef: Vec<f64> = if lin { vec![t, 1.0] } else { vec![1.0] };
                let off: f64 = u.iter().zip(&coef).map(|(a, b)| a * b).sum();
                let eta = eta0[r] + off;
                let (lp, dl) = log_bernoulli(d.y[r], eta);
                val += lp;
                let p = logistic(eta);
                let w = p * (1.0 - p);
                for i in 0..m {
                    g[i] += dl * coef[i];
                    for j in 0..m {
                        h[i][j] -= w * coef[i] * coef[j];
                    }
                }
            }
            for (i, &c) in dims.iter().enumerate() {
                if sig[c] > 0.0 {
                    let v = sig[c] * sig[c];
                    val -= u[i] * u[i] / (2.0 * v);
                    g[i] -= u[i] / v;
                    h[i][i] -= 1.0 / v;
                }
            }
            (val, g, h)
        };
        for _ in 0..100 {
            let (val, g, h) = objective(&u);
            if !val.is_finite() {
                return Err(Error::Numeric(format!("non-finite posterior for account {account_id}")));
            }
            let gnorm = g.iter().zip(&active).filter(|(_, a)| **a).fold(0.0f64, |m, (x, _)| m.max(x.abs()));
            if gnorm <= 1e-10 {
                break;
            }
            let step = newton_step(&g, &h, &active);
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                if objective(&cand).0 >= val || t < 1e-10 {
                    u = cand;
                    break;
                }
                t *= 0.5;
            }
        }
        let (_, _, h) = objective(&u);
        for (i, &c) in dims.iter().enumerate() {
            if active[i] {
                mode[c] = u[i];
                curvature[c] = -h[i][i];
            }
        }
    }
    Ok(MapFrailtyEstimate {
        account_id: account_id.to_string(),
        mode,
        curvature,
    })
}

fn newton_step(g: &[f64], h: &[Vec<f64>], active: &[bool]) -> Vec<f64> {
    let idx: Vec<usize> = (0..g.len()).filter(|&i| active[i]).collect();
    let mut out = vec![0.0; g.len()];
    if idx.is_empty() {
        return out;
    }
    let m = idx.len();
    let hm = DMatrix::from_fn(m, m, |i, j| -h[idx[i]][idx[j]]);
    let gv = nalgebra::DVector::from_fn(m, |i, _| g[idx[i]]);
    let s = match Cholesky::new(hm) {
        Some(c) => c.solve(&gv),
        None => gv,
    };
    for (k, &i) in idx.iter().enumerate() {
        out[i] = s[k];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Pair, TransitionRow};
    use crate::model::{BaselineSpec, FrailtySpec};

    fn panel() -> TransitionPanel {
        let xs = [
            (0.5, 1.0, true),
            (-1.2, 0.0, false),
            (0.3, 1.0, false),
            (1.8, 0.0, true),
            (-0.4, 1.0, true),
            (0.9, 0.0, false),
            (-1.7, 1.0, false),
            (0.2, 0.0, true),
            (1.1, 1.0, true),
            (-0.8, 0.0, false),
        ];
        let rows = xs
            .iter()
            .enumerate()
            .map(|(i, &(a, b, y))| TransitionRow {
                account_id: format!("a{}", i / 2),
                time: (i % 2) as u32 + 1,
                y,
                covariates: vec![a, b],
            })
            .collect();
        TransitionPanel::from_rows(Pair(1, 3), vec!["x1".into(), "x2".into()], rows).unwrap()
    }

    #[test]
    fn wald_reference_values() {
        assert!((wald_p_value(0.0) - 1.0).abs() < 1e-15);
        let v = wald_p_value(1.96);
        assert!((v - 0.04999579029644087).abs() < 1e-12, "{v:e}");
        assert_eq!(wald_p_value(f64::INFINITY), 1e-300);
    }

    #[test]
    fn fixed_fit_converges_and_ascends() {
        let p = panel();
        let s = ModelSpec::new(Pair(1, 3), FrailtySpec::none(), BaselineSpec::None, vec!["x1".into(), "x2".into()]).unwrap();
        let f = fit_mle(&s, &p, None, &OptimizerConfig::default()).unwrap();
        assert!(f.converged);
        assert!(f.loglik >= 10.0 * 0.5f64.ln());
        for i in 0..f.hessian.len() {
            for j in 0..f.hessian.len() {
                assert_eq!(f.hessian[i][j], f.hessian[j][i]);
            }
        }
        assert!(wald_tests(&f).unwrap().iter().all(|w| w.se.is_some()));
    }

    #[test]
    fn all_zero_outcomes_warn() {
        let mut p = panel();
        p.rows.iter_mut().for_each(|r| r.y = false);
        assert!(!separation_warnings(&p).is_empty());
    }

    #[test]
    fn map_mode_without_signal_is_zero() {
        let p = panel();
        let s = ModelSpec::new(Pair(1, 3), FrailtySpec::intercept(), BaselineSpec::None, vec!["x1".into(), "x2".into()]).unwrap();
        let mut f = fit_mle(&s, &p, None, &OptimizerConfig::default()).unwrap();
        f.params.log_sigma = vec![Some(-10.0)];
        let m = estimate_map_frailty(&f, &p, "a0").unwrap();
        assert!(m.mode[0].abs() < 1e-6);
        assert!(matches!(estimate_map_frailty(&f, &p, "zz"), Err(Error::Precondition(_))));
    }
}
