//! Conditional and quadrature-marginalised log-likelihoods of one transition panel.
//!
//! A [`Likelihood`] compiles a panel against a [`ModelSpec`] once and then
//! evaluates the objective and its gradient over a flat parameter vector
//! `θ = [α (by time), β, free log σ]`.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;

use crate::data::TransitionPanel;
use crate::error::{Error, Result};
use crate::model::{
    check_panel, covariate_indices, BaselineSpec, FrailtyKind, ModelSpec, ParameterVector, LOG_SIGMA_FLOOR,
};
use crate::quadrature::{gauss_hermite, QuadratureRule};

const P_FLOOR: f64 = 1e-12;
/// Accounts per parallel work item; fixed so reductions are order-stable.
const CHUNK: usize = 128;

fn ln_floor() -> f64 {
    P_FLOOR.ln()
}

fn ln_ceil() -> f64 {
    (-P_FLOOR).ln_1p()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Clamped Bernoulli log-probability and its derivative in `η`.
#[inline]
pub fn log_bernoulli(y: bool, eta: f64) -> (f64, f64) {
    let (lp, d) = if y {
        (-softplus(-eta), 1.0 - logistic(eta))
    } else {
        (-softplus(eta), -logistic(eta))
    };
    if lp < ln_floor() {
        (ln_floor(), 0.0)
    } else if lp > ln_ceil() {
        (ln_ceil(), 0.0)
    } else {
        (lp, d)
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

/// One quadrature node: values of the two frailty coordinates and log weight.
///
/// The row offset is `ua·t + ub` for the linear spec and `ub` otherwise.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Node {
    pub ua: f64,
    pub ub: f64,
    pub lnw: f64,
}

/// A block of consecutive rows sharing one frailty draw.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Unit {
    pub start: usize,
    pub end: usize,
    /// Grid index: 0 for intercept/linear specs, segment for piecewise.
    pub grid: usize,
}

/// Panel compiled against a spec.
#[derive(Debug, Clone)]
pub struct Design {
    pub(crate) spec: ModelSpec,
    pub(crate) alpha_times: Vec<u32>,
    pub(crate) p: usize,
    pub(crate) x: Vec<f64>,
    pub(crate) time: Vec<u32>,
    pub(crate) alpha_idx: Vec<usize>,
    pub(crate) y: Vec<bool>,
    pub(crate) account_ids: Vec<String>,
    /// Units grouped per account, as ranges into `units`.
    pub(crate) account_units: Vec<(usize, usize)>,
    pub(crate) units: Vec<Unit>,
    pub(crate) free: Vec<usize>,
}

impl Design {
    pub fn new(spec: &ModelSpec, panel: &TransitionPanel) -> Result<Self> {
        check_panel(spec, panel)?;
        let cols = covariate_indices(spec, &panel.covariate_names)?;
        let intercept = spec.baseline == BaselineSpec::None;
        let p = cols.len() + usize::from(intercept);
        let alpha_times: Vec<u32> = if spec.baseline == BaselineSpec::PiecewiseTime {
            panel.risk_counts.keys().copied().collect()
        } else {
            vec![]
        };
        let n = panel.len();
        let mut x = Vec::with_capacity(n * p);
        let mut time = Vec::with_capacity(n);
        let mut alpha_idx = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for row in &panel.rows {
            if intercept {
                x.push(1.0);
            }
            for &c in &cols {
                let v = *row.covariates.get(c).ok_or_else(|| {
                    Error::Dimension(format!("row for account {} is short of covariates", row.account_id))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "non-finite covariate for account {} at time {}",
                        row.account_id, row.time
                    )));
                }
                x.push(v);
            }
            time.push(row.time);
            alpha_idx.push(if alpha_times.is_empty() {
                usize::MAX
            } else {
                alpha_times.binary_search(&row.time).expect("time from panel")
            });
            y.push(row.y);
        }

        let mut account_ids = Vec::new();
        let mut account_units = Vec::new();
        let mut units = Vec::new();
        for (s, e) in panel.account_ranges() {
            account_ids.push(panel.rows[s].account_id.clone());
            let u0 = units.len();
            if spec.frailty.kind == FrailtyKind::Piecewise {
                let mut r = s;
                while r < e {
                    let k = spec.frailty.segment_of(time[r]).ok_or_else(|| {
                        Error::Configuration(format!("time {} outside every frailty segment", time[r]))
                    })?;
                    let mut q = r + 1;
                    while q < e && spec.frailty.segment_of(time[q]) == Some(k) {
                        q += 1;
                    }
                    units.push(Unit { start: r, end: q, grid: k });
                    r = q;
                }
            } else {
                units.push(Unit { start: s, end: e, grid: 0 });
            }
            account_units.push((u0, units.len()));
        }

        Ok(Self {
            spec: spec.clone(),
            alpha_times,
            p,
            x,
            time,
            alpha_idx,
            y,
            account_ids,
            account_units,
            units,
            free: spec.frailty.free_components(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_accounts(&self) -> usize {
        self.account_ids.len()
    }

    pub fn alpha_times(&self) -> &[u32] {
        &self.alpha_times
    }

    pub fn n_params(&self) -> usize {
        self.alpha_times.len() + self.p + self.free.len()
    }

    /// Index of the first log σ entry in `θ`.
    pub fn sigma_offset(&self) -> usize {
        self.alpha_times.len() + self.p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.alpha_times.iter().map(|t| format!("alpha_{t}")).collect();
        v.extend(self.spec.beta_names());
        v.extend(self.free.iter().map(|&k| format!("log_{}", self.spec.frailty.component_name(k))));
        v
    }

    pub fn pack(&self, params: &ParameterVector) -> Result<Vec<f64>> {
        if params.beta.len() != self.p {
            return Err(Error::Dimension(format!(
                "{} coefficients, design has {}",
                params.beta.len(),
                self.p
            )));
        }
        if params.log_sigma.len() != self.spec.frailty.n_components() {
            return Err(Error::Dimension(format!(
                "{} variance components, spec has {}",
                params.log_sigma.len(),
                self.spec.frailty.n_components()
            )));
        }
        let mut theta = Vec::with_capacity(self.n_params());
        for t in &self.alpha_times {
            theta.push(
                *params
                    .alpha
                    .get(t)
                    .ok_or_else(|| Error::Extrapolation(format!("no baseline parameter for time {t}")))?,
            );
        }
        theta.extend_from_slice(&params.beta);
        for &k in &self.free {
            theta.push(params.log_sigma[k].unwrap_or(LOG_SIGMA_FLOOR));
        }
        Ok(theta)
    }

    pub fn unpack(&self, theta: &[f64]) -> ParameterVector {
        let na = self.alpha_times.len();
        let alpha = self.alpha_times.iter().zip(theta).map(|(&t, &v)| (t, v)).collect();
        let beta = theta[na..na + self.p].to_vec();
        let mut log_sigma = vec![None; self.spec.frailty.n_components()];
        for (i, &k) in self.free.iter().enumerate() {
            log_sigma[k] = Some(theta[na + self.p + i]);
        }
        ParameterVector {
            alpha,
            beta_names: self.spec.beta_names(),
            beta,
            log_sigma,
        }
    }

    /// Fixed part `α_t + X'β` for every row.
    pub(crate) fn eta0(&self, theta: &[f64]) -> Vec<f64> {
        let na = self.alpha_times.len();
        let beta = &theta[na..na + self.p];
        (0..self.n_rows())
            .map(|r| {
                let xr = &self.x[r * self.p..(r + 1) * self.p];
                let mut e: f64 = xr.iter().zip(beta).map(|(a, b)| a * b).sum();
                if na > 0 {
                    e += theta[self.alpha_idx[r]];
                }
                e
            })
            .collect()
    }

    /// Effective σ per component from `θ` (pinned → 0, clamped below).
    pub(crate) fn sigmas(&self, theta: &[f64]) -> Vec<f64> {
        let off = self.sigma_offset();
        let mut s = vec![0.0; self.spec.frailty.n_components()];
        for (i, &k) in self.free.iter().enumerate() {
            s[k] = theta[off + i].max(LOG_SIGMA_FLOOR).exp();
        }
        s
    }

    /// Quadrature grids (one per segment for piecewise specs).
    pub(crate) fn grids(&self, sigmas: &[f64], rule: &QuadratureRule) -> Vec<Vec<Node>> {
        let one_d = |sigma: f64| -> Vec<(f64, f64)> {
            if sigma == 0.0 {
                vec![(0.0, 0.0)]
            } else {
                rule.nodes()
                    .iter()
                    .zip(rule.normalized_weights())
                    .map(|(&z, w)| (SQRT_2 * sigma * z, w.ln()))
                    .collect()
            }
        };
        match self.spec.frailty.kind {
            FrailtyKind::None => vec![vec![Node { ua: 0.0, ub: 0.0, lnw: 0.0 }]],
            FrailtyKind::Intercept => vec![one_d(sigmas[0])
                .into_iter()
                .map(|(u, lnw)| Node { ua: 0.0, ub: u, lnw })
                .collect()],
            FrailtyKind::Linear => {
                let ga = one_d(sigmas[0]);
                let gb = one_d(sigmas[1]);
                let mut g = Vec::with_capacity(ga.len() * gb.len());
                for &(a, wa) in &ga {
                    for &(b, wb) in &gb {
                        g.push(Node { ua: a, ub: b, lnw: wa + wb });
                    }
                }
                vec![g]
            }
            FrailtyKind::Piecewise => sigmas
                .iter()
                .map(|&s| {
                    one_d(s)
                        .into_iter()
                        .map(|(u, lnw)| Node { ua: 0.0, ub: u, lnw })
                        .collect()
                })
                .collect(),
        }
    }

    fn linear_kind(&self) -> bool {
        self.spec.frailty.kind == FrailtyKind::Linear
    }
}

/// Row-level derivative buffers reused across units in one work item.
#[derive(Default)]
struct Scratch {
    a: Vec<f64>,
    d: Vec<f64>,
}

/// Result of integrating one unit.
pub(crate) struct UnitEval {
    pub value: f64,
    /// `∂/∂ log σ` of the component(s) driving this unit: (slope-or-unused, intercept/segment).
    pub dsig_a: f64,
    pub dsig_b: f64,
}

/// Integrates one unit over its grid; fills `deta` (length = unit rows) when given.
fn eval_unit(
    d: &Design,
    unit: &Unit,
    eta0: &[f64],
    grid: &[Node],
    deta: Option<&mut [f64]>,
    scratch: &mut Scratch,
) -> UnitEval {
    let rows = unit.end - unit.start;
    let lin = d.linear_kind();
    let want = deta.is_some();
    scratch.a.clear();
    if want {
        scratch.d.clear();
        scratch.d.resize(rows * grid.len(), 0.0);
    }
    for (n, node) in grid.iter().enumerate() {
        let mut s = node.lnw;
        for i in 0..rows {
            let r = unit.start + i;
            let off = if lin { node.ua * d.time[r] as f64 + node.ub } else { node.ub };
            let (lp, dl) = log_bernoulli(d.y[r], eta0[r] + off);
            s += lp;
            if want {
                scratch.d[n * rows + i] = dl;
            }
        }
        scratch.a.push(s);
    }
    let value = log_sum_exp(&scratch.a);
    let mut out = UnitEval {
        value,
        dsig_a: 0.0,
        dsig_b: 0.0,
    };
    if let Some(deta) = deta {
        deta.iter_mut().for_each(|v| *v = 0.0);
        for (n, node) in grid.iter().enumerate() {
            let w = (scratch.a[n] - value).exp();
            if w == 0.0 {
                continue;
            }
            let dn = &scratch.d[n * rows..(n + 1) * rows];
            let mut sa = 0.0;
            let mut sb = 0.0;
            for i in 0..rows {
                deta[i] += w * dn[i];
                sb += dn[i];
                if lin {
                    sa += dn[i] * d.time[unit.start + i] as f64;
                }
            }
            out.dsig_a += w * node.ua * sa;
            out.dsig_b += w * node.ub * sb;
        }
    }
    out
}

/// Cached evaluator of the (marginal) log-likelihood of one design.
#[derive(Debug, Clone)]
pub struct Likelihood {
    design: Design,
    rule: QuadratureRule,
}

impl Likelihood {
    pub fn new(spec: &ModelSpec, panel: &TransitionPanel) -> Result<Self> {
        let design = Design::new(spec, panel)?;
        let rule = gauss_hermite(spec.quadrature_order)?;
        Ok(Self { design, rule })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    /// Same design and rule with the outcomes replaced (bootstrap replicates).
    pub fn with_outcomes(&self, y: Vec<bool>) -> Result<Self> {
        if y.len() != self.design.n_rows() {
            return Err(Error::Dimension(format!(
                "{} outcomes for {} rows",
                y.len(),
                self.design.n_rows()
            )));
        }
        let mut design = self.design.clone();
        design.y = y;
        Ok(Self {
            design,
            rule: self.rule.clone(),
        })
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn loglik(&self, params: &ParameterVector) -> Result<f64> {
        let theta = self.design.pack(params)?;
        self.value(&theta)
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        self.eval(theta, false).map(|(v, _)| v)
    }

    pub fn value_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval(theta, true).map(|(v, g)| (v, g.expect("gradient requested")))
    }

    /// Per-account marginal log-likelihood contributions, in account order.
    pub fn per_account(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let d = &self.design;
        let eta0 = d.eta0(theta);
        let grids = d.grids(&d.sigmas(theta), &self.rule);
        let mut scratch = Scratch::default();
        let mut out = Vec::with_capacity(d.n_accounts());
        for (i, &(u0, u1)) in d.account_units.iter().enumerate() {
            let mut v = 0.0;
            for u in &d.units[u0..u1] {
                v += eval_unit(d, u, &eta0, &grids[u.grid], None, &mut scratch).value;
            }
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite likelihood for account {}",
                    d.account_ids[i]
                )));
            }
            out.push(v);
        }
        Ok(out)
    }

    fn eval(&self, theta: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let d = &self.design;
        if theta.len() != d.n_params() {
            return Err(Error::Dimension(format!(
                "θ has {} entries, design needs {}",
                theta.len(),
                d.n_params()
            )));
        }
        let eta0 = d.eta0(theta);
        let sigmas = d.sigmas(theta);
        let grids = d.grids(&sigmas, &self.rule);
        let n_comp = sigmas.len();
        let na = d.alpha_times.len();

        let chunks: Vec<std::result::Result<(f64, Vec<f64>, Vec<f64>), usize>> = d
            .account_units
            .par_chunks(CHUNK)
            .map(|accs| {
                let mut scratch = Scratch::default();
                let mut value = 0.0;
                let mut g_ab = if want_grad { vec![0.0; na + d.p] } else { vec![] };
                let mut g_sig = vec![0.0; n_comp];
                let mut deta = Vec::new();
                for &(u0, u1) in accs {
                    let mut acc_v = 0.0;
                    for u in &d.units[u0..u1] {
                        let rows = u.end - u.start;
                        let ev = if want_grad {
                            deta.clear();
                            deta.resize(rows, 0.0);
                            let ev = eval_unit(d, u, &eta0, &grids[u.grid], Some(&mut deta), &mut scratch);
                            for i in 0..rows {
                                let r = u.start + i;
                                let g = deta[i];
                                if na > 0 {
                                    g_ab[d.alpha_idx[r]] += g;
                                }
                                let xr = &d.x[r * d.p..(r + 1) * d.p];
                                for (k, xv) in xr.iter().enumerate() {
                                    g_ab[na + k] += g * xv;
                                }
                            }
                            ev
                        } else {
                            eval_unit(d, u, &eta0, &grids[u.grid], None, &mut scratch)
                        };
                        acc_v += ev.value;
                        match d.spec.frailty.kind {
                            FrailtyKind::None => {}
                            FrailtyKind::Intercept => g_sig[0] += ev.dsig_b,
                            FrailtyKind::Linear => {
                                g_sig[0] += ev.dsig_a;
                                g_sig[1] += ev.dsig_b;
                            }
                            FrailtyKind::Piecewise => g_sig[u.grid] += ev.dsig_b,
                        }
                    }
                    if !acc_v.is_finite() {
                        return Err(u0);
                    }
                    value += acc_v;
                }
                Ok((value, g_ab, g_sig))
            })
            .collect();

        let mut value = 0.0;
        let mut grad = if want_grad { vec![0.0; d.n_params()] } else { vec![] };
        for c in chunks {
            let (v, gab, gs) = c.map_err(|u0| {
                let acc = d.account_units.iter().position(|&(a, _)| a == u0).unwrap_or(0);
                Error::Numeric(format!("non-finite likelihood for account {}", d.account_ids[acc]))
            })?;
            value += v;
            if want_grad {
                for (g, x) in grad.iter_mut().zip(&gab) {
                    *g += x;
                }
                let off = d.sigma_offset();
                for (i, &k) in d.free.iter().enumerate() {
                    // clamp region is flat
                    if theta[off + i] >= LOG_SIGMA_FLOOR {
                        grad[off + i] += gs[k];
                    }
                }
            }
        }
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite log-likelihood".into()));
        }
        Ok((value, want_grad.then_some(grad)))
    }
}

fn require_kind(spec: &ModelSpec, kind: FrailtyKind) -> Result<()> {
    if spec.frailty.kind != kind {
        return Err(Error::Precondition(format!(
            "expected {kind:?} frailty, spec has {:?}",
            spec.frailty.kind
        )));
    }
    Ok(())
}

/// `Σ_rows [y log φ(η) + (1−y) log(1−φ(η))]` for a frailty-free spec.
pub fn loglik_fixed(spec: &ModelSpec, params: &ParameterVector, panel: &TransitionPanel) -> Result<f64> {
    require_kind(spec, FrailtyKind::None)?;
    Likelihood::new(spec, panel)?.loglik(params)
}

pub fn marginal_loglik_intercept(
    spec: &ModelSpec,
    params: &ParameterVector,
    panel: &TransitionPanel,
    rule: &QuadratureRule,
) -> Result<f64> {
    require_kind(spec, FrailtyKind::Intercept)?;
    marginal_with_rule(spec, params, panel, rule)
}

pub fn marginal_loglik_linear(
    spec: &ModelSpec,
    params: &ParameterVector,
    panel: &TransitionPanel,
    rule: &QuadratureRule,
) -> Result<f64> {
    require_kind(spec, FrailtyKind::Linear)?;
    marginal_with_rule(spec, params, panel, rule)
}

pub fn marginal_loglik_piecewise(
    spec: &ModelSpec,
    params: &ParameterVector,
    panel: &TransitionPanel,
    rule: &QuadratureRule,
) -> Result<f64> {
    require_kind(spec, FrailtyKind::Piecewise)?;
    marginal_with_rule(spec, params, panel, rule)
}

fn marginal_with_rule(
    spec: &ModelSpec,
    params: &ParameterVector,
    panel: &TransitionPanel,
    rule: &QuadratureRule,
) -> Result<f64> {
    let design = Design::new(spec, panel)?;
    let lik = Likelihood {
        design,
        rule: rule.clone(),
    };
    lik.loglik(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Pair, TransitionRow};
    use crate::model::{FrailtySpec, Segment};
    use crate::optimize::numerical_gradient;

    fn row(id: &str, t: u32, y: bool, x: &[f64]) -> TransitionRow {
        TransitionRow {
            account_id: id.into(),
            time: t,
            y,
            covariates: x.to_vec(),
        }
    }

    fn toy_panel() -> TransitionPanel {
        TransitionPanel::from_rows(
            Pair(1, 3),
            vec!["x1".into(), "x2".into()],
            vec![
                row("a", 1, true, &[0.3, 1.0]),
                row("a", 2, false, &[-0.4, 0.0]),
                row("b", 1, false, &[1.2, 1.0]),
                row("b", 3, true, &[0.1, 0.0]),
                row("b", 4, true, &[-1.5, 1.0]),
                row("c", 5, false, &[0.7, 0.0]),
                row("c", 6, true, &[0.2, 1.0]),
                row("c", 7, false, &[-0.9, 1.0]),
            ],
        )
        .unwrap()
    }

    fn spec(frailty: FrailtySpec) -> ModelSpec {
        ModelSpec::new(Pair(1, 3), frailty, BaselineSpec::None, vec!["x1".into(), "x2".into()]).unwrap()
    }

    #[test]
    fn log_bernoulli_is_clamped() {
        let (lp, d) = log_bernoulli(true, -100.0);
        assert_eq!(lp, P_FLOOR.ln());
        assert_eq!(d, 0.0);
        let (lp, _) = log_bernoulli(true, 0.0);
        assert!((lp - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn single_row_fixed() {
        let p = TransitionPanel::from_rows(Pair(1, 1), vec![], vec![row("a", 1, true, &[])]).unwrap();
        let s = ModelSpec::new(Pair(1, 1), FrailtySpec::none(), BaselineSpec::PiecewiseTime, vec![]).unwrap();
        let params = ParameterVector::initial(&s, &[1]);
        let v = loglik_fixed(&s, &params, &p).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_parameters_give_n_log_half() {
        let p = toy_panel();
        let s = spec(FrailtySpec::none());
        let params = ParameterVector::initial(&s, &[]);
        let v = loglik_fixed(&s, &params, &p).unwrap();
        assert!((v - 8.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fixed_matches_direct_sum() {
        let p = toy_panel();
        let s = spec(FrailtySpec::none());
        let mut params = ParameterVector::initial(&s, &[]);
        params.beta = vec![0.2, 0.5, -1.2];
        let direct: f64 = p
            .rows
            .iter()
            .map(|r| {
                let eta = 0.2 + 0.5 * r.covariates[0] - 1.2 * r.covariates[1];
                let pr = 1.0 / (1.0 + (-eta).exp());
                if r.y {
                    pr.ln()
                } else {
                    (1.0 - pr).ln()
                }
            })
            .sum();
        assert!((loglik_fixed(&s, &params, &p).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn symmetric_single_row_intercept() {
        let p = TransitionPanel::from_rows(Pair(1, 1), vec![], vec![row("a", 1, true, &[])]).unwrap();
        let s = ModelSpec::new(Pair(1, 1), FrailtySpec::intercept(), BaselineSpec::PiecewiseTime, vec![]).unwrap();
        let mut params = ParameterVector::initial(&s, &[1]);
        params.log_sigma = vec![Some(0.0)];
        let rule = gauss_hermite(30).unwrap();
        let v = marginal_loglik_intercept(&s, &params, &p, &rule).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn degenerate_frailties_match_fixed() {
        let p = toy_panel();
        let beta = vec![0.1, -0.7, 0.9];
        let mut fixed = ParameterVector::initial(&spec(FrailtySpec::none()), &[]);
        fixed.beta = beta.clone();
        let base = loglik_fixed(&spec(FrailtySpec::none()), &fixed, &p).unwrap();
        for f in [FrailtySpec::intercept(), FrailtySpec::linear(), FrailtySpec::piecewise_default()] {
            let s = spec(f);
            let mut params = ParameterVector::initial(&s, &[]);
            params.beta = beta.clone();
            params.log_sigma.iter_mut().for_each(|v| *v = Some(-12.0));
            let v = Likelihood::new(&s, &p).unwrap().loglik(&params).unwrap();
            assert!((v - base).abs() < 1e-8 * 8.0, "{:?}", s.frailty.kind);
        }
    }

    #[test]
    fn slope_free_linear_equals_intercept() {
        let p = toy_panel();
        let rule = gauss_hermite(20).unwrap();
        let si = spec(FrailtySpec::intercept());
        let sl = spec(FrailtySpec::linear());
        let mut pi = ParameterVector::initial(&si, &[]);
        pi.beta = vec![0.3, 0.2, -0.5];
        pi.log_sigma = vec![Some(0.9f64.ln())];
        let mut pl = ParameterVector::initial(&sl, &[]);
        pl.beta = pi.beta.clone();
        pl.log_sigma = vec![Some(-30.0), Some(0.9f64.ln())];
        let vi = marginal_loglik_intercept(&si, &pi, &p, &rule).unwrap();
        let vl = marginal_loglik_linear(&sl, &pl, &p, &rule).unwrap();
        // σ_a sits at the e^-10 clamp, not exactly zero
        assert!((vi - vl).abs() < 1e-8 * 8.0, "{vi} vs {vl}");
    }

    #[test]
    fn single_segment_piecewise_equals_intercept() {
        let p = toy_panel();
        let rule = gauss_hermite(20).unwrap();
        let si = spec(FrailtySpec::intercept());
        let sp = spec(FrailtySpec::piecewise(vec![Segment { start: 1, end: 7 }]).unwrap());
        let mut pi = ParameterVector::initial(&si, &[]);
        pi.beta = vec![-0.3, 0.4, 0.1];
        pi.log_sigma = vec![Some(1.3f64.ln())];
        let mut pp = pi.clone();
        pp.log_sigma = vec![Some(1.3f64.ln())];
        let vi = marginal_loglik_intercept(&si, &pi, &p, &rule).unwrap();
        let vp = marginal_loglik_piecewise(&sp, &pp, &p, &rule).unwrap();
        assert!((vi - vp).abs() < 1e-10);
    }

    #[test]
    fn wrong_kind_is_precondition_error() {
        let p = toy_panel();
        let s = spec(FrailtySpec::intercept());
        let params = ParameterVector::initial(&s, &[]);
        assert!(matches!(loglik_fixed(&s, &params, &p), Err(Error::Precondition(_))));
    }

    #[test]
    fn analytic_gradient_matches_numerical() {
        let p = toy_panel();
        for (f, ls) in [
            (FrailtySpec::none(), vec![]),
            (FrailtySpec::intercept(), vec![0.2]),
            (FrailtySpec::linear(), vec![-0.8, 0.1]),
            (FrailtySpec::piecewise_default(), vec![0.3, -0.4, 0.0]),
            (FrailtySpec::linear().with_zero(0).unwrap(), vec![0.5]),
        ] {
            let s = spec(f);
            let lik = Likelihood::new(&s, &p).unwrap();
            let mut theta = vec![0.2, -0.6, 0.8];
            theta.extend(ls);
            let (_, g) = lik.value_grad(&theta).unwrap();
            let ng = numerical_gradient(|x| lik.value(x), &theta, 1e-5).unwrap();
            for (a, b) in g.iter().zip(&ng) {
                assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{:?}: {a} vs {b}", s.frailty.kind);
            }
        }
    }

    #[test]
    fn baseline_gradient_matches_numerical() {
        let p = toy_panel();
        let s = ModelSpec::new(
            Pair(1, 3),
            FrailtySpec::intercept(),
            BaselineSpec::PiecewiseTime,
            vec!["x1".into()],
        )
        .unwrap();
        let lik = Likelihood::new(&s, &p).unwrap();
        let n = lik.design().n_params();
        let theta: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.3).collect();
        let (_, g) = lik.value_grad(&theta).unwrap();
        let ng = numerical_gradient(|x| lik.value(x), &theta, 1e-5).unwrap();
        for (a, b) in g.iter().zip(&ng) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
        }
    }
}
