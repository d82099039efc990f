//! Parametric bootstrap likelihood-ratio tests for variance components.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TransitionPanel;
use crate::error::{Error, Result};
use crate::estimation::optimize_theta;
use crate::likelihood::{logistic, Design, Likelihood};
use crate::model::{FrailtyKind, FrailtySpec, ModelSpec, ParameterVector};
use crate::optimize::OptimizerConfig;
use crate::rng::{child_seed, keyed, DOMAIN_LRT};

/// Share of dropped replicates above which a result is flagged unreliable.
pub const MAX_DROP_SHARE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "component")]
pub enum LrtLabel {
    InterceptVsFixed,
    SlopeGivenIntercept,
    InterceptGivenSlope,
    PiecewiseGlobal,
    PiecewiseComponent(usize),
}

impl fmt::Display for LrtLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InterceptVsFixed => write!(f, "intercept_vs_fixed"),
            Self::SlopeGivenIntercept => write!(f, "slope_given_intercept"),
            Self::InterceptGivenSlope => write!(f, "intercept_given_slope"),
            Self::PiecewiseGlobal => write!(f, "piecewise_global"),
            Self::PiecewiseComponent(k) => write!(f, "piecewise_component_{}", k + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtHypothesis {
    pub full: ModelSpec,
    pub reduced: ModelSpec,
    pub label: LrtLabel,
}

impl LrtHypothesis {
    pub fn new(full: ModelSpec, reduced: ModelSpec, label: LrtLabel) -> Result<Self> {
        let h = Self { full, reduced, label };
        h.check_nested()?;
        Ok(h)
    }

    /// `σ_u = 0` against a free intercept frailty on the same covariates.
    pub fn intercept_vs_fixed(full: &ModelSpec) -> Result<Self> {
        if full.frailty.kind != FrailtyKind::Intercept {
            return Err(Error::Configuration("full model must have an intercept frailty".into()));
        }
        Self::new(full.clone(), full.with_frailty(FrailtySpec::none())?, LrtLabel::InterceptVsFixed)
    }

    /// `σ_a = 0` with `σ_b` free.
    pub fn slope_given_intercept(full: &ModelSpec) -> Result<Self> {
        Self::linear_component(full, 0, LrtLabel::SlopeGivenIntercept)
    }

    /// `σ_b = 0` with `σ_a` free.
    pub fn intercept_given_slope(full: &ModelSpec) -> Result<Self> {
        Self::linear_component(full, 1, LrtLabel::InterceptGivenSlope)
    }

    fn linear_component(full: &ModelSpec, k: usize, label: LrtLabel) -> Result<Self> {
        if full.frailty.kind != FrailtyKind::Linear {
            return Err(Error::Configuration("full model must have a linear frailty".into()));
        }
        let reduced = full.with_frailty(full.frailty.clone().with_zero(k)?)?;
        Self::new(full.clone(), reduced, label)
    }

    pub fn piecewise_global(full: &ModelSpec) -> Result<Self> {
        if full.frailty.kind != FrailtyKind::Piecewise {
            return Err(Error::Configuration("full model must have a piecewise frailty".into()));
        }
        Self::new(full.clone(), full.with_frailty(FrailtySpec::none())?, LrtLabel::PiecewiseGlobal)
    }

    pub fn piecewise_component(full: &ModelSpec, k: usize) -> Result<Self> {
        if full.frailty.kind != FrailtyKind::Piecewise {
            return Err(Error::Configuration("full model must have a piecewise frailty".into()));
        }
        let reduced = full.with_frailty(full.frailty.clone().with_zero(k)?)?;
        Self::new(full.clone(), reduced, LrtLabel::PiecewiseComponent(k))
    }

    fn check_nested(&self) -> Result<()> {
        let (f, r) = (&self.full, &self.reduced);
        if f.pair != r.pair || f.covariate_names != r.covariate_names || f.baseline != r.baseline {
            return Err(Error::Configuration(
                "reduced model must share pair, covariates and baseline with the full model".into(),
            ));
        }
        let nested = match r.frailty.kind {
            FrailtyKind::None => f.frailty.kind != FrailtyKind::None,
            k => {
                k == f.frailty.kind
                    && r.frailty.segments == f.frailty.segments
                    && r.frailty.free_components().iter().all(|c| f.frailty.is_free(*c))
                    && r.frailty.free_components().len() < f.frailty.free_components().len()
            }
        };
        if !nested {
            return Err(Error::Configuration("reduced model is not nested in the full model".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub label: LrtLabel,
    pub loglik_reduced: f64,
    pub loglik_full: f64,
    pub observed_lambda: f64,
    /// Statistics of the retained replicates, in replicate order.
    pub bootstrap_lambdas: Vec<f64>,
    pub p_value: f64,
    /// Requested replicate count.
    pub b: usize,
    pub dropped: usize,
    pub unreliable: bool,
    pub truncation_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrtConfig {
    pub optimizer: OptimizerConfig,
    /// Gate for the per-segment tests after the global piecewise test.
    pub level: f64,
}

impl Default for LrtConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            level: 0.05,
        }
    }
}

/// Draws outcomes from `design` at `theta`, with fresh frailties per account
/// (per account and segment for piecewise specs).
pub(crate) fn simulate_outcomes<R: Rng>(design: &Design, theta: &[f64], rng: &mut R) -> Vec<bool> {
    let eta0 = design.eta0(theta);
    let sig = design.sigmas(theta);
    let kind = design.spec.frailty.kind;
    let mut y = vec![false; design.n_rows()];
    for &(u0, u1) in &design.account_units {
        let (a, b) = match kind {
            FrailtyKind::Linear => {
                let za: f64 = StandardNormal.sample(rng);
                let zb: f64 = StandardNormal.sample(rng);
                (sig[0] * za, sig[1] * zb)
            }
            FrailtyKind::Intercept => {
                let z: f64 = StandardNormal.sample(rng);
                (0.0, sig[0] * z)
            }
            _ => (0.0, 0.0),
        };
        for unit in &design.units[u0..u1] {
            let seg = if kind == FrailtyKind::Piecewise {
                let z: f64 = StandardNormal.sample(rng);
                sig[unit.grid] * z
            } else {
                0.0
            };
            for r in unit.start..unit.end {
                let off = a * design.time[r] as f64 + b + seg;
                y[r] = rng.random::<f64>() < logistic(eta0[r] + off);
            }
        }
    }
    y
}

fn start_theta(lik: &Likelihood) -> Result<Vec<f64>> {
    let d = lik.design();
    d.pack(&ParameterVector::initial(d.spec(), d.alpha_times()))
}

/// Full-model start from a reduced estimate: shared entries copied, new
/// variance components at `log 0.3`.
fn embed(full: &Design, reduced: &Design, theta_r: &[f64]) -> Vec<f64> {
    let mut params = reduced.unpack(theta_r);
    let n = full.spec.frailty.n_components();
    let mut ls = vec![None; n];
    for (k, slot) in ls.iter_mut().enumerate() {
        if full.spec.frailty.is_free(k) {
            *slot = Some(params.log_sigma.get(k).copied().flatten().unwrap_or(0.3f64.ln()));
        }
    }
    params.log_sigma = ls;
    full.pack(&params).expect("nested layouts agree")
}

struct PairFit {
    l0: f64,
    l1: f64,
    theta0: Vec<f64>,
    theta1: Vec<f64>,
}

fn fit_pair(
    lik0: &Likelihood,
    lik1: &Likelihood,
    start0: &[f64],
    start1: &[f64],
    cfg: &OptimizerConfig,
) -> Result<Option<PairFit>> {
    let r0 = optimize_theta(lik0, start0, cfg)?;
    if !r0.converged {
        return Ok(None);
    }
    let mut r1 = optimize_theta(lik1, start1, cfg)?;
    // a full fit below the nested optimum is a local solution; retry from the reduced one
    if !r1.converged || r1.f < r0.f - 1e-6 {
        let alt = optimize_theta(lik1, &embed(lik1.design(), lik0.design(), &r0.x), cfg)?;
        if alt.converged && (!r1.converged || alt.f > r1.f) {
            r1 = alt;
        }
    }
    if !r1.converged {
        return Ok(None);
    }
    Ok(Some(PairFit {
        l0: r0.f,
        l1: r1.f,
        theta0: r0.x,
        theta1: r1.x,
    }))
}

/// `Λ = max(0, 2(ℓ₁ − ℓ₀))` on the data and on `b` replicates simulated from
/// the fitted reduced model; `p = (1 + #{Λ_b ≥ Λ_obs}) / (B_used + 1)`.
pub fn run_bootstrap_lrt(
    hyp: &LrtHypothesis,
    panel: &TransitionPanel,
    b: usize,
    seed: u64,
    cfg: &LrtConfig,
) -> Result<LrtResult> {
    if b == 0 {
        return Err(Error::InvalidArgument("bootstrap needs B ≥ 1".into()));
    }
    hyp.check_nested()?;
    let lik0 = Likelihood::new(&hyp.reduced, panel)?;
    let lik1 = Likelihood::new(&hyp.full, panel)?;
    let obs = fit_pair(&lik0, &lik1, &start_theta(&lik0)?, &start_theta(&lik1)?, &cfg.optimizer)?
        .ok_or_else(|| Error::Numeric("observed-data fits did not converge".into()))?;
    let observed_lambda = (2.0 * (obs.l1 - obs.l0)).max(0.0);

    let reps: Vec<Result<Option<f64>>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = keyed(seed, DOMAIN_LRT, i as u64);
            let y = simulate_outcomes(lik0.design(), &obs.theta0, &mut rng);
            let l0 = lik0.with_outcomes(y.clone())?;
            let l1 = lik1.with_outcomes(y)?;
            let fit = fit_pair(&l0, &l1, &obs.theta0, &obs.theta1, &cfg.optimizer)?;
            Ok(fit.map(|f| 2.0 * (f.l1 - f.l0)))
        })
        .collect();

    let mut lambdas = Vec::with_capacity(b);
    let mut dropped = 0;
    let mut truncation_count = 0;
    for r in reps {
        match r {
            Ok(Some(raw)) => {
                if raw < 0.0 {
                    truncation_count += 1;
                }
                lambdas.push(raw.max(0.0));
            }
            Ok(None) | Err(Error::Numeric(_)) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    let exceed = lambdas.iter().filter(|l| **l >= observed_lambda).count();
    let p_value = (1 + exceed) as f64 / (lambdas.len() + 1) as f64;
    Ok(LrtResult {
        label: hyp.label,
        loglik_reduced: obs.l0,
        loglik_full: obs.l1,
        observed_lambda,
        bootstrap_lambdas: lambdas,
        p_value,
        b,
        dropped,
        unreliable: dropped as f64 > MAX_DROP_SHARE * b as f64,
        truncation_count,
        seed,
    })
}

/// Global test of all segment variances, then one test per segment when the
/// global p-value is at most `cfg.level`.
pub fn piecewise_test_sequence(
    full: &ModelSpec,
    panel: &TransitionPanel,
    b: usize,
    seed: u64,
    cfg: &LrtConfig,
) -> Result<Vec<LrtResult>> {
    let global = run_bootstrap_lrt(
        &LrtHypothesis::piecewise_global(full)?,
        panel,
        b,
        child_seed(seed, DOMAIN_LRT, 0),
        cfg,
    )?;
    let gate = global.p_value <= cfg.level;
    let mut out = vec![global];
    if gate {
        for k in 0..full.frailty.n_components() {
            let hyp = LrtHypothesis::piecewise_component(full, k)?;
            out.push(run_bootstrap_lrt(&hyp, panel, b, child_seed(seed, DOMAIN_LRT, k as u64 + 1), cfg)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width bins over `[0, max Λ_b]`.
pub fn lambda_histogram(lambdas: &[f64], bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let max = lambdas.iter().copied().fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lower: i as f64 * width,
            upper: (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &l in lambdas {
        let i = ((l / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtReport {
    pub hypothesis: String,
    pub observed_lambda: f64,
    pub loglik_reduced: f64,
    pub loglik_full: f64,
    pub b: usize,
    pub b_used: usize,
    pub dropped: usize,
    pub unreliable: bool,
    pub p_value: f64,
    pub p_value_estimator: String,
    pub truncation_count: usize,
    pub seed: u64,
    pub histogram: Vec<HistogramBin>,
}

impl From<&LrtResult> for LrtReport {
    fn from(r: &LrtResult) -> Self {
        Self {
            hypothesis: r.label.to_string(),
            observed_lambda: r.observed_lambda,
            loglik_reduced: r.loglik_reduced,
            loglik_full: r.loglik_full,
            b: r.b,
            b_used: r.bootstrap_lambdas.len(),
            dropped: r.dropped,
            unreliable: r.unreliable,
            p_value: r.p_value,
            p_value_estimator: "(1 + #{lambda_b >= lambda_obs}) / (B_used + 1)".into(),
            truncation_count: r.truncation_count,
            seed: r.seed,
            histogram: lambda_histogram(&r.bootstrap_lambdas, 20),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Pair;
    use crate::model::BaselineSpec;

    fn spec(f: FrailtySpec) -> ModelSpec {
        ModelSpec::new(Pair(1, 1), f, BaselineSpec::None, vec!["x1".into()]).unwrap()
    }

    #[test]
    fn nesting_rules() {
        assert!(LrtHypothesis::intercept_vs_fixed(&spec(FrailtySpec::intercept())).is_ok());
        assert!(LrtHypothesis::slope_given_intercept(&spec(FrailtySpec::linear())).is_ok());
        assert!(LrtHypothesis::piecewise_component(&spec(FrailtySpec::piecewise_default()), 2).is_ok());
        assert!(LrtHypothesis::new(
            spec(FrailtySpec::intercept()),
            spec(FrailtySpec::linear()),
            LrtLabel::InterceptVsFixed
        )
        .is_err());
        assert!(LrtHypothesis::intercept_vs_fixed(&spec(FrailtySpec::linear())).is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = lambda_histogram(&[0.0, 0.5, 1.0, 3.0], 3);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 4);
        assert_eq!(h[2].count, 1);
        let h = lambda_histogram(&[0.0, 0.0], 4);
        assert_eq!(h[0].count, 2);
    }
}
