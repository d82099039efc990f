//! Marginal transition probabilities, competing-risk adjustment and
//! multi-step landing distributions.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Pair, State, STATES};
use crate::error::{Error, Result};
use crate::estimation::FittedModel;
use crate::likelihood::logistic;
use crate::model::{BaselineSpec, FrailtyKind, ModelSpec, ParameterVector};
use crate::quadrature::{gauss_hermite, QuadratureRule};

pub type Matrix3 = [[f64; 3]; 3];

/// Coefficients for one pair, with the quadrature rule used to marginalise.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    pub spec: ModelSpec,
    pub params: ParameterVector,
    rule: QuadratureRule,
}

impl TransitionModel {
    pub fn new(spec: ModelSpec, params: ParameterVector) -> Result<Self> {
        let rule = gauss_hermite(spec.quadrature_order)?;
        Ok(Self { spec, params, rule })
    }

    pub fn from_fit(fit: &FittedModel) -> Result<Self> {
        Self::new(fit.spec.clone(), fit.params.clone())
    }

    /// `α_t + X'β`; `x` aligned to the spec's covariate names.
    pub fn fixed_part(&self, x: &[f64], t: u32) -> Result<f64> {
        let mut eta = self.params.x_beta(x)?;
        if self.spec.baseline == BaselineSpec::PiecewiseTime {
            eta += *self.params.alpha.get(&t).ok_or_else(|| {
                Error::Extrapolation(format!(
                    "no baseline estimate for time {t} in the {} model",
                    self.spec.pair
                ))
            })?;
        }
        Ok(eta)
    }

    /// `E_U[φ(η + frailty)]` under the fitted frailty law.
    pub fn marginal(&self, x: &[f64], t: u32) -> Result<f64> {
        let eta = self.fixed_part(x, t)?;
        let s = self.params.sigmas();
        let nodes = self.rule.nodes();
        let w = self.rule.normalized_weights();
        let one_d = |sigma: f64, coef: f64| -> f64 {
            if sigma == 0.0 {
                return logistic(eta);
            }
            nodes
                .iter()
                .zip(&w)
                .map(|(&z, &wq)| wq * logistic(eta + SQRT_2 * sigma * z * coef))
                .sum()
        };
        let p = match self.spec.frailty.kind {
            FrailtyKind::None => logistic(eta),
            FrailtyKind::Intercept => one_d(s[0], 1.0),
            FrailtyKind::Piecewise => {
                let k = self.spec.frailty.segment_of(t).ok_or_else(|| {
                    Error::Configuration(format!("time {t} outside every frailty segment"))
                })?;
                one_d(s[k], 1.0)
            }
            FrailtyKind::Linear => {
                let (sa, sb) = (s[0], s[1]);
                let tf = t as f64;
                if sa == 0.0 {
                    one_d(sb, 1.0)
                } else if sb == 0.0 {
                    one_d(sa, tf)
                } else {
                    let mut total = 0.0;
                    for (&za, &wa) in nodes.iter().zip(&w) {
                        let a = SQRT_2 * sa * za * tf;
                        for (&zb, &wb) in nodes.iter().zip(&w) {
                            total += wa * wb * logistic(eta + a + SQRT_2 * sb * zb);
                        }
                    }
                    total
                }
            }
        };
        Ok(p.clamp(0.0, 1.0))
    }
}

/// Marginal probability for one row of covariates at time `t`.
pub fn predict_marginal(fit: &FittedModel, x: &[f64], t: u32) -> Result<f64> {
    TransitionModel::from_fit(fit)?.marginal(x, t)
}

/// Probabilities for every destination of one origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalProbs {
    pub origin: State,
    /// Indexed by destination − 1.
    pub probs: [f64; 3],
    pub reconstructed: Option<State>,
    /// Raw residual before clamping, when the clamp changed it.
    pub clamped_from: Option<f64>,
}

/// Fills the single unmodeled destination with the residual mass.
pub fn reconstruct_full_row(modeled: &BTreeMap<State, f64>, origin: State) -> Result<MarginalProbs> {
    let missing: Vec<State> = STATES.iter().copied().filter(|s| !modeled.contains_key(s)).collect();
    if missing.len() > 1 {
        return Err(Error::Unsupported(format!(
            "origin {origin} leaves {} destinations unmodeled",
            missing.len()
        )));
    }
    let mut probs = [0.0; 3];
    for (&j, &q) in modeled {
        if !(1..=3).contains(&j) {
            return Err(Error::InvalidArgument(format!("destination {j} is not a state")));
        }
        probs[j as usize - 1] = q;
    }
    let mut clamped_from = None;
    let reconstructed = missing.first().copied();
    if let Some(j) = reconstructed {
        let raw = 1.0 - modeled.values().sum::<f64>();
        let v = raw.clamp(0.0, 1.0);
        if v != raw {
            clamped_from = Some(raw);
        }
        probs[j as usize - 1] = v;
    }
    Ok(MarginalProbs {
        origin,
        probs,
        reconstructed,
        clamped_from,
    })
}

/// `q̃_j = q_j (1 − ½ Σ_{k≠j} q_k + ⅓ Σ_{k<r; k,r≠j} q_k q_r)`.
pub fn competing_adjust(q: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for j in 0..3 {
        let others: Vec<f64> = (0..3).filter(|&k| k != j).map(|k| q[k]).collect();
        let sum: f64 = others.iter().sum();
        let mut pairs = 0.0;
        for a in 0..others.len() {
            for b in a + 1..others.len() {
                pairs += others[a] * others[b];
            }
        }
        out[j] = q[j] * (1.0 - 0.5 * sum + pairs / 3.0);
    }
    out
}

/// Row divided by its sum; an all-zero row becomes the origin's identity row.
pub fn normalize_row(q: [f64; 3], origin: State) -> ([f64; 3], bool) {
    let s: f64 = q.iter().sum();
    if s > 0.0 && s.is_finite() {
        ([q[0] / s, q[1] / s, q[2] / s], false)
    } else {
        let mut e = [0.0; 3];
        e[origin as usize - 1] = 1.0;
        (e, true)
    }
}

/// One origin row after reconstruct → adjust → normalise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedRow {
    pub marginal: MarginalProbs,
    /// Competing-adjusted values before normalisation.
    pub raw_adjusted: [f64; 3],
    pub probs: [f64; 3],
    pub degenerate: bool,
}

pub fn adjusted_row(modeled: &BTreeMap<State, f64>, origin: State) -> Result<AdjustedRow> {
    let marginal = reconstruct_full_row(modeled, origin)?;
    let raw_adjusted = competing_adjust(marginal.probs);
    let (probs, degenerate) = normalize_row(raw_adjusted, origin);
    Ok(AdjustedRow {
        marginal,
        raw_adjusted,
        probs,
        degenerate,
    })
}

pub fn mat_mul(a: &Matrix3, b: &Matrix3) -> Matrix3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn identity3() -> Matrix3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// Named covariates of one account by time.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountHistory {
    pub account_id: String,
    pub covariate_names: Vec<String>,
    pub by_time: BTreeMap<u32, Vec<f64>>,
}

/// Fitted sub-models for every modeled pair.
#[derive(Debug, Clone)]
pub struct MultistateModel {
    models: BTreeMap<Pair, TransitionModel>,
}

impl MultistateModel {
    pub fn new(models: BTreeMap<Pair, TransitionModel>) -> Result<Self> {
        for (pair, m) in &models {
            if m.spec.pair != *pair {
                return Err(Error::SpecMismatch(format!("model for {} stored under {pair}", m.spec.pair)));
            }
        }
        let ms = Self { models };
        for h in STATES {
            let n = ms.models.keys().filter(|p| p.origin() == h).count();
            if n > 0 && n < 2 {
                return Err(Error::Unsupported(format!(
                    "origin {h} has {n} modeled destination; need at least two"
                )));
            }
        }
        Ok(ms)
    }

    pub fn from_fits(fits: &BTreeMap<Pair, FittedModel>) -> Result<Self> {
        let models = fits
            .iter()
            .map(|(p, f)| Ok((*p, TransitionModel::from_fit(f)?)))
            .collect::<Result<_>>()?;
        Self::new(models)
    }

    pub fn models(&self) -> &BTreeMap<Pair, TransitionModel> {
        &self.models
    }

    /// Aligns the model's covariates from a named row.
    fn aligned(m: &TransitionModel, names: &[String], row: &[f64]) -> Result<Vec<f64>> {
        m.spec
            .covariate_names
            .iter()
            .map(|n| {
                names
                    .iter()
                    .position(|c| c == n)
                    .map(|i| row[i])
                    .ok_or_else(|| Error::Schema(format!("covariate '{n}' missing from history")))
            })
            .collect()
    }

    /// Single-step matrix `P̃(t)` plus its raw adjusted rows.
    pub fn step_matrix(&self, names: &[String], row: &[f64], t: u32) -> Result<(Matrix3, Matrix3, Vec<String>)> {
        let mut p = identity3();
        let mut raw = identity3();
        let mut flags = Vec::new();
        for h in STATES {
            let mut modeled = BTreeMap::new();
            for (pair, m) in self.models.iter().filter(|(p, _)| p.origin() == h) {
                let x = Self::aligned(m, names, row)?;
                modeled.insert(pair.destination(), m.marginal(&x, t)?);
            }
            if modeled.is_empty() {
                continue;
            }
            let r = adjusted_row(&modeled, h)?;
            if let Some(v) = r.marginal.clamped_from {
                flags.push(format!("t={t} origin {h}: residual {v:.6} clamped"));
            }
            if r.degenerate {
                flags.push(format!("t={t} origin {h}: all-zero row replaced by identity"));
            }
            p[h as usize - 1] = r.probs;
            raw[h as usize - 1] = r.raw_adjusted;
        }
        Ok((p, raw, flags))
    }

    pub fn build_matrix_sequence(
        &self,
        history: &AccountHistory,
        origin: State,
        t1: u32,
        t2: u32,
    ) -> Result<TransitionMatrixSequence> {
        if t1 >= t2 {
            return Err(Error::InvalidArgument(format!("need t1 < t2, got {t1} and {t2}")));
        }
        if !(1..=3).contains(&origin) {
            return Err(Error::InvalidArgument(format!("origin {origin} is not a state")));
        }
        let mut matrices = BTreeMap::new();
        let mut raw = BTreeMap::new();
        let mut flags = Vec::new();
        let mut cumulative = identity3();
        for t in t1 + 1..=t2 {
            let row = history.by_time.get(&t).ok_or_else(|| {
                Error::Data(format!("covariates missing for account {} at time {t}", history.account_id))
            })?;
            let (p, r, f) = self.step_matrix(&history.covariate_names, row, t)?;
            cumulative = mat_mul(&cumulative, &p);
            matrices.insert(t, p);
            raw.insert(t, r);
            flags.extend(f);
        }
        let landing = cumulative[origin as usize - 1];
        Ok(TransitionMatrixSequence {
            account_id: history.account_id.clone(),
            origin,
            t1,
            t2,
            matrices,
            raw_adjusted: raw,
            cumulative,
            landing,
            flags,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrixSequence {
    pub account_id: String,
    pub origin: State,
    pub t1: u32,
    pub t2: u32,
    pub matrices: BTreeMap<u32, Matrix3>,
    pub raw_adjusted: BTreeMap<u32, Matrix3>,
    pub cumulative: Matrix3,
    /// `v(t₂) = e_h · P̃(t₁, t₂)`.
    pub landing: [f64; 3],
    pub flags: Vec<String>,
}

/// Convenience wrapper over [`MultistateModel::build_matrix_sequence`].
pub fn build_matrix_sequence(
    fits: &BTreeMap<Pair, FittedModel>,
    history: &AccountHistory,
    origin: State,
    t1: u32,
    t2: u32,
) -> Result<TransitionMatrixSequence> {
    MultistateModel::from_fits(fits)?.build_matrix_sequence(history, origin, t1, t2)
}

pub fn write_landing_csv<P: AsRef<Path>>(seqs: &[TransitionMatrixSequence], path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["account_id", "t1", "t2", "origin", "p_land_1", "p_land_2", "p_land_3"])?;
    for s in seqs {
        w.write_record([
            s.account_id.clone(),
            s.t1.to_string(),
            s.t2.to_string(),
            s.origin.to_string(),
            format!("{:.12}", s.landing[0]),
            format!("{:.12}", s.landing[1]),
            format!("{:.12}", s.landing[2]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_sidecar<P: AsRef<Path>>(seqs: &[TransitionMatrixSequence], path: P) -> Result<()> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), seqs)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FrailtySpec;

    fn row(pairs: &[(State, f64)]) -> BTreeMap<State, f64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn residual_reconstruction() {
        let r = reconstruct_full_row(&row(&[(1, 0.7), (3, 0.2)]), 1).unwrap();
        assert!((r.probs[1] - 0.1).abs() < 1e-15);
        assert_eq!(r.reconstructed, Some(2));
        let r = reconstruct_full_row(&row(&[(1, 0.8), (3, 0.3)]), 1).unwrap();
        assert_eq!(r.probs[1], 0.0);
        assert!((r.clamped_from.unwrap() + 0.1).abs() < 1e-12);
        let r = reconstruct_full_row(&row(&[(1, 1.0), (3, 0.0)]), 1).unwrap();
        assert_eq!(r.probs, [1.0, 0.0, 0.0]);
        assert!(matches!(reconstruct_full_row(&row(&[(1, 0.3)]), 1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn competing_values() {
        assert_eq!(competing_adjust([0.0; 3]), [0.0; 3]);
        assert_eq!(competing_adjust([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
        let q = competing_adjust([0.5, 0.3, 0.2]);
        assert!((q[0] - 0.385).abs() < 1e-12);
        assert!((q[1] - 0.205).abs() < 1e-12);
        assert!((q[2] - 0.13).abs() < 1e-12);
    }

    #[test]
    fn zero_row_becomes_identity() {
        let (r, d) = normalize_row([0.0; 3], 2);
        assert!(d);
        assert_eq!(r, [0.0, 1.0, 0.0]);
    }

    fn intercept_model(beta: f64, sigma: f64) -> TransitionModel {
        let spec = ModelSpec::new(Pair(1, 1), FrailtySpec::intercept(), BaselineSpec::None, vec![]).unwrap();
        let mut p = ParameterVector::initial(&spec, &[]);
        p.beta = vec![beta];
        p.log_sigma = vec![Some(sigma.ln())];
        TransitionModel::new(spec, p).unwrap()
    }

    #[test]
    fn symmetric_marginal_is_half() {
        for s in [0.3, 1.0, 2.5] {
            assert!((intercept_model(0.0, s).marginal(&[], 3).unwrap() - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_without_slope_matches_intercept() {
        let spec = ModelSpec::new(Pair(1, 1), FrailtySpec::linear().with_zero(0).unwrap(), BaselineSpec::None, vec![]).unwrap();
        let mut p = ParameterVector::initial(&spec, &[]);
        p.beta = vec![0.7];
        p.log_sigma = vec![None, Some(1.3f64.ln())];
        let lin = TransitionModel::new(spec, p).unwrap();
        let a = lin.marginal(&[], 4).unwrap();
        let b = intercept_model(0.7, 1.3).marginal(&[], 4).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn missing_baseline_time_is_extrapolation() {
        let spec = ModelSpec::new(Pair(1, 1), FrailtySpec::none(), BaselineSpec::PiecewiseTime, vec![]).unwrap();
        let p = ParameterVector::initial(&spec, &[1, 2]);
        let m = TransitionModel::new(spec, p).unwrap();
        assert!(m.marginal(&[], 2).is_ok());
        assert!(matches!(m.marginal(&[], 5), Err(Error::Extrapolation(_))));
    }
}
