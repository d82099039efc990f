//! Model specifications and parameter vectors for the four logit-link variants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Pair, TransitionPanel};
use crate::error::{Error, Result};
use crate::quadrature::DEFAULT_ORDER;

pub const INTERCEPT_NAME: &str = "(Intercept)";

/// Lower clamp applied to every log-scale variance component at evaluation time.
pub const LOG_SIGMA_FLOOR: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrailtyKind {
    None,
    Intercept,
    Linear,
    Piecewise,
}

/// Closed time interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: u32,
    pub end: u32,
}

impl Segment {
    pub fn contains(&self, t: u32) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Frailty structure plus any variance components pinned at zero (reduced models).
///
/// Components: intercept `[σ_u]`; linear `[σ_a (slope), σ_b (intercept)]`;
/// piecewise one `σ_k` per segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrailtySpec {
    pub kind: FrailtyKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pinned_zero: Vec<usize>,
}

impl FrailtySpec {
    pub fn none() -> Self {
        Self {
            kind: FrailtyKind::None,
            segments: vec![],
            pinned_zero: vec![],
        }
    }

    pub fn intercept() -> Self {
        Self {
            kind: FrailtyKind::Intercept,
            ..Self::none()
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: FrailtyKind::Linear,
            ..Self::none()
        }
    }

    pub fn piecewise(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Configuration("piecewise frailty needs at least one segment".into()));
        }
        for s in &segments {
            if s.start > s.end {
                return Err(Error::Configuration(format!(
                    "segment [{}, {}] is empty",
                    s.start, s.end
                )));
            }
        }
        for w in segments.windows(2) {
            if w[1].start <= w[0].end {
                return Err(Error::Configuration(
                    "piecewise segments must be disjoint and ordered".into(),
                ));
            }
        }
        Ok(Self {
            kind: FrailtyKind::Piecewise,
            segments,
            pinned_zero: vec![],
        })
    }

    /// `{1,2,3}`, `{4,5}`, `{6,7}`.
    pub fn piecewise_default() -> Self {
        Self::piecewise(vec![
            Segment { start: 1, end: 3 },
            Segment { start: 4, end: 5 },
            Segment { start: 6, end: 7 },
        ])
        .expect("static segments")
    }

    /// Same structure with component `k` fixed at σ = 0.
    pub fn with_zero(mut self, k: usize) -> Result<Self> {
        if k >= self.n_components() {
            return Err(Error::InvalidArgument(format!(
                "component {k} out of range for {:?} frailty",
                self.kind
            )));
        }
        if !self.pinned_zero.contains(&k) {
            self.pinned_zero.push(k);
            self.pinned_zero.sort_unstable();
        }
        Ok(self)
    }

    pub fn n_components(&self) -> usize {
        match self.kind {
            FrailtyKind::None => 0,
            FrailtyKind::Intercept => 1,
            FrailtyKind::Linear => 2,
            FrailtyKind::Piecewise => self.segments.len(),
        }
    }

    pub fn is_free(&self, k: usize) -> bool {
        k < self.n_components() && !self.pinned_zero.contains(&k)
    }

    pub fn free_components(&self) -> Vec<usize> {
        (0..self.n_components()).filter(|&k| self.is_free(k)).collect()
    }

    /// True when no variance component is free, i.e. the model is a plain logit.
    pub fn is_degenerate(&self) -> bool {
        self.free_components().is_empty()
    }

    pub fn component_name(&self, k: usize) -> String {
        match self.kind {
            FrailtyKind::None => String::new(),
            FrailtyKind::Intercept => "sigma_u".into(),
            FrailtyKind::Linear => {
                if k == 0 {
                    "sigma_a".into()
                } else {
                    "sigma_b".into()
                }
            }
            FrailtyKind::Piecewise => format!("sigma_{}", k + 1),
        }
    }

    pub fn segment_of(&self, t: u32) -> Option<usize> {
        self.segments.iter().position(|s| s.contains(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineSpec {
    /// One free intercept per observed time point.
    PiecewiseTime,
    /// A single global intercept.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub pair: Pair,
    pub frailty: FrailtySpec,
    pub baseline: BaselineSpec,
    pub covariate_names: Vec<String>,
    pub quadrature_order: usize,
}

impl ModelSpec {
    pub fn new(pair: Pair, frailty: FrailtySpec, baseline: BaselineSpec, covariate_names: Vec<String>) -> Result<Self> {
        let spec = Self {
            pair,
            frailty,
            baseline,
            covariate_names,
            quadrature_order: DEFAULT_ORDER,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_quadrature_order(mut self, q: usize) -> Self {
        self.quadrature_order = q;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.frailty.kind, FrailtyKind::Linear | FrailtyKind::Piecewise)
            && self.baseline != BaselineSpec::None
        {
            return Err(Error::Configuration(
                "time-dependent frailties cannot be combined with a per-time baseline".into(),
            ));
        }
        if self.frailty.kind == FrailtyKind::Piecewise && self.frailty.segments.is_empty() {
            return Err(Error::Configuration("piecewise frailty without segments".into()));
        }
        if self.quadrature_order == 0 || self.quadrature_order > crate::quadrature::MAX_ORDER {
            return Err(Error::Configuration(format!(
                "quadrature order {} out of range",
                self.quadrature_order
            )));
        }
        Ok(())
    }

    /// Names of the fixed-effect coefficients in order (intercept first when present).
    pub fn beta_names(&self) -> Vec<String> {
        let mut v = Vec::with_capacity(self.covariate_names.len() + 1);
        if self.baseline == BaselineSpec::None {
            v.push(INTERCEPT_NAME.to_string());
        }
        v.extend(self.covariate_names.iter().cloned());
        v
    }

    /// Same covariates and baseline with a different frailty structure.
    pub fn with_frailty(&self, frailty: FrailtySpec) -> Result<Self> {
        let mut s = self.clone();
        s.frailty = frailty;
        s.validate()?;
        Ok(s)
    }
}

/// Coefficients of one sub-model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    /// Per-time baseline `α_t`, keyed by time.
    pub alpha: BTreeMap<u32, f64>,
    pub beta_names: Vec<String>,
    pub beta: Vec<f64>,
    /// Log-scale variance components, `None` where pinned at zero.
    pub log_sigma: Vec<Option<f64>>,
}

impl ParameterVector {
    /// `β = 0`, `α = 0`, `log σ = log 0.5` for free components.
    pub fn initial(spec: &ModelSpec, baseline_times: &[u32]) -> Self {
        let alpha = if spec.baseline == BaselineSpec::PiecewiseTime {
            baseline_times.iter().map(|&t| (t, 0.0)).collect()
        } else {
            BTreeMap::new()
        };
        let beta_names = spec.beta_names();
        let beta = vec![0.0; beta_names.len()];
        let log_sigma = (0..spec.frailty.n_components())
            .map(|k| spec.frailty.is_free(k).then(|| 0.5f64.ln()))
            .collect();
        Self {
            alpha,
            beta_names,
            beta,
            log_sigma,
        }
    }

    /// Effective σ per component, after the lower clamp; pinned components give 0.
    pub fn sigmas(&self) -> Vec<f64> {
        self.log_sigma
            .iter()
            .map(|v| v.map_or(0.0, |l| l.max(LOG_SIGMA_FLOOR).exp()))
            .collect()
    }

    /// `X'β` with `x` aligned to the non-intercept covariates.
    pub fn x_beta(&self, x: &[f64]) -> Result<f64> {
        let has_intercept = self.beta_names.first().map(String::as_str) == Some(INTERCEPT_NAME);
        let offset = usize::from(has_intercept);
        if self.beta.len() != x.len() + offset {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} covariates",
                self.beta.len(),
                x.len()
            )));
        }
        let mut s = if has_intercept { self.beta[0] } else { 0.0 };
        for (b, v) in self.beta[offset..].iter().zip(x) {
            s += b * v;
        }
        Ok(s)
    }
}

/// Realised frailty value for one linear-predictor evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum FrailtyValue {
    None,
    Scalar(f64),
    /// Random slope and intercept, applied as `a·t + b`.
    Linear { a: f64, b: f64 },
    /// One value per segment; the segment containing `t` is used.
    Segments(Vec<f64>),
}

/// `α_t + X'β` plus the frailty term for the active structure.
pub fn linear_predictor(
    spec: &ModelSpec,
    params: &ParameterVector,
    x: &[f64],
    t: u32,
    frailty: &FrailtyValue,
) -> Result<f64> {
    let mut eta = params.x_beta(x)?;
    if spec.baseline == BaselineSpec::PiecewiseTime {
        eta += *params.alpha.get(&t).ok_or_else(|| {
            Error::Extrapolation(format!("no baseline parameter for time {t}"))
        })?;
    }
    let add = match (spec.frailty.kind, frailty) {
        (FrailtyKind::None, FrailtyValue::None) => 0.0,
        (FrailtyKind::Intercept, FrailtyValue::Scalar(u)) => *u,
        (FrailtyKind::Linear, FrailtyValue::Linear { a, b }) => a * t as f64 + b,
        (FrailtyKind::Piecewise, FrailtyValue::Segments(us)) => {
            let k = spec.frailty.segment_of(t).ok_or_else(|| {
                Error::Configuration(format!("time {t} outside every frailty segment"))
            })?;
            *us.get(k).ok_or_else(|| {
                Error::Dimension(format!("{} segment values for segment {k}", us.len()))
            })?
        }
        (kind, v) => {
            return Err(Error::Dimension(format!(
                "frailty value {v:?} does not match {kind:?} frailty"
            )))
        }
    };
    Ok(eta + add)
}

/// Column indices of the spec's covariates inside a panel.
pub fn covariate_indices(spec: &ModelSpec, panel_names: &[String]) -> Result<Vec<usize>> {
    spec.covariate_names
        .iter()
        .map(|n| {
            panel_names
                .iter()
                .position(|p| p == n)
                .ok_or_else(|| Error::Schema(format!("covariate '{n}' not in panel")))
        })
        .collect()
}

pub(crate) fn check_panel(spec: &ModelSpec, panel: &TransitionPanel) -> Result<()> {
    spec.validate()?;
    if panel.is_empty() {
        return Err(Error::Precondition(format!("panel for {} is empty", panel.pair)));
    }
    covariate_indices(spec, &panel.covariate_names).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: FrailtySpec, baseline: BaselineSpec) -> ModelSpec {
        ModelSpec::new(Pair(1, 1), kind, baseline, vec!["x1".into(), "x2".into()]).unwrap()
    }

    fn params(beta: Vec<f64>, spec: &ModelSpec) -> ParameterVector {
        let mut p = ParameterVector::initial(spec, &[1, 2, 3, 4]);
        p.beta = beta;
        p
    }

    #[test]
    fn fixed_effects_predictor() {
        // β = (1, −2) on X = (1, 0.5) with α_t = 0
        let s = spec(FrailtySpec::none(), BaselineSpec::PiecewiseTime);
        let p = params(vec![1.0, -2.0], &s);
        let eta = linear_predictor(&s, &p, &[1.0, 0.5], 2, &FrailtyValue::None).unwrap();
        assert_eq!(eta, 0.0);
    }

    #[test]
    fn intercept_frailty_shifts() {
        let s = spec(FrailtySpec::intercept(), BaselineSpec::PiecewiseTime);
        let p = params(vec![1.0, -2.0], &s);
        let eta = linear_predictor(&s, &p, &[1.0, 0.5], 2, &FrailtyValue::Scalar(0.3)).unwrap();
        assert!((eta - 0.3).abs() < 1e-15);
    }

    #[test]
    fn linear_frailty_uses_time() {
        let s = spec(FrailtySpec::linear(), BaselineSpec::None);
        let p = params(vec![0.0, 0.0, 0.0], &s);
        let eta = linear_predictor(&s, &p, &[1.0, 0.5], 4, &FrailtyValue::Linear { a: 0.1, b: -0.2 }).unwrap();
        assert!((eta - 0.2).abs() < 1e-15);
    }

    #[test]
    fn misaligned_beta_is_dimension_error() {
        let s = spec(FrailtySpec::none(), BaselineSpec::PiecewiseTime);
        let p = params(vec![1.0], &s);
        assert!(matches!(
            linear_predictor(&s, &p, &[1.0, 0.5], 2, &FrailtyValue::None),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn piecewise_outside_segments() {
        let s = spec(FrailtySpec::piecewise_default(), BaselineSpec::None);
        let p = params(vec![0.0; 3], &s);
        let v = FrailtyValue::Segments(vec![0.1, 0.2, 0.3]);
        assert!((linear_predictor(&s, &p, &[0.0, 0.0], 5, &v).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(
            linear_predictor(&s, &p, &[0.0, 0.0], 9, &v),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn time_dependent_frailty_excludes_baseline() {
        assert!(ModelSpec::new(Pair(1, 1), FrailtySpec::linear(), BaselineSpec::PiecewiseTime, vec![]).is_err());
        assert!(ModelSpec::new(
            Pair(1, 1),
            FrailtySpec::piecewise_default(),
            BaselineSpec::PiecewiseTime,
            vec![]
        )
        .is_err());
    }

    #[test]
    fn overlapping_segments_rejected() {
        let r = FrailtySpec::piecewise(vec![Segment { start: 1, end: 3 }, Segment { start: 3, end: 5 }]);
        assert!(r.is_err());
    }
}
