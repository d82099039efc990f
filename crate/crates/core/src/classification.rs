//! Next-landing-state classification with optimized cut-offs (D&C and OMCC)
//! and the out-of-bootstrap predictive study.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{State, StatePanel, STATES};
use crate::error::{Error, Result};
use crate::optimize::nelder_mead;
use crate::prediction::{AccountHistory, MultistateModel};
use crate::rng::{keyed, DOMAIN_RESAMPLE};

pub const GRID_STEP: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffVector {
    pub origin: State,
    pub cutoffs: [f64; 3],
}

impl CutoffVector {
    pub fn new(origin: State, cutoffs: [f64; 3]) -> Result<Self> {
        if !STATES.contains(&origin) {
            return Err(Error::InvalidArgument(format!("origin {origin} is not a state")));
        }
        if cutoffs.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument(format!("cut-offs {cutoffs:?} outside [0, 1]")));
        }
        Ok(Self { origin, cutoffs })
    }

    pub fn zeros(origin: State) -> Self {
        Self {
            origin,
            cutoffs: [0.0; 3],
        }
    }

    fn norm2(&self) -> f64 {
        self.cutoffs.iter().map(|c| c * c).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    Plain,
    StdScaled,
    CutoffRelative,
    MeanScaled,
}

impl fmt::Display for DecisionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Plain => "plain",
            Self::StdScaled => "std_scaled",
            Self::CutoffRelative => "cutoff_relative",
            Self::MeanScaled => "mean_scaled",
        })
    }
}

impl std::str::FromStr for DecisionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "std_scaled" => Ok(Self::StdScaled),
            "cutoff_relative" => Ok(Self::CutoffRelative),
            "mean_scaled" => Ok(Self::MeanScaled),
            _ => Err(Error::InvalidArgument(format!("unknown decision rule '{s}'"))),
        }
    }
}

/// Per-destination mean and standard deviation of a training probability pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub mean: [f64; 3],
    pub sd: [f64; 3],
}

impl ScaleStats {
    /// Population moments over `pool`.
    pub fn from_pool(pool: &[[f64; 3]]) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::InvalidArgument("empty probability pool".into()));
        }
        let n = pool.len() as f64;
        let mut mean = [0.0; 3];
        let mut sd = [0.0; 3];
        for j in 0..3 {
            mean[j] = pool.iter().map(|q| q[j]).sum::<f64>() / n;
            sd[j] = (pool.iter().map(|q| (q[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
        }
        Ok(Self { mean, sd })
    }
}

/// Per-destination divisors of the discrepancy `q − c` (cut-off relative
/// excluded, its divisor is the cut-off itself).
fn fixed_weights(rule: DecisionRule, stats: Option<&ScaleStats>) -> Result<Option<[f64; 3]>> {
    let denom = match rule {
        DecisionRule::Plain => return Ok(Some([1.0; 3])),
        DecisionRule::CutoffRelative => return Ok(None),
        DecisionRule::StdScaled => stats.map(|s| s.sd),
        DecisionRule::MeanScaled => stats.map(|s| s.mean),
    }
    .ok_or_else(|| Error::RuleEvaluation(format!("{rule} rule needs scale statistics")))?;
    for (j, d) in denom.iter().enumerate() {
        if !(*d > 0.0) {
            return Err(Error::RuleEvaluation(format!(
                "{rule} rule: zero scale for destination {}",
                j + 1
            )));
        }
    }
    Ok(Some(denom.map(|d| 1.0 / d)))
}

fn argmax3(s: [f64; 3]) -> State {
    let mut best = 0;
    for j in 1..3 {
        if s[j] > s[best] {
            best = j;
        }
    }
    best as State + 1
}

/// Destination maximizing the rule's scaled discrepancy; ties go to the
/// lower-numbered state.
pub fn classify(
    probs: [f64; 3],
    cutoffs: &CutoffVector,
    rule: DecisionRule,
    stats: Option<&ScaleStats>,
) -> Result<State> {
    let c = cutoffs.cutoffs;
    let s = match fixed_weights(rule, stats)? {
        Some(w) => [0, 1, 2].map(|j| (probs[j] - c[j]) * w[j]),
        None => {
            if let Some(j) = c.iter().position(|x| *x == 0.0) {
                return Err(Error::RuleEvaluation(format!(
                    "cutoff_relative rule: zero cut-off for destination {}",
                    j + 1
                )));
            }
            [0, 1, 2].map(|j| (probs[j] - c[j]) / c[j])
        }
    };
    Ok(argmax3(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub origin: State,
    /// `counts[k][m]`: truth `k + 1` predicted as `m + 1`.
    pub counts: [[u64; 3]; 3],
}

impl ConfusionCounts {
    pub fn new(origin: State) -> Self {
        Self {
            origin,
            counts: [[0; 3]; 3],
        }
    }

    pub fn from_pairs(origin: State, truth_pred: impl IntoIterator<Item = (State, State)>) -> Self {
        let mut c = Self::new(origin);
        for (t, p) in truth_pred {
            c.add(t, p, 1);
        }
        c
    }

    pub fn add(&mut self, truth: State, pred: State, n: u64) {
        self.counts[truth as usize - 1][pred as usize - 1] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|k| self.counts[k][k]).sum()
    }

    /// Multiclass Matthews correlation; 0 when the denominator vanishes.
    pub fn mcc(&self) -> f64 {
        let n = self.total() as f64;
        let row: Vec<f64> = (0..3).map(|k| self.counts[k].iter().sum::<u64>() as f64).collect();
        let col: Vec<f64> = (0..3).map(|m| (0..3).map(|k| self.counts[k][m]).sum::<u64>() as f64).collect();
        let cov = n * self.trace() as f64 - (0..3).map(|k| row[k] * col[k]).sum::<f64>();
        let vr = n * n - row.iter().map(|r| r * r).sum::<f64>();
        let vc = n * n - col.iter().map(|c| c * c).sum::<f64>();
        let den = (vr * vc).sqrt();
        if den == 0.0 {
            0.0
        } else {
            cov / den
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyTarget {
    ToAll,
    ToDelinquency,
    Recovery,
}

impl AccuracyTarget {
    pub const ALL: [AccuracyTarget; 3] = [Self::ToAll, Self::ToDelinquency, Self::Recovery];
}

impl fmt::Display for AccuracyTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ToAll => "to_all",
            Self::ToDelinquency => "to_delinquency",
            Self::Recovery => "recovery",
        })
    }
}

/// Accuracy in percent; `None` when the target subset is empty.
pub fn evaluate_accuracy(conf: &ConfusionCounts, target: AccuracyTarget) -> Option<f64> {
    let truths: &[usize] = match target {
        AccuracyTarget::ToAll => &[0, 1, 2],
        AccuracyTarget::ToDelinquency => &[1, 2],
        AccuracyTarget::Recovery => &[0],
    };
    let n: u64 = truths.iter().map(|&k| conf.counts[k].iter().sum::<u64>()).sum();
    if n == 0 {
        return None;
    }
    let hit: u64 = truths.iter().map(|&k| conf.counts[k][k]).sum();
    Some(100.0 * hit as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffMethod {
    /// Empirical accuracy.
    Dc,
    /// Multiclass MCC.
    Omcc,
}

impl fmt::Display for CutoffMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dc => "dc",
            Self::Omcc => "omcc",
        })
    }
}

impl std::str::FromStr for CutoffMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dc" => Ok(Self::Dc),
            "omcc" => Ok(Self::Omcc),
            _ => Err(Error::InvalidArgument(format!("unknown cut-off method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffFit {
    pub cutoffs: CutoffVector,
    pub objective: f64,
    /// Single-class truths: all-zero cut-offs returned.
    pub degenerate: bool,
}

struct Problem<'a> {
    probs: &'a [[f64; 3]],
    truths: &'a [State],
    origin: State,
    method: CutoffMethod,
    rule: DecisionRule,
    stats: Option<&'a ScaleStats>,
}

impl Problem<'_> {
    fn objective(&self, c: &CutoffVector) -> Result<f64> {
        let mut conf = ConfusionCounts::new(self.origin);
        for (q, &t) in self.probs.iter().zip(self.truths) {
            conf.add(t, classify(*q, c, self.rule, self.stats)?, 1);
        }
        Ok(match self.method {
            CutoffMethod::Dc => conf.trace() as f64 / conf.total() as f64,
            CutoffMethod::Omcc => conf.mcc(),
        })
    }

    fn better(obj: f64, c: &CutoffVector, best: &Option<(f64, CutoffVector)>) -> bool {
        match best {
            None => true,
            Some((bo, bc)) => obj > *bo || (obj == *bo && c.norm2() < bc.norm2()),
        }
    }

    /// Smallest-norm cut-off vector in `[0,1]³` with `w_j a_j − w_1 a_1 = d_j`,
    /// `a_1` restricted to multiples of `lattice` when given.
    fn lift(w: [f64; 3], d: [f64; 2], lattice: Option<f64>) -> Option<[f64; 3]> {
        // a_j = (d_j + w1 a1) / w_j is affine in a1
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for j in 1..3 {
            let k = w[0] / w[j];
            let off = d[j - 1] / w[j];
            lo = lo.max((0.0 - off) / k);
            hi = hi.min((1.0 - off) / k);
        }
        if lo > hi + 1e-12 {
            return None;
        }
        let (k2, o2) = (w[0] / w[1], d[0] / w[1]);
        let (k3, o3) = (w[0] / w[2], d[1] / w[2]);
        let opt = -(k2 * o2 + k3 * o3) / (1.0 + k2 * k2 + k3 * k3);
        let a1 = match lattice {
            Some(s) => {
                let (ilo, ihi) = ((lo / s - 1e-9).ceil(), (hi / s + 1e-9).floor());
                if ilo > ihi {
                    return None;
                }
                (opt / s).round().clamp(ilo, ihi) * s
            }
            None => opt.clamp(lo, hi),
        };
        let a = [a1, (k2 * a1 + o2).clamp(0.0, 1.0), (k3 * a1 + o3).clamp(0.0, 1.0)];
        Some(a)
    }

    fn solve(&self) -> Result<CutoffFit> {
        let mut best: Option<(f64, CutoffVector)> = None;
        match fixed_weights(self.rule, self.stats)? {
            Some(w) => {
                // predictions depend on a only through the two differences
                let plain = self.rule == DecisionRule::Plain;
                let axis = |j: usize| -> Vec<f64> {
                    let step = if plain { GRID_STEP } else { GRID_STEP * (w[0] + w[j]) / 2.0 };
                    let lo = (-w[0] / step - 1e-9).ceil() as i64;
                    let hi = (w[j] / step + 1e-9).floor() as i64;
                    (lo..=hi).map(|i| i as f64 * step).collect()
                };
                let lattice = plain.then_some(GRID_STEP);
                for &d2 in &axis(1) {
                    for &d3 in &axis(2) {
                        let Some(a) = Self::lift(w, [d2, d3], lattice) else { continue };
                        let c = CutoffVector { origin: self.origin, cutoffs: a };
                        let obj = self.objective(&c)?;
                        if Self::better(obj, &c, &best) {
                            best = Some((obj, c));
                        }
                    }
                }
                let (bo, bc) = best.expect("zero differences are always feasible");
                let x0 = [
                    w[1] * bc.cutoffs[1] - w[0] * bc.cutoffs[0],
                    w[2] * bc.cutoffs[2] - w[0] * bc.cutoffs[0],
                ];
                let f = |x: &[f64]| -> Result<f64> {
                    match Self::lift(w, [x[0], x[1]], None) {
                        Some(a) => Ok(-self.objective(&CutoffVector { origin: self.origin, cutoffs: a })?),
                        None => Ok(f64::INFINITY),
                    }
                };
                let (x, fx, _) = nelder_mead(f, &x0, GRID_STEP / 2.0, 200, 0.0)?;
                if -fx > bo {
                    if let Some(a) = Self::lift(w, [x[0], x[1]], None) {
                        best = Some((-fx, CutoffVector { origin: self.origin, cutoffs: a }));
                    }
                }
            }
            None => {
                // cut-off relative: argmax q_j / a_j, direct grid over (0, 1]³
                let n = (1.0 / GRID_STEP).round() as usize;
                for i in 1..=n {
                    for j in 1..=n {
                        for k in 1..=n {
                            let c = CutoffVector {
                                origin: self.origin,
                                cutoffs: [i, j, k].map(|v| v as f64 * GRID_STEP),
                            };
                            let obj = self.objective(&c)?;
                            if Self::better(obj, &c, &best) {
                                best = Some((obj, c));
                            }
                        }
                    }
                }
                let (bo, bc) = best.expect("grid is nonempty");
                let f = |x: &[f64]| -> Result<f64> {
                    if x.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                        return Ok(f64::INFINITY);
                    }
                    Ok(-self.objective(&CutoffVector {
                        origin: self.origin,
                        cutoffs: [x[0], x[1], x[2]],
                    })?)
                };
                let (x, fx, _) = nelder_mead(f, &bc.cutoffs, GRID_STEP / 2.0, 300, 0.0)?;
                if -fx > bo {
                    best = Some((-fx, CutoffVector { origin: self.origin, cutoffs: [x[0], x[1], x[2]] }));
                }
            }
        }
        let (objective, cutoffs) = best.expect("search visited at least one point");
        Ok(CutoffFit {
            cutoffs,
            objective,
            degenerate: false,
        })
    }
}

/// Grid-then-simplex search for the cut-offs maximizing `method`'s objective
/// under `rule`.
pub fn optimize_cutoffs(
    probs: &[[f64; 3]],
    truths: &[State],
    origin: State,
    method: CutoffMethod,
    rule: DecisionRule,
    stats: Option<&ScaleStats>,
) -> Result<CutoffFit> {
    if probs.len() != truths.len() {
        return Err(Error::Dimension(format!("{} probability rows, {} truths", probs.len(), truths.len())));
    }
    if probs.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if let Some(t) = truths.iter().find(|t| !STATES.contains(t)) {
        return Err(Error::Data(format!("invalid landing state {t}")));
    }
    if !STATES.contains(&origin) {
        return Err(Error::InvalidArgument(format!("origin {origin} is not a state")));
    }
    if truths.iter().all(|t| *t == truths[0]) {
        let c = CutoffVector::zeros(origin);
        let p = Problem { probs, truths, origin, method, rule: DecisionRule::Plain, stats };
        return Ok(CutoffFit {
            cutoffs: c,
            objective: p.objective(&c)?,
            degenerate: true,
        });
    }
    Problem { probs, truths, origin, method, rule, stats }.solve()
}

/// D&C cut-offs: maximize empirical accuracy with the plain rule.
pub fn optimize_cutoffs_dc(probs: &[[f64; 3]], truths: &[State], origin: State) -> Result<CutoffFit> {
    optimize_cutoffs(probs, truths, origin, CutoffMethod::Dc, DecisionRule::Plain, None)
}

/// OMCC cut-offs: maximize the multiclass MCC with the plain rule.
pub fn optimize_cutoffs_omcc(probs: &[[f64; 3]], truths: &[State], origin: State) -> Result<CutoffFit> {
    optimize_cutoffs(probs, truths, origin, CutoffMethod::Omcc, DecisionRule::Plain, None)
}

/// One account's predicted landing distribution and realized landing state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandingRecord {
    pub account_id: String,
    pub t1: u32,
    pub t2: u32,
    pub origin: State,
    pub probs: [f64; 3],
    pub truth: State,
}

/// Landing records for every account observed at `t1` and `t2` with
/// covariates over `t1+1..=t2`; other accounts are skipped.
pub fn landing_records(model: &MultistateModel, panel: &StatePanel, t1: u32, t2: u32) -> Result<Vec<LandingRecord>> {
    let mut out = Vec::new();
    for acc in panel.accounts() {
        let by_time: BTreeMap<u32, Vec<f64>> = acc.iter().map(|r| (r.time, r.covariates.clone())).collect();
        let state_at = |t: u32| acc.iter().find(|r| r.time == t).map(|r| r.state);
        let (Some(origin), Some(truth)) = (state_at(t1), state_at(t2)) else { continue };
        if !(t1 + 1..=t2).all(|t| by_time.contains_key(&t)) {
            continue;
        }
        if !model.models().keys().any(|p| p.origin() == origin) {
            continue;
        }
        let history = AccountHistory {
            account_id: acc[0].account_id.clone(),
            covariate_names: panel.covariate_names.clone(),
            by_time,
        };
        let seq = model.build_matrix_sequence(&history, origin, t1, t2)?;
        out.push(LandingRecord {
            account_id: history.account_id,
            t1,
            t2,
            origin,
            probs: seq.landing,
            truth,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub horizons: Vec<(u32, u32)>,
    pub methods: Vec<CutoffMethod>,
    pub rules: Vec<DecisionRule>,
    pub b: usize,
    pub seed: u64,
    /// In-bag = out-of-bag = all accounts (in-sample check).
    pub force_full_in_bag: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            horizons: vec![(1, 2), (2, 4)],
            methods: vec![CutoffMethod::Dc, CutoffMethod::Omcc],
            rules: vec![DecisionRule::Plain, DecisionRule::StdScaled],
            b: 100,
            seed: 42,
            force_full_in_bag: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub origin: State,
    pub method: CutoffMethod,
    pub rule: DecisionRule,
    pub horizon: (u32, u32),
    pub target: AccuracyTarget,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// Replicates contributing a value.
    pub n_used: usize,
    /// Replicates with an empty subset or a failed rule evaluation.
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveStudyResult {
    pub b: usize,
    pub seed: u64,
    pub cells: Vec<StudyCell>,
}

type CellKey = (State, CutoffMethod, DecisionRule, (u32, u32), AccuracyTarget);

/// Accuracies of one replicate keyed by cell; `None` marks a skipped cell.
fn replicate(
    records: &BTreeMap<(u32, u32), Vec<LandingRecord>>,
    weight: &BTreeMap<&str, (u64, bool)>,
    cfg: &StudyConfig,
) -> Result<BTreeMap<CellKey, Option<f64>>> {
    let mut out = BTreeMap::new();
    for (&hz, recs) in records {
        for h in STATES {
            let mut train_p = Vec::new();
            let mut train_t = Vec::new();
            let mut test = Vec::new();
            for r in recs.iter().filter(|r| r.origin == h) {
                let (w, oob) = weight.get(r.account_id.as_str()).copied().unwrap_or((0, true));
                for _ in 0..w {
                    train_p.push(r.probs);
                    train_t.push(r.truth);
                }
                if oob {
                    test.push(r);
                }
            }
            for &method in &cfg.methods {
                for &rule in &cfg.rules {
                    let conf = (|| -> Result<Option<ConfusionCounts>> {
                        if train_p.is_empty() || test.is_empty() {
                            return Ok(None);
                        }
                        let stats = ScaleStats::from_pool(&train_p)?;
                        let fit = optimize_cutoffs(&train_p, &train_t, h, method, rule, Some(&stats))?;
                        let rule_used = if fit.degenerate { DecisionRule::Plain } else { rule };
                        let mut conf = ConfusionCounts::new(h);
                        for r in &test {
                            conf.add(r.truth, classify(r.probs, &fit.cutoffs, rule_used, Some(&stats))?, 1);
                        }
                        Ok(Some(conf))
                    })();
                    let conf = match conf {
                        Ok(c) => c,
                        Err(Error::RuleEvaluation(_)) => None,
                        Err(e) => return Err(e),
                    };
                    for target in AccuracyTarget::ALL {
                        let v = conf.as_ref().and_then(|c| evaluate_accuracy(c, target));
                        out.insert((h, method, rule, hz, target), v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Account-level bootstrap: cut-offs optimized on the in-bag landing
/// probabilities, accuracies measured on the out-of-bag accounts.
pub fn bootstrap_predictive_study(
    model: &MultistateModel,
    panel: &StatePanel,
    cfg: &StudyConfig,
) -> Result<PredictiveStudyResult> {
    if cfg.b == 0 {
        return Err(Error::InvalidArgument("bootstrap needs B ≥ 1".into()));
    }
    let mut records = BTreeMap::new();
    for &(t1, t2) in &cfg.horizons {
        records.insert((t1, t2), landing_records(model, panel, t1, t2)?);
    }
    let ids: Vec<&str> = panel.accounts().iter().map(|a| a[0].account_id.as_str()).collect();
    let reps: Vec<Result<BTreeMap<CellKey, Option<f64>>>> = (0..cfg.b)
        .into_par_iter()
        .map(|b| {
            let mut weight: BTreeMap<&str, (u64, bool)> = BTreeMap::new();
            if cfg.force_full_in_bag {
                for id in &ids {
                    weight.insert(id, (1, true));
                }
            } else {
                let mut rng = keyed(cfg.seed, DOMAIN_RESAMPLE, b as u64);
                let mut counts = vec![0u64; ids.len()];
                for _ in 0..ids.len() {
                    counts[rng.random_range(0..ids.len())] += 1;
                }
                for (id, c) in ids.iter().zip(counts) {
                    weight.insert(id, (c, c == 0));
                }
            }
            replicate(&records, &weight, cfg)
        })
        .collect();

    let mut acc: BTreeMap<CellKey, (Vec<f64>, usize)> = BTreeMap::new();
    for r in reps {
        for (k, v) in r? {
            let e = acc.entry(k).or_default();
            match v {
                Some(x) => e.0.push(x),
                None => e.1 += 1,
            }
        }
    }
    let cells = acc
        .into_iter()
        .map(|((origin, method, rule, horizon, target), (vals, skipped))| {
            let n = vals.len();
            let mean = (n > 0).then(|| vals.iter().sum::<f64>() / n as f64);
            let sd = mean.map(|m| {
                if n > 1 {
                    (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                }
            });
            StudyCell {
                origin,
                method,
                rule,
                horizon,
                target,
                mean,
                sd,
                n_used: n,
                n_skipped: skipped,
            }
        })
        .collect();
    Ok(PredictiveStudyResult {
        b: cfg.b,
        seed: cfg.seed,
        cells,
    })
}

impl PredictiveStudyResult {
    pub fn cell(
        &self,
        origin: State,
        method: CutoffMethod,
        rule: DecisionRule,
        horizon: (u32, u32),
        target: AccuracyTarget,
    ) -> Option<&StudyCell> {
        self.cells.iter().find(|c| {
            c.origin == origin && c.method == method && c.rule == rule && c.horizon == horizon && c.target == target
        })
    }
}

/// CSV with columns origin, method, rule, horizon, target, mean, sd; absent
/// values are empty.
pub fn write_study_csv<W: Write>(res: &PredictiveStudyResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["origin", "method", "rule", "horizon", "target", "mean", "sd"])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for c in &res.cells {
        w.write_record([
            c.origin.to_string(),
            c.method.to_string(),
            c.rule.to_string(),
            format!("{}-{}", c.horizon.0, c.horizon.1),
            c.target.to_string(),
            fmt(c.mean),
            fmt(c.sd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(c: [f64; 3]) -> CutoffVector {
        CutoffVector::new(1, c).unwrap()
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify([0.7, 0.2, 0.1], &cv([0.5; 3]), DecisionRule::Plain, None).unwrap(), 1);
        assert_eq!(classify([0.6, 0.1, 0.3], &cv([0.55, 0.05, 0.05]), DecisionRule::Plain, None).unwrap(), 3);
        assert_eq!(classify([0.3, 0.3, 0.3], &cv([0.1; 3]), DecisionRule::Plain, None).unwrap(), 1);
    }

    #[test]
    fn zero_denominators_are_rule_errors() {
        let s = ScaleStats { mean: [0.3; 3], sd: [0.1, 0.0, 0.1] };
        let e = classify([0.3; 3], &cv([0.1; 3]), DecisionRule::StdScaled, Some(&s)).unwrap_err();
        assert!(matches!(e, Error::RuleEvaluation(ref m) if m.contains("destination 2")));
        assert!(classify([0.3; 3], &cv([0.0, 0.1, 0.1]), DecisionRule::CutoffRelative, None).is_err());
        assert!(classify([0.3; 3], &cv([0.1; 3]), DecisionRule::MeanScaled, None).is_err());
    }

    #[test]
    fn mcc_examples() {
        let diag = ConfusionCounts { origin: 1, counts: [[5, 0, 0], [0, 5, 0], [0, 0, 5]] };
        assert_eq!(diag.mcc(), 1.0);
        let col = ConfusionCounts { origin: 1, counts: [[3, 0, 0], [4, 0, 0], [2, 0, 0]] };
        assert_eq!(col.mcc(), 0.0);
    }

    #[test]
    fn accuracy_examples() {
        let c = ConfusionCounts { origin: 1, counts: [[4, 1, 0], [1, 3, 1], [0, 2, 3]] };
        assert!((evaluate_accuracy(&c, AccuracyTarget::ToAll).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(evaluate_accuracy(&c, AccuracyTarget::ToDelinquency).unwrap(), 60.0);
        assert_eq!(evaluate_accuracy(&c, AccuracyTarget::Recovery).unwrap(), 80.0);
        let only1 = ConfusionCounts { origin: 1, counts: [[4, 1, 0], [0; 3], [0; 3]] };
        assert_eq!(evaluate_accuracy(&only1, AccuracyTarget::ToDelinquency), None);
    }

    #[test]
    fn separable_reaches_perfect_accuracy() {
        let probs = [[0.9, 0.05, 0.05], [0.2, 0.7, 0.1], [0.1, 0.2, 0.7], [0.8, 0.1, 0.1]];
        let truths = [1, 2, 3, 1];
        let f = optimize_cutoffs_dc(&probs, &truths, 1).unwrap();
        assert_eq!(f.objective, 1.0);
        assert!(!f.degenerate);
        let f = optimize_cutoffs_omcc(&probs, &truths, 1).unwrap();
        assert_eq!(f.objective, 1.0);
    }

    #[test]
    fn single_class_is_degenerate() {
        let f = optimize_cutoffs_dc(&[[0.5, 0.3, 0.2], [0.1, 0.8, 0.1]], &[1, 1], 1).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.cutoffs.cutoffs, [0.0; 3]);
    }

    #[test]
    fn lift_recovers_differences() {
        let w = [1.0, 2.0, 0.5];
        let a = Problem::lift(w, [0.3, -0.1], None).unwrap();
        assert!((w[1] * a[1] - w[0] * a[0] - 0.3).abs() < 1e-12);
        assert!((w[2] * a[2] - w[0] * a[0] + 0.1).abs() < 1e-12);
        assert!(Problem::lift([1.0; 3], [1.5, 0.0], None).is_none());
    }
}
