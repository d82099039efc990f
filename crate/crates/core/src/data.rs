//! Repayment panels, three-state labelling, and per-transition binary panels.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Repayment state: 1 good, 2 intermediate, 3 poor.
pub type State = u8;

pub const STATES: [State; 3] = [1, 2, 3];

/// Ordered transition type `(origin, destination)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair(pub State, pub State);

impl Pair {
    pub fn origin(&self) -> State {
        self.0
    }
    pub fn destination(&self) -> State {
        self.1
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.0, self.1)
    }
}

impl std::str::FromStr for Pair {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let mut it = t.split(',').map(str::trim);
        let parse = |v: Option<&str>| -> Result<State> {
            let v: State = v
                .ok_or_else(|| Error::InvalidArgument(format!("bad pair '{s}'")))?
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad pair '{s}'")))?;
            if !(1..=3).contains(&v) {
                return Err(Error::InvalidArgument(format!("state out of range in '{s}'")));
            }
            Ok(v)
        };
        let h = parse(it.next())?;
        let j = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::InvalidArgument(format!("bad pair '{s}'")));
        }
        Ok(Pair(h, j))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub account_id: String,
    pub time: u32,
    pub paid: f64,
    pub scheduled: f64,
    pub covariates: Vec<f64>,
}

/// Long-format repayment panel; every record carries one value per covariate name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PanelDataset {
    pub covariate_names: Vec<String>,
    pub records: Vec<PanelRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateThresholds {
    c1: f64,
    c2: f64,
}

impl StateThresholds {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(0.0 < c1 && c1 < c2 && c2 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must satisfy 0 < c1 < c2 < 1, got ({c1}, {c2})"
            )));
        }
        Ok(Self { c1, c2 })
    }
    pub fn c1(&self) -> f64 {
        self.c1
    }
    pub fn c2(&self) -> f64 {
        self.c2
    }
}

impl Default for StateThresholds {
    fn default() -> Self {
        Self { c1: 0.60, c2: 0.82 }
    }
}

/// Maps a repayment ratio to a state. Ratios exactly at a cut point go to the upper band.
pub fn assign_state(paid: f64, scheduled: f64, thresholds: &StateThresholds) -> Result<State> {
    if !(scheduled > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scheduled amount must be positive, got {scheduled}"
        )));
    }
    if paid < 0.0 || paid.is_nan() {
        return Err(Error::InvalidArgument(format!("paid amount must be nonnegative, got {paid}")));
    }
    let r = paid / scheduled;
    Ok(if r < thresholds.c1 {
        3
    } else if r < thresholds.c2 {
        2
    } else {
        1
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pairs: BTreeSet<Pair>,
}

impl TransitionSpec {
    pub fn new<I: IntoIterator<Item = Pair>>(pairs: I) -> Result<Self> {
        let pairs: BTreeSet<Pair> = pairs.into_iter().collect();
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("transition spec is empty".into()));
        }
        for p in &pairs {
            if !STATES.contains(&p.0) || !STATES.contains(&p.1) {
                return Err(Error::InvalidArgument(format!("invalid pair {p}")));
            }
        }
        Ok(Self { pairs })
    }

    /// `{(1,1),(1,3),(2,1),(2,3),(3,1),(3,3)}`.
    pub fn default_three_state() -> Self {
        Self::new([
            Pair(1, 1),
            Pair(1, 3),
            Pair(2, 1),
            Pair(2, 3),
            Pair(3, 1),
            Pair(3, 3),
        ])
        .expect("static spec")
    }

    pub fn pairs(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter()
    }

    pub fn contains(&self, p: &Pair) -> bool {
        self.pairs.contains(p)
    }

    pub fn destinations(&self, origin: State) -> Vec<State> {
        self.pairs
            .iter()
            .filter(|p| p.0 == origin)
            .map(|p| p.1)
            .collect()
    }

    pub fn origins(&self) -> Vec<State> {
        let s: BTreeSet<State> = self.pairs.iter().map(|p| p.0).collect();
        s.into_iter().collect()
    }
}

/// One observation at risk of transition `(h, j)` at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub account_id: String,
    pub time: u32,
    pub y: bool,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionPanel {
    pub pair: Pair,
    pub covariate_names: Vec<String>,
    pub rows: Vec<TransitionRow>,
    pub risk_counts: BTreeMap<u32, usize>,
}

impl TransitionPanel {
    /// Builds a panel from rows, sorting by `(account_id, time)` and tallying risk sets.
    pub fn from_rows(pair: Pair, covariate_names: Vec<String>, mut rows: Vec<TransitionRow>) -> Result<Self> {
        let k = covariate_names.len();
        for r in &rows {
            if r.covariates.len() != k {
                return Err(Error::Schema(format!(
                    "row for account {} at t={} has {} covariates, expected {k}",
                    r.account_id,
                    r.time,
                    r.covariates.len()
                )));
            }
        }
        rows.sort_by(|a, b| a.account_id.cmp(&b.account_id).then(a.time.cmp(&b.time)));
        for w in rows.windows(2) {
            if w[0].account_id == w[1].account_id && w[0].time == w[1].time {
                return Err(Error::Data(format!(
                    "duplicate row for account {} at t={}",
                    w[0].account_id, w[0].time
                )));
            }
        }
        let mut risk_counts = BTreeMap::new();
        for r in &rows {
            *risk_counts.entry(r.time).or_insert(0) += 1;
        }
        Ok(Self {
            pair,
            covariate_names,
            rows,
            risk_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_accounts(&self) -> usize {
        let mut n = 0;
        let mut last: Option<&str> = None;
        for r in &self.rows {
            if last != Some(r.account_id.as_str()) {
                n += 1;
                last = Some(&r.account_id);
            }
        }
        n
    }

    /// Observed transition count `O(t)` per time.
    pub fn event_counts(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for r in &self.rows {
            let e = m.entry(r.time).or_insert(0);
            if r.y {
                *e += 1;
            }
        }
        m
    }

    /// Copy of the panel with outcomes replaced, in row order.
    pub fn with_outcomes(&self, y: &[bool]) -> Self {
        debug_assert_eq!(y.len(), self.rows.len());
        let mut out = self.clone();
        for (r, &v) in out.rows.iter_mut().zip(y) {
            r.y = v;
        }
        out
    }

    /// Rows grouped by account as contiguous index ranges, in sorted account order.
    pub fn account_ranges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.rows.len() {
            if i == self.rows.len() || self.rows[i].account_id != self.rows[start].account_id {
                if i > start {
                    out.push((start, i));
                }
                start = i;
            }
        }
        out
    }
}

/// A labelled observation: state at time `t` plus covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub account_id: String,
    pub time: u32,
    pub state: State,
    pub covariates: Vec<f64>,
}

/// Panel of observed states, sorted by `(account_id, time)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatePanel {
    pub covariate_names: Vec<String>,
    pub records: Vec<StateRecord>,
}

impl StatePanel {
    pub fn new(covariate_names: Vec<String>, mut records: Vec<StateRecord>) -> Result<Self> {
        let k = covariate_names.len();
        for r in &records {
            if r.covariates.len() != k {
                return Err(Error::Schema(format!(
                    "record for account {} at t={} has {} covariates, expected {k}",
                    r.account_id,
                    r.time,
                    r.covariates.len()
                )));
            }
            if !STATES.contains(&r.state) {
                return Err(Error::Data(format!("invalid state {}", r.state)));
            }
        }
        records.sort_by(|a, b| a.account_id.cmp(&b.account_id).then(a.time.cmp(&b.time)));
        for w in records.windows(2) {
            if w[0].account_id == w[1].account_id && w[0].time == w[1].time {
                return Err(Error::Data(format!(
                    "duplicate record for account {} at t={}",
                    w[0].account_id, w[0].time
                )));
            }
        }
        Ok(Self {
            covariate_names,
            records,
        })
    }

    /// Per-account slices in sorted account order.
    pub fn accounts(&self) -> Vec<&[StateRecord]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].account_id != self.records[start].account_id {
                if i > start {
                    out.push(&self.records[start..i]);
                }
                start = i;
            }
        }
        out
    }
}

/// Labels every record of a repayment panel with its state.
pub fn label_states(panel: &PanelDataset, thresholds: &StateThresholds) -> Result<StatePanel> {
    let records = panel
        .records
        .iter()
        .map(|r| {
            Ok(StateRecord {
                account_id: r.account_id.clone(),
                time: r.time,
                state: assign_state(r.paid, r.scheduled, thresholds)?,
                covariates: r.covariates.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    StatePanel::new(panel.covariate_names.clone(), records)
}

/// Extracts per-pair binary panels from a labelled panel.
///
/// Each account-time with a state recorded at `t-1` and at `t` contributes one row
/// to every modeled `(h, ·)` panel, with `y = 1` iff the destination matches. A missing
/// month breaks the chain. Covariates are those recorded at `t`.
pub fn build_transition_panels_from_states(
    panel: &StatePanel,
    spec: &TransitionSpec,
) -> Result<BTreeMap<Pair, TransitionPanel>> {
    let mut rows: BTreeMap<Pair, Vec<TransitionRow>> = spec.pairs().map(|p| (*p, Vec::new())).collect();
    for acct in panel.accounts() {
        for w in acct.windows(2) {
            let (prev, cur) = (&w[0], &w[1]);
            if cur.time != prev.time + 1 {
                continue;
            }
            for j in spec.destinations(prev.state) {
                let pair = Pair(prev.state, j);
                rows.get_mut(&pair).expect("pair in spec").push(TransitionRow {
                    account_id: cur.account_id.clone(),
                    time: cur.time,
                    y: cur.state == j,
                    covariates: cur.covariates.clone(),
                });
            }
        }
    }
    rows.into_iter()
        .map(|(p, r)| Ok((p, TransitionPanel::from_rows(p, panel.covariate_names.clone(), r)?)))
        .collect()
}

/// Labels states with `thresholds` and extracts every modeled transition panel.
pub fn build_transition_panels(
    panel: &PanelDataset,
    thresholds: &StateThresholds,
    spec: &TransitionSpec,
) -> Result<BTreeMap<Pair, TransitionPanel>> {
    let k = panel.covariate_names.len();
    if let Some(bad) = panel.records.iter().position(|r| r.covariates.len() != k) {
        return Err(Error::Schema(format!(
            "record {bad} has {} covariates but the panel declares {k}",
            panel.records[bad].covariates.len()
        )));
    }
    let states = label_states(panel, thresholds)?;
    build_transition_panels_from_states(&states, spec)
}

const REQUIRED_COLUMNS: [&str; 4] = ["account_id", "time", "paid", "scheduled"];

fn parse_f64(s: &str, row: usize, col: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        message: format!("non-numeric value '{s}' in column '{col}'"),
    })
}

/// Reads the repayment panel CSV (`account_id,time,paid,scheduled,<covariates...>`).
/// Row numbers in errors count data rows from 1.
pub fn read_panel_csv<P: AsRef<Path>>(path: P) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    for (i, req) in REQUIRED_COLUMNS.iter().enumerate() {
        match cols.iter().position(|c| c == req) {
            Some(p) if p == i => {}
            Some(_) => {
                return Err(Error::Parse {
                    row: 0,
                    message: format!("column '{req}' must be column {}", i + 1),
                })
            }
            None => {
                return Err(Error::Parse {
                    row: 0,
                    message: format!("missing required column '{req}'"),
                })
            }
        }
    }
    let covariate_names: Vec<String> = cols[4..].iter().map(|s| s.to_string()).collect();
    let mut seen = HashSet::new();
    for c in &covariate_names {
        if !seen.insert(c.clone()) {
            return Err(Error::Parse {
                row: 0,
                message: format!("duplicate covariate column '{c}'"),
            });
        }
    }
    let mut records = Vec::new();
    let mut keys = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != cols.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", cols.len(), rec.len()),
            });
        }
        let account_id = rec[0].to_string();
        let time: u32 = rec[1].trim().parse().map_err(|_| Error::Parse {
            row,
            message: format!("invalid time '{}'", &rec[1]),
        })?;
        if time == 0 {
            return Err(Error::Parse {
                row,
                message: "time must be >= 1".into(),
            });
        }
        let paid = parse_f64(&rec[2], row, "paid")?;
        let scheduled = parse_f64(&rec[3], row, "scheduled")?;
        if !(scheduled > 0.0) {
            return Err(Error::Parse {
                row,
                message: format!("scheduled must be positive, got {scheduled}"),
            });
        }
        if !(paid >= 0.0) {
            return Err(Error::Parse {
                row,
                message: format!("paid must be nonnegative, got {paid}"),
            });
        }
        let covariates = (4..cols.len())
            .map(|c| parse_f64(&rec[c], row, cols[c]))
            .collect::<Result<Vec<_>>>()?;
        if !keys.insert((account_id.clone(), time)) {
            return Err(Error::Parse {
                row,
                message: format!("duplicate (account_id, time) = ({account_id}, {time})"),
            });
        }
        records.push(PanelRecord {
            account_id,
            time,
            paid,
            scheduled,
            covariates,
        });
    }
    Ok(PanelDataset {
        covariate_names,
        records,
    })
}

pub fn write_panel_csv<P: AsRef<Path>>(panel: &PanelDataset, path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.extend(panel.covariate_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in &panel.records {
        let mut fields = vec![
            r.account_id.clone(),
            r.time.to_string(),
            r.paid.to_string(),
            r.scheduled.to_string(),
        ];
        fields.extend(r.covariates.iter().map(|v| v.to_string()));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a binary transition panel CSV (`account_id,time,y,<covariates...>`).
pub fn read_binary_panel_csv<P: AsRef<Path>>(path: P, pair: Pair) -> Result<TransitionPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    for (i, req) in ["account_id", "time", "y"].iter().enumerate() {
        if cols.get(i) != Some(req) {
            return Err(Error::Parse {
                row: 0,
                message: format!("column {} must be '{req}'", i + 1),
            });
        }
    }
    let names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let time: u32 = rec[1].trim().parse().map_err(|_| Error::Parse {
            row,
            message: format!("invalid time '{}'", &rec[1]),
        })?;
        if time == 0 {
            return Err(Error::Parse {
                row,
                message: "time must be >= 1".into(),
            });
        }
        let y = match rec[2].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    row,
                    message: format!("outcome must be 0 or 1, got '{other}'"),
                })
            }
        };
        let covariates = (3..cols.len())
            .map(|c| parse_f64(&rec[c], row, cols[c]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(TransitionRow {
            account_id: rec[0].to_string(),
            time,
            y,
            covariates,
        });
    }
    TransitionPanel::from_rows(pair, names, rows).map_err(|e| match e {
        Error::Data(m) => Error::Parse { row: 0, message: m },
        other => other,
    })
}

pub fn write_binary_panel_csv<P: AsRef<Path>>(panel: &TransitionPanel, path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["account_id".to_string(), "time".into(), "y".into()];
    header.extend(panel.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for r in &panel.rows {
        let mut fields = vec![r.account_id.clone(), r.time.to_string(), (r.y as u8).to_string()];
        fields.extend(r.covariates.iter().map(|v| v.to_string()));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thresholds() -> StateThresholds {
        StateThresholds::new(0.60, 0.82).unwrap()
    }

    fn state_panel(accounts: &[(&str, &[(u32, State)])]) -> StatePanel {
        let mut recs = Vec::new();
        for (id, seq) in accounts {
            for &(t, s) in seq.iter() {
                recs.push(StateRecord {
                    account_id: id.to_string(),
                    time: t,
                    state: s,
                    covariates: vec![t as f64],
                });
            }
        }
        StatePanel::new(vec!["x".into()], recs).unwrap()
    }

    fn ys(p: &TransitionPanel) -> Vec<(u32, bool)> {
        p.rows.iter().map(|r| (r.time, r.y)).collect()
    }

    #[test]
    fn assign_state_bands() {
        let th = thresholds();
        assert_eq!(assign_state(90.0, 100.0, &th).unwrap(), 1);
        assert_eq!(assign_state(70.0, 100.0, &th).unwrap(), 2);
        assert_eq!(assign_state(0.0, 100.0, &th).unwrap(), 3);
        assert_eq!(assign_state(60.0, 100.0, &th).unwrap(), 2);
        assert_eq!(assign_state(82.0, 100.0, &th).unwrap(), 1);
        assert!(matches!(assign_state(1.0, 0.0, &th), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn thresholds_validated() {
        assert!(StateThresholds::new(0.8, 0.6).is_err());
        assert!(StateThresholds::new(0.0, 0.6).is_err());
        assert!(StateThresholds::new(0.6, 1.0).is_err());
    }

    #[test]
    fn stay_then_delinquent() {
        let sp = state_panel(&[("a", &[(1, 1), (2, 1), (3, 3)])]);
        let spec = TransitionSpec::new([Pair(1, 1), Pair(1, 3)]).unwrap();
        let panels = build_transition_panels_from_states(&sp, &spec).unwrap();
        assert_eq!(ys(&panels[&Pair(1, 1)]), vec![(2, true), (3, false)]);
        assert_eq!(ys(&panels[&Pair(1, 3)]), vec![(2, false), (3, true)]);
    }

    #[test]
    fn single_observation_contributes_nothing() {
        let sp = state_panel(&[("a", &[(1, 1)])]);
        let panels = build_transition_panels_from_states(&sp, &TransitionSpec::default_three_state()).unwrap();
        assert!(panels.values().all(|p| p.is_empty()));
    }

    #[test]
    fn unmodeled_destination_is_censored() {
        let sp = state_panel(&[("a", &[(1, 1), (2, 2)])]);
        let spec = TransitionSpec::new([Pair(1, 1), Pair(1, 3)]).unwrap();
        let panels = build_transition_panels_from_states(&sp, &spec).unwrap();
        assert_eq!(ys(&panels[&Pair(1, 1)]), vec![(2, false)]);
        assert_eq!(ys(&panels[&Pair(1, 3)]), vec![(2, false)]);
    }

    #[test]
    fn gap_breaks_risk_set() {
        let sp = state_panel(&[("a", &[(1, 1), (2, 1), (4, 1), (5, 3)])]);
        let spec = TransitionSpec::new([Pair(1, 1)]).unwrap();
        let panels = build_transition_panels_from_states(&sp, &spec).unwrap();
        assert_eq!(ys(&panels[&Pair(1, 1)]), vec![(2, true), (5, false)]);
        assert_eq!(panels[&Pair(1, 1)].risk_counts.get(&4), None);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "account_id,time,paid,x\na,1,3,0.5\n").unwrap();
        assert!(matches!(read_panel_csv(&p), Err(Error::Parse { .. })));

        std::fs::write(&p, "account_id,time,paid,scheduled,x\na,0,3,10,0.5\n").unwrap();
        assert!(matches!(read_panel_csv(&p), Err(Error::Parse { row: 1, .. })));

        std::fs::write(&p, "account_id,time,paid,scheduled,x\na,1,3,10,0.5\na,2,3,10,abc\n").unwrap();
        assert!(matches!(read_panel_csv(&p), Err(Error::Parse { row: 2, .. })));

        std::fs::write(&p, "account_id,time,paid,scheduled\na,1,3,10\na,1,4,10\n").unwrap();
        assert!(matches!(read_panel_csv(&p), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn pair_parsing() {
        assert_eq!("1,3".parse::<Pair>().unwrap(), Pair(1, 3));
        assert_eq!("(2, 1)".parse::<Pair>().unwrap(), Pair(2, 1));
        assert!("4,1".parse::<Pair>().is_err());
        assert!("1".parse::<Pair>().is_err());
    }
}
