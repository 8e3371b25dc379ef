//! Evaluation against reference solvers, summary statistics, report files
//! and TSPLIB matrix export.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::StepTrace;
use crate::geometry::{schedule_cost, CostModel, Decision, Schedule};
use crate::mapgen::AreaMap;
use crate::policy::{Policy, PolicyConfig};
use crate::solvers::{exact_schedule, nearest_neighbor_best, two_opt, EdgeWeightMatrix, SolverError, EXACT_MAX_AREAS};

/// Pass cap for the 2-opt reference.
pub const TWO_OPT_PASSES: usize = 1000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("tour lengths must be positive (model {0}, reference {1})")]
    NonPositiveLength(f64, f64),
    #[error("exact reference supports n <= {cap}; dataset has n = {n}")]
    TooLarge { n: usize, cap: usize },
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error("malformed TSPLIB input: {0}")]
    Tsplib(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Ratio form `l_m / l_s * 100` and excess form `(l_m / l_s - 1) * 100`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub ratio_pct: f64,
    pub excess_pct: f64,
}

pub fn optimality_gap(model: f64, reference: f64) -> Result<Gap, EvalError> {
    if !(model > 0.0 && reference > 0.0) {
        return Err(EvalError::NonPositiveLength(model, reference));
    }
    let r = model / reference;
    Ok(Gap {
        ratio_pct: r * 100.0,
        excess_pct: (r - 1.0) * 100.0,
    })
}

/// Anything that produces a schedule for a map.
pub trait Scheduler: Sync {
    fn name(&self) -> String;
    fn schedule(&self, map: &AreaMap, cost: &CostModel) -> Result<Vec<Decision>, String>;
}

impl Scheduler for Policy {
    fn name(&self) -> String {
        "policy-greedy".into()
    }

    fn schedule(&self, map: &AreaMap, cost: &CostModel) -> Result<Vec<Decision>, String> {
        self.greedy(map, cost).map(|(d, _)| d).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reference {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "nn+2opt")]
    NnTwoOpt,
}

impl Reference {
    pub fn solve(&self, map: &AreaMap, cost: &CostModel) -> Result<Schedule, SolverError> {
        match self {
            Reference::Exact => Ok(exact_schedule(map, cost)?.0),
            Reference::NnTwoOpt => {
                let start = nearest_neighbor_best(map, cost)?;
                two_opt(map, &start, cost, TWO_OPT_PASSES)
            }
        }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reference::Exact => "exact",
            Reference::NnTwoOpt => "nn+2opt",
        })
    }
}

impl FromStr for Reference {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(Reference::Exact),
            "nn+2opt" | "nn2opt" => Ok(Reference::NnTwoOpt),
            other => Err(format!("unknown reference solver {other:?} (expected exact or nn+2opt)")),
        }
    }
}

impl Scheduler for Reference {
    fn name(&self) -> String {
        self.to_string()
    }

    fn schedule(&self, map: &AreaMap, cost: &CostModel) -> Result<Vec<Decision>, String> {
        self.solve(map, cost).map(|s| s.decisions).map_err(|e| e.to_string())
    }
}

/// Min, quartiles (linear interpolation), max, mean and population std.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn boxplot_stats(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() as f64;
    let quantile = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    let mean = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k;
    Some(Summary {
        count: v.len(),
        mean,
        std: var.sqrt(),
        min: v[0],
        q1: quantile(0.25),
        median: quantile(0.5),
        q3: quantile(0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub map_id: u64,
    pub n: usize,
    pub model_cost: f64,
    pub ref_cost: f64,
    pub gap_ratio_pct: f64,
    pub excess_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub map_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub checkpoint: Option<String>,
    pub model: String,
    pub reference: String,
    pub lambda_intra: f64,
    pub closed: bool,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub model_cost: Summary,
    pub ref_cost: Summary,
    pub gap_ratio_pct: Summary,
    pub excess_pct: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: EvalMeta,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<EvalFailure>,
    /// Every map produced a record.
    pub complete: bool,
    /// One entry per distinct n, ascending.
    pub groups: Vec<GroupStats>,
}

/// Per-n aggregates of `records`.
pub fn group_stats(records: &[EvalRecord]) -> Vec<GroupStats> {
    let mut by_n: BTreeMap<usize, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_n.entry(r.n).or_default().push(r);
    }
    by_n.into_iter()
        .map(|(n, rs)| {
            let col = |f: fn(&EvalRecord) -> f64| {
                boxplot_stats(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("group is non-empty")
            };
            GroupStats {
                n,
                model_cost: col(|r| r.model_cost),
                ref_cost: col(|r| r.ref_cost),
                gap_ratio_pct: col(|r| r.gap_ratio_pct),
                excess_pct: col(|r| r.excess_pct),
            }
        })
        .collect()
}

/// Scores `model` against `reference` on every map. Per-map failures are
/// recorded in the report instead of aborting the run.
pub fn evaluate(
    model: &dyn Scheduler,
    reference: &dyn Scheduler,
    maps: &[AreaMap],
    cost: &CostModel,
    checkpoint: Option<String>,
    seed: Option<u64>,
) -> Result<EvalReport, EvalError> {
    if maps.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let outcomes: Vec<Result<EvalRecord, EvalFailure>> = maps
        .par_iter()
        .map(|map| {
            let fail = |reason: String| EvalFailure { map_id: map.id, reason };
            let cost_of = |who: &dyn Scheduler| -> Result<f64, EvalFailure> {
                let d = who.schedule(map, cost).map_err(|e| fail(format!("{}: {e}", who.name())))?;
                schedule_cost(map, &d, cost).map_err(|e| fail(format!("{}: {e}", who.name())))
            };
            let model_cost = cost_of(model)?;
            let ref_cost = cost_of(reference)?;
            let gap = optimality_gap(model_cost, ref_cost).map_err(|e| fail(e.to_string()))?;
            Ok(EvalRecord {
                map_id: map.id,
                n: map.len(),
                model_cost,
                ref_cost,
                gap_ratio_pct: gap.ratio_pct,
                excess_pct: gap.excess_pct,
            })
        })
        .collect();
    let (mut records, mut failures) = (Vec::new(), Vec::new());
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(EvalReport {
        meta: EvalMeta {
            checkpoint,
            model: model.name(),
            reference: reference.name(),
            lambda_intra: cost.lambda_intra,
            closed: cost.closed,
            seed,
        },
        groups: group_stats(&records),
        complete: failures.is_empty(),
        records,
        failures,
    })
}

/// Rejects datasets the exact reference cannot solve.
pub fn check_reference(reference: Reference, maps: &[AreaMap]) -> Result<(), EvalError> {
    if reference == Reference::Exact {
        if let Some(m) = maps.iter().find(|m| m.len() > EXACT_MAX_AREAS) {
            return Err(EvalError::TooLarge {
                n: m.len(),
                cap: EXACT_MAX_AREAS,
            });
        }
    }
    Ok(())
}

pub const REPORT_HEADER: &str = "map_id,n,model_cost,ref_cost,gap_ratio_pct,excess_pct";

pub fn write_report_csv<W: Write>(records: &[EvalRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.map_id, r.n, r.model_cost, r.ref_cost, r.gap_ratio_pct, r.excess_pct
        )?;
    }
    Ok(())
}

pub fn read_report_csv<R: BufRead>(input: R) -> Result<Vec<EvalRecord>, EvalError> {
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h == REPORT_HEADER => {}
        _ => return Err(EvalError::Malformed("missing header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| EvalError::Malformed(format!("line {}: {what}", i + 2));
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        out.push(EvalRecord {
            map_id: f[0].parse().map_err(|_| bad("bad map id"))?,
            n: f[1].parse().map_err(|_| bad("bad n"))?,
            model_cost: num(f[2])?,
            ref_cost: num(f[3])?,
            gap_ratio_pct: num(f[4])?,
            excess_pct: num(f[5])?,
        });
    }
    Ok(out)
}

/// A schedule as printed by the command line tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub solver: String,
    pub map_id: u64,
    pub n: usize,
    pub lanes: usize,
    pub lambda_intra: f64,
    pub closed: bool,
    pub cost: f64,
    pub decisions: Vec<Decision>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub log_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<Vec<StepTrace>>,
}

impl ScheduleReport {
    pub fn new(solver: impl Into<String>, map: &AreaMap, schedule: &Schedule, cost: &CostModel) -> Self {
        Self {
            solver: solver.into(),
            map_id: map.id,
            n: map.len(),
            lanes: cost.lanes,
            lambda_intra: cost.lambda_intra,
            closed: cost.closed,
            cost: schedule.total_cost,
            decisions: schedule.decisions.clone(),
            log_prob: None,
            trace: None,
        }
    }
}

/// TSPLIB explicit full-matrix text for an integral matrix.
pub fn write_tsplib<W: Write>(m: &EdgeWeightMatrix, name: &str, mut out: W) -> Result<(), EvalError> {
    if m.weights.iter().any(|w| w.fract() != 0.0) {
        return Err(EvalError::Tsplib("matrix entries must be integers".into()));
    }
    writeln!(out, "NAME: {name}")?;
    writeln!(out, "TYPE: TSP")?;
    writeln!(out, "COMMENT: node-doubled coverage instance, weights x100")?;
    writeln!(out, "DIMENSION: {}", m.n)?;
    writeln!(out, "EDGE_WEIGHT_TYPE: EXPLICIT")?;
    writeln!(out, "EDGE_WEIGHT_FORMAT: FULL_MATRIX")?;
    writeln!(out, "EDGE_WEIGHT_SECTION")?;
    for i in 0..m.n {
        let row: Vec<String> = (0..m.n).map(|j| format!("{}", m.get(i, j) as i64)).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    writeln!(out, "EOF")?;
    Ok(())
}

/// Reads the subset of TSPLIB that [`write_tsplib`] emits.
pub fn parse_tsplib(text: &str) -> Result<EdgeWeightMatrix, EvalError> {
    let err = |s: &str| EvalError::Tsplib(s.into());
    let mut dim = None;
    let mut lines = text.lines();
    for line in lines.by_ref() {
        let line = line.trim();
        if line == "EDGE_WEIGHT_SECTION" {
            break;
        }
        if let Some((key, value)) = line.split_once(':') {
            match key.trim() {
                "DIMENSION" => dim = Some(value.trim().parse::<usize>().map_err(|_| err("bad DIMENSION"))?),
                "EDGE_WEIGHT_TYPE" if value.trim() != "EXPLICIT" => return Err(err("EDGE_WEIGHT_TYPE must be EXPLICIT")),
                "EDGE_WEIGHT_FORMAT" if value.trim() != "FULL_MATRIX" => return Err(err("EDGE_WEIGHT_FORMAT must be FULL_MATRIX")),
                _ => {}
            }
        }
    }
    let n = dim.ok_or_else(|| err("missing DIMENSION"))?;
    let mut weights = Vec::with_capacity(n * n);
    for tok in lines.flat_map(str::split_whitespace) {
        if tok == "EOF" {
            break;
        }
        weights.push(tok.parse::<i64>().map_err(|_| err("non-integer weight"))? as f64);
    }
    if weights.len() != n * n {
        return Err(err(&format!("expected {} weights, found {}", n * n, weights.len())));
    }
    let mut m = EdgeWeightMatrix {
        n,
        weights,
        scaled: true,
        symmetrized: false,
    };
    m.symmetrized = m.is_symmetric();
    Ok(m)
}

/// Trainable parameter breakdown of the full-size policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub config: PolicyConfig,
    pub total: usize,
    pub encoder: usize,
    pub area_stage: usize,
    pub corner_stage: usize,
    pub pattern_stage: usize,
    pub notes: Vec<String>,
}

pub fn param_report(config: PolicyConfig) -> ParamReport {
    let policy = Policy::new(config, 0);
    let count = |pred: &dyn Fn(&str) -> bool| -> usize {
        policy
            .store
            .iter()
            .filter(|(_, e)| e.trainable && pred(&e.name))
            .map(|(_, e)| e.value.len())
            .sum()
    };
    let stage = |names: &'static [&'static str]| {
        move |n: &str| names.iter().any(|s| n.strip_prefix("decoder.") == Some(s))
    };
    let area = stage(&["w_f", "w_c1", "w_a1", "w_a2", "w_q1", "w_k1", "v_first", "v_last"]);
    let corner = stage(&["w_c2", "w_lambda", "w_lambda1", "w_lambda2", "w_q2", "w_k2"]);
    let pattern = stage(&["w_c3", "w_psi1", "w_psi2", "w_q3", "w_k3"]);
    ParamReport {
        config,
        total: policy.trainable_count(),
        encoder: count(&|n| n.starts_with("encoder.")),
        area_stage: count(&area),
        corner_stage: count(&corner),
        pattern_stage: count(&pattern),
        notes: vec![
            "attention blocks reuse the stage projections as Q/K/V; no extra per-head or output projections".into(),
            "context projection W_F is d1 x 3d1 to match the concatenated input".into(),
            "encoder and decoder weight matrices carry no bias; only the two input projections do".into(),
            "batch-norm scale and shift are trainable; running statistics are not counted".into(),
            "two learned first-step placeholders of width d1".into(),
        ],
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "config: d1={} d2={} d3={} layers={} heads={} clip={}",
            c.d1, c.d2, c.d3, c.layers, c.heads, c.clip
        )?;
        writeln!(f, "trainable parameters: {}", self.total)?;
        writeln!(f, "  encoder:        {}", self.encoder)?;
        writeln!(f, "  area stage:     {}", self.area_stage)?;
        writeln!(f, "  corner stage:   {}", self.corner_stage)?;
        writeln!(f, "  pattern stage:  {}", self.pattern_stage)?;
        writeln!(f, "reference figure: approximately 360,000")?;
        writeln!(f, "architectural decisions:")?;
        for n in &self.notes {
            writeln!(f, "  - {n}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_lengths_give_exactly_100() {
        let g = optimality_gap(2.5, 2.5).unwrap();
        assert_eq!(g.ratio_pct, 100.0);
        assert_eq!(g.excess_pct, 0.0);
        assert_eq!(optimality_gap(4.0, 2.0).unwrap().ratio_pct, 200.0);
        assert!(matches!(optimality_gap(0.0, 1.0), Err(EvalError::NonPositiveLength(..))));
    }

    #[test]
    fn five_number_summary() {
        let s = boxplot_stats(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        let one = boxplot_stats(&[7.5]).unwrap();
        assert_eq!((one.min, one.q1, one.median, one.q3, one.max), (7.5, 7.5, 7.5, 7.5, 7.5));
        assert!(boxplot_stats(&[]).is_none());
    }

    #[test]
    fn reference_names_parse() {
        assert_eq!("exact".parse::<Reference>().unwrap(), Reference::Exact);
        assert_eq!("nn+2opt".parse::<Reference>().unwrap(), Reference::NnTwoOpt);
        assert!("concorde".parse::<Reference>().is_err());
    }

    #[test]
    fn tsplib_round_trip() {
        let m = EdgeWeightMatrix::from_rows(vec![vec![0.0, -5.0], vec![-5.0, 0.0]]).unwrap();
        let mut buf = Vec::new();
        write_tsplib(&m, "t", &mut buf).unwrap();
        let back = parse_tsplib(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.weights, m.weights);
        assert!(back.symmetrized);
    }
}
