//! The fitting pipeline: initialize, estimate at zero penalty, then search
//! the penalty grid from that warm start with small-cluster removal and the
//! merge loop in every cell, keeping the cell with the best silhouette.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, ClusterError, Result};
use crate::init::{default_subsample, initialize_data, InitConfig};
use crate::metrics::silhouette_data;
use crate::model::{DataRange, Hyper, Model};
use crate::objective::{map_labels, posterior_data, Data, Problem, Responsibilities};
use crate::optim::{maximize_with, OptimizerConfig};
use crate::select::{drop_cluster, merge_params, merge_partner, uncertainty_order};

const MAX_MERGE_EVALS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub init: InitConfig,
    pub lambda1_grid: Vec<f64>,
    pub lambda2_grid: Vec<f64>,
    /// Minimum MAP share; `None` means `max(0.01, 10/N)`.
    pub removal_threshold: Option<f64>,
    pub optimizer: OptimizerConfig,
    /// Points sampled for silhouette; `None` means exact up to 10 000 points
    /// and a 5 000-point sample beyond.
    pub asw_subsample: Option<usize>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            init: InitConfig::default(),
            lambda1_grid: vec![0.0, 0.01, 0.1, 1.0],
            lambda2_grid: vec![0.0, 0.1, 1.0, 10.0],
            removal_threshold: None,
            optimizer: OptimizerConfig::default(),
            asw_subsample: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    WarmStart,
    Grid,
    Removal,
    Merge,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::WarmStart => "warm_start",
            Phase::Grid => "grid",
            Phase::Removal => "removal",
            Phase::Merge => "merge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub phase: Phase,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Removal,
    Merge,
}

/// One order-reducing step. For merges `asw_after` is the score of the merged
/// model that justified acceptance, before re-estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub hyper: Hyper,
    pub clusters: Vec<usize>,
    pub k_before: usize,
    pub k_after: usize,
    pub asw_before: Option<f64>,
    pub asw_after: Option<f64>,
}

/// Summary of one penalty-grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub hyper: Hyper,
    pub k: Option<usize>,
    pub asw: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    pub labels: Vec<usize>,
    pub responsibilities: Responsibilities,
    pub asw: Option<f64>,
    pub hyper: Hyper,
    pub initial_k: usize,
    pub objective_trace: Vec<TracePoint>,
    pub history: Vec<Event>,
    pub cells: Vec<CellSummary>,
}

impl FitResult {
    /// Number of clusters that receive at least one MAP label.
    pub fn k(&self) -> usize {
        let mut used = vec![false; self.model.k()];
        for &l in &self.labels {
            used[l] = true;
        }
        used.iter().filter(|&&u| u).count()
    }
}

struct Ctx<'a> {
    data: &'a Data,
    range: DataRange,
    opt: OptimizerConfig,
    threshold: f64,
    subsample: Option<usize>,
    seed: u64,
}

#[derive(Default)]
struct Log {
    trace: Vec<TracePoint>,
    history: Vec<Event>,
}

struct Cell {
    model: Model,
    labels: Vec<usize>,
    asw: Option<f64>,
    log: Log,
}

impl Ctx<'_> {
    fn asw(&self, labels: &[usize]) -> Option<f64> {
        silhouette_data(self.data, labels, self.subsample, self.seed).ok()
    }

    fn labels(&self, m: &Model) -> Vec<usize> {
        map_labels(&posterior_data(self.data, m))
    }

    fn maximize(&self, m: &Model, h: Hyper, phase: Phase, log: &mut Log) -> Result<Model> {
        let problem = Problem { data: self.data.clone(), hyper: h };
        let (k, d) = (m.k(), m.dim);
        let bounds = self.range.bounds(k);
        let mut x0 = m.pack();
        bounds.project(&mut x0);
        let (x, trace) = maximize_with(
            |v| match Model::unpack(v, k, d) {
                Ok(mm) => problem.value_and_gradient(&mm),
                Err(_) => (f64::NAN, vec![f64::NAN; v.len()]),
            },
            &x0,
            &bounds,
            &self.opt,
        )?;
        log.trace.extend(trace.values.iter().map(|&value| TracePoint { phase, value }));
        Model::unpack(&x, k, d)
    }

    /// Drops the smallest under-threshold cluster and re-estimates until
    /// every MAP share clears the threshold or one cluster remains.
    fn remove_small(&self, mut m: Model, h: Hyper, log: &mut Log) -> Result<Model> {
        while m.k() > 1 {
            let labels = self.labels(&m);
            let mut counts = vec![0usize; m.k()];
            for &l in &labels {
                counts[l] += 1;
            }
            let n = labels.len() as f64;
            let smallest = (0..m.k())
                .filter(|&k| (counts[k] as f64) / n < self.threshold)
                .min_by_key(|&k| counts[k]);
            let Some(k) = smallest else { break };
            let asw_before = self.asw(&labels);
            let reduced = drop_cluster(&m, k)?;
            m = self.maximize(&reduced, h, Phase::Removal, log)?;
            log.history.push(Event {
                kind: EventKind::Removal,
                hyper: h,
                clusters: vec![k],
                k_before: reduced.k() + 1,
                k_after: m.k(),
                asw_before,
                asw_after: self.asw(&self.labels(&m)),
            });
        }
        Ok(m)
    }

    /// One pass over merge candidates in uncertainty order. Returns the
    /// re-estimated model after the first merge that raises the silhouette.
    fn merge_step(&self, m: &Model, h: Hyper, evals: &mut usize, log: &mut Log) -> Result<Option<Model>> {
        if m.k() < 2 {
            return Ok(None);
        }
        let resp = posterior_data(self.data, m);
        let labels = map_labels(&resp);
        let current = self.asw(&labels);
        let baseline = current.unwrap_or(f64::NEG_INFINITY);
        for c in uncertainty_order(&resp, &labels) {
            if *evals >= MAX_MERGE_EVALS {
                break;
            }
            let Some(partner) = merge_partner(&resp, c) else { continue };
            *evals += 1;
            let Ok(merged) = merge_params(m, c, partner) else { continue };
            let Some(score) = self.asw(&self.labels(&merged)) else { continue };
            if score > baseline {
                log.trace.push(TracePoint {
                    phase: Phase::Merge,
                    value: Problem { data: self.data.clone(), hyper: h }.value(&merged),
                });
                let refit = self.maximize(&merged, h, Phase::Merge, log)?;
                log.history.push(Event {
                    kind: EventKind::Merge,
                    hyper: h,
                    clusters: vec![c.min(partner), c.max(partner)],
                    k_before: m.k(),
                    k_after: merged.k(),
                    asw_before: current,
                    asw_after: Some(score),
                });
                return Ok(Some(refit));
            }
        }
        Ok(None)
    }

    fn reduce(&self, m: Model, h: Hyper, log: &mut Log) -> Result<Model> {
        let mut m = self.remove_small(m, h, log)?;
        let cap = m.k().saturating_sub(1);
        let mut evals = 0;
        let mut accepted = 0;
        while accepted < cap {
            match self.merge_step(&m, h, &mut evals, log)? {
                Some(next) => {
                    m = next;
                    accepted += 1;
                }
                None => break,
            }
        }
        Ok(m)
    }

    fn run_cell(&self, warm: &Model, h: Hyper) -> Result<Cell> {
        let mut log = Log::default();
        let m = self.maximize(warm, h, Phase::Grid, &mut log)?;
        let model = self.reduce(m, h, &mut log)?;
        let labels = self.labels(&model);
        let asw = self.asw(&labels);
        Ok(Cell { model, labels, asw, log })
    }
}

fn validate(x: &DMatrix<f64>, cfg: &FitConfig) -> Result<()> {
    let (n, d) = x.shape();
    if d == 0 || n < 2 || n < 2 * d {
        return Err(invalid(format!("need at least max(2, 2D) points, got N = {n}, D = {d}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("data contain non-finite values"));
    }
    if cfg.lambda1_grid.is_empty() || cfg.lambda2_grid.is_empty() {
        return Err(invalid("penalty grids must be nonempty"));
    }
    if let Some(t) = cfg.removal_threshold {
        if !(t > 0.0 && t < 0.5) {
            return Err(invalid("removal threshold must lie in (0, 0.5)"));
        }
    }
    Ok(())
}

/// Runs the full pipeline on `x` (already scaled as desired).
pub fn fit(x: &DMatrix<f64>, cfg: &FitConfig) -> Result<FitResult> {
    validate(x, cfg)?;
    let data = Data::new(x);
    let ctx = Ctx {
        data: &data,
        range: DataRange::of(x),
        opt: cfg.optimizer,
        threshold: cfg.removal_threshold.unwrap_or_else(|| (10.0 / data.n as f64).max(0.01)),
        subsample: cfg.asw_subsample.or_else(|| default_subsample(data.n)),
        seed: cfg.seed,
    };
    let init_cfg = InitConfig { seed: cfg.seed, ..cfg.init.clone() };
    let start = initialize_data(&data, &ctx.range, &init_cfg, ctx.subsample)?;
    let initial_k = start.model.k();

    let mut warm_log = Log::default();
    warm_log.trace.push(TracePoint {
        phase: Phase::Init,
        value: Problem { data: data.clone(), hyper: Hyper::ZERO }.value(&start.model),
    });
    let warm = ctx.maximize(&start.model, Hyper::ZERO, Phase::WarmStart, &mut warm_log)?;
    let warm = ctx.reduce(warm, Hyper::ZERO, &mut warm_log)?;

    let mut grid = Vec::new();
    for &l1 in &cfg.lambda1_grid {
        for &l2 in &cfg.lambda2_grid {
            grid.push(Hyper::new(l1, l2)?);
        }
    }
    let cells: Vec<Result<Cell>> = grid.par_iter().map(|&h| ctx.run_cell(&warm, h)).collect();

    let summaries: Vec<CellSummary> = grid
        .iter()
        .zip(&cells)
        .map(|(&hyper, c)| match c {
            Ok(c) => CellSummary { hyper, k: Some(c.model.k()), asw: c.asw, error: None },
            Err(e) => CellSummary { hyper, k: None, asw: None, error: Some(e.to_string()) },
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        let Ok(c) = c else { continue };
        let better = match best.map(|b| cells[b].as_ref().expect("kept cells are ok")) {
            None => true,
            Some(b) => match (c.asw, b.asw) {
                (Some(x), Some(y)) => x > y,
                (Some(_), None) => true,
                _ => false,
            },
        };
        if better {
            best = Some(i);
        }
    }
    let Some(best) = best else {
        return Err(ClusterError::AllCellsFailed(
            summaries.iter().map(|s| format!("{:?}: {}", s.hyper, s.error.as_deref().unwrap_or(""))).collect(),
        ));
    };
    let hyper = grid[best];
    let cell = cells.into_iter().nth(best).expect("index in range")?;
    let mut objective_trace = warm_log.trace;
    objective_trace.extend(cell.log.trace);
    let mut history = warm_log.history;
    history.extend(cell.log.history);
    let responsibilities = posterior_data(&data, &cell.model);
    Ok(FitResult {
        model: cell.model,
        labels: cell.labels,
        responsibilities,
        asw: cell.asw,
        hyper,
        initial_k,
        objective_trace,
        history,
        cells: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::tests::blobs;
    use crate::metrics::ari;

    fn quick(k: usize) -> FitConfig {
        FitConfig {
            init: InitConfig { k, n_starts: 3, ..Default::default() },
            lambda1_grid: vec![0.0, 0.1],
            lambda2_grid: vec![0.0, 1.0],
            ..Default::default()
        }
    }

    #[test]
    fn three_blobs_recovered() {
        let (x, truth) = blobs(&[[0.0, 0.0], [6.0, 0.0], [3.0, 5.0]], 50, 0.8, 1);
        let r = fit(&x, &quick(15)).unwrap();
        assert_eq!(r.k(), 3);
        assert!(ari(&r.labels, &truth).unwrap() > 0.95);
        assert_eq!(r.labels, map_labels(&r.responsibilities));
        assert_eq!(r.cells.len(), 4);
        let best = r.asw.unwrap();
        assert!(r.cells.iter().all(|c| c.asw.is_none_or(|a| a <= best)));
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, _) = blobs(&[[0.0, 0.0], [5.0, 1.0]], 40, 1.0, 2);
        let a = fit(&x, &quick(10)).unwrap();
        let b = fit(&x, &quick(10)).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.model, b.model);
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn merges_raise_silhouette_and_shares_clear_threshold() {
        let (x, _) = blobs(&[[0.0, 0.0], [7.0, 0.0], [3.5, 6.0], [10.0, 7.0]], 60, 1.0, 3);
        let r = fit(&x, &quick(10)).unwrap();
        for e in r.history.iter().filter(|e| e.kind == EventKind::Merge) {
            assert!(e.asw_after.unwrap() > e.asw_before.unwrap_or(f64::NEG_INFINITY));
            assert_eq!(e.k_after + 1, e.k_before);
        }
        if r.model.k() > 1 {
            let threshold = (10.0 / 240.0f64).max(0.01);
            let mut counts = vec![0usize; r.model.k()];
            for &l in &r.labels {
                counts[l] += 1;
            }
            assert!(counts.iter().all(|&c| c as f64 / 240.0 >= threshold));
        }
    }

    #[test]
    fn coincident_clusters_merge() {
        // One blob split between two overlapping clusters plus a distant blob.
        let (x, _) = blobs(&[[0.0, 0.0], [12.0, 0.0]], 60, 1.0, 4);
        let data = Data::new(&x);
        let ctx = Ctx {
            data: &data,
            range: DataRange::of(&x),
            opt: OptimizerConfig::default(),
            threshold: 0.01,
            subsample: None,
            seed: 0,
        };
        let start = crate::init::initialize_data(
            &data,
            &ctx.range,
            &InitConfig { scheme: crate::init::Scheme::Kmeans, k: 3, n_starts: 1, ..Default::default() },
            None,
        )
        .unwrap();
        assert_eq!(start.model.k(), 3);
        let mut log = Log::default();
        let m = ctx.reduce(start.model.clone(), Hyper::ZERO, &mut log).unwrap();
        assert_eq!(ctx.labels(&m).iter().collect::<std::collections::BTreeSet<_>>().len(), 2);
        assert!(log.history.iter().any(|e| e.kind == EventKind::Merge));
    }

    #[test]
    fn spurious_tiny_cluster_removed() {
        let (mut x, _) = blobs(&[[0.0, 0.0], [8.0, 0.0], [4.0, 7.0]], 40, 0.7, 5);
        let mut xs = DMatrix::zeros(122, 2);
        xs.rows_mut(0, 120).copy_from(&x.rows(0, 120));
        xs[(120, 0)] = 20.0;
        xs[(120, 1)] = 20.0;
        xs[(121, 0)] = 20.2;
        xs[(121, 1)] = 20.1;
        x = xs;
        let cfg = FitConfig { removal_threshold: Some(0.05), ..quick(10) };
        let r = fit(&x, &cfg).unwrap();
        assert_eq!(r.k(), 3);
    }

    #[test]
    fn rejects_bad_input() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(fit(&x, &FitConfig::default()).is_err());
        let mut y = DMatrix::from_element(10, 1, 1.0);
        y[(3, 0)] = f64::NAN;
        assert!(fit(&y, &FitConfig::default()).is_err());
    }
}
