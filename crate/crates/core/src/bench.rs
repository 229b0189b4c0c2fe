//! Replicate studies on the simulation families and ARI on labelled datasets,
//! comparing the fitted model against GMM-EM with BIC and ICL order selection.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{load_csv, LabelColumn, LabeledDataset};
use crate::error::{invalid, Result};
use crate::fit::{fit, EventKind, FitConfig, FitResult};
use crate::gmm::{posterior, score_k};
use crate::metrics::ari;
use crate::objective::map_labels;
use crate::sim::{Family, SimSpec};

/// Component counts scanned by the GMM baselines.
pub const GMM_KS: [usize; 9] = [1, 2, 3, 4, 5, 6, 7, 8, 9];
/// Neighbour counts tried on real datasets; the best-silhouette fit is kept.
pub const KNN_GRID: [usize; 3] = [15, 25, 45];
/// Simulation families in the `sims` suite.
pub const SIM_FAMILIES: [Family; 3] = [Family::Cross, Family::Mixg, Family::Outlier];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Methods {
    pub turtle: bool,
    pub gmm: bool,
}

impl Methods {
    pub const ALL: Methods = Methods { turtle: true, gmm: true };
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReplicate {
    pub family: Family,
    pub replicate: u64,
    pub turtle_k: Option<usize>,
    pub turtle_ari: Option<f64>,
    /// Every accepted merge raised the silhouette.
    pub merges_increase: Option<bool>,
    pub bic_k: Option<usize>,
    pub bic_ari: Option<f64>,
    pub icl_k: Option<usize>,
    pub icl_ari: Option<f64>,
}

/// True when each merge in `res` was accepted on a strictly higher silhouette.
pub fn merges_increase(res: &FitResult) -> bool {
    res.history.iter().filter(|e| e.kind == EventKind::Merge).all(|e| match (e.asw_before, e.asw_after) {
        (Some(b), Some(a)) => a > b,
        (None, Some(_)) => true,
        _ => false,
    })
}

struct GmmChoice {
    bic: (usize, f64),
    icl: (usize, f64),
}

fn gmm_choice(x: &DMatrix<f64>, truth: &[usize], seed: u64) -> Result<GmmChoice> {
    let scored = score_k(x, &GMM_KS, seed)?;
    let pick = |key: fn(&(usize, f64, f64, crate::gmm::GmmFit)) -> f64| -> Result<(usize, f64)> {
        let best = scored
            .iter()
            .fold(None::<&(usize, f64, f64, crate::gmm::GmmFit)>, |acc, s| match acc {
                Some(a) if key(a) >= key(s) => Some(a),
                _ => Some(s),
            })
            .ok_or_else(|| invalid("no GMM fits"))?;
        let p = posterior(&best.3, x)?;
        let labels = map_labels(&crate::objective::Responsibilities { p });
        Ok((best.0, ari(&labels, truth)?))
    };
    Ok(GmmChoice { bic: pick(|s| s.1)?, icl: pick(|s| s.2)? })
}

/// One replicate of `family`: data from `(seed, replicate)`, fits seeded by `replicate`.
/// ARI is measured against the coarser labelling where one exists.
pub fn sim_replicate(family: Family, seed: u64, replicate: u64, methods: Methods) -> Result<SimReplicate> {
    let sim = SimSpec { family, seed, replicate }.generate();
    let truth = sim.intuitive.clone().or_else(|| sim.data.true_labels.clone()).ok_or_else(|| invalid("unlabelled simulation"))?;
    let x = sim.data.standardized().x;
    let mut out = SimReplicate {
        family,
        replicate,
        turtle_k: None,
        turtle_ari: None,
        merges_increase: None,
        bic_k: None,
        bic_ari: None,
        icl_k: None,
        icl_ari: None,
    };
    if methods.turtle {
        let res = fit(&x, &FitConfig { seed: replicate, ..Default::default() })?;
        out.turtle_k = Some(res.k());
        out.turtle_ari = Some(ari(&res.labels, &truth)?);
        out.merges_increase = Some(merges_increase(&res));
    }
    if methods.gmm {
        let g = gmm_choice(&x, &truth, replicate)?;
        (out.bic_k, out.bic_ari) = (Some(g.bic.0), Some(g.bic.1));
        (out.icl_k, out.icl_ari) = (Some(g.icl.0), Some(g.icl.1));
    }
    Ok(out)
}

/// Replicates `0..n` of `family`. Each replicate parallelizes internally, so
/// replicates run in order.
pub fn sim_study(family: Family, seed: u64, n: u64, methods: Methods) -> Result<Vec<SimReplicate>> {
    (0..n).map(|r| sim_replicate(family, seed, r, methods)).collect()
}

/// Fits once per neighbour count and keeps the highest silhouette (earliest on ties).
pub fn best_over_knn(x: &DMatrix<f64>, base: &FitConfig, knn: &[usize]) -> Result<(usize, FitResult)> {
    let fits: Vec<(usize, FitResult)> = knn
        .par_iter()
        .map(|&k| {
            let mut cfg = base.clone();
            cfg.init.k = k;
            fit(x, &cfg).map(|r| (k, r))
        })
        .collect::<Result<_>>()?;
    let score = |r: &FitResult| r.asw.unwrap_or(f64::NEG_INFINITY);
    fits.into_iter()
        .reduce(|best, c| if score(&c.1) > score(&best.1) { c } else { best })
        .ok_or_else(|| invalid("empty neighbour grid"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetRow {
    pub dataset: String,
    pub method: String,
    pub k: usize,
    pub ari: f64,
    pub knn: Option<usize>,
    pub asw: Option<f64>,
}

/// The fitted model (best over [`KNN_GRID`]) and both GMM baselines on one
/// labelled, standardized dataset.
pub fn dataset_rows(ds: &LabeledDataset, seed: u64) -> Result<Vec<DatasetRow>> {
    let truth = ds.true_labels.as_ref().ok_or_else(|| invalid(format!("{} has no labels", ds.name)))?;
    let (knn, res) = best_over_knn(&ds.x, &FitConfig { seed, ..Default::default() }, &KNN_GRID)?;
    let g = gmm_choice(&ds.x, truth, seed)?;
    let row = |method: &str, k, ari, knn, asw| DatasetRow { dataset: ds.name.clone(), method: method.into(), k, ari, knn, asw };
    Ok(vec![
        row("turtleshell", res.k(), ari(&res.labels, truth)?, Some(knn), res.asw),
        row("gmm_bic", g.bic.0, g.bic.1, None, None),
        row("gmm_icl", g.icl.0, g.icl.1, None, None),
    ])
}

/// Every `*.csv` in `dir` with a `label` column, sorted by file name.
pub fn labelled_datasets(dir: &Path) -> Result<Vec<LabeledDataset>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_csv(p, true, Some(&LabelColumn::Name("label".into())), true)).collect()
}

/// Directory of the datasets bundled with the crate.
pub fn bundled_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrequencyRow {
    pub family: Family,
    pub method: &'static str,
    pub k: usize,
    pub count: usize,
}

/// Counts of selected K per family and method.
pub fn frequency_table(reps: &[SimReplicate]) -> Vec<FrequencyRow> {
    let mut rows: Vec<FrequencyRow> = Vec::new();
    for r in reps {
        for (method, k) in [("turtleshell", r.turtle_k), ("gmm_bic", r.bic_k), ("gmm_icl", r.icl_k)] {
            let Some(k) = k else { continue };
            match rows.iter_mut().find(|f| f.family == r.family && f.method == method && f.k == k) {
                Some(f) => f.count += 1,
                None => rows.push(FrequencyRow { family: r.family, method, k, count: 1 }),
            }
        }
    }
    rows.sort_by(|a, b| (a.family as u8, a.method, a.k).cmp(&(b.family as u8, b.method, b.k)));
    rows
}

/// Serializes rows to a headed CSV.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::Event;
    use crate::model::Hyper;

    fn rep(family: Family, t: usize, b: usize) -> SimReplicate {
        SimReplicate {
            family,
            replicate: 0,
            turtle_k: Some(t),
            turtle_ari: None,
            merges_increase: None,
            bic_k: Some(b),
            bic_ari: None,
            icl_k: None,
            icl_ari: None,
        }
    }

    #[test]
    fn frequencies_are_grouped_and_sorted() {
        let t = frequency_table(&[rep(Family::Mixg, 3, 4), rep(Family::Cross, 4, 6), rep(Family::Mixg, 3, 3)]);
        let flat: Vec<_> = t.iter().map(|f| (f.family, f.method, f.k, f.count)).collect();
        assert_eq!(
            flat,
            vec![
                (Family::Cross, "gmm_bic", 6, 1),
                (Family::Cross, "turtleshell", 4, 1),
                (Family::Mixg, "gmm_bic", 3, 1),
                (Family::Mixg, "gmm_bic", 4, 1),
                (Family::Mixg, "turtleshell", 3, 2),
            ]
        );
    }

    #[test]
    fn merge_monotonicity_check() {
        let (x, _) = crate::init::tests::blobs(&[[0.0, 0.0], [6.0, 0.0]], 30, 0.5, 2);
        let mut res = fit(&x, &FitConfig { lambda1_grid: vec![0.0], lambda2_grid: vec![0.0], ..Default::default() }).unwrap();
        let ev = |b, a| Event {
            kind: EventKind::Merge,
            hyper: Hyper::ZERO,
            clusters: vec![0, 1],
            k_before: 3,
            k_after: 2,
            asw_before: Some(b),
            asw_after: Some(a),
        };
        res.history = vec![ev(0.4, 0.5)];
        assert!(merges_increase(&res));
        res.history.push(ev(0.5, 0.5));
        assert!(!merges_increase(&res));
    }

    #[test]
    fn bundled_wine_loads() {
        let sets = labelled_datasets(&bundled_data_dir()).unwrap();
        let wine = sets.iter().find(|d| d.name == "wine").unwrap();
        assert_eq!((wine.n(), wine.dim()), (178, 13));
        assert_eq!(wine.true_labels.as_ref().unwrap().iter().max(), Some(&2));
    }
}
