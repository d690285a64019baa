//! Segmentation metrics: confusion matrices, per-class IoU, mIoU and the
//! domain-generalization mean over several target datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{ClassCatalog, LabelMap};
use crate::par;

/// Column order used by every rendered report, before any other dataset names.
pub const BENCHMARK_COLUMNS: [&str; 4] = ["CS", "BDD", "MV", "ACDC"];

/// Datasets averaged into the DG mean unless told otherwise.
pub const DEFAULT_DG_DATASETS: [&str; 3] = ["CS", "BDD", "MV"];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction is {pred:?} but ground truth is {gt:?}")]
    DimensionMismatch { pred: (u32, u32), gt: (u32, u32) },
    #[error("{which} pixel ({x}, {y}) holds {value}, not a class id or the ignore index")]
    InvalidValue { which: &'static str, x: u32, y: u32, value: u8 },
    #[error("confusion matrices of {0} and {1} classes cannot be merged")]
    SizeMismatch(usize, usize),
    #[error("no evaluated class has a defined IoU")]
    NoDefinedClass,
    #[error("dataset set for the DG mean is empty")]
    EmptyInclusion,
    #[error("dataset `{0}` is included in the DG mean but has no score")]
    UnknownDataset(String),
}

/// Pixel counts indexed by (ground truth, prediction).
///
/// Pixels whose ground truth is the ignore index are skipped. Pixels whose
/// prediction is the ignore index count as misses for the ground-truth class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    ignore_index: u8,
    counts: Vec<u64>,
    missed: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(catalog: &ClassCatalog) -> Self {
        Self::with_size(catalog.len(), catalog.ignore_index())
    }

    pub fn with_size(classes: usize, ignore_index: u8) -> Self {
        ConfusionMatrix {
            classes,
            ignore_index,
            counts: vec![0; classes * classes],
            missed: vec![0; classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    /// Pixels of class `gt` predicted as the ignore index.
    pub fn missed(&self, gt: usize) -> u64 {
        self.missed[gt]
    }

    /// Number of evaluated (non-ignore ground truth) pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.missed.iter().sum::<u64>()
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<(), EvalError> {
        if pred.dimensions() != gt.dimensions() {
            return Err(EvalError::DimensionMismatch { pred: pred.dimensions(), gt: gt.dimensions() });
        }
        let width = gt.width() as usize;
        let s = self.classes;
        let position = |i: usize| ((i % width) as u32, (i / width) as u32);
        for (i, (&g, &p)) in gt.data().iter().zip(pred.data()).enumerate() {
            if g == self.ignore_index {
                continue;
            }
            let g = usize::from(g);
            if g >= s {
                let (x, y) = position(i);
                return Err(EvalError::InvalidValue { which: "ground truth", x, y, value: g as u8 });
            }
            if p == self.ignore_index {
                self.missed[g] += 1;
                continue;
            }
            let p = usize::from(p);
            if p >= s {
                let (x, y) = position(i);
                return Err(EvalError::InvalidValue { which: "prediction", x, y, value: p as u8 });
            }
            self.counts[g * s + p] += 1;
        }
        Ok(())
    }

    /// Element-wise sum; the only synchronization point for parallel evaluation.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if other.classes != self.classes {
            return Err(EvalError::SizeMismatch(self.classes, other.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.missed.iter_mut().zip(&other.missed) {
            *a += b;
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the class never occurs in
    /// either ground truth or prediction.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        let s = self.classes;
        (0..s)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..s).map(|p| self.get(c, p)).sum::<u64>() + self.missed[c];
                let col: u64 = (0..s).map(|g| self.get(g, c)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean of the defined IoUs over the catalog's evaluation subset.
    pub fn miou(&self, catalog: &ClassCatalog) -> Result<f64, EvalError> {
        let ious = self.iou_per_class();
        let defined: Vec<f64> = catalog
            .eval_subset()
            .iter()
            .filter_map(|&id| ious.get(usize::from(id)).copied().flatten())
            .collect();
        if defined.is_empty() {
            return Err(EvalError::NoDefinedClass);
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Accumulates many (prediction, ground truth) pairs, in parallel when enabled.
pub fn accumulate_pairs(
    catalog: &ClassCatalog,
    pairs: &[(LabelMap, LabelMap)],
) -> Result<ConfusionMatrix, EvalError> {
    par::map_reduce(
        pairs,
        || Ok(ConfusionMatrix::new(catalog)),
        |(pred, gt)| {
            let mut m = ConfusionMatrix::new(catalog);
            m.accumulate(pred, gt)?;
            Ok(m)
        },
        merge_results,
    )
}

/// Single-threaded [`accumulate_pairs`].
pub fn accumulate_pairs_sequential(
    catalog: &ClassCatalog,
    pairs: &[(LabelMap, LabelMap)],
) -> Result<ConfusionMatrix, EvalError> {
    par::map_reduce_sequential(
        pairs,
        || Ok(ConfusionMatrix::new(catalog)),
        |(pred, gt)| {
            let mut m = ConfusionMatrix::new(catalog);
            m.accumulate(pred, gt)?;
            Ok(m)
        },
        merge_results,
    )
}

fn merge_results(
    a: Result<ConfusionMatrix, EvalError>,
    b: Result<ConfusionMatrix, EvalError>,
) -> Result<ConfusionMatrix, EvalError> {
    let mut a = a?;
    a.merge(&b?)?;
    Ok(a)
}

/// Unweighted mean of the per-dataset scores named in `included`.
pub fn dg_mean(scores: &BTreeMap<String, f64>, included: &BTreeSet<String>) -> Result<f64, EvalError> {
    if included.is_empty() {
        return Err(EvalError::EmptyInclusion);
    }
    let mut sum = 0.0;
    for name in included {
        sum += scores.get(name).ok_or_else(|| EvalError::UnknownDataset(name.clone()))?;
    }
    Ok(sum / included.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    /// Class name to IoU, in catalog order; `null` for undefined classes.
    pub per_class: IndexMap<String, Option<f64>>,
    pub miou: f64,
}

impl DatasetScore {
    pub fn from_confusion(conf: &ConfusionMatrix, catalog: &ClassCatalog) -> Result<Self, EvalError> {
        let ious = conf.iou_per_class();
        let per_class = catalog
            .classes()
            .iter()
            .filter(|c| catalog.eval_subset().contains(&c.id))
            .map(|c| (c.name.clone(), ious[usize::from(c.id)]))
            .collect();
        Ok(DatasetScore { per_class, miou: conf.miou(catalog)? })
    }
}

/// Scores of several datasets plus their DG mean. Scores are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub datasets: IndexMap<String, DatasetScore>,
    pub dg_mean: f64,
    pub included: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TextTable,
    Json,
}

impl EvalReport {
    pub fn new(
        datasets: IndexMap<String, DatasetScore>,
        included: impl IntoIterator<Item = String>,
    ) -> Result<Self, EvalError> {
        let included: BTreeSet<String> = included.into_iter().collect();
        let scores: BTreeMap<String, f64> =
            datasets.iter().map(|(k, v)| (k.clone(), v.miou)).collect();
        let dg = dg_mean(&scores, &included)?;
        let mut datasets = datasets;
        datasets.sort_by(|a, _, b, _| column_rank(a).cmp(&column_rank(b)));
        let mut included: Vec<String> = included.into_iter().collect();
        included.sort_by_key(|a| column_rank(a));
        Ok(EvalReport { datasets, dg_mean: dg, included })
    }

    /// Dataset columns in rendering order.
    pub fn columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = self.datasets.keys().map(String::as_str).collect();
        cols.sort_by_key(|a| column_rank(a));
        cols
    }

    pub fn render(&self, label: &str, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => serde_json::to_string_pretty(self).expect("report serializes"),
            ReportFormat::TextTable => render_table(&[(label, self)]),
        }
    }
}

fn column_rank(name: &str) -> (usize, String) {
    match BENCHMARK_COLUMNS.iter().position(|c| *c == name) {
        Some(i) => (i, String::new()),
        None => (BENCHMARK_COLUMNS.len(), name.to_string()),
    }
}

/// Benchmark-style table, one row per report, values in percent with one decimal.
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut columns: Vec<&str> = Vec::new();
    for (_, r) in rows {
        for c in r.columns() {
            if !columns.contains(&c) {
                columns.push(c);
            }
        }
    }
    columns.sort_by_key(|a| column_rank(a));

    let label_width = rows.iter().map(|(l, _)| l.len()).chain(["Method".len()]).max().unwrap_or(6);
    let widths: Vec<usize> = columns.iter().map(|c| c.len().max(5)).collect();
    let mut out = String::new();
    let _ = write!(out, "{:<label_width$}", "Method");
    for (c, w) in columns.iter().zip(&widths) {
        let _ = write!(out, "  {c:>w$}");
    }
    let _ = writeln!(out, "  {:>7}", "DG mean");
    for (label, report) in rows {
        let _ = write!(out, "{label:<label_width$}");
        for (c, w) in columns.iter().zip(&widths) {
            let cell = report
                .datasets
                .get(*c)
                .map(|s| format!("{:.1}", s.miou * 100.0))
                .unwrap_or_else(|| "-".to_string());
            let _ = write!(out, "  {cell:>w$}");
        }
        let _ = writeln!(out, "  {:>7}", format!("{:.1}", report.dg_mean * 100.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::CatalogScheme;
    use proptest::prelude::*;

    fn two_class() -> ClassCatalog {
        ClassCatalog::new(vec!["a".into(), "b".into()], [0, 1], 255).unwrap()
    }

    fn map(w: u32, h: u32, data: &[u8]) -> LabelMap {
        LabelMap::from_raw(w, h, data.to_vec()).unwrap()
    }

    #[test]
    fn hand_computed_two_class_example() {
        // gt=[0,1,1,1], pred=[0,0,1,1]:
        // class 0: TP 1, FP 1, FN 0 -> 1/2; class 1: TP 2, FP 0, FN 1 -> 2/3
        let catalog = two_class();
        let mut conf = ConfusionMatrix::new(&catalog);
        conf.accumulate(&map(4, 1, &[0, 0, 1, 1]), &map(4, 1, &[0, 1, 1, 1])).unwrap();
        let ious = conf.iou_per_class();
        assert!((ious[0].unwrap() - 0.5).abs() < 1e-12);
        assert!((ious[1].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((conf.miou(&catalog).unwrap() - 0.583_333_333_333).abs() < 1e-9);
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let catalog = ClassCatalog::from_scheme(CatalogScheme::Gta19);
        let gt = map(3, 2, &[0, 1, 2, 13, 13, 255]);
        let mut conf = ConfusionMatrix::new(&catalog);
        conf.accumulate(&gt, &gt).unwrap();
        for g in 0..19 {
            for p in 0..19 {
                if g != p {
                    assert_eq!(conf.get(g, p), 0);
                }
            }
        }
        assert_eq!(conf.total(), 5);
        let ious = conf.iou_per_class();
        assert_eq!(ious[0], Some(1.0));
        assert_eq!(ious[5], None);
        assert_eq!(conf.miou(&catalog).unwrap(), 1.0);
    }

    #[test]
    fn all_ignore_leaves_matrix_unchanged() {
        let catalog = two_class();
        let mut conf = ConfusionMatrix::new(&catalog);
        conf.accumulate(&map(2, 1, &[0, 1]), &map(2, 1, &[255, 255])).unwrap();
        assert_eq!(conf, ConfusionMatrix::new(&catalog));
        assert_eq!(conf.miou(&catalog), Err(EvalError::NoDefinedClass));
    }

    #[test]
    fn ignore_prediction_is_a_miss() {
        let catalog = two_class();
        let mut conf = ConfusionMatrix::new(&catalog);
        conf.accumulate(&map(2, 1, &[0, 255]), &map(2, 1, &[0, 0])).unwrap();
        assert_eq!(conf.iou_per_class()[0], Some(0.5));
        assert_eq!(conf.total(), 2);
    }

    #[test]
    fn dimension_mismatch() {
        let catalog = two_class();
        let mut conf = ConfusionMatrix::new(&catalog);
        let err = conf.accumulate(&map(2, 1, &[0, 0]), &map(1, 2, &[0, 0])).unwrap_err();
        assert!(matches!(err, EvalError::DimensionMismatch { .. }));
    }

    #[test]
    fn synthia_subset_ignores_truck() {
        let catalog = ClassCatalog::from_scheme(CatalogScheme::Synthia16);
        let truck = catalog.id_of("truck").unwrap();
        let car = catalog.id_of("car").unwrap();
        let mut conf = ConfusionMatrix::new(&catalog);
        conf.accumulate(&map(3, 1, &[0, car, 0]), &map(3, 1, &[0, car, car])).unwrap();
        let before = conf.miou(&catalog).unwrap();
        conf.accumulate(&map(2, 1, &[truck, truck]), &map(2, 1, &[truck, truck])).unwrap();
        assert_eq!(conf.iou_per_class()[usize::from(truck)], Some(1.0));
        assert_eq!(conf.miou(&catalog).unwrap(), before);
    }

    #[test]
    fn dg_mean_examples() {
        let scores = |v: &[(&str, f64)]| v.iter().map(|(k, x)| (k.to_string(), *x)).collect::<BTreeMap<_, _>>();
        let inc: BTreeSet<String> = DEFAULT_DG_DATASETS.iter().map(|s| s.to_string()).collect();
        let t1 = dg_mean(&scores(&[("CS", 52.4), ("BDD", 40.9), ("MV", 49.2), ("ACDC", 36.1)]), &inc).unwrap();
        assert_eq!(format!("{t1:.1}"), "47.5");
        let t3 = dg_mean(&scores(&[("CS", 58.5), ("BDD", 52.2), ("MV", 62.9), ("ACDC", 46.9)]), &inc).unwrap();
        assert_eq!(format!("{t3:.1}"), "57.9");
        let same = dg_mean(&scores(&[("CS", 0.3), ("BDD", 0.3), ("MV", 0.3)]), &inc).unwrap();
        assert!((same - 0.3).abs() < 1e-12);
        assert_eq!(dg_mean(&scores(&[("CS", 1.0)]), &BTreeSet::new()), Err(EvalError::EmptyInclusion));
        assert!(matches!(dg_mean(&scores(&[("CS", 1.0)]), &inc), Err(EvalError::UnknownDataset(_))));
    }

    fn score(miou: f64) -> DatasetScore {
        DatasetScore { per_class: IndexMap::new(), miou }
    }

    #[test]
    fn single_dataset_report_is_one_row() {
        let mut d = IndexMap::new();
        d.insert("CS".to_string(), score(0.524));
        let r = EvalReport::new(d, ["CS".to_string()]).unwrap();
        let text = r.render("didex", ReportFormat::TextTable);
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains("52.4"));
        assert_eq!(r.dg_mean, 0.524);
    }

    #[test]
    fn report_columns_in_benchmark_order() {
        let mut d = IndexMap::new();
        for (k, v) in [("ACDC", 0.361), ("extra", 0.1), ("MV", 0.492), ("CS", 0.524), ("BDD", 0.409)] {
            d.insert(k.to_string(), score(v));
        }
        let r = EvalReport::new(d, DEFAULT_DG_DATASETS.iter().map(|s| s.to_string())).unwrap();
        assert_eq!(r.columns(), vec!["CS", "BDD", "MV", "ACDC", "extra"]);
        let header = r.render("x", ReportFormat::TextTable);
        let header = header.lines().next().unwrap();
        let pos = |s: &str| header.find(s).unwrap();
        assert!(pos("CS") < pos("BDD") && pos("BDD") < pos("MV") && pos("MV") < pos("ACDC"));
        assert!(pos("extra") < pos("DG mean"));
        assert!(r.render("x", ReportFormat::TextTable).contains("47.5"));
    }

    #[test]
    fn json_and_text_agree() {
        let mut d = IndexMap::new();
        d.insert("CS".to_string(), score(0.52437));
        d.insert("BDD".to_string(), score(0.40861));
        let r = EvalReport::new(d, ["CS".to_string(), "BDD".to_string()]).unwrap();
        let json = r.render("m", ReportFormat::Json);
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let text = back.render("m", ReportFormat::TextTable);
        let row: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
        assert_eq!(row[1], format!("{:.1}", 52.437));
        assert_eq!(row[2], format!("{:.1}", 40.861));
        assert_eq!(row[3], format!("{:.1}", (52.437 + 40.861) / 2.0));
    }

    #[test]
    fn golden_report() {
        let catalog = ClassCatalog::new(vec!["road".into(), "car".into(), "sky".into()], [0, 1, 2], 255).unwrap();
        let mut reports = IndexMap::new();
        for (name, pred, gt) in [
            ("CS", vec![0, 1, 2, 2], vec![0, 1, 2, 1]),
            ("BDD", vec![0, 0, 2, 2], vec![0, 1, 2, 2]),
            ("ACDC", vec![1, 1, 2, 2], vec![0, 1, 2, 2]),
        ] {
            let mut c = ConfusionMatrix::new(&catalog);
            c.accumulate(&map(4, 1, &pred), &map(4, 1, &gt)).unwrap();
            reports.insert(name.to_string(), DatasetScore::from_confusion(&c, &catalog).unwrap());
        }
        let r = EvalReport::new(reports, ["CS".to_string(), "BDD".to_string()]).unwrap();
        let golden_text = include_str!("../tests/golden/report.txt");
        let golden_json = include_str!("../tests/golden/report.json");
        assert_eq!(r.render("golden", ReportFormat::TextTable), golden_text);
        assert_eq!(r.render("golden", ReportFormat::Json), golden_json.trim_end());
    }

    fn pairs(max_classes: u8) -> impl Strategy<Value = (u8, Vec<(LabelMap, LabelMap)>)> {
        (2u8..=max_classes).prop_flat_map(|s| {
            let pair = (1u32..9, 1u32..9).prop_flat_map(move |(w, h)| {
                let n = (w * h) as usize;
                let px = prop_oneof![8 => 0..s, 1 => Just(255u8)];
                (
                    proptest::collection::vec(px.clone(), n),
                    proptest::collection::vec(px, n),
                )
                    .prop_map(move |(p, g)| (LabelMap::from_raw(w, h, p).unwrap(), LabelMap::from_raw(w, h, g).unwrap()))
            });
            (Just(s), proptest::collection::vec(pair, 1..6))
        })
    }

    fn catalog_of(s: u8) -> ClassCatalog {
        ClassCatalog::new((0..s).map(|i| format!("c{i}")).collect(), 0..s, 255).unwrap()
    }

    proptest! {
        #[test]
        fn merge_is_associative_and_matches_streaming((s, ps) in pairs(5), split in 0usize..6) {
            let catalog = catalog_of(s);
            let mut streamed = ConfusionMatrix::new(&catalog);
            for (p, g) in &ps { streamed.accumulate(p, g).unwrap(); }
            let split = split.min(ps.len());
            let mut left = accumulate_pairs(&catalog, &ps[..split]).unwrap();
            let right = accumulate_pairs_sequential(&catalog, &ps[split..]).unwrap();
            left.merge(&right).unwrap();
            prop_assert_eq!(&left, &streamed);
            prop_assert_eq!(accumulate_pairs(&catalog, &ps).unwrap(), streamed);
        }

        #[test]
        fn miou_is_permutation_equivariant((s, ps) in pairs(5), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let catalog = catalog_of(s);
            let mut perm: Vec<u8> = (0..s).collect();
            perm.shuffle(&mut crate::seed::rng(seed));
            let apply = |m: &LabelMap| {
                let data = m.data().iter().map(|&v| if v == 255 { 255 } else { perm[v as usize] }).collect();
                LabelMap::from_raw(m.width(), m.height(), data).unwrap()
            };
            let permuted: Vec<_> = ps.iter().map(|(p, g)| (apply(p), apply(g))).collect();
            let a = accumulate_pairs(&catalog, &ps).unwrap().miou(&catalog);
            let b = accumulate_pairs(&catalog, &permuted).unwrap().miou(&catalog);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn ious_are_fractions((s, ps) in pairs(5)) {
            let catalog = catalog_of(s);
            let conf = accumulate_pairs(&catalog, &ps).unwrap();
            for iou in conf.iou_per_class().into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&iou));
            }
            if let Ok(m) = conf.miou(&catalog) {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
    }
}
