//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits nonzero when a criterion outside `KNOWN_UNATTAINABLE` fails, or when
//! any criterion fails and `DIDEX_ACCEPTANCE_STRICT` is set.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use didex_core::adapt::{
    masked_loss, masked_loss_grad, materialize_scenario, run_scenario_on_disk, AccessLog, Batch, Scenario,
    ScenarioData, ToyModel, FEATURES,
};
use didex_core::dataset::{
    read_manifest, run_extension, subsample_order, verify_dataset, DatasetDescriptor, DatasetRole, ExtensionOptions,
    MANIFEST_FILE,
};
use didex_core::diffusion::BackendConfig;
use didex_core::eval::{ConfusionMatrix, DatasetScore, EvalReport, ReportFormat};
use didex_core::label::{CatalogScheme, ClassCatalog, ClassId, LabelMap, RasterImage};
use didex_core::prompt::{PromptConfig, PromptGenerator};
use didex_core::seed;
use indexmap::IndexMap;
use rand::Rng;

/// The printed DG means of two transformer rows and one prompt-ablation row
/// are not the rounded means of their printed inputs.
const KNOWN_UNATTAINABLE: &[u32] = &[1];

const SAMPLE_PROMPT: &str = "A high quality photo; Europe, highway, road, car, building, vegetation, winter";
const GOLDEN_PROMPTS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/prompts_100.jsonl");

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

#[derive(Clone, Copy)]
enum Match {
    Exact,
    Within(f64),
}

struct Row {
    table: &'static str,
    method: &'static str,
    /// CS, BDD, MV and, when reported, ACDC.
    miou: &'static [f64],
    printed: f64,
    rule: Match,
}

const fn row(table: &'static str, method: &'static str, miou: &'static [f64], printed: f64, rule: Match) -> Row {
    Row { table, method, miou, printed, rule }
}

const TOL: Match = Match::Within(0.05);

const ROWS: &[Row] = &[
    row("GTA5 sota", "ResNet MIC", &[52.4, 40.9, 49.2], 47.5, Match::Exact),
    row("GTA5 sota", "Transformer baseline", &[46.6, 45.6, 50.1], 47.4, TOL),
    row("GTA5 sota", "Transformer ReVT", &[50.0, 48.0, 52.8], 50.3, TOL),
    row("GTA5 sota", "Transformer DAFormer", &[52.7, 47.9, 54.7], 51.7, TOL),
    row("GTA5 sota", "Transformer HRDA", &[57.4, 49.1, 61.2], 55.9, TOL),
    row("GTA5 sota", "Transformer CMFormer", &[55.3, 49.9, 60.1], 55.1, TOL),
    row("GTA5 sota", "Transformer MIC", &[62.0, 54.3, 63.0], 59.7, TOL),
    row("SYNTHIA sota", "Transformer baseline", &[41.4, 36.2, 42.4], 40.0, TOL),
    row("SYNTHIA sota", "Transformer ReVT", &[46.3, 40.3, 44.8], 43.8, TOL),
    row("SYNTHIA sota", "Transformer CMFormer", &[44.6, 33.4, 43.3], 40.4, TOL),
    row("SYNTHIA sota", "Transformer MIC", &[59.8, 47.4, 59.5], 55.6, TOL),
    row("prompt ablation", "base", &[58.5, 52.2, 62.9, 46.9], 57.9, Match::Exact),
    row("prompt ablation", "+loc", &[58.7, 52.5, 63.4, 46.7], 58.2, Match::Exact),
    row("prompt ablation", "+con", &[59.4, 52.7, 62.7, 46.8], 58.3, Match::Exact),
    row("prompt ablation", "+CUS", &[61.2, 52.5, 63.7, 48.8], 59.1, Match::Exact),
    row("prompt ablation", "+loc +CUS", &[58.6, 51.8, 62.8, 45.2], 57.7, Match::Exact),
    row("prompt ablation", "+con +CUS", &[60.1, 53.7, 63.5, 46.6], 59.1, Match::Exact),
    row("prompt ablation", "+loc +con +CUS", &[58.8, 52.7, 63.2, 47.4], 58.3, Match::Exact),
];

fn report_for(miou: &[f64]) -> EvalReport {
    let names = ["CS", "BDD", "MV", "ACDC"];
    let datasets: IndexMap<String, DatasetScore> = names
        .iter()
        .zip(miou)
        .map(|(n, v)| (n.to_string(), DatasetScore { per_class: IndexMap::new(), miou: v / 100.0 }))
        .collect();
    let included = datasets.keys().filter(|k| k.as_str() != "ACDC").cloned().collect::<Vec<_>>();
    EvalReport::new(datasets, included).unwrap()
}

fn dg_mean_reproduction() -> Check {
    let mut misses = Vec::new();
    for r in ROWS {
        let report = report_for(r.miou);
        let table = report.render(r.method, ReportFormat::TextTable);
        let cell = table.lines().nth(1).and_then(|l| l.split_whitespace().last()).unwrap_or("").to_string();
        let ok = match r.rule {
            Match::Exact => cell == format!("{:.1}", r.printed),
            Match::Within(tol) => (report.dg_mean * 100.0 - r.printed).abs() <= tol,
        };
        if !ok {
            misses.push(format!("{} / {}: mean {:.3} vs printed {:.1}", r.table, r.method, report.dg_mean * 100.0, r.printed));
        }
    }
    ensure(misses.is_empty(), || format!("{} of {} rows off: {}", misses.len(), ROWS.len(), misses.join("; ")))?;
    Ok(format!("{} rows", ROWS.len()))
}

// ---------------------------------------------------------------- 2

/// Per-pixel double loop over classes and pixels; gt ignore pixels are skipped,
/// an ignore prediction on a valid pixel is a miss for the gt class.
fn naive_miou(pred: &LabelMap, gt: &LabelMap, s: usize, eval: &BTreeSet<ClassId>, ignore: u8) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in 0..s as u8 {
        if !eval.contains(&c) {
            continue;
        }
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                let (g, p) = (gt.get(x, y), pred.get(x, y));
                if g == ignore {
                    continue;
                }
                match (g == c, p == c) {
                    (true, true) => tp += 1,
                    (true, false) => fn_ += 1,
                    (false, true) => fp += 1,
                    (false, false) => {}
                }
            }
        }
        if tp + fp + fn_ > 0 {
            sum += tp as f64 / (tp + fp + fn_) as f64;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

fn miou_oracle_equivalence() -> Check {
    let mut rng = seed::rng(20_240);
    let mut undefined = 0;
    for trial in 0..1000 {
        let s = rng.gen_range(1..=5usize);
        let (w, h) = (rng.gen_range(1..=16u32), rng.gen_range(1..=16u32));
        let mut eval: BTreeSet<ClassId> = (0..s as u8).filter(|_| rng.gen_bool(0.7)).collect();
        if eval.is_empty() {
            eval.insert(rng.gen_range(0..s as u8));
        }
        let catalog = ClassCatalog::new((0..s).map(|i| format!("c{i}")).collect(), eval.iter().copied(), 255).unwrap();
        let mut draw = |p_ignore: f64| -> Vec<u8> {
            (0..w * h)
                .map(|_| if rng.gen_bool(p_ignore) { 255 } else { rng.gen_range(0..s as u8) })
                .collect()
        };
        let gt = LabelMap::from_raw(w, h, draw(0.1)).unwrap();
        let pred = LabelMap::from_raw(w, h, draw(0.05)).unwrap();
        let mut conf = ConfusionMatrix::new(&catalog);
        conf.accumulate(&pred, &gt).unwrap();
        let module = conf.miou(&catalog).ok();
        let oracle = naive_miou(&pred, &gt, s, &eval, 255);
        undefined += usize::from(oracle.is_none());
        ensure(module == oracle, || format!("trial {trial}: module {module:?} vs oracle {oracle:?}"))?;
    }
    Ok(format!("1000 pairs, {undefined} with no defined class"))
}

// ---------------------------------------------------------------- 3

fn cus_config() -> PromptConfig {
    PromptConfig { cus_enabled: true, seed: 3, ..PromptConfig::default() }
}

fn cus_properties() -> Check {
    let catalog = ClassCatalog::from_scheme(CatalogScheme::Gta19);
    let s = catalog.len();
    let all: Vec<ClassId> = catalog.classes().iter().map(|c| c.id).collect();
    let mut g = PromptGenerator::new(cus_config(), catalog.clone()).unwrap();
    let mut picks = vec![0u64; s];
    for _ in 0..10 * s {
        let r = g.build(&all).unwrap();
        picks[usize::from(r.blocks.cus_class.unwrap())] += 1;
    }
    let spread = picks.iter().max().unwrap() - picks.iter().min().unwrap();
    ensure(spread <= 1, || format!("selection counts {picks:?} spread {spread}"))?;

    let mut rng = seed::rng(77);
    let mut steps = 0;
    for stream in 0..500 {
        let mut g = PromptGenerator::new(PromptConfig { seed: stream, ..cus_config() }, catalog.clone()).unwrap();
        let mut counts = vec![0u64; s];
        for step in 0..rng.gen_range(1..=40) {
            let density = rng.gen_range(0.0..1.0);
            let present: Vec<ClassId> = all.iter().copied().filter(|_| rng.gen_bool(density)).collect();
            let chosen = g.build(&present).unwrap().blocks.cus_class.unwrap();
            let pre = g.last_pre_commit().unwrap().to_vec();
            for &c in &present {
                counts[usize::from(c)] += 1;
            }
            ensure(pre == counts, || format!("stream {stream} step {step}: instrumented {pre:?} vs replay {counts:?}"))?;
            let min = *pre.iter().min().unwrap();
            let argmin = pre.iter().position(|&c| c == min).unwrap() as ClassId;
            ensure(chosen == argmin, || format!("stream {stream} step {step}: chose {chosen}, argmin {argmin}"))?;
            counts[usize::from(chosen)] += 1;
            steps += 1;
        }
    }
    Ok(format!("spread {spread} after {} images; {steps} steps over 500 streams", 10 * s))
}

// ---------------------------------------------------------------- 4

fn street_label(w: u32, h: u32) -> LabelMap {
    let g = ClassCatalog::from_scheme(CatalogScheme::Gta19);
    let id = |n: &str| g.id_of(n).unwrap();
    let mut l = LabelMap::filled(w, h, id("road"));
    let mut paint = |ys: std::ops::Range<u32>, xs: std::ops::Range<u32>, c| {
        for y in ys {
            for x in xs.clone() {
                l.set(x, y, c);
            }
        }
    };
    paint(0..h / 4, 0..w, id("building"));
    paint(0..h / 8, 0..w / 2, id("vegetation"));
    paint(h / 2..h / 2 + h / 4, 0..w, id("car"));
    l
}

fn golden_prompts() -> String {
    let catalog = ClassCatalog::from_scheme(CatalogScheme::Gta19);
    let config = PromptConfig { conditions_enabled: true, seed: 11, ..PromptConfig::default() };
    let mut g = PromptGenerator::new(config, catalog.clone()).unwrap();
    let mut out = String::new();
    for i in 0..100u32 {
        let present: Vec<ClassId> =
            catalog.classes().iter().map(|c| c.id).filter(|&c| (i * 7 + u32::from(c) * 3) % 5 < 2).collect();
        out.push_str(&g.build(&present).unwrap().to_json_line());
        out.push('\n');
    }
    out
}

fn prompt_golden(work: &Path) -> Check {
    let src = work.join("prompt_src");
    let image = RasterImage::filled(16, 16, [128, 64, 128]);
    let catalog = ClassCatalog::from_scheme(CatalogScheme::Gta19);
    DatasetDescriptor::write_samples(&src, DatasetRole::Source, catalog, &[("s0".into(), image, Some(street_label(16, 16)))])
        .unwrap();
    let cfg = work.join("forced.json");
    let forced = serde_json::json!({
        "source": src,
        "prompt": {
            "locations": ["Europe"], "traffic": ["highway"], "conditions_enabled": true, "conditions": ["winter"],
            "cus_enabled": false, "class_order": "area"
        }
    });
    fs::write(&cfg, forced.to_string()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_didex"))
        .args(["--config", cfg.to_str().unwrap(), "prompt", "--limit", "1"])
        .output()
        .unwrap();
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    let line: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    ensure(line["rendered"] == SAMPLE_PROMPT, || format!("rendered {}", line["rendered"]))?;

    let generated = golden_prompts();
    if std::env::var_os("DIDEX_UPDATE_GOLDEN").is_some() {
        fs::write(GOLDEN_PROMPTS, &generated).unwrap();
    }
    let golden = fs::read_to_string(GOLDEN_PROMPTS).map_err(|e| format!("{GOLDEN_PROMPTS}: {e}"))?;
    let diverging = golden.lines().zip(generated.lines()).position(|(a, b)| a != b);
    ensure(golden.lines().count() == 100 && generated == golden, || {
        format!("golden file differs (first differing line {diverging:?})")
    })?;
    Ok("sample prompt byte-exact; 100 golden prompts".into())
}

// ---------------------------------------------------------------- 5

fn street_sample(i: u64) -> (RasterImage, LabelMap) {
    let mut rng = seed::rng(i + 500);
    let (w, h) = (16, 12);
    let mut image = RasterImage::filled(w, h, [128, 64, 128]);
    let mut label = LabelMap::filled(w, h, 0);
    for _ in 0..rng.gen_range(1..4) {
        let class: u8 = rng.gen_range(1..19);
        let (x0, y0) = (rng.gen_range(0..w - 2), rng.gen_range(0..h - 2));
        let (x1, y1) = (rng.gen_range(x0 + 1..w), rng.gen_range(y0 + 1..h));
        for y in y0..y1 {
            for x in x0..x1 {
                image.set_pixel(x, y, [class * 13, 255 - class * 7, class * 3]);
                label.set(x, y, class);
            }
        }
    }
    (image, label)
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else if p.file_name().unwrap() != MANIFEST_FILE {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn pipeline_resume(work: &Path) -> Check {
    let samples: Vec<_> = (0..20u64)
        .map(|i| {
            let (img, lbl) = street_sample(i);
            (format!("img{i:02}"), img, Some(lbl))
        })
        .collect();
    let catalog = ClassCatalog::from_scheme(CatalogScheme::Gta19);
    let source = DatasetDescriptor::write_samples(&work.join("ext_src"), DatasetRole::Source, catalog, &samples).unwrap();
    let prompt = PromptConfig { conditions_enabled: true, seed: 9, ..PromptConfig::default() };
    let options = ExtensionOptions { seed: 21, ..ExtensionOptions::default() };
    let backend = BackendConfig::mock();
    let (full, resumed) = (work.join("ext_full"), work.join("ext_resumed"));

    run_extension(&source, &prompt, &backend, &options, &full).map_err(|e| e.to_string())?;
    let half = ExtensionOptions { max_new_generations: Some(10), ..options.clone() };
    let a = run_extension(&source, &prompt, &backend, &half, &resumed).map_err(|e| e.to_string())?;
    ensure((a.generated, a.pending) == (10, 10), || format!("interrupted run: {} generated, {} pending", a.generated, a.pending))?;
    let b = run_extension(&source, &prompt, &backend, &options, &resumed).map_err(|e| e.to_string())?;
    ensure((b.reused, b.generated) == (10, 10), || format!("resumed run: {} reused, {} generated", b.reused, b.generated))?;

    let m_full = read_manifest(&full.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let m_resumed = read_manifest(&resumed.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    ensure(m_full.canonical() == m_resumed.canonical(), || "manifests differ".into())?;
    ensure(files(&full) == files(&resumed), || "dataset files differ".into())?;
    let report = verify_dataset(&b.dataset, &b.manifest_path).map_err(|e| e.to_string())?;
    ensure(report.is_clean(), || format!("{} defects", report.defects.len()))?;
    Ok(format!("{} records, 0 defects", report.records))
}

// ---------------------------------------------------------------- 6

fn toy_adaptation(work: &Path) -> Check {
    let s = Scenario::color_shift();
    let data = ScenarioData::build(&s).map_err(|e| e.to_string())?;
    let sets = materialize_scenario(&s, &data, &work.join("scenario")).map_err(|e| e.to_string())?;
    let label_dir = sets.target.root.join(sets.target.label_dir.as_ref().unwrap());
    for id in &sets.target.ids {
        fs::write(sets.target.label_path(id).unwrap(), b"unreadable").unwrap();
    }
    let log = AccessLog::default();
    let r = run_scenario_on_disk(&s, &sets, &log).map_err(|e| e.to_string())?;
    ensure(!log.touched_under(&label_dir), || "target labels were opened".into())?;
    ensure(log.touched_under(&sets.target.root.join(&sets.target.image_dir)), || "target images were not used".into())?;
    ensure(r.gain() >= 0.10, || format!("gain {:.4} < 0.10", r.gain()))?;
    Ok(format!(
        "source-only {:.4}, adapted {:.4}, gain {:+.4}; 0 target label reads of {} opened files",
        r.source_only_miou,
        r.adapted_miou,
        r.gain(),
        log.opened().len()
    ))
}

// ---------------------------------------------------------------- 7

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn gradient_check() -> Check {
    let mut rng = seed::rng(4242);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let classes = rng.gen_range(2..=5usize);
        let mut batch = Batch::default();
        for _ in 0..rng.gen_range(1..=3) {
            let (w, h) = (rng.gen_range(1..=6u32), rng.gen_range(1..=6u32));
            let n = (w * h) as usize;
            let img = RasterImage::new(w, h, (0..n * 3).map(|_| rng.gen()).collect()).unwrap();
            let labels: Vec<ClassId> =
                (0..n).map(|_| if rng.gen_bool(0.1) { 255 } else { rng.gen_range(0..classes) as ClassId }).collect();
            let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
            batch.push_image(&img, &LabelMap::from_raw(w, h, labels).unwrap(), Some(&mask));
        }
        let weights: Vec<f64> = (0..classes * (FEATURES + 1)).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let model = ToyModel::from_weights(classes, weights.clone()).unwrap();
        let (_, analytic) = masked_loss_grad(&model, &batch);
        let h = 1e-5;
        let numeric: Vec<f64> = (0..weights.len())
            .map(|i| {
                let at = |d: f64| {
                    let mut w = weights.clone();
                    w[i] += d;
                    masked_loss(&ToyModel::from_weights(classes, w).unwrap(), &batch)
                };
                (at(h) - at(-h)) / (2.0 * h)
            })
            .collect();
        let e = rel_err(&analytic, &numeric);
        worst = worst.max(e);
        ensure(e <= 1e-4, || format!("batch {trial}: relative error {e:.2e}"))?;
    }
    Ok(format!("50 batches, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 8

fn subsampling_harness(work: &Path) -> Check {
    let samples: Vec<_> = (0..120u64)
        .map(|i| {
            let (img, lbl) = street_sample(i);
            (format!("t{i:03}"), img, Some(lbl))
        })
        .collect();
    let catalog = ClassCatalog::from_scheme(CatalogScheme::Gta19);
    let pool = work.join("pool");
    DatasetDescriptor::write_samples(&pool, DatasetRole::TargetVal, catalog, &samples).unwrap();
    let out = work.join("sweep");
    let o = Command::new(env!("CARGO_BIN_EXE_didex"))
        .args(["--seed", "3", "--out", out.to_str().unwrap(), "subsample", "--dataset", pool.to_str().unwrap()])
        .args(["--k", "8,29,100"])
        .output()
        .unwrap();
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;

    let ks = [8usize, 29, 100];
    let ids: Vec<BTreeSet<String>> = ks
        .iter()
        .map(|k| DatasetDescriptor::load(&out.join(format!("subsets/k{k:03}"))).map(|d| d.ids.into_iter().collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for (i, a) in ids.iter().enumerate() {
        ensure(a.len() == ks[i], || format!("k={} has {} ids", ks[i], a.len()))?;
        for (j, b) in ids.iter().enumerate().skip(i + 1) {
            ensure(a.is_subset(b), || format!("k={} not contained in k={}", ks[i], ks[j]))?;
        }
    }
    let order = subsample_order(120, seed::derive(3, "subsample"));
    for (k, got) in ks.iter().zip(&ids) {
        let prefix: BTreeSet<String> = order[..*k].iter().map(|&i| format!("t{i:03}")).collect();
        ensure(&prefix == got, || format!("k={k} is not the {k}-prefix of the seeded permutation"))?;
    }

    let mut reader = csv::Reader::from_path(out.join("curve.csv")).map_err(|e| e.to_string())?;
    let header: Vec<String> = reader.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    ensure(header == ["k", "images", "subset", "source_only_miou", "adapted_miou"], || format!("header {header:?}"))?;
    let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let curve_ks: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap_or(0)).collect();
    ensure(curve_ks == ks, || format!("curve ks {curve_ks:?}"))?;
    for r in &rows {
        ensure(r[1] == r[0] && Path::new(&r[2]).is_file(), || format!("malformed row {r:?}"))?;
    }
    Ok("k in {8, 29, 100}: nested, curve.csv well-formed".into())
}

// ----------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: Box<dyn FnOnce() -> Check>,
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path().to_path_buf();
    let secs = |s| Some(Duration::from_secs(s));
    let (w4, w5, w6, w8) = (w.clone(), w.clone(), w.clone(), w.clone());
    let criteria = vec![
        Criterion { id: 1, name: "DG-mean reproduction", budget: secs(1), run: Box::new(dg_mean_reproduction) },
        Criterion { id: 2, name: "mIoU oracle equivalence", budget: secs(10), run: Box::new(miou_oracle_equivalence) },
        Criterion { id: 3, name: "CUS properties", budget: secs(5), run: Box::new(cus_properties) },
        Criterion { id: 4, name: "prompt golden", budget: None, run: Box::new(move || prompt_golden(&w4)) },
        Criterion { id: 5, name: "pipeline determinism and resume", budget: secs(30), run: Box::new(move || pipeline_resume(&w5)) },
        Criterion { id: 6, name: "toy generalization by adaptation", budget: secs(60), run: Box::new(move || toy_adaptation(&w6)) },
        Criterion { id: 7, name: "gradient check", budget: secs(10), run: Box::new(gradient_check) },
        Criterion { id: 8, name: "subsampling harness", budget: None, run: Box::new(move || subsampling_harness(&w8)) },
    ];

    let strict = std::env::var_os("DIDEX_ACCEPTANCE_STRICT").is_some();
    panic::set_hook(Box::new(|_| {}));
    let mut passed = 0;
    let mut blocking = Vec::new();
    let total = criteria.len();
    for c in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {:.2}s, budget {}s", elapsed.as_secs_f64(), b.as_secs())),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        println!("{tag} [{}] {} ({:.2}s): {detail}", c.id, c.name, elapsed.as_secs_f64());
        match outcome {
            Ok(_) => passed += 1,
            Err(_) if strict || !KNOWN_UNATTAINABLE.contains(&c.id) => blocking.push(c.id),
            Err(_) => {}
        }
    }
    println!("acceptance: {passed}/{total} passed");
    if !blocking.is_empty() {
        println!("blocking failures: {blocking:?}");
        std::process::exit(1);
    }
}
