//! Acceptance gates. Each prints one PASS/FAIL line; a shared lock keeps the
//! gates sequential so wall-clock budgets are measured in isolation.

mod common;

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use texdesc::dpselect::dp_scores;
use texdesc::eval::{auc, evaluate_features, CellStatus, Protocol};
use texdesc::features::{extract_dataset, DescriptorConfig};
use texdesc::gabor::gabor_response;
use texdesc::hox::{extract_hog, extract_hot, HistogramConfig};
use texdesc::patchio::{DensitySel, Label};
use texdesc::pbdct::{dct2, idct2};
use texdesc::pipeline::{classify, decode_bundle, encode_bundle, train_pipeline, Stage, TrainOptions};
use texdesc::{synth, ImagePatch};

static SERIAL: Mutex<()> = Mutex::new(());

/// Runs `body` under the lock, prints the verdict line and fails the test on
/// a failed check or an exceeded budget.
fn gate(id: u32, name: &str, budget: Option<Duration>, body: impl FnOnce() -> Result<String, String>) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let outcome = body();
    let elapsed = start.elapsed();
    let over = budget.is_some_and(|b| elapsed > b);
    let budget_note = budget.map_or(String::new(), |b| format!(", budget {:.0}s", b.as_secs_f64()));
    let (verdict, detail) = match &outcome {
        Ok(d) if !over => ("PASS", d.clone()),
        Ok(d) => ("FAIL", format!("{d}; over time budget")),
        Err(e) => ("FAIL", e.clone()),
    };
    // Written to the raw handle so the line shows even when libtest captures output.
    let line = format!("criterion {id:>2} [{verdict}] {name}: {detail} ({:.2}s{budget_note})\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(verdict == "PASS", "criterion {id} failed: {detail}");
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_patch(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImagePatch {
    ImagePatch::from_fn(h, w, |_| rng.random::<f64>()).unwrap()
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[test]
fn criterion_01_descriptor_length() {
    gate(1, "descriptor length", Some(Duration::from_secs(5)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_patch(&mut rng, 128, 128);
        let hot = extract_hot(&p, 1.0, &HistogramConfig::default()).map_err(|e| e.to_string())?;
        let hog = extract_hog(&p, &HistogramConfig::default()).map_err(|e| e.to_string())?;
        check(hot.len() == 7200 && hog.len() == 7200, || {
            format!("default lengths hot={} hog={}", hot.len(), hog.len())
        })?;
        let mut swept = 0;
        for c in [8, 16, 32] {
            for (l, bins) in [(1, 6), (2, 8), (3, 9)] {
                let cfg = HistogramConfig {
                    cells_per_side: c,
                    block_side: l,
                    bins,
                    ..HistogramConfig::default()
                };
                let expected = l * l * (c - l + 1) * (c - l + 1) * bins;
                let hot = extract_hot(&p, 1.0, &cfg).map_err(|e| e.to_string())?.len();
                let hog = extract_hog(&p, &cfg).map_err(|e| e.to_string())?.len();
                check(hot == expected && hog == expected, || {
                    format!("c={c} l={l} B={bins}: expected {expected}, hot {hot}, hog {hog}")
                })?;
                swept += 1;
            }
        }
        Ok(format!("7200 at defaults, formula holds on {swept} configurations"))
    });
}

#[test]
fn criterion_02_dct_oracle() {
    gate(2, "DCT oracle equivalence", Some(Duration::from_secs(10)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut worst_fwd, mut worst_inv, mut worst_parseval) = (0f64, 0f64, 0f64);
        for i in 0..50 {
            let side = if i % 2 == 0 { 8 } else { 16 };
            let p = random_patch(&mut rng, side, side);
            let fast = dct2(&p);
            let slow = common::dct_direct(&to_rows(p.pixels()));
            for (u, row) in slow.iter().enumerate() {
                for (v, &s) in row.iter().enumerate() {
                    worst_fwd = worst_fwd.max((fast.coeffs[[u, v]] - s).abs());
                }
            }
            let back = idct2(&fast);
            worst_inv = worst_inv.max((&back - p.pixels()).iter().fold(0.0, |m, d| m.max(d.abs())));
            let e_img: f64 = p.pixels().iter().map(|v| v * v).sum();
            let e_dct: f64 = fast.coeffs.iter().map(|v| v * v).sum();
            worst_parseval = worst_parseval.max((e_img - e_dct).abs() / e_img);
        }
        check(worst_fwd <= 1e-9 && worst_inv <= 1e-9 && worst_parseval <= 1e-9, || {
            format!("forward {worst_fwd:e}, inverse {worst_inv:e}, parseval {worst_parseval:e}")
        })?;
        Ok(format!(
            "50 inputs; max |Δ| forward {worst_fwd:.1e}, inverse {worst_inv:.1e}, Parseval rel {worst_parseval:.1e}"
        ))
    });
}

#[test]
fn criterion_03_gabor_oracle() {
    gate(3, "Gabor oracle equivalence", Some(Duration::from_secs(30)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut compared = 0usize;
        for i in 0..20 {
            let p = random_patch(&mut rng, 32, 32);
            let img = to_rows(p.pixels());
            for sigma in [1.0, 3.0, 5.0] {
                let field = gabor_response(&p, sigma).map_err(|e| e.to_string())?;
                let (mag, ori) = common::gabor_bruteforce(&img, sigma);
                for y in 0..32 {
                    for x in 0..32 {
                        check(
                            field.magnitude[[y, x]] == mag[y][x] && field.orientation[[y, x]] == ori[y][x],
                            || format!("patch {i}, sigma {sigma}, pixel ({y},{x}) differs"),
                        )?;
                        compared += 1;
                    }
                }
            }
        }
        Ok(format!("{compared} pixels bit-identical over 20 patches × σ∈{{1,3,5}}"))
    });
}

#[test]
fn criterion_04_dp_oracle() {
    gate(4, "DP oracle ordering", Some(Duration::from_secs(5)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in 0..100 {
            let x = Array2::from_shape_fn((50, 20), |_| rng.random::<f64>());
            let mut labels: Vec<bool> = (0..50).map(|i| i < 25).collect();
            for i in (1..50).rev() {
                labels.swap(i, rng.random_range(0..=i));
            }
            let ranking = dp_scores(x.view(), &labels).map_err(|e| e.to_string())?;
            let t: Vec<f64> = (0..20).map(|j| common::welch_abs_t(&x.column(j).to_vec(), &labels)).collect();
            let oracle = common::rank_desc(&t);
            check(ranking.order == oracle, || format!("matrix {m}: {:?} vs {:?}", ranking.order, oracle))?;
        }
        Ok("100 matrices 50×20, exact permutation match".into())
    });
}

#[test]
fn criterion_05_auc_oracle() {
    gate(5, "AUC oracle", Some(Duration::from_secs(5)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst = 0f64;
        for s in 0..100 {
            let n = 20 + s % 31;
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            for i in (1..n).rev() {
                labels.swap(i, rng.random_range(0..=i));
            }
            let got = auc(&scores, &labels).ok_or("auc undefined")?;
            worst = worst.max((got - common::mann_whitney_auc(&scores, &labels)).abs());
        }
        check(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
        let labels = [false, false, false, true, true];
        let up = [0.1, 0.2, 0.3, 0.8, 0.9];
        let down: Vec<f64> = up.iter().map(|v| -v).collect();
        let (p, r) = (auc(&up, &labels), auc(&down, &labels));
        check(p == Some(100.0) && r == Some(0.0), || format!("perfect {p:?}, reversed {r:?}"))?;
        Ok(format!("100 score sets, max |Δ| {worst:.1e}; perfect 100, reversed 0"))
    });
}

fn stage_accuracy(
    ds: &texdesc::patchio::Dataset,
    cfg: &DescriptorConfig,
    stage: Stage,
) -> Result<(f64, f64), String> {
    let features = extract_dataset(ds, cfg).map_err(|e| e.to_string())?;
    let report = evaluate_features(ds, &features, cfg, &[DensitySel::All], &Protocol::default());
    let cell = report.cell(DensitySel::All, stage).ok_or("missing cell")?;
    check(cell.status == CellStatus::Ok, || format!("cell status {:?}: {:?}", cell.status, cell.reason))?;
    let summary = cell.summary.as_ref().ok_or("missing summary")?;
    let mean = summary.accuracy.mean.ok_or("accuracy undefined")?;
    Ok((mean, summary.accuracy.std.unwrap_or(0.0)))
}

#[test]
fn criterion_06_normal_abnormal_gate() {
    gate(6, "synthetic normal-abnormal gate", Some(Duration::from_secs(120)), || {
        let ds = synth::normal_abnormal_set(200, 6).map_err(|e| e.to_string())?;
        check(ds.count_label(Label::Normal) == 200 && ds.len() == 400, || "dataset shape".into())?;
        let (hot, hot_sd) = stage_accuracy(&ds, &DescriptorConfig::hot(1.0), Stage::NormalAbnormal)?;
        let (dct, dct_sd) = stage_accuracy(&ds, &DescriptorConfig::pbdct(0.5), Stage::NormalAbnormal)?;
        let detail = format!("HOT σ=1 {hot:.2}±{hot_sd:.2}% (≥95), PB-DCT {dct:.2}±{dct_sd:.2}% (≥90)");
        check(hot >= 95.0 && dct >= 90.0, || detail.clone())?;
        Ok(detail)
    });
}

#[test]
fn criterion_07_benign_malignant_gate() {
    gate(7, "synthetic benign-malignant gate", Some(Duration::from_secs(120)), || {
        let ds = synth::benign_malignant_set(150, 7).map_err(|e| e.to_string())?;
        let (acc, sd) = stage_accuracy(&ds, &DescriptorConfig::pbdct(0.5), Stage::BenignMalignant)?;
        let detail = format!("DP-PB-DCT stage 2 {acc:.2}±{sd:.2}% (≥90)");
        check(acc >= 90.0, || detail.clone())?;
        Ok(detail)
    });
}

#[test]
fn criterion_08_leakage_sentinel() {
    gate(8, "leakage sentinel", Some(Duration::from_secs(120)), || {
        let ds = synth::noise_label_set(200, 8).map_err(|e| e.to_string())?;
        let (acc, sd) = stage_accuracy(&ds, &DescriptorConfig::pbdct(0.5), Stage::NormalAbnormal)?;
        let detail = format!("noise-label accuracy {acc:.2}±{sd:.2}% (band 43..57)");
        check((43.0..=57.0).contains(&acc), || detail.clone())?;
        Ok(detail)
    });
}

fn read_tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_09_determinism() {
    gate(9, "determinism", Some(Duration::from_secs(60)), || {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let data = tmp.path().join("data");
        let code = texdesc::cli::run(["texdesc", "synth", "--out", data.to_str().unwrap(), "--seed", "9"]);
        check(code == 0, || format!("synth exit {code}"))?;
        let manifest = data.join("manifest.csv");
        let mut trees = Vec::new();
        for run in ["a", "b"] {
            let out = tmp.path().join(run);
            let code = texdesc::cli::run([
                "texdesc",
                "evaluate",
                "--descriptor",
                "pbdct",
                "--manifest",
                manifest.to_str().unwrap(),
                "--report",
                out.to_str().unwrap(),
            ]);
            check(code == 0, || format!("evaluate run {run} exit {code}"))?;
            trees.push(read_tree(&out));
        }
        check(trees[0] == trees[1], || "report trees differ between runs".into())?;
        let files = trees[0].len();

        let ds = synth::suite(9).map_err(|e| e.to_string())?;
        let cfg = DescriptorConfig::pbdct(0.5);
        let bundle = train_pipeline(&ds, DensitySel::D, &cfg, &TrainOptions::default(), 9).map_err(|e| e.to_string())?;
        let bytes = encode_bundle(&bundle).map_err(|e| e.to_string())?;
        let loaded = decode_bundle(&bytes).map_err(|e| e.to_string())?;
        check(encode_bundle(&loaded).map_err(|e| e.to_string())? == bytes, || "re-encoded bundle differs".into())?;
        for r in ds.iter() {
            let a = classify(&bundle, &r.patch).map_err(|e| e.to_string())?;
            let b = classify(&loaded, &r.patch).map_err(|e| e.to_string())?;
            let same = a.label == b.label
                && a.stage1_score.to_bits() == b.stage1_score.to_bits()
                && a.stage2_score.map(f64::to_bits) == b.stage2_score.map(f64::to_bits);
            check(same, || format!("classification of {} changed after reload", r.id))?;
        }
        Ok(format!("{files} report files byte-identical; {} classifications bit-identical after reload", ds.len()))
    });
}

#[test]
fn criterion_10_protocol_structure() {
    gate(10, "protocol structure", None, || {
        let ds = synth::suite(10).map_err(|e| e.to_string())?;
        let cfg = DescriptorConfig::pbdct(0.5);
        let features = extract_dataset(&ds, &cfg).map_err(|e| e.to_string())?;
        let report = evaluate_features(&ds, &features, &cfg, &DensitySel::GRID, &Protocol::default());
        let json: serde_json::Value = serde_json::to_value(&report).map_err(|e| e.to_string())?;
        let cells = json["cells"].as_array().ok_or("cells missing")?;
        check(cells.len() == 10, || format!("{} cells", cells.len()))?;
        let mut seen = Vec::new();
        let mut absent = Vec::new();
        for cell in cells {
            let key = (cell["density"].as_str().unwrap_or("?").to_string(), cell["stage"].as_str().unwrap_or("?").to_string());
            match cell["status"].as_str() {
                Some("ok") => {
                    let repeats = cell["repeats"].as_array().ok_or("repeats missing")?;
                    check(repeats.len() == 10, || format!("{key:?}: {} repeats", repeats.len()))?;
                    for r in repeats {
                        let folds = r["folds"].as_array().map_or(0, Vec::len);
                        check(folds == 2, || format!("{key:?}: {folds} folds"))?;
                    }
                }
                Some("absent") => {
                    check(cell["summary"].is_null() && cell["repeats"].is_null(), || {
                        format!("{key:?}: absent cell carries values")
                    })?;
                    absent.push(format!("{}/{}", key.0, key.1));
                }
                other => return Err(format!("{key:?}: status {other:?}")),
            }
            seen.push(key);
        }
        let mut expected = Vec::new();
        for d in ["d", "e", "f", "g", "all"] {
            for s in ["normal_abnormal", "benign_malignant"] {
                expected.push((d.to_string(), s.to_string()));
            }
        }
        check(seen == expected, || format!("cell grid {seen:?}"))?;
        check(absent == ["e/benign_malignant"], || format!("absent cells {absent:?}"))?;
        check(json["seeds"] == serde_json::json!([0, 1, 2, 3, 4, 5, 6, 7, 8, 9]), || "seeds".into())?;
        Ok("10 cells × 10 repeats × 2 folds; e/benign_malignant serialized as absent".into())
    });
}
