//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export returns a JSON string. The plain `*_json` functions hold the
//! logic so they can be tested natively.

use bituning::config::RunConfig;
use bituning::data::{make_blobs, make_rings, Dataset};
use bituning::keypool::{KeyBatch, KeyEntry};
use bituning::losses::{self, CceVariant, Reduction, Temperature};
use bituning::ndgrad::{Graph, Tensor};
use bituning::trainer;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Side length of the decision-region grid returned by [`train`].
pub const GRID: usize = 48;

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn points(ds: &Dataset) -> Vec<[f64; 3]> {
    let x = ds.features();
    (0..ds.len())
        .map(|i| [x.get(i, 0), x.get(i, 1), ds.labels()[i] as f64])
        .collect()
}

/// Two-dimensional toy data as `{"points": [[x, y, label], ...]}`.
#[wasm_bindgen]
pub fn dataset(generator: &str, classes: u32, per_class: u32, noise: f64, seed: u32) -> Result<String, JsError> {
    js(dataset_json(generator, classes as usize, per_class as usize, noise, seed.into()))
}

pub fn dataset_json(generator: &str, classes: usize, per_class: usize, noise: f64, seed: u64) -> Result<String, String> {
    let ds = match generator {
        "blobs" => make_blobs(classes, per_class, 2, 4.0, noise, seed),
        "rings" => make_rings(classes, per_class, noise, seed),
        other => return Err(format!("unknown generator {other:?}")),
    }
    .map_err(|e| e.to_string())?;
    Ok(json!({ "points": points(&ds) }).to_string())
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Serialize)]
struct TauPoint {
    tau: f64,
    info_nce: f64,
    cce: f64,
    ccl: f64,
}

/// Loss values for one random query and key set as the temperature varies.
///
/// The query has class 0 and shares `keys_per_class` positives with the
/// sampled keys; `limit` is the value every term approaches as tau grows.
#[wasm_bindgen]
pub fn temperature_curve(classes: u32, keys_per_class: u32, seed: u32, taus: Vec<f64>) -> Result<String, JsError> {
    js(temperature_curve_json(classes as usize, keys_per_class as usize, seed.into(), &taus))
}

pub fn temperature_curve_json(classes: usize, keys_per_class: usize, seed: u64, taus: &[f64]) -> Result<String, String> {
    if classes < 2 || keys_per_class == 0 {
        return Err("need at least 2 classes and 1 key per class".into());
    }
    const DIM: usize = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entry = |rng: &mut ChaCha8Rng, label| {
        KeyEntry::new(random_unit(rng, DIM), random_unit(rng, DIM), label).map_err(|e| e.to_string())
    };
    let query = entry(&mut rng, 0)?;
    let mut rest = Vec::new();
    for c in 0..classes {
        for _ in 0..keys_per_class {
            rest.push(entry(&mut rng, c)?);
        }
    }
    let kb = KeyBatch::from_entries(&query, &rest).map_err(|e| e.to_string())?;
    let protos: Vec<Vec<f64>> = (0..classes).map(|_| random_unit(&mut rng, DIM)).collect();
    let w = Tensor::from_rows(&protos).map_err(|e| e.to_string())?;
    let positives = kb.positives(0).len() as f64;

    let mut curve = Vec::with_capacity(taus.len());
    for &t in taus {
        let tau = Temperature::new(t).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let h = g.constant(Tensor::matrix(1, DIM, query.h().to_vec()).map_err(|e| e.to_string())?);
        let z = g.constant(Tensor::matrix(1, DIM, query.z().to_vec()).map_err(|e| e.to_string())?);
        let wn = g.constant(w.clone());
        let keys = std::slice::from_ref(&kb);
        let nce = losses::info_nce(&mut g, z, &kb.z_keys, 0, tau).map_err(|e| e.to_string())?;
        let cce = losses::cce(&mut g, h, &[0], wn, keys, tau, CceVariant::Literal, Reduction::Sum)
            .map_err(|e| e.to_string())?;
        let ccl = losses::ccl(&mut g, z, &[0], keys, tau, Reduction::Sum).map_err(|e| e.to_string())?;
        curve.push(TauPoint {
            tau: t,
            info_nce: g.value(nce).item(),
            cce: g.value(cce).item(),
            ccl: g.value(ccl).item(),
        });
    }
    Ok(json!({
        "keys": kb.len(),
        "positives": positives,
        "limit": positives * (kb.len() as f64).ln(),
        "curve": curve,
    })
    .to_string())
}

#[derive(Serialize)]
struct LogRow {
    iteration: usize,
    ce: Option<f64>,
    cce: Option<f64>,
    ccl: Option<f64>,
    total: Option<f64>,
    val_acc: Option<f64>,
}

/// Trains on 2-D data. `settings` holds `key=value` overrides, one per line
/// or separated by `;`, in the same syntax as the CLI's `--set`.
///
/// Returns the loss log, accuracies, training points and a `GRID × GRID`
/// map of predicted classes over their bounding box.
#[wasm_bindgen]
pub fn train(settings: &str) -> Result<String, JsError> {
    js(train_json(settings))
}

pub fn train_json(settings: &str) -> Result<String, String> {
    let mut overrides: Vec<String> = settings
        .split(['\n', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    overrides.push("data.dim=2".into());
    let cfg = RunConfig::from_toml_with_overrides("", &overrides).map_err(|e| e.to_string())?;
    if cfg.data.generator == bituning::config::Generator::Csv {
        return Err("the demo has no file access; use blobs or rings".into());
    }
    let run = trainer::fit(&cfg).map_err(|e| e.to_string())?;
    let train = trainer::prepare_data(&cfg).map_err(|e| e.to_string())?.train;

    let x = train.features();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..x.rows() {
        for d in 0..2 {
            lo[d] = lo[d].min(x.get(i, d));
            hi[d] = hi[d].max(x.get(i, d));
        }
    }
    for d in 0..2 {
        let pad = 0.1 * (hi[d] - lo[d]).max(1e-6);
        lo[d] -= pad;
        hi[d] += pad;
    }
    let step = |d: usize, k: usize| lo[d] + (hi[d] - lo[d]) * (k as f64 + 0.5) / GRID as f64;
    let mut cells = Vec::with_capacity(2 * GRID * GRID);
    for r in 0..GRID {
        for c in 0..GRID {
            cells.extend([step(0, c), step(1, GRID - 1 - r)]);
        }
    }
    let grid = Tensor::matrix(GRID * GRID, 2, cells).map_err(|e| e.to_string())?;
    let pred = run.params.logits(&grid).map_err(|e| e.to_string())?.argmax_rows();

    let log: Vec<LogRow> = run
        .log
        .iter()
        .map(|m| LogRow {
            iteration: m.iteration,
            ce: m.losses.and_then(|l| l.ce),
            cce: m.losses.and_then(|l| l.cce),
            ccl: m.losses.and_then(|l| l.ccl),
            total: m.losses.map(|l| l.total),
            val_acc: m.val_acc,
        })
        .collect();
    Ok(json!({
        "final_accuracy": run.final_accuracy,
        "best_accuracy": run.best_accuracy,
        "classes": train.classes(),
        "log": log,
        "points": points(&train),
        "grid": { "size": GRID, "x": [lo[0], hi[0]], "y": [lo[1], hi[1]], "pred": pred },
    })
    .to_string())
}
