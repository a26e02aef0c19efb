//! WebAssembly bindings for the demo page in `www/`.

use pemv::frontdoor::{frontdoor_estimate, intervene_truth, marginalize, observational_conditional, soundness_suite, trial_scm};
use pemv::model::{correct_mediator, softmax_inplace, update_prototypes, ModelConfig, PrototypeBank};
use pemv::objectives::information_purity;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Corrected mediator `A + γa (P_same - A) + γc (A - P_other)`.
#[wasm_bindgen]
pub fn pbc_correct(a: &[f64], same: &[f64], other: &[f64], gamma_align: f64, gamma_contrast: f64) -> Result<Vec<f64>, JsError> {
    let cfg = ModelConfig {
        gamma_align,
        gamma_contrast,
        ..ModelConfig::default()
    };
    Ok(correct_mediator(a, same, other, &cfg).map_err(js)?.0)
}

/// Prototype positions after 0..=steps momentum updates towards a fixed
/// batch mean, flattened row by row.
#[wasm_bindgen]
pub fn ema_trajectory(start: &[f64], batch_mean: &[f64], momentum: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    let mut bank = PrototypeBank::from_parts(vec![start.to_vec()], vec![true], momentum).map_err(js)?;
    let mut out = start.to_vec();
    for _ in 0..steps {
        update_prototypes(&mut bank, &[(batch_mean, 0)]).map_err(js)?;
        out.extend_from_slice(bank.prototype(0));
    }
    Ok(out)
}

#[derive(Serialize)]
struct XRow {
    x: usize,
    observational: Option<Vec<f64>>,
    interventional: Vec<f64>,
    frontdoor: Vec<f64>,
}

#[derive(Serialize)]
struct TrialView {
    sizes: [usize; 4],
    rows: Vec<XRow>,
}

/// One random causal model as JSON: per value of X, `p(y|x)`, the exact
/// `p(y|do(x))` and the front-door estimate.
#[wasm_bindgen]
pub fn frontdoor_trial(seed: u32, trial: u32) -> Result<String, JsError> {
    let scm = trial_scm(seed as u64, trial as usize).map_err(js)?;
    let obs = marginalize(&scm).map_err(js)?;
    let (nu, nx, na, ny) = scm.sizes();
    let rows = (0..nx)
        .map(|x| {
            Ok(XRow {
                x,
                observational: observational_conditional(&scm, x),
                interventional: intervene_truth(&scm, x).map_err(js)?,
                frontdoor: frontdoor_estimate(&obs, x).map_err(js)?,
            })
        })
        .collect::<Result<Vec<_>, JsError>>()?;
    serde_json::to_string(&TrialView {
        sizes: [nu, nx, na, ny],
        rows,
    })
    .map_err(js)
}

/// Text report of the soundness check over `trials` models.
#[wasm_bindgen]
pub fn frontdoor_suite(trials: u32, seed: u32) -> Result<String, JsError> {
    Ok(soundness_suite(trials as usize, seed as u64).map_err(js)?.render_text())
}

#[derive(Serialize)]
struct AttentionView {
    weights: Vec<f64>,
    purity: f64,
}

/// Softmax over positions for each of `views` score rows, plus the
/// normalized attention entropy.
#[wasm_bindgen]
pub fn attention_purity(scores: &[f64], views: usize, positions: usize) -> Result<String, JsError> {
    if views == 0 || positions == 0 || scores.len() != views * positions {
        return Err(JsError::new(&format!("expected {views} x {positions} scores, got {}", scores.len())));
    }
    let mut weights = scores.to_vec();
    for row in weights.chunks_mut(positions) {
        softmax_inplace(row);
    }
    let (purity, _) = information_purity(&weights, views, positions);
    serde_json::to_string(&AttentionView { weights, purity }).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bindings_agree_with_hand_values() {
        let c = pbc_correct(&[1.0, 0.0], &[3.0, 1.0], &[0.0, -1.0], 0.5, 0.1).unwrap();
        assert!((c[0] - 2.1).abs() < 1e-12 && (c[1] - 0.6).abs() < 1e-12, "{c:?}");
        let t = ema_trajectory(&[0.0], &[1.0], 0.9, 2).unwrap();
        assert!((t[1] - 0.1).abs() < 1e-12 && (t[2] - 0.19).abs() < 1e-12);
        let trial: serde_json::Value = serde_json::from_str(&frontdoor_trial(0, 0).unwrap()).unwrap();
        for row in trial["rows"].as_array().unwrap() {
            let (a, b) = (row["frontdoor"].as_array().unwrap(), row["interventional"].as_array().unwrap());
            for (p, q) in a.iter().zip(b) {
                assert!((p.as_f64().unwrap() - q.as_f64().unwrap()).abs() < 1e-9);
            }
        }
        let att: serde_json::Value = serde_json::from_str(&attention_purity(&[0.0; 8], 2, 4).unwrap()).unwrap();
        assert!((att["purity"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!(frontdoor_suite(10, 1).unwrap().contains("PASS"));
    }
}
