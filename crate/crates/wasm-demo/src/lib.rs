//! Interactive views over the core estimators, exported to JavaScript.
//!
//! Every export returns a flat `Float64Array`; the page slices it.

use cpt_core::label;
use cpt_core::rng::{self, Purpose};
use cpt_core::user_state::{PoolEntry, UserState};
use cpt_core::verify;
use rand_distr::{Distribution, LogNormal};
use statrs::distribution::{ContinuousCDF, LogNormal as LogNormalCdf, Normal};
use wasm_bindgen::prelude::*;

/// Labels for one lognormal user against a pool of `pool_size` draws.
///
/// Returns five rows of `points` values: magnitude grid, true CDF,
/// multi-sample label, true value share below `y`, value-weighted label.
pub fn label_curves(mu: f64, sigma: f64, pool_size: usize, points: usize, seed: u64) -> Result<Vec<f64>, String> {
    if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
        return Err(format!("need finite mu and positive sigma, got {mu}, {sigma}"));
    }
    if pool_size == 0 || points < 2 {
        return Err("pool_size must be positive and points at least 2".into());
    }
    let cdf = LogNormalCdf::new(mu, sigma).map_err(|e| e.to_string())?;
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let draw = LogNormal::new(mu, sigma).map_err(|e| e.to_string())?;
    let mut rng = rng::bulk(seed, Purpose::Oracle);
    let pool: Vec<PoolEntry> = (0..pool_size).map(|_| PoolEntry::magnitude(draw.sample(&mut rng))).collect();

    let mut out = vec![0.0; 5 * points];
    for i in 0..points {
        let q = 0.005 + 0.99 * i as f64 / (points - 1) as f64;
        let y = cdf.inverse_cdf(q);
        out[i] = y;
        out[points + i] = cdf.cdf(y);
        out[2 * points + i] = label::multi_sample_label(y, &pool).expect("non-empty").value;
        // E[Y; Y < y] / E[Y] for a lognormal.
        out[3 * points + i] = std.cdf((y.ln() - mu - sigma * sigma) / sigma);
        out[4 * points + i] = label::value_weighted_label(y, &pool).expect("non-empty").value;
    }
    Ok(out)
}

/// How often each stream position ends up in a `capacity` reservoir over
/// `reps` replications, normalized by the uniform rate `capacity / len`.
pub fn reservoir_inclusion(stream_len: usize, capacity: usize, reps: usize, seed: u64) -> Result<Vec<f64>, String> {
    if stream_len == 0 || capacity == 0 || reps == 0 {
        return Err("stream_len, capacity and reps must be positive".into());
    }
    let mut counts = vec![0.0; stream_len];
    for r in 0..reps {
        let mut rng = rng::keyed(seed, r as u64, Purpose::Reservoir, 0);
        let mut state = UserState::new(capacity);
        for i in 0..stream_len {
            state.reservoir_update(PoolEntry::magnitude(i as f64), &mut rng);
        }
        for e in state.pool() {
            counts[e.magnitude as usize] += 1.0;
        }
    }
    let expected = reps as f64 * capacity.min(stream_len) as f64 / stream_len as f64;
    Ok(counts.into_iter().map(|c| c / expected).collect())
}

/// `p̂` path of a free scalar fit to the value-weighted loss at magnitude
/// `y` against `Uniform(0, 1)` pools, thinned to at most `max_points`.
pub fn value_weighted_path(y: f64, steps: usize, pool_size: usize, max_points: usize, seed: u64) -> Result<Vec<f64>, String> {
    if !(0.0..=1.0).contains(&y) {
        return Err(format!("y must lie in [0, 1], got {y}"));
    }
    if steps == 0 || pool_size == 0 || max_points == 0 {
        return Err("steps, pool_size and max_points must be positive".into());
    }
    let mut rng = rng::bulk(seed, Purpose::Verify);
    let path = verify::free_scalar_trajectory(y, steps, pool_size, &mut rng);
    let stride = steps.div_ceil(max_points);
    Ok(path.into_iter().step_by(stride).collect())
}

#[wasm_bindgen(js_name = labelCurves)]
pub fn label_curves_js(mu: f64, sigma: f64, pool_size: usize, points: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    label_curves(mu, sigma, pool_size, points, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = reservoirInclusion)]
pub fn reservoir_inclusion_js(stream_len: usize, capacity: usize, reps: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    reservoir_inclusion(stream_len, capacity, reps, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = valueWeightedPath)]
pub fn value_weighted_path_js(y: f64, steps: usize, pool_size: usize, max_points: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    value_weighted_path(y, steps, pool_size, max_points, u64::from(seed)).map_err(|e| JsError::new(&e))
}
