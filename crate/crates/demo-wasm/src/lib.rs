//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export takes plain numbers or comma-separated lists and returns a
//! JSON string, so the page needs no bundler.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use lowrank_robust::bilinear::{solve_alternating, BilinearBallProblem, InnerSolver, SdpSolver, SolveReport};
use lowrank_robust::dp::{nominal_dp, policy_value_at_init};
use lowrank_robust::policy_opt::{run_r2pg, NpgConfig};
use lowrank_robust::robust::{robust_policy_eval, robust_value_at_init, AmbiguityRadii};
use lowrank_robust::scenarios::{
    build_ring, build_string_guessing, string_guessing_all_ones, string_guessing_closed_forms, StringGuessingParams,
};

fn parse_list(name: &str, text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("{name}: `{t}` is not a number")))
        .collect()
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serialises")
}

#[derive(Serialize)]
struct InnerOut {
    sdp: SolveReport,
    alternating: SolveReport,
}

pub fn solve_inner_json(a: &str, b: &str, rx: f64, ry: f64) -> Result<String, String> {
    let p = BilinearBallProblem::new(parse_list("a", a)?, parse_list("b", b)?, rx, ry).map_err(|e| e.to_string())?;
    let sdp = SdpSolver::default().solve(&p).map_err(|e| e.to_string())?;
    let alternating = solve_alternating(&p, 8, 1e-15);
    Ok(to_json(&InnerOut { sdp, alternating }))
}

#[derive(Serialize)]
struct GuessOut {
    v: f64,
    v_tilde: f64,
    v_hat: f64,
    v_evaluated: f64,
    v_hat_evaluated: f64,
}

pub fn string_guessing_json(m: usize, horizon: usize, delta: f64) -> Result<String, String> {
    let p = StringGuessingParams::new(m, horizon, delta).map_err(|e| e.to_string())?;
    let (mdp, radii) = build_string_guessing(&p).map_err(|e| e.to_string())?;
    let pi = string_guessing_all_ones(&p);
    let c = string_guessing_closed_forms(&p);
    let nominal = nominal_dp(&mdp, &pi).map_err(|e| e.to_string())?;
    let robust = robust_policy_eval(&mdp, &pi, &radii, &SdpSolver::default()).map_err(|e| e.to_string())?;
    Ok(to_json(&GuessOut {
        v: c.v,
        v_tilde: c.v_tilde,
        v_hat: c.v_hat,
        v_evaluated: policy_value_at_init(&nominal, mdp.rho()),
        v_hat_evaluated: robust_value_at_init(&robust, mdp.rho()),
    }))
}

#[derive(Serialize)]
struct RingOut {
    robust: Vec<f64>,
    nominal: Vec<f64>,
    /// Final policy at the first step, one row per state.
    first_step_policy: Vec<Vec<f64>>,
}

pub fn ring_run_json(horizon: usize, r_xi: f64, r_eta: f64, episodes: usize, step_size: f64) -> Result<String, String> {
    if episodes > 2000 || horizon > 30 {
        return Err("keep episodes <= 2000 and horizon <= 30 in the browser".into());
    }
    let mdp = build_ring(horizon).map_err(|e| e.to_string())?;
    let radii = AmbiguityRadii::uniform(horizon, r_xi, r_eta).map_err(|e| e.to_string())?;
    let cfg = NpgConfig::new(step_size, episodes, false).map_err(|e| e.to_string())?;
    let trace = run_r2pg(&mdp, &radii, &cfg, &SdpSolver::default()).map_err(|e| e.to_string())?;
    let last = trace.policies.last().expect("at least one episode");
    Ok(to_json(&RingOut {
        first_step_policy: (0..mdp.num_states()).map(|s| last.dist(0, s).to_vec()).collect(),
        robust: trace.robust_values,
        nominal: trace.nominal_values,
    }))
}

#[wasm_bindgen]
pub fn solve_inner(a: &str, b: &str, rx: f64, ry: f64) -> Result<String, JsValue> {
    solve_inner_json(a, b, rx, ry).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn string_guessing(m: usize, horizon: usize, delta: f64) -> Result<String, JsValue> {
    string_guessing_json(m, horizon, delta).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn ring_run(horizon: usize, r_xi: f64, r_eta: f64, episodes: usize, step_size: f64) -> Result<String, JsValue> {
    ring_run_json(horizon, r_xi, r_eta, episodes, step_size).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_reports_both_methods() {
        let out: serde_json::Value = serde_json::from_str(&solve_inner_json("1, 0", "0,1", 0.5, 0.5).unwrap()).unwrap();
        let (a, b) = (out["sdp"]["value"].as_f64().unwrap(), out["alternating"]["value"].as_f64().unwrap());
        assert!((a - b).abs() < 1e-6);
        assert!(solve_inner_json("1,x", "0,1", 0.5, 0.5).is_err());
    }

    #[test]
    fn string_guessing_matches_closed_form() {
        let out: serde_json::Value = serde_json::from_str(&string_guessing_json(3, 10, 0.05).unwrap()).unwrap();
        assert!((out["v_hat_evaluated"].as_f64().unwrap() - 5.8).abs() < 1e-9);
        assert!((out["v_evaluated"].as_f64().unwrap() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn ring_curve_has_one_entry_per_episode() {
        let out: serde_json::Value = serde_json::from_str(&ring_run_json(4, 0.2, 0.0, 5, 1.0).unwrap()).unwrap();
        assert_eq!(out["robust"].as_array().unwrap().len(), 5);
        assert_eq!(out["first_step_policy"].as_array().unwrap().len(), 4);
    }
}
