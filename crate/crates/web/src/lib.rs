//! Browser demo bindings. Each export takes plain numbers and returns a JSON
//! string with the curves the page plots.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mcsgm::chain::{analyze, deviation_curve, TransitionMatrix};
use mcsgm::harness::{fit_rate, sgd_rate, sgd_stability, ExperimentConfig, ExperimentKind};

/// Largest chain the demo will raise to powers.
pub const MAX_CHAIN_N: usize = 128;
/// Largest horizon the demo will run.
pub const MAX_T: usize = 1 << 15;

#[derive(Debug, Serialize)]
pub struct ChainCurves {
    pub n: usize,
    pub lambda: f64,
    pub c_eff: f64,
    pub k_p: usize,
    pub deviation: Vec<f64>,
    pub bound: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Series {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub bound: Vec<Option<f64>>,
    pub slope: Option<f64>,
    pub lambda: f64,
}

fn chain_spec(kind: &str, n: usize, alpha: f64, seed: u64) -> Result<String, String> {
    match kind {
        "uniform" => Ok(format!("kind = \"uniform\"\nn = {n}\n")),
        "lazy-cycle" => Ok(format!("kind = \"lazy-cycle\"\nn = {n}\n")),
        "random-symmetric" => Ok(format!(
            "kind = \"random-symmetric\"\nn = {n}\nalpha = {alpha:?}\nseed = {seed}\n"
        )),
        other => Err(format!("unknown chain kind {other:?}")),
    }
}

fn build_chain(kind: &str, n: usize, alpha: f64, seed: u64) -> Result<TransitionMatrix, String> {
    match kind {
        "uniform" => TransitionMatrix::uniform(n),
        "lazy-cycle" => TransitionMatrix::lazy_cycle(n),
        "random-symmetric" => TransitionMatrix::random_symmetric(n, alpha, seed),
        other => return Err(format!("unknown chain kind {other:?}")),
    }
    .map_err(|e| e.to_string())
}

/// Entrywise deviation of `P^j` from stationarity next to `c_eff lambda^j`.
pub fn chain_curves(kind: &str, n: usize, alpha: f64, seed: u64, steps: usize) -> Result<ChainCurves, String> {
    if n > MAX_CHAIN_N {
        return Err(format!("n is capped at {MAX_CHAIN_N} in the demo"));
    }
    let p = build_chain(kind, n, alpha, seed)?;
    let mixing = analyze(&p).and_then(|s| s.mixing()).map_err(|e| e.to_string())?;
    let deviation = deviation_curve(&p, steps.min(500));
    let bound = (0..deviation.len())
        .map(|j| mixing.c_eff * mixing.lambda.powi(j as i32))
        .collect();
    Ok(ChainCurves {
        n,
        lambda: mixing.lambda,
        c_eff: mixing.c_eff,
        k_p: mixing.k_p,
        deviation,
        bound,
    })
}

fn logistic_config(chain: &str, grid: &str, replicates: usize, seed: u64) -> String {
    format!(
        "master_seed = {seed}\nreplicates = {replicates}\n\
         [grid]\n{grid}\n\
         [chain]\n{chain}\
         [schedule]\nkind = \"inv_sqrt_tlogt\"\n\
         [loss]\nkind = \"logistic\"\n\
         [generator]\nkind = \"classification\"\nd = 3\nb_x = 1.0\np_noise = 0.1\nw_true_seed = 1\n\
         [domain]\nkind = \"ball\"\nradius = 2.0\n"
    )
}

fn parse(text: &str, kind: ExperimentKind) -> Result<ExperimentConfig, String> {
    ExperimentConfig::from_toml_str(text)
        .and_then(|c| c.with_kind(kind))
        .map_err(|e| e.to_string())
}

fn check_replicates(replicates: usize) -> Result<(), String> {
    if !(2..=500).contains(&replicates) {
        return Err("replicates must lie in 2..=500".into());
    }
    Ok(())
}

/// MC-SGD optimization gap on logistic regression for `T = 2^lo .. 2^hi`.
pub fn gap_curve(
    chain: &str,
    n: usize,
    alpha: f64,
    log2_t_lo: u32,
    log2_t_hi: u32,
    replicates: usize,
    seed: u64,
) -> Result<Series, String> {
    check_replicates(replicates)?;
    if log2_t_lo < 2 || log2_t_lo > log2_t_hi || (1usize << log2_t_hi.min(30)) > MAX_T {
        return Err(format!("need 2 <= lo <= hi and 2^hi <= {MAX_T}"));
    }
    let ts: Vec<String> = (log2_t_lo..=log2_t_hi).map(|k| (1usize << k).to_string()).collect();
    let grid = format!("n = [{n}]\nt = [{}]", ts.join(", "));
    let cfg = parse(
        &logistic_config(&chain_spec(chain, n, alpha, 1)?, &grid, replicates, seed),
        ExperimentKind::SgdRate,
    )?;
    let rows = sgd_rate(&cfg).into_result().map_err(|e| e.to_string())?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.t as f64, r.gap_mean)).collect();
    Ok(Series {
        x: pts.iter().map(|p| p.0).collect(),
        mean: rows.iter().map(|r| r.gap_mean).collect(),
        se: rows.iter().map(|r| r.gap_se).collect(),
        bound: rows.iter().map(|r| r.bound).collect(),
        slope: fit_rate(&pts).ok().map(|f| f.slope),
        lambda: rows.first().map_or(f64::NAN, |r| r.lambda),
    })
}

/// MC-SGD argument stability with `T = n` for each `n` in `ns`.
pub fn stability_curve(chain: &str, ns: &[usize], alpha: f64, replicates: usize, seed: u64) -> Result<Series, String> {
    check_replicates(replicates)?;
    if ns.is_empty() || ns.iter().any(|n| !(3..=2000).contains(n)) {
        return Err("sizes must lie in 3..=2000".into());
    }
    let list: Vec<String> = ns.iter().map(|n| n.to_string()).collect();
    let grid = format!("n = [{}]\nt_rule = \"equal-n\"", list.join(", "));
    let spec = chain_spec(chain, 0, alpha, 1)?;
    let cfg = parse(
        &logistic_config(&spec, &grid, replicates, seed),
        ExperimentKind::SgdStability,
    )?;
    let rows = sgd_stability(&cfg).into_result().map_err(|e| e.to_string())?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.stability_mean)).collect();
    Ok(Series {
        x: pts.iter().map(|p| p.0).collect(),
        mean: rows.iter().map(|r| r.stability_mean).collect(),
        se: rows.iter().map(|r| r.stability_se).collect(),
        bound: rows.iter().map(|r| Some(r.bound)).collect(),
        slope: fit_rate(&pts).ok().map(|f| f.slope),
        lambda: rows.last().map_or(f64::NAN, |r| r.lambda),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = chainCurves)]
pub fn chain_curves_js(kind: &str, n: usize, alpha: f64, seed: u64, steps: usize) -> Result<String, JsError> {
    to_js(chain_curves(kind, n, alpha, seed, steps))
}

#[wasm_bindgen(js_name = gapCurve)]
pub fn gap_curve_js(
    chain: &str,
    n: usize,
    alpha: f64,
    log2_t_lo: u32,
    log2_t_hi: u32,
    replicates: usize,
    seed: u64,
) -> Result<String, JsError> {
    to_js(gap_curve(chain, n, alpha, log2_t_lo, log2_t_hi, replicates, seed))
}

#[wasm_bindgen(js_name = stabilityCurve)]
pub fn stability_curve_js(chain: &str, ns: &str, alpha: f64, replicates: usize, seed: u64) -> Result<String, JsError> {
    let parsed: Result<Vec<usize>, String> = ns
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad size {s:?}")))
        .collect();
    to_js(parsed.and_then(|ns| stability_curve(chain, &ns, alpha, replicates, seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_chain_curves() {
        let c = chain_curves("uniform", 8, 0.5, 0, 10).unwrap();
        assert!((c.lambda - 0.5).abs() < 1e-12);
        assert_eq!(c.deviation.len(), c.bound.len());
        assert!(c.deviation.iter().zip(&c.bound).all(|(d, b)| *d <= b + 1e-12));
        assert!(chain_curves("uniform", MAX_CHAIN_N + 1, 0.5, 0, 10).is_err());
        assert!(chain_curves("ring", 8, 0.5, 0, 10).is_err());
    }

    #[test]
    fn gap_curve_decreases() {
        let s = gap_curve("random-symmetric", 32, 0.5, 6, 9, 4, 1).unwrap();
        assert_eq!(s.x, vec![64.0, 128.0, 256.0, 512.0]);
        assert!(s.mean.first().unwrap() > s.mean.last().unwrap());
        assert!(s.slope.unwrap() < 0.0);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"slope\""));
    }

    #[test]
    fn stability_curve_under_bound() {
        let s = stability_curve("lazy-cycle", &[10, 20, 40], 0.5, 8, 3).unwrap();
        assert_eq!(s.x.len(), 3);
        for (m, b) in s.mean.iter().zip(&s.bound) {
            assert!(*m <= b.unwrap());
        }
        assert!(stability_curve("uniform", &[], 0.5, 8, 3).is_err());
    }
}
