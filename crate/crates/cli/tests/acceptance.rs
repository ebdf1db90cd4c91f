//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use stokolmo::boundary::AnalysisConfig;
use stokolmo::classifier::{classify, maximin, VerdictKind};
use stokolmo::density::{stationary_density_1d, DensityOptions};
use stokolmo::foodchain::{classify_food_chain, FoodChainParams};
use stokolmo::model::KolmogorovModel;
use stokolmo::sde::{simulate_ensemble, EnsembleOptions, SimConfig};
use stokolmo::verify::{detect_blowup_signature, verify_verdict, VerificationStatus, VerifyConfig};

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn read(name: &str) -> String {
    std::fs::read_to_string(models_dir().join(name)).unwrap()
}

fn load(name: &str) -> KolmogorovModel {
    KolmogorovModel::from_json_str(&read(name)).unwrap()
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn logistic_moment() -> Outcome {
    let target = 1.5;
    let model = load("logistic.json");
    let opts = DensityOptions {
        u0: 1.0,
        ..DensityOptions::default()
    };
    let density = match stationary_density_1d(&|u| model.drift(0, &[u]), &|u| model.noise(0, &[u]), 1.0, &opts) {
        Ok(d) => d.mean,
        Err(e) => return outcome(false, format!("density failed: {e}")),
    };
    let simpson = edge_mean(2.0, 1.0, 1.0).unwrap_or(f64::NAN);

    let sim = SimConfig::default();
    let ens = simulate_ensemble(&model, &[1.0], &sim, &EnsembleOptions::default()).unwrap();
    let mc = ens.mean_x(0).mean;

    let rel = |v: f64| (v / target - 1.0).abs();
    let passed = rel(density) < 0.02 && rel(simpson) < 0.02 && rel(mc) < 0.02;
    outcome(
        passed,
        format!(
            "density quadrature {density:.6}, direct Simpson {simpson:.6}, MC {mc:.5} ({} paths, T={}) vs 1.5 within 2%",
            sim.n_paths, sim.t_max
        ),
    )
}

fn bundled_models() -> Vec<(String, KolmogorovModel)> {
    let mut names: Vec<String> = std::fs::read_dir(models_dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let text = read(&n);
            let model = if n.starts_with("foodchain") {
                FoodChainParams::from_json_str(&text).unwrap().to_model().unwrap()
            } else {
                KolmogorovModel::from_json_str(&text).unwrap()
            };
            (n, model)
        })
        .collect()
}

fn support_rates() -> Outcome {
    let mut checked = 0;
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, model) in bundled_models() {
        let c = classify(&model, &AnalysisConfig::default());
        let Some(b) = &c.boundary else { continue };
        let t = &b.table;
        for (k, m) in t.measures.iter().enumerate() {
            for i in m.support.indices() {
                let (l, ci) = (t.lambda[k][i], t.ci[k][i]);
                checked += 1;
                worst = worst.max(l.abs());
                if l.abs() > ci.max(1e-10) {
                    bad.push(format!("{name}:{}:{}", m.label, i + 1));
                }
            }
        }
    }
    outcome(
        bad.is_empty() && checked > 0,
        format!("{checked} on-support rates, largest |λ| {worst:.3e}, violations {bad:?}"),
    )
}

/// Stationary mean of `dX = X(a - bX)dt + σX dB` by Simpson's rule on the
/// Gibbs density `x^(2a/σ²-2) e^(-2bx/σ²)`, integrated in `u = ln x`.
fn edge_mean(a: f64, b: f64, s2: f64) -> Option<f64> {
    if a - s2 / 2.0 <= 0.0 {
        return None;
    }
    let (k, r) = (2.0 * a / s2 - 2.0, 2.0 * b / s2);
    let (lo, hi, n) = (-60.0, (200.0 / r).ln(), 200_000);
    let h = (hi - lo) / n as f64;
    let (mut z, mut m) = (0.0, 0.0);
    for j in 0..=n {
        let u = lo + j as f64 * h;
        let x = u.exp();
        let w = ((k + 1.0) * u - r * x).exp();
        let c = if j == 0 || j == n { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
        z += c * w;
        m += c * w * x;
    }
    Some(m / z)
}

/// Regime of a two-species competitive Lotka-Volterra model from signs of
/// rates computed by quadrature.
fn oracle_regime(a: [f64; 2], b: [[f64; 2]; 2], s2: [f64; 2]) -> &'static str {
    let rate = |j: usize, i: usize| -> Option<f64> { edge_mean(a[i], -b[i][i], s2[i]).map(|m| a[j] - s2[j] / 2.0 + b[j][i] * m) };
    match (rate(1, 0), rate(0, 1)) {
        (None, None) => "total extinction",
        (Some(l2), Some(l1)) if l2 > 0.0 && l1 > 0.0 => "persistent",
        (Some(l2), Some(l1)) if l2 < 0.0 && l1 < 0.0 => "bistable",
        (Some(l), None) | (None, Some(l)) if l > 0.0 => "persistent",
        _ => "single extinction",
    }
}

fn lv_params(model: &KolmogorovModel) -> ([f64; 2], [[f64; 2]; 2], [f64; 2]) {
    let v = model.to_json();
    let num = |x: &serde_json::Value| x.as_f64().unwrap();
    let a = [num(&v["lv"]["a"][0]), num(&v["lv"]["a"][1])];
    let b = [
        [num(&v["lv"]["B"][0][0]), num(&v["lv"]["B"][0][1])],
        [num(&v["lv"]["B"][1][0]), num(&v["lv"]["B"][1][1])],
    ];
    let s2 = [num(&v["sigma"][0][0]), num(&v["sigma"][1][1])];
    (a, b, s2)
}

fn regime_of(kind: &VerdictKind) -> &'static str {
    match kind {
        VerdictKind::Persistent { .. } => "persistent",
        VerdictKind::Extinction { partition, .. } => match partition.m1.len() {
            1 if partition.m1[0] == "delta*" => "total extinction",
            1 => "single extinction",
            _ => "bistable",
        },
        _ => "other",
    }
}

fn four_regimes() -> Outcome {
    let mut notes = Vec::new();
    let mut passed = true;
    for (file, expected) in [
        ("lv_coexist.json", "persistent"),
        ("lv_extinct.json", "single extinction"),
        ("lv_bistable.json", "bistable"),
        ("lv_total_extinct.json", "total extinction"),
    ] {
        let model = load(file);
        let (a, b, s2) = lv_params(&model);
        let oracle = oracle_regime(a, b, s2);
        let got = regime_of(&classify(&model, &AnalysisConfig::default()).verdict.kind);
        passed &= oracle == expected && got == expected;
        notes.push(format!("{file}: {got} (oracle {oracle})"));
    }

    let ens = simulate_ensemble(&load("lv_extinct.json"), &[1.0, 1.0], &SimConfig::default(), &EnsembleOptions::default()).unwrap();
    let e = ens.exponent(1);
    let exp_ok = (e.mean + 6.5).abs() <= 3.0 * e.se && 3.0 * e.se <= 0.3;
    passed &= exp_ok;
    notes.push(format!("extinct exponent {:.4} ± {:.4} (3·SE) vs -6.5", e.mean, 3.0 * e.se));

    let model = load("lv_coexist.json");
    let c = classify(&model, &AnalysisConfig::default());
    match verify_verdict(&model, &c.verdict, &VerifyConfig::default()) {
        Ok(r) => {
            let tv = r.tv_curve.iter().map(|p| format!("{:.4}", p.tv)).collect::<Vec<_>>().join(" ");
            let tv_ok = r.checks.iter().any(|c| c.name == "occupation convergence" && c.passed) && r.status == VerificationStatus::Passed;
            passed &= tv_ok;
            let failed: Vec<&str> = r.failures().iter().map(|c| c.name.as_str()).collect();
            notes.push(format!("persistent TV curve [{tv}], failed checks {failed:?}"));
        }
        Err(e) => {
            passed = false;
            notes.push(format!("verification error {e}"));
        }
    }
    outcome(passed, notes.join("; "))
}

fn bistable_basins() -> Outcome {
    let model = load("lv_bistable.json");
    let c = classify(&model, &AnalysisConfig::default());
    let cfg = VerifyConfig {
        x0: Some(vec![1.0, 1.0]),
        ..VerifyConfig::default()
    };
    let r = match verify_verdict(&model, &c.verdict, &cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("verification error {e}")),
    };
    let Some(b) = r.basins else {
        return outcome(false, "no basin estimate".into());
    };
    let assigned = b.assigned().max(1) as f64;
    let sum: f64 = b.basins.iter().map(|s| s.count as f64 / assigned).sum();
    let shares: Vec<String> = b.basins.iter().map(|s| format!("{} {:.3}", s.label, s.p)).collect();
    let passed = b.basins.len() == 2
        && (sum - 1.0).abs() < 1e-12
        && b.unassigned_fraction <= 0.05
        && b.basins.iter().all(|s| s.p > 0.1);
    outcome(
        passed,
        format!("{} over {} paths, unassigned {:.3}, assigned shares sum {sum}", shares.join(", "), b.total, b.unassigned_fraction),
    )
}

fn food_chain() -> Outcome {
    let tol = AnalysisConfig::default().decision_tol;
    let mut passed = true;
    let mut notes = Vec::new();
    for (file, j_expected) in [("foodchain_persistent.json", 3), ("foodchain_apex_extinct.json", 2)] {
        let params = FoodChainParams::from_json_str(&read(file)).unwrap();
        let v = classify_food_chain(&params, tol);
        let c = classify(&params.to_model().unwrap(), &AnalysisConfig::default());
        let general: Option<Vec<usize>> = match &c.verdict.kind {
            VerdictKind::Persistent { .. } => Some((0..params.n).collect()),
            VerdictKind::Extinction { rates, .. } if rates.len() == 1 => Some(rates[0].support.indices()),
            _ => None,
        };
        let agrees = general.as_deref() == Some(&v.survivors()[..]);
        let x2 = v.equilibria.iter().find(|e| e.level == 2);
        let x2_ok = x2.is_some_and(|e| {
            (e.x[0] - 5.0 / 3.0).abs() < 1e-12 && (e.x[1] - 11.0 / 6.0).abs() < 1e-12 && e.residual < 1e-10
        });
        passed &= v.j_star == j_expected && agrees && x2_ok;
        notes.push(format!(
            "{file}: j*={} general agrees {agrees}, x2 residual {:.1e}",
            v.j_star,
            x2.map_or(f64::NAN, |e| e.residual)
        ));
    }
    outcome(passed, notes.join("; "))
}

fn cooperative_blowup() -> Outcome {
    let model = load("coop_blowup.json");
    let c = classify(&model, &AnalysisConfig::default());
    let reason = &c.verdict.assumptions.tightness.reason;
    let tight_ok = matches!(c.verdict.kind, VerdictKind::BlowUpRisk { .. }) && reason.contains("b_1b_2−c_1c_2<0");
    let cfg = VerifyConfig {
        sim: SimConfig {
            t_max: 100.0,
            burn_in: 10.0,
            ..SimConfig::default()
        },
        ..VerifyConfig::default()
    };
    let s = match detect_blowup_signature(&model, &cfg) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("signature error {e}")),
    };
    let frac_ok = s.blowup_count * 100 >= 99 * cfg.sim.n_paths;
    let slope_ok = s.slope.mean > 3.0 * s.slope.se;
    outcome(
        tight_ok && frac_ok && slope_ok,
        format!(
            "tightness reason \"{reason}\"; {}/{} paths blew up by t=100; slope {:.3} ± {:.3} (3·SE)",
            s.blowup_count,
            cfg.sim.n_paths,
            s.slope.mean,
            3.0 * s.slope.se
        ),
    )
}

fn grid_oracle(rows: &[Vec<f64>], step: f64) -> f64 {
    let k = (1.0 / step).round() as usize;
    let value = |p: &[f64]| {
        rows.iter()
            .map(|r| r.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    };
    let mut best = f64::NEG_INFINITY;
    match rows[0].len() {
        2 => {
            for a in 0..=k {
                let p = a as f64 * step;
                best = best.max(value(&[p, 1.0 - p]));
            }
        }
        3 => {
            for a in 0..=k {
                for b in 0..=(k - a) {
                    let (p, q) = (a as f64 * step, b as f64 * step);
                    best = best.max(value(&[p, q, 1.0 - p - q]));
                }
            }
        }
        _ => unreachable!(),
    }
    best
}

fn lp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let mut worst: f64 = 0.0;
    for t in 0..25 {
        let n = if t % 2 == 0 { 2 } else { 3 };
        let m = 1 + (uniform(0.0, 4.0) as usize);
        let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| uniform(-3.0, 3.0)).collect()).collect();
        let lp = maximin(&rows).t_star;
        worst = worst.max((lp - grid_oracle(&rows, 1e-4)).abs());
    }
    outcome(worst < 1e-3, format!("25 random tables, largest |t* - grid| {worst:.2e} (tolerance 1e-3)"))
}

fn determinism() -> Outcome {
    let model = models_dir().join("lv_coexist.json");
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_stokolmo"))
            .args(["verify", model.to_str().unwrap(), "--t", "100", "--paths", "32", "--seed", "11"])
            .env("STOKOLMO_THREADS", threads)
            .output()
            .unwrap()
    };
    let (a, b) = (run("1"), run("4"));
    let same = a.stdout == b.stdout && !a.stdout.is_empty();
    outcome(
        same && a.status.success() && b.status.success(),
        format!(
            "STOKOLMO_THREADS=1 and 4: {} bytes each, identical {same}, exit codes {:?} {:?}",
            a.stdout.len(),
            a.status.code(),
            b.status.code()
        ),
    )
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 8] = [
        ("logistic edge moment", 60, logistic_moment),
        ("on-support invasion rates vanish", 120, support_rates),
        ("four competition regimes", 300, four_regimes),
        ("bistable basin split", 300, bistable_basins),
        ("food chain", 120, food_chain),
        ("cooperative blow-up", 120, cooperative_blowup),
        ("maximin LP against grid search", 60, lp_oracle),
        ("thread-count determinism", 600, determinism),
    ];
    let mut failures = 0;
    for (k, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let ok = o.passed && in_time;
        failures += usize::from(!ok);
        println!(
            "{} [{}] {name}: {} ({:.1}s, limit {budget}s)",
            if ok { "PASS" } else { "FAIL" },
            k + 1,
            o.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
