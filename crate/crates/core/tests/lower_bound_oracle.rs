mod common;

use aoi_sched::scenario::Scenario;
use aoi_sched::{solve_p4, verify_kkt, SystemConfig};

fn scenario(name: &str) -> Scenario<f64> {
    Scenario::from_path(format!("{}/../../scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn base_system(name: &str) -> SystemConfig<f64> {
    let sc = scenario(name);
    sc.system(&sc.points()[0]).unwrap()
}

// Grid-oracle values (step 1e-3) of the bound with Type-II local delay U(1, 10).
const PINNED: [(&str, f64); 3] = [
    ("fig3_linear", 875.038405),
    ("fig3_square", 2078.947605),
    ("fig3_composite", 7.513016),
];

#[test]
fn type_two_u10_bound_matches_pinned_oracle() {
    for (name, pinned) in PINNED {
        let j = solve_p4(&base_system(name)).unwrap().objective;
        assert!(((j - pinned) / pinned).abs() < 1e-4, "{name}: {j} vs {pinned}");
    }
}

#[test]
fn oracle_reproduces_pinned_linear_value() {
    let (q, _) = common::grid_dual_bound(&base_system("fig3_linear"), 1e-3);
    assert!((q - PINNED[0].1).abs() < 1e-5, "{q}");
}

#[test]
fn bound_grows_with_local_delay() {
    for name in ["fig3_linear", "fig3_square", "fig3_composite"] {
        let sc = scenario(name);
        let js: Vec<f64> = sc
            .points()
            .iter()
            .map(|p| solve_p4(&sc.system(p).unwrap()).unwrap().objective)
            .collect();
        assert!(js.windows(2).all(|w| w[1] >= w[0]), "{name}: {js:?}");
    }
}

#[test]
fn slack_channels_have_zero_price() {
    let cfg = base_system("toy_slack");
    let sol = solve_p4(&cfg).unwrap();
    assert_eq!(sol.alpha, 0.0);
    assert!(sol.channel_usage < cfg.channels as f64);
    let (q, alpha) = common::grid_dual_bound(&cfg, 1e-3);
    assert_eq!(alpha, 0.0);
    assert!(((sol.objective - q) / q).abs() < 1e-4);
}

#[test]
fn certificate_recomputed_from_solution() {
    let cfg = base_system("fig3_square");
    let sol = solve_p4(&cfg).unwrap();
    let again = verify_kkt(&sol, &cfg).unwrap();
    for (a, b) in again.iter().zip(&sol.kkt) {
        assert!((a.residual - b.residual).abs() < 1e-12);
    }
    let usage: f64 = sol.splits.iter().zip(&cfg.devices).map(|(s, d)| s.offload * d.e_budget / d.e_tx).sum();
    assert!((usage - cfg.channels as f64).abs() < 1e-6);
}

#[test]
fn single_precision_agrees() {
    let sc: Scenario<f32> = Scenario::from_path(format!("{}/../../scenarios/fig3_linear.toml", env!("CARGO_MANIFEST_DIR"))).unwrap();
    let j32 = solve_p4(&sc.system(&sc.points()[0]).unwrap()).unwrap().objective as f64;
    let j64 = solve_p4(&base_system("fig3_linear")).unwrap().objective;
    assert!(((j32 - j64) / j64).abs() < 1e-3, "{j32} vs {j64}");
}
