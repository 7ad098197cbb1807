//! Scenario behaviour that needs the full robust pipeline.

use lowrank_robust::bilinear::SdpSolver;
use lowrank_robust::robust::{robust_policy_eval, robust_value_at_init};
use lowrank_robust::scenarios::{
    build_string_guessing, flip_search, flip_search_grid, gamble, gamble_decision, string_guessing_all_ones,
    string_guessing_closed_forms, string_guessing_full_radii, StringGuessingParams,
};

#[test]
fn full_radii_charge_every_step() {
    let p = StringGuessingParams::new(3, 10, 0.05).unwrap();
    let (mdp, _) = build_string_guessing(&p).unwrap();
    let radii = string_guessing_full_radii(&p).unwrap();
    let res = robust_policy_eval(&mdp, &string_guessing_all_ones(&p), &radii, &SdpSolver::default()).unwrap();
    let v = robust_value_at_init(&res, mdp.rho());
    // Σ_{h=1..10} (10−h)·0.05
    assert!((v - (7.0 - 2.25)).abs() < 1e-9, "{v}");
    assert!(v < string_guessing_closed_forms(&p).v_hat);
}

#[test]
fn gamble_flip_search() {
    let solver = SdpSolver::default();
    let grid = flip_search_grid();
    let found = flip_search(&grid, &solver).unwrap();
    assert_eq!(found.checked, grid.len());
    eprintln!(
        "checked {}, nominal gamble -> robust guarantee {}, nominal guarantee -> robust gamble {}",
        found.checked,
        found.towards_guarantee.len(),
        found.towards_gamble.len()
    );
    let flips: Vec<_> = found.towards_guarantee.iter().chain(&found.towards_gamble).collect();
    assert!(!flips.is_empty(), "no parameter set changes the optimal first action");
    for f in flips {
        // recompute independently of the stored decision
        let again = gamble_decision(&f.params, &solver).unwrap();
        assert_eq!(&again, f);
        assert_ne!(again.nominal_action(), again.robust_action());
        assert!(again.robust_gamble <= again.nominal_gamble + 1e-9);
        assert!(again.robust_guarantee <= again.nominal_guarantee + 1e-9);
    }
    for f in &found.towards_guarantee {
        assert_eq!((f.nominal_action(), f.robust_action()), (gamble::A1, gamble::A0));
    }
}
