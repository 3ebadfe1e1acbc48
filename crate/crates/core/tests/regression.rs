use supermodel::tumor::InitialCondition;
use supermodel::*;

const LIPSCHITZ_8_SEED_1: f64 = 0.474_187_376_732_425_6;

#[test]
fn tumor_lipschitz_baseline() {
    let grid = GridSpec::cube(8, 1.0).unwrap();
    let p = TumorParams::default();
    let init = InitialCondition::default().build(grid, &p);
    let sys = TumorSystem::new(grid);
    let l = estimate_lipschitz(&sys, &p, &init, 8, 1e-2, 1).unwrap();
    assert!((l - LIPSCHITZ_8_SEED_1).abs() < 1e-12, "L = {l:?}");
}

#[test]
fn free_tumor_run_stays_bounded_at_default_step() {
    let grid = GridSpec::cube(8, 1.0).unwrap();
    let p = TumorParams::default();
    let init = InitialCondition::default().build(grid, &p);
    let gt = generate_gt(&TumorSystem::new(grid), &p, &init, "b", 0.1, 300, 50).unwrap();
    let start = gt.total(0).unwrap();
    let end = gt.total(300).unwrap();
    assert!(end > start, "tumor should grow: {start} -> {end}");
    let last = gt.at(300).unwrap();
    assert!(last.iter().all(|&b| b.is_finite() && b >= 0.0 && b <= p.b_max * 1.001));
}
