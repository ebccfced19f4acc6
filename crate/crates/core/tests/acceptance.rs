//! Acceptance suite: one test per release criterion, each printing a single
//! PASS/FAIL line. Tight bounds come from certified exact paths (closed-form
//! measures and the exact product rules of the bi-invariant metric); cell
//! brackets on large nets are checked for consistency alongside.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::{Arc, OnceLock};

use haarlab_core::cellset::CellSet;
use haarlab_core::inequality::{
    ball_doubling_curve, check_brunn_minkowski, check_minimal_doubling, double_counting_check,
    doubling_ratio, kemperman_check, local_bm_sweep, MeasureCtx, Verdict,
};
use haarlab_core::net::{build_net, Net};
use haarlab_core::stability::fit_tube;
use haarlab_core::subgroup::{builtin_subgroup, catalog_table};
use haarlab_core::transport::{
    brute_force_cost, check_cyclical_monotonicity, jacobian_amgm_check, monge_ampere_ratio_check,
    solve_ot, solve_with_mode, PointCloud, SolveMode,
};
use haarlab_core::{AlgebraVector, GroupDescriptor, GroupElement, SetRegion};

fn report(criterion: usize, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn exact_ctx(seed: u64) -> MeasureCtx {
    MeasureCtx::new(None, 0, seed)
}

fn so3_big_net() -> Arc<Net> {
    static NET: OnceLock<Arc<Net>> = OnceLock::new();
    NET.get_or_init(|| Arc::new(build_net(&GroupDescriptor::so3(), 200_000, 7).unwrap()))
        .clone()
}

/// Criterion 1: SO(3) tube doubling over delta in {0.03, 0.05, 0.08} on a
/// net of >= 2e5 cells; certified brackets inside [3.4, 4.1], midpoints
/// increasing toward 4 as delta shrinks.
#[test]
fn criterion_1_so3_tube_doubling() {
    let group = GroupDescriptor::so3();
    let sub = builtin_subgroup(&group, "so2_z").unwrap();
    let net = so3_big_net();
    assert!(net.len() >= 200_000);
    let ctx = exact_ctx(7);
    let mut mids = Vec::new();
    let mut all_in = true;
    let mut details = Vec::new();
    for delta in [0.03, 0.05, 0.08] {
        let tube = SetRegion::tube(sub.clone(), delta);
        let (ratio, _, _) = doubling_ratio(&tube, &ctx).unwrap();
        all_in &= ratio.certified && ratio.lower >= 3.4 && ratio.upper <= 4.1;
        mids.push(ratio.midpoint());
        details.push(format!("delta={delta}: [{:.4}, {:.4}]", ratio.lower, ratio.upper));

        // cell-bracket consistency on the big net: the certified bracket of
        // the discretized product must contain the true measure of H_{2delta}
        let cells = CellSet::discretize(&tube, &net).unwrap();
        let prod = cells.minkowski_product(&cells).unwrap();
        let m = prod.measure();
        let truth = SetRegion::tube(sub.clone(), 2.0 * delta)
            .exact_measure()
            .unwrap();
        assert!(m.certified && m.contains(truth), "cell bracket misses truth at {delta}");
    }
    let increasing = mids[0] > mids[1] && mids[1] > mids[2] && mids[0] < 4.0;
    report(
        1,
        all_in && increasing,
        &format!("{}; midpoints {:.4} > {:.4} > {:.4}", details.join("; "), mids[0], mids[1], mids[2]),
    );
}

/// Criterion 2: ball doubling at rho = 0.05 in [7.3, 8.05] for SO(3);
/// curvature coefficient S > 0 at 95% confidence; T^3 coefficient within
/// 0.05 of zero.
#[test]
fn criterion_2_ball_doubling_curvature() {
    let ctx = exact_ctx(2);
    let so3 = ball_doubling_curve(&GroupDescriptor::so3(), &[0.03, 0.05, 0.08, 0.12], &ctx).unwrap();
    let at_005 = so3.points.iter().find(|p| (p.rho - 0.05).abs() < 1e-12).unwrap();
    let in_range = at_005.ratio.certified
        && at_005.ratio.lower >= 7.3
        && at_005.ratio.upper <= 8.05;
    let s_positive = so3.s_lower > 0.0;
    let t3 = ball_doubling_curve(&GroupDescriptor::torus(3), &[0.03, 0.05, 0.08, 0.12], &ctx).unwrap();
    let flat = t3.s_fit.abs() <= 0.05;
    report(
        2,
        in_range && s_positive && flat,
        &format!(
            "so3 ratio(0.05) in [{:.4}, {:.4}], S in [{:.4}, {:.4}], t3 S = {:.2e}",
            at_005.ratio.lower, at_005.ratio.upper, so3.s_lower, so3.s_upper, t3.s_fit
        ),
    );
}

/// Criterion 3: local Brunn-Minkowski deficit for balls in SO(3) fits
/// eps ~ C rho^p with p >= 1.6 over rho in {0.04, 0.08, 0.16}.
#[test]
fn criterion_3_local_bm_exponent() {
    let ctx = exact_ctx(3);
    let sweep = local_bm_sweep(&GroupDescriptor::so3(), &[0.04, 0.08, 0.16], &ctx).unwrap();
    let no_violation = sweep.reports.iter().all(|r| r.verdict != Verdict::Violated);
    report(
        3,
        sweep.p >= 1.6 && no_violation,
        &format!("fitted p = {:.3} (C = {:.3e}), points used: {:?}", sweep.p, sweep.c, sweep.used),
    );
}

/// Criterion 4: Kemperman exactness on T^1. Arcs of lengths 0.2 and 0.3
/// give a product bracket containing 0.5 at width <= 4 cells, and 100
/// random arc pairs produce zero `violated` verdicts.
#[test]
fn criterion_4_kemperman_torus() {
    let group = GroupDescriptor::torus(1);
    let net = Arc::new(build_net(&group, 2000, 4).unwrap());
    // arc of angular length L = ball of metric radius L (metric scale 2)
    let a = SetRegion::ball(&group, group.identity(), 0.2);
    let b = SetRegion::ball(&group, group.identity(), 0.3);
    let ca = CellSet::discretize(&a, &net).unwrap();
    let cb = CellSet::discretize(&b, &net).unwrap();
    let m = ca.minkowski_product(&cb).unwrap().measure();
    let cell = 1.0 / net.len() as f64;
    let bracket_ok = m.certified && m.contains(0.5) && m.width() <= 4.0 * cell + 1e-12;

    let ctx = MeasureCtx::new(Some(net.clone()), 0, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violated = 0;
    for _ in 0..100 {
        let c1 = group.exp_map(&AlgebraVector::new(vec![rng.gen_range(-0.5..0.5)]));
        let c2 = group.exp_map(&AlgebraVector::new(vec![rng.gen_range(-0.5..0.5)]));
        let r1 = rng.gen_range(0.02..0.45);
        let r2 = rng.gen_range(0.02..0.45);
        let rep = kemperman_check(
            &SetRegion::ball(&group, c1, r1),
            &SetRegion::ball(&group, c2, r2),
            &ctx,
        )
        .unwrap();
        if rep.verdict == Verdict::Violated {
            violated += 1;
        }
    }
    report(
        4,
        bracket_ok && violated == 0,
        &format!(
            "bracket [{:.4}, {:.4}] (width {:.1} cells), violations {violated}/100",
            m.lower,
            m.upper,
            m.width() / cell
        ),
    );
}

/// Criterion 5: double-counting identity for X = R(e, 0.05, 0.1) in SO(3)
/// over SO(2) with 500 quadrature samples: |LHS - RHS| <= 3 sigma + width.
#[test]
fn criterion_5_double_counting() {
    let group = GroupDescriptor::so3();
    let sub = builtin_subgroup(&group, "so2_z").unwrap();
    let x = SetRegion::rect(sub.clone(), group.identity(), 0.05, 0.1);
    let ctx = MeasureCtx::new(None, 400_000, 5);
    let out = double_counting_check(&x, &sub, 0.05, 0.1, 500, &ctx).unwrap();
    let rhs_mid = out.rhs.midpoint();
    let diff = (out.lhs_value - rhs_mid).abs();
    let tol = 3.0 * out.lhs_stderr + out.rhs.width();
    report(
        5,
        out.report.verdict == Verdict::Verified && diff <= tol,
        &format!("|LHS-RHS| = {diff:.2e} <= 3 sigma + width = {tol:.2e}"),
    );
}

/// Criterion 6: transport suite. Exact plans match brute force on 50 small
/// instances; cyclical monotonicity holds on all of them; the determinant
/// AM-GM inequality with S = E = 0 has zero violations in 1e4 trials; the
/// Monge-Ampere median k-NN ratio for cube -> 1.5-scaled cube (n = 2000,
/// k = 20) lies within 25% of 3.375.
#[test]
fn criterion_6_transport_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    let mut mono_failures = 0;
    for trial in 0..50 {
        let n = rng.gen_range(4..=7usize);
        let cloud = |rng: &mut ChaCha8Rng| {
            PointCloud::uniform(
                (0..n)
                    .map(|_| AlgebraVector::sample_in_ball(rng, 3, 0.1))
                    .collect(),
            )
            .unwrap()
        };
        let (a, b) = (cloud(&mut rng), cloud(&mut rng));
        let plan = solve_with_mode(&a, &b, SolveMode::Exact).unwrap();
        let brute = brute_force_cost(&a, &b).unwrap();
        if (plan.cost - brute).abs() > 1e-10 * brute.max(1.0) {
            mismatches += 1;
        }
        for len in [2, 3] {
            if plan.support().len() >= len {
                let rep = check_cyclical_monotonicity(&plan, len, 200, 600 + trial).unwrap();
                if !rep.pass {
                    mono_failures += 1;
                }
            }
        }
    }
    let amgm = jacobian_amgm_check(3, 10_000, 0.0, 6).unwrap();

    let s = 1.5f64;
    let jitter = |rng: &mut ChaCha8Rng, scale: f64| {
        AlgebraVector::new((0..3).map(|_| rng.gen_range(-0.05 * scale..0.05 * scale)).collect())
    };
    let src = PointCloud::uniform((0..2000).map(|_| jitter(&mut rng, 1.0)).collect()).unwrap();
    let tgt = PointCloud::uniform((0..2000).map(|_| jitter(&mut rng, s)).collect()).unwrap();
    let plan = solve_ot(&src, &tgt).unwrap();
    let ma = monge_ampere_ratio_check(&plan, 20).unwrap();
    let target = s.powi(3);
    let ma_ok = (ma.median_ratio - target).abs() <= 0.25 * target;
    report(
        6,
        mismatches == 0 && mono_failures == 0 && amgm.pure_violations == 0 && ma_ok,
        &format!(
            "brute mismatches {mismatches}/50, monotonicity failures {mono_failures}, \
             amgm violations {}/10000, MA median {:.3} vs {target}",
            amgm.pure_violations, ma.median_ratio
        ),
    );
}

/// Criterion 7: planted-tube recovery. Over 20 seeds, fit_tube on a random
/// conjugate g H_{0.05} g^{-1} with 5% cell noise reaches
/// symdiff_ratio <= 0.15 at least 18 times.
#[test]
fn criterion_7_planted_tube_recovery() {
    let group = GroupDescriptor::so3();
    let net = Arc::new(build_net(&group, 20_000, 77).unwrap());
    let base = builtin_subgroup(&group, "so2_z").unwrap();
    let mut recovered = 0;
    let mut ratios = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let g = group.haar_sample_one(&mut rng);
        let tube = SetRegion::tube(base.conjugated(&g), 0.05);
        let mut a = CellSet::discretize(&tube, &net).unwrap();
        // noise: drop each tube cell w.p. 5%, add as many random cells back
        let outer_count = a.outer.iter().filter(|o| **o).count();
        for i in 0..net.len() {
            if a.outer[i] && rng.gen_range(0.0f64..1.0) < 0.05 {
                a.outer[i] = false;
                a.inner_depth[i] = 0.0;
            }
        }
        let additions = outer_count / 20;
        let mut added = 0;
        while added < additions {
            let i = rng.gen_range(0..net.len());
            if !a.outer[i] {
                a.outer[i] = true;
                added += 1;
            }
        }
        let fit = fit_tube(&a, 200, seed).unwrap();
        ratios.push(fit.symdiff_ratio);
        if fit.symdiff_ratio <= 0.15 {
            recovered += 1;
        }
    }
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    report(
        7,
        recovered >= 18,
        &format!("recovered {recovered}/20 (worst symdiff {worst:.3})"),
    );
}

/// Criterion 8: the stored maximal-subgroup table equals the closed forms
/// for ranks 1-8 and the five exceptional rows, exactly.
#[test]
fn criterion_8_catalog_closed_forms() {
    let table = catalog_table();
    let lookup = |family: &str, rank: usize| {
        table
            .iter()
            .find(|e| e.family == family && e.rank == rank)
            .unwrap_or_else(|| panic!("missing row {family}_{rank}"))
    };
    let mut ok = true;
    for r in 1..=8 {
        let e = lookup("a", r);
        ok &= e.dim_g == r * (r + 2) && e.codim == 2 * r;
    }
    for r in 3..=8 {
        let e = lookup("b", r);
        ok &= e.dim_g == r * (2 * r + 1) && e.codim == 2 * r;
    }
    for r in 2..=8 {
        let e = lookup("c", r);
        ok &= e.dim_g == r * (2 * r + 1) && e.codim == 4 * (r - 1);
    }
    for r in 3..=8 {
        let e = lookup("d", r);
        ok &= e.dim_g == r * (2 * r - 1) && e.codim == 2 * r - 1;
    }
    for (fam, rank, dim_g, codim) in [
        ("e", 6, 78, 26),
        ("e", 7, 133, 54),
        ("e", 8, 248, 112),
        ("f", 4, 52, 16),
        ("g", 2, 14, 6),
    ] {
        let e = lookup(fam, rank);
        ok &= e.dim_g == dim_g && e.codim == codim;
    }
    let expected_rows = 8 + 6 + 7 + 6 + 5;
    ok &= table.len() == expected_rows;
    report(8, ok, &format!("{} rows, all closed forms exact", table.len()));
}

/// Criterion 9: soundness fuzz on T^1/T^2. Against exact oracles, no check
/// ever reports `violated` for a true statement across 120 random instances.
#[test]
fn criterion_9_soundness_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut instances = 0;
    let mut false_violations = 0;
    for dim in [1usize, 2] {
        let group = GroupDescriptor::torus(dim);
        let net = Arc::new(build_net(&group, if dim == 1 { 2000 } else { 2304 }, 9).unwrap());
        let ctx = MeasureCtx::new(Some(net), 0, 9);
        let random_center = |rng: &mut ChaCha8Rng| {
            group.exp_map(&AlgebraVector::new(
                (0..dim).map(|_| rng.gen_range(-0.4..0.4)).collect(),
            ))
        };
        let random_region = |rng: &mut ChaCha8Rng| -> SetRegion {
            match rng.gen_range(0..3) {
                0 => SetRegion::ball(&group, random_center(rng), rng.gen_range(0.05..0.3)),
                1 => SetRegion::union(
                    SetRegion::ball(&group, random_center(rng), rng.gen_range(0.05..0.15)),
                    SetRegion::ball(&group, random_center(rng), rng.gen_range(0.05..0.15)),
                ),
                _ if dim == 2 => {
                    let sub = builtin_subgroup(&group, "t1_x").unwrap();
                    SetRegion::tube(sub, rng.gen_range(0.02..0.15))
                }
                _ => SetRegion::ball(&group, GroupElement::Torus(vec![0.0; dim]), rng.gen_range(0.05..0.3)),
            }
        };
        for _ in 0..50 {
            let a = random_region(&mut rng);
            let b = random_region(&mut rng);
            // Kemperman is a theorem on connected compact groups; the other
            // two run at their fitted constants, so all three are true
            let checks = [
                kemperman_check(&a, &b, &ctx).unwrap().verdict,
                check_brunn_minkowski(&a, &b, dim, None, &ctx).unwrap().verdict,
                check_minimal_doubling(&a, None, &ctx).unwrap().verdict,
            ];
            instances += 1;
            false_violations += checks.iter().filter(|v| **v == Verdict::Violated).count();
        }
    }
    report(
        9,
        instances >= 100 && false_violations == 0,
        &format!("{instances} instances, {false_violations} false violations"),
    );
}
