//! Shared property checks and helpers. The acceptance target runs every
//! property at its full case count; `properties.rs` runs them lighter.
#![allow(dead_code)]

use std::fmt::Debug;

use abrflow::maxmin::{solve_maxmin, verify_maxmin, AllocationProblem, AllocationResult, Bottleneck, DEFAULT_TOL};
use abrflow::metrics::{jain_fairness_index, read_csv, write_csv, AcrSample, PortSample, TraceSet};
use abrflow::ratealloc::{
    activity_level, effective_active_vcs, er_maxalloc, er_original, mit_closed_form, solve_fairshare_fixed_point,
    Algorithm, AllocatorState, IntervalMeasurement, RateAllocError, VcId, VcObservation,
};
use abrflow::scenario::{builtin, parse_scenario, render_scenario, Builtin, LinkSpec, Scenario, SwitchSpec, VcSpec};
use abrflow::sim::{cell_time_s, RunOutput, SimObserver, Simulation};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const TOL_FP: f64 = 1e-9;

pub type Check = Result<(), String>;

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Runs `test` over `cases` draws from a fixed seed.
pub fn check<S>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Check
where
    S: Strategy,
    S::Value: Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        max_shrink_iters: 256,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn fail(msg: impl Into<String>) -> TestCaseError {
    TestCaseError::fail(msg.into())
}

// ---------------------------------------------------------------------------
// ratealloc

#[derive(Debug, Clone)]
pub struct AllocCase {
    pub meas: IntervalMeasurement<f64>,
    pub state: AllocatorState<f64>,
}

fn observation() -> impl Strategy<Value = (Option<f64>, Option<f64>)> {
    (
        prop::option::weighted(0.9, 0.0f64..200.0),
        prop::option::weighted(0.9, 0.0f64..200.0),
    )
}

pub fn alloc_case() -> impl Strategy<Value = AllocCase> {
    (
        1.0f64..400.0,
        0.05f64..=1.0,
        prop_oneof![3 => Just(0.0), 1 => 0.0f64..100.0],
        0.0f64..500.0,
        prop::collection::vec(observation(), 1..=8),
        1e-3f64..400.0,
        0.0f64..400.0,
        0.0f64..0.5,
    )
        .prop_map(|(bw, u, vbr, input, obs, fs_prev, map, delta)| {
            let per_vc = obs
                .into_iter()
                .enumerate()
                .map(|(i, (ccr, measured))| VcObservation {
                    vc_id: VcId(i as u32),
                    ccr_from_rm: ccr,
                    measured_rate: measured,
                    saw_cell: measured.is_some_and(|m| m > 0.0),
                })
                .collect();
            AllocCase {
                meas: IntervalMeasurement {
                    abr_input_rate: input,
                    link_bandwidth: bw,
                    target_utilization: u,
                    vbr_cbr_usage: vbr,
                    per_vc,
                },
                state: AllocatorState {
                    fair_share_prev: fs_prev,
                    max_alloc_previous: map,
                    n_eff_prev: 0.0,
                    delta,
                },
            }
        })
}

pub fn prop_clamp_invariant(cases: u32) -> Check {
    check(cases, alloc_case(), |c| {
        let capacity = c.meas.abr_capacity();
        for alg in Algorithm::ALL {
            let mut state = c.state;
            match alg.decide(&c.meas, &mut state) {
                Ok(d) => {
                    for (vc, er) in &d.per_vc_er {
                        if !(*er <= capacity) {
                            return Err(fail(format!("{alg}: {vc:?} er {er} > capacity {capacity}")));
                        }
                    }
                    if d.n_eff > c.meas.per_vc.len() as f64 {
                        return Err(fail(format!("{alg}: n_eff {} above vc count", d.n_eff)));
                    }
                }
                Err(RateAllocError::CapacityZero) if capacity == 0.0 => {}
                Err(RateAllocError::MissingRate(_)) if alg == Algorithm::EricaNeffMeasured => {}
                Err(e) => return Err(fail(format!("{alg}: unexpected {e}"))),
            }
        }
        Ok(())
    })
}

pub fn prop_activity_bounds(cases: u32) -> Check {
    check(
        cases,
        (0.0f64..500.0, 0.0f64..500.0, 1e-6f64..500.0, 1e-6f64..500.0),
        |(r1, r2, f1, f2)| {
            for (r, f) in [(r1, f1), (r2, f2), (r1, f2), (r2, f1), (r1, 0.0)] {
                let a = activity_level(r, f);
                if !(0.0..=1.0).contains(&a) {
                    return Err(fail(format!("activity({r}, {f}) = {a}")));
                }
            }
            let (lo, hi) = (r1.min(r2), r1.max(r2));
            if activity_level(lo, f1) > activity_level(hi, f1) {
                return Err(fail("activity decreased with rate"));
            }
            let (flo, fhi) = (f1.min(f2), f1.max(f2));
            if activity_level(r1, fhi) > activity_level(r1, flo) {
                return Err(fail("activity increased with fair share"));
            }
            Ok(())
        },
    )
}

pub fn prop_neff_bound(cases: u32) -> Check {
    check(
        cases,
        (prop::collection::vec(0.0f64..500.0, 0..=16), prop_oneof![Just(0.0), 0.0f64..500.0]),
        |(rates, fs)| {
            let n = effective_active_vcs(&rates, fs);
            if !(0.0..=rates.len() as f64).contains(&n) {
                return Err(fail(format!("n_eff {n} outside [0, {}]", rates.len())));
            }
            Ok(())
        },
    )
}

#[derive(Debug, Clone)]
pub struct SingleLink {
    pub capacity: f64,
    pub caps: Vec<Option<f64>>,
}

pub fn single_link() -> impl Strategy<Value = SingleLink> {
    (1.0f64..1000.0, 1usize..=8).prop_flat_map(|(capacity, n)| {
        let cap = prop::option::weighted(0.7, 1.0f64..(2.0 * capacity));
        prop::collection::vec(cap, n).prop_map(move |caps| SingleLink { capacity, caps })
    })
}

pub fn single_link_problem(case: &SingleLink) -> AllocationProblem<f64> {
    let mut p = AllocationProblem::new().link("L", case.capacity);
    for (i, cap) in case.caps.iter().enumerate() {
        p = p.flow(format!("f{i}"), ["L"], *cap);
    }
    p
}

/// Fixed point, closed form on its own partition and the max-min oracle
/// agree on one link.
pub fn fixed_point_agreement(case: &SingleLink) -> Result<(), String> {
    let fp = solve_fairshare_fixed_point(case.capacity, &case.caps).map_err(|e| e.to_string())?;
    let oracle = solve_maxmin(&single_link_problem(case)).map_err(|e| e.to_string())?;
    for (i, a) in fp.allocations.iter().enumerate() {
        let o = oracle.per_flow[&format!("f{i}")];
        if !rel_close(*a, o, TOL_FP) {
            return Err(format!("flow {i}: fixed point {a} vs oracle {o}"));
        }
    }
    let under = fp.underloading(&case.caps);
    let under_rates: Vec<f64> = under.iter().map(|&i| case.caps[i].unwrap()).collect();
    match mit_closed_form(case.capacity, &under_rates, case.caps.len()) {
        Ok(mit) => {
            if !rel_close(mit, fp.fair_share, TOL_FP) {
                return Err(format!("closed form {mit} vs fixed point {}", fp.fair_share));
            }
        }
        Err(RateAllocError::AllUnderloading) => {
            if fp.fair_share != f64::INFINITY {
                return Err(format!("every source underloading yet fair share {}", fp.fair_share));
            }
            if oracle.bottleneck_of.values().any(|b| *b != Bottleneck::Source) {
                return Err("caps fit but oracle reports a link bottleneck".into());
            }
            return Ok(());
        }
        Err(e) => return Err(e.to_string()),
    }
    // The oracle's link share is the fair share.
    for (i, _) in case.caps.iter().enumerate() {
        let id = format!("f{i}");
        if oracle.bottleneck_of[&id] == Bottleneck::Link("L".into())
            && !rel_close(oracle.per_flow[&id], fp.fair_share, TOL_FP)
        {
            return Err(format!("oracle link share {} vs fair share {}", oracle.per_flow[&id], fp.fair_share));
        }
    }
    Ok(())
}

pub fn prop_fixed_point_equivalence(cases: u32) -> Check {
    check(cases, single_link(), |case| fixed_point_agreement(&case).map_err(fail))
}

pub fn prop_fixed_point_self_consistency(cases: u32) -> Check {
    check(cases, single_link(), |case| {
        let fp = solve_fairshare_fixed_point(case.capacity, &case.caps).map_err(|e| fail(e.to_string()))?;
        if fp.fair_share.is_infinite() {
            return Ok(());
        }
        let under = fp.underloading(&case.caps);
        let n_o = (case.caps.len() - under.len()) as f64;
        let expect = n_o + under.iter().map(|&i| case.caps[i].unwrap() / fp.fair_share).sum::<f64>();
        if !rel_close(fp.n_eff, expect, TOL_FP) {
            return Err(fail(format!("n_eff {} vs N_o + sum(cap/fs) {expect}", fp.n_eff)));
        }
        Ok(())
    })
}

/// z = 1, some VCs below the even split (bottlenecked elsewhere), the rest
/// strictly above it.
pub fn stall_case() -> impl Strategy<Value = (f64, Vec<f64>, Vec<bool>)> {
    (10.0f64..400.0, 2usize..=8).prop_flat_map(|(capacity, n)| {
        let fs = capacity / n as f64;
        let vc = prop_oneof![
            (0.01f64..0.99).prop_map(move |x| (x * fs, true)),
            (1.01f64..4.0).prop_map(move |x| (x * fs, false)),
        ];
        prop::collection::vec(vc, n).prop_map(move |v| {
            let (rates, bottlenecked) = v.into_iter().unzip();
            (capacity, rates, bottlenecked)
        })
    })
}

pub fn stall_measurement(capacity: f64, ccrs: &[f64]) -> IntervalMeasurement<f64> {
    IntervalMeasurement {
        abr_input_rate: capacity,
        link_bandwidth: capacity,
        target_utilization: 1.0,
        vbr_cbr_usage: 0.0,
        per_vc: ccrs
            .iter()
            .enumerate()
            .map(|(i, &c)| VcObservation::with_rates(VcId(i as u32), c, c))
            .collect(),
    }
}

pub fn prop_stall_witness(cases: u32) -> Check {
    check(cases, stall_case(), |(capacity, ccrs, bottlenecked)| {
        let meas = stall_measurement(capacity, &ccrs);
        let state = AllocatorState::seeded(capacity, ccrs.len(), 0.1);
        let d = er_original(&meas, &state).map_err(|e| fail(e.to_string()))?;
        for (i, (&c, &b)) in ccrs.iter().zip(&bottlenecked).enumerate() {
            let er = d.per_vc_er[&VcId(i as u32)];
            if !b && er != c.min(capacity) {
                return Err(fail(format!("vc {i}: er {er} moved from ccr {c}")));
            }
        }
        Ok(())
    })
}

pub fn prop_equalization(cases: u32) -> Check {
    let strategy = (
        1.0f64..400.0,
        0.0f64..0.5,
        0.0f64..=1.0,
        prop::collection::vec(0.0f64..400.0, 1..=8),
        0.0f64..400.0,
    );
    check(cases, strategy, |(capacity, delta, zx, ccrs, map)| {
        let z = zx * (1.0 + delta);
        let meas = IntervalMeasurement {
            abr_input_rate: z * capacity,
            link_bandwidth: capacity,
            target_utilization: 1.0,
            vbr_cbr_usage: 0.0,
            per_vc: ccrs
                .iter()
                .enumerate()
                .map(|(i, &c)| VcObservation::with_ccr(VcId(i as u32), c))
                .collect(),
        };
        let state = AllocatorState {
            fair_share_prev: capacity,
            max_alloc_previous: map,
            n_eff_prev: 0.0,
            delta,
        };
        let d = er_maxalloc(&meas, &state).map_err(|e| fail(e.to_string()))?;
        if d.load_factor > 1.0 + delta {
            return Ok(());
        }
        let under: Vec<f64> = ccrs
            .iter()
            .enumerate()
            .filter(|(_, &c)| z > 0.0 && c / z <= map)
            .map(|(i, _)| d.per_vc_er[&VcId(i as u32)])
            .collect();
        if let Some(first) = under.first() {
            if under.iter().any(|er| er != first) {
                return Err(fail(format!("unequal allocations {under:?}")));
            }
        }
        Ok(())
    })
}

fn scaled(c: &AllocCase, k: f64) -> AllocCase {
    let mut s = c.clone();
    s.meas.abr_input_rate *= k;
    s.meas.link_bandwidth *= k;
    s.meas.vbr_cbr_usage *= k;
    for o in &mut s.meas.per_vc {
        o.ccr_from_rm = o.ccr_from_rm.map(|v| v * k);
        o.measured_rate = o.measured_rate.map(|v| v * k);
    }
    s.state.fair_share_prev *= k;
    s.state.max_alloc_previous *= k;
    s
}

pub fn prop_scale_covariance(cases: u32) -> Check {
    let tol = 1e-9;
    check(cases, (alloc_case(), 1e-2f64..1e2), move |(c, k)| {
        let s = scaled(&c, k);
        for alg in Algorithm::ALL {
            let (mut st_a, mut st_b) = (c.state, s.state);
            match (alg.decide(&c.meas, &mut st_a), alg.decide(&s.meas, &mut st_b)) {
                (Ok(a), Ok(b)) => {
                    for (vc, er) in &a.per_vc_er {
                        if !rel_close(er * k, b.per_vc_er[vc], tol) {
                            return Err(fail(format!("{alg}: {er} * {k} vs {}", b.per_vc_er[vc])));
                        }
                    }
                    if !rel_close(a.load_factor, b.load_factor, tol) || !rel_close(a.n_eff, b.n_eff, tol) {
                        return Err(fail(format!("{alg}: z or n_eff changed under scaling")));
                    }
                    if !rel_close(a.fair_share * k, b.fair_share, tol) {
                        return Err(fail(format!("{alg}: fair share not covariant")));
                    }
                }
                (Err(_), Err(_)) => {}
                (a, b) => return Err(fail(format!("{alg}: {a:?} vs {b:?}"))),
            }
        }
        let rates: Vec<f64> = c.meas.per_vc.iter().map(|o| o.ccr_from_rm.unwrap_or(0.0)).collect();
        let fs = c.state.fair_share_prev;
        for &r in &rates {
            if !rel_close(activity_level(r, fs), activity_level(r * k, fs * k), tol) {
                return Err(fail("activity level not scale invariant"));
            }
        }
        let caps: Vec<Option<f64>> = rates.iter().map(|&r| (r > 1.0).then_some(r)).collect();
        let capacity = c.meas.link_bandwidth;
        let scaled_caps: Vec<Option<f64>> = caps.iter().map(|c| c.map(|v| v * k)).collect();
        if let (Ok(a), Ok(b)) = (
            solve_fairshare_fixed_point(capacity, &caps),
            solve_fairshare_fixed_point(capacity * k, &scaled_caps),
        ) {
            if !(a.fair_share.is_infinite() && b.fair_share.is_infinite())
                && !rel_close(a.fair_share * k, b.fair_share, 1e-8)
            {
                return Err(fail(format!("fixed point {} * {k} vs {}", a.fair_share, b.fair_share)));
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// maxmin

pub fn network() -> impl Strategy<Value = AllocationProblem<f64>> {
    (1usize..=4, 1usize..=6).prop_flat_map(|(n_links, n_flows)| {
        let caps = prop::collection::vec(1.0f64..200.0, n_links);
        let flow = (
            prop::collection::vec(any::<bool>(), n_links),
            0..n_links,
            prop::option::weighted(0.4, 0.5f64..150.0),
        );
        (caps, prop::collection::vec(flow, n_flows)).prop_map(|(caps, flows)| {
            let mut p = AllocationProblem::new();
            for (i, c) in caps.iter().enumerate() {
                p = p.link(format!("l{i}"), *c);
            }
            for (j, (mask, forced, cap)) in flows.into_iter().enumerate() {
                let route: Vec<String> = mask
                    .iter()
                    .enumerate()
                    .filter(|(i, &m)| m || *i == forced)
                    .map(|(i, _)| format!("l{i}"))
                    .collect();
                p = p.flow(format!("f{j}"), route, cap);
            }
            p
        })
    })
}

fn solved(p: &AllocationProblem<f64>) -> Result<AllocationResult<f64>, TestCaseError> {
    solve_maxmin(p).map_err(|e| fail(e.to_string()))
}

pub fn prop_maxmin_roundtrip(cases: u32) -> Check {
    check(cases, network(), |p| {
        let r = solved(&p)?;
        let verdict = verify_maxmin(&p, &r.per_flow, DEFAULT_TOL).map_err(|e| fail(e.to_string()))?;
        if !verdict.is_max_min() {
            return Err(fail(format!("{:?}", verdict.violation)));
        }
        Ok(())
    })
}

pub fn prop_maxmin_permutation(cases: u32) -> Check {
    let strategy = network().prop_flat_map(|p| {
        let n = p.flows.len();
        (Just(p), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    });
    check(cases, strategy, |(p, perm)| {
        let base = solved(&p)?;
        let mut q = AllocationProblem::new();
        for l in &p.links {
            q = q.link(l.id.clone(), l.capacity);
        }
        // Flow j of the relabeled problem is old flow perm[j].
        for &old in &perm {
            let f = &p.flows[old];
            q = q.flow(format!("g{old}"), f.route.clone(), f.source_cap);
        }
        let relabeled = solved(&q)?;
        for (j, _) in p.flows.iter().enumerate() {
            let a = base.per_flow[&format!("f{j}")];
            let b = relabeled.per_flow[&format!("g{j}")];
            if !rel_close(a, b, TOL_FP) {
                return Err(fail(format!("flow {j}: {a} vs {b} after relabeling")));
            }
        }
        Ok(())
    })
}

pub fn prop_maxmin_monotone(cases: u32) -> Check {
    let strategy = network().prop_flat_map(|p| {
        let n = p.links.len();
        (Just(p), 0..n, 1.0f64..3.0)
    });
    check(cases, strategy, |(p, link, factor)| {
        let base = solved(&p)?;
        let mut q = p.clone();
        q.links[link].capacity *= factor;
        let grown = solved(&q)?;
        let scale = p.links.iter().map(|l| l.capacity).fold(0.0, f64::max) * factor;
        for (id, a) in &base.per_flow {
            if grown.per_flow[id] < a - TOL_FP * scale {
                return Err(fail(format!("{id} dropped from {a} to {}", grown.per_flow[id])));
            }
        }
        Ok(())
    })
}

/// A grown feasible set can only improve the allocation in leximin order:
/// sorted ascending, the first entry that changes must rise.
pub fn prop_maxmin_leximin_monotone(cases: u32) -> Check {
    let strategy = network().prop_flat_map(|p| {
        let n = p.links.len();
        (Just(p), 0..n, 1.0f64..3.0)
    });
    check(cases, strategy, |(p, link, factor)| {
        let mut base: Vec<f64> = solved(&p)?.per_flow.into_values().collect();
        let mut q = p.clone();
        q.links[link].capacity *= factor;
        let mut grown: Vec<f64> = solved(&q)?.per_flow.into_values().collect();
        base.sort_by(f64::total_cmp);
        grown.sort_by(f64::total_cmp);
        let scale = q.links.iter().map(|l| l.capacity).fold(0.0, f64::max);
        for (a, b) in base.iter().zip(&grown) {
            if (a - b).abs() > TOL_FP * scale {
                if b < a {
                    return Err(fail(format!("sorted allocation fell: {base:?} -> {grown:?}")));
                }
                break;
            }
        }
        Ok(())
    })
}

pub fn prop_maxmin_single_link(cases: u32) -> Check {
    let strategy = single_link().prop_filter("needs an uncapped flow", |c| c.caps.iter().any(Option::is_none));
    check(cases, strategy, |case| {
        let fp = solve_fairshare_fixed_point(case.capacity, &case.caps).map_err(|e| fail(e.to_string()))?;
        let r = solved(&single_link_problem(&case))?;
        for (i, cap) in case.caps.iter().enumerate() {
            let a = r.per_flow[&format!("f{i}")];
            if cap.is_none() && !rel_close(a, fp.fair_share, TOL_FP) {
                return Err(fail(format!("uncapped share {a} vs fair share {}", fp.fair_share)));
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// scenarios and simulation

/// A chain of 1-3 switches with VCs entering and leaving at random points.
pub fn parking_lot() -> impl Strategy<Value = Scenario> {
    let vc = (
        any::<prop::sample::Index>(),
        any::<prop::sample::Index>(),
        10.0f64..=155.52,
        0.05f64..=1.0,
        prop::option::weighted(0.3, 1.0f64..80.0),
        prop::sample::select(vec![1.0, 0.5, 1.0 / 16.0]),
        0.0f64..0.004,
        prop::option::weighted(0.2, 0.01f64..0.02),
    );
    (
        1usize..=3,
        prop::collection::vec(prop::sample::select(vec![45.0, 100.0, 155.52]), 2),
        prop::collection::vec(0.0f64..400.0, 4),
        prop::sample::select(Algorithm::ALL.to_vec()),
        0.6f64..=1.0,
        prop::collection::vec(vc, 1..=4),
        0.012f64..0.025,
        prop::sample::select(vec![8u32, 32]),
    )
        .prop_map(|(n_sw, chain_bw, lengths, algorithm, u, vcs, duration, nrm)| {
            let sw = |i: usize| format!("SW{i}");
            let mut links = Vec::new();
            for i in 0..n_sw - 1 {
                links.push(LinkSpec {
                    id: format!("trunk{i}"),
                    from: sw(i),
                    to: sw(i + 1),
                    bandwidth_mbps: chain_bw[i],
                    length_km: lengths[i],
                });
            }
            let switches = (0..n_sw)
                .map(|i| SwitchSpec {
                    id: sw(i),
                    algorithm,
                    target_utilization: u,
                    delta: 0.1,
                    vbr_cbr_usage_mbps: 0.0,
                })
                .collect();
            let mut specs = Vec::new();
            for (j, (a, b, pcr, icr_frac, app_cap, rif, start, stop)) in vcs.into_iter().enumerate() {
                let (a, b) = (a.index(n_sw), b.index(n_sw));
                let (enter, exit) = (a.min(b), a.max(b));
                let (s, d) = (format!("S{j}"), format!("D{j}"));
                links.push(LinkSpec {
                    id: format!("{s}-{}", sw(enter)),
                    from: s.clone(),
                    to: sw(enter),
                    bandwidth_mbps: 155.52,
                    length_km: lengths[2],
                });
                links.push(LinkSpec {
                    id: format!("{}-{d}", sw(exit)),
                    from: sw(exit),
                    to: d.clone(),
                    bandwidth_mbps: 155.52,
                    length_km: lengths[3],
                });
                let mut route = vec![s];
                route.extend((enter..=exit).map(sw));
                route.push(d);
                specs.push(VcSpec {
                    id: format!("S{j}"),
                    route,
                    icr_mbps: pcr * icr_frac,
                    pcr_mbps: pcr,
                    app_cap_mbps: app_cap,
                    rif,
                    start_time_s: start,
                    stop_time_s: stop,
                });
            }
            Scenario {
                name: "random".into(),
                sim_duration_s: duration,
                nrm,
                interval_cells: 100,
                interval_max_s: 0.001,
                propagation_us_per_km: 5.0,
                links,
                switches,
                vcs: specs,
            }
        })
}

pub fn prop_scenario_roundtrip(cases: u32) -> Check {
    check(cases, parking_lot(), |s| {
        s.validate().map_err(|e| fail(e.to_string()))?;
        let text = render_scenario(&s);
        let back = parse_scenario(&text).map_err(|e| fail(format!("{e}\n{text}")))?;
        if back != s {
            return Err(fail(format!("round trip changed the scenario:\n{text}")));
        }
        Ok(())
    })
}

#[derive(Debug, Default)]
pub struct Recorder {
    /// (vc, time, acr, send rate)
    pub emissions: Vec<(usize, f64, f64, f64)>,
    /// (vc, hop, before, after)
    pub stamps: Vec<(usize, usize, f64, f64)>,
    /// (vc, time, er)
    pub returns: Vec<(usize, f64, f64)>,
}

impl SimObserver for Recorder {
    fn emitted(&mut self, vc: usize, time: f64, acr: f64, send_rate: f64) {
        self.emissions.push((vc, time, acr, send_rate));
    }

    fn stamped(&mut self, vc: usize, hop: usize, er_before: f64, er_after: f64) {
        self.stamps.push((vc, hop, er_before, er_after));
    }

    fn returned(&mut self, vc: usize, time: f64, er: f64) {
        self.returns.push((vc, time, er));
    }
}

pub fn run_recorded(s: &Scenario) -> Result<(RunOutput, Recorder), String> {
    let mut rec = Recorder::default();
    let out = Simulation::new(s)
        .map_err(|e| e.to_string())?
        .with_observer(&mut rec)
        .run();
    Ok((out, rec))
}

pub fn conservation(out: &RunOutput) -> Result<(), String> {
    let st = &out.stats;
    if st.cells_emitted != st.cells_delivered + st.cells_in_flight + st.cells_queued {
        return Err(format!("cells lost: {st:?}"));
    }
    Ok(())
}

pub fn er_non_increasing(s: &Scenario, rec: &Recorder) -> Result<(), String> {
    for &(vc, hop, before, after) in &rec.stamps {
        if after > before {
            return Err(format!("vc {vc} hop {hop}: er rose {before} -> {after}"));
        }
    }
    for &(vc, t, er) in &rec.returns {
        if er > s.vcs[vc].pcr_mbps {
            return Err(format!("vc {vc} at {t}: returned er {er} above pcr"));
        }
    }
    Ok(())
}

pub fn acr_ceiling(s: &Scenario, out: &RunOutput, rec: &Recorder) -> Result<(), String> {
    for a in &out.trace.acr {
        let vc = s.vcs.iter().find(|v| v.id == a.vc_id).unwrap();
        if a.acr_mbps > vc.pcr_mbps {
            return Err(format!("{} acr {} above pcr {}", a.vc_id, a.acr_mbps, vc.pcr_mbps));
        }
    }
    let mut last: Vec<Option<(f64, f64)>> = vec![None; s.vcs.len()];
    for &(vc, t, acr, rate) in &rec.emissions {
        let spec = &s.vcs[vc];
        let ceiling = spec.app_cap_mbps.map_or(acr, |c| c.min(acr));
        if acr > spec.pcr_mbps || rate > ceiling {
            return Err(format!("{} at {t}: acr {acr} send rate {rate} ceiling {ceiling}", spec.id));
        }
        if let Some((t0, r0)) = last[vc] {
            let gap = t - t0;
            let min_gap = cell_time_s(r0.max(rate));
            if gap < min_gap * (1.0 - 1e-9) {
                return Err(format!("{} sent {gap} s after previous cell, rate allows {min_gap}", spec.id));
            }
        }
        last[vc] = Some((t, rate));
    }
    Ok(())
}

pub fn determinism(s: &Scenario, out: &RunOutput) -> Result<(), String> {
    let again = abrflow::sim::run(s).map_err(|e| e.to_string())?;
    if again.trace != out.trace || again.stats != out.stats {
        return Err("second run differs".into());
    }
    Ok(())
}

/// Conservation, ER non-increase, ACR ceiling and determinism on random
/// topologies.
pub fn prop_sim_invariants(cases: u32) -> Check {
    check(cases, parking_lot(), |s| {
        let (out, rec) = run_recorded(&s).map_err(fail)?;
        conservation(&out).map_err(fail)?;
        er_non_increasing(&s, &rec).map_err(fail)?;
        acr_ceiling(&s, &out, &rec).map_err(fail)?;
        determinism(&s, &out).map_err(fail)?;
        Ok(())
    })
}

/// Mean ABR input rate at a port over `[from, to)`, weighted by interval
/// length so short, bursty intervals do not dominate.
pub fn port_throughput_mbps(s: &Scenario, trace: &TraceSet, link: &LinkSpec, from: f64, to: f64) -> f64 {
    let capacity = s.port_capacity_mbps(link).unwrap();
    let (mut bits, mut span) = (0.0, 0.0);
    let mut prev: Option<f64> = None;
    for p in trace.port_of(&link.id) {
        if let Some(t0) = prev {
            if t0 >= from && p.time_s <= to {
                bits += p.z * capacity * (p.time_s - t0);
                span += p.time_s - t0;
            }
        }
        prev = Some(p.time_s);
    }
    bits / span
}

pub fn port_links<'a>(s: &'a Scenario, trace: &TraceSet) -> Vec<&'a LinkSpec> {
    s.links.iter().filter(|l| trace.port_ids.contains(&l.id)).collect()
}

/// Per-port steady-state input within (u + 2%) of bandwidth.
pub fn steady_state_feasibility(s: &Scenario, out: &RunOutput) -> Vec<String> {
    let end = out.trace.end_time_s;
    let mut bad = Vec::new();
    for l in port_links(s, &out.trace) {
        let u = s.switch(&l.from).unwrap().target_utilization;
        let limit = (u + 0.02) * l.bandwidth_mbps;
        let got = port_throughput_mbps(s, &out.trace, l, 0.8 * end, end);
        if got > limit {
            bad.push(format!("{} {:.3} > {:.3} Mbps", l.id, got, limit));
        }
    }
    bad
}

fn max_queue(trace: &TraceSet, port: &str, from: f64, to: f64) -> u64 {
    trace
        .port_of(port)
        .filter(|p| p.time_s >= from && p.time_s < to)
        .map(|p| p.queue_cells)
        .max()
        .unwrap_or(0)
}

/// Max queue over the last 20% never exceeds the middle 20% by over 100 cells.
pub fn queue_boundedness(s: &Scenario, out: &RunOutput) -> Vec<String> {
    let end = out.trace.end_time_s;
    let mut bad = Vec::new();
    for l in port_links(s, &out.trace) {
        let middle = max_queue(&out.trace, &l.id, 0.4 * end, 0.6 * end);
        let last = max_queue(&out.trace, &l.id, 0.8 * end, end + 1.0);
        if last > middle + 100 {
            bad.push(format!("{} last {last} > middle {middle} + 100", l.id));
        }
    }
    bad
}

pub struct BuiltinRun {
    pub which: Builtin,
    pub algorithm: Algorithm,
    pub scenario: Scenario,
    pub output: RunOutput,
    pub recorder: Recorder,
    pub elapsed: std::time::Duration,
}

/// Every builtin under every algorithm, run on separate threads.
pub fn run_all_builtins() -> Vec<BuiltinRun> {
    let jobs: Vec<(Builtin, Algorithm)> = [Builtin::Fig3ThreeSource, Builtin::Fig2Upstream]
        .into_iter()
        .flat_map(|b| Algorithm::ALL.into_iter().map(move |a| (b, a)))
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(which, algorithm)| {
                scope.spawn(move || {
                    let scenario = builtin(which).with_algorithm(algorithm);
                    let started = std::time::Instant::now();
                    let (output, recorder) = run_recorded(&scenario).expect("builtin runs");
                    let elapsed = started.elapsed();
                    BuiltinRun {
                        which,
                        algorithm,
                        scenario,
                        output,
                        recorder,
                        elapsed,
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread")).collect()
    })
}

// ---------------------------------------------------------------------------
// metrics

pub fn prop_jain(cases: u32) -> Check {
    check(
        cases,
        (prop::collection::vec(1e-3f64..1e3, 1..=20), 1e-3f64..1e3),
        |(values, k)| {
            let j = jain_fairness_index(&values).map_err(|e| fail(e.to_string()))?;
            let scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
            let js = jain_fairness_index(&scaled).map_err(|e| fail(e.to_string()))?;
            if !rel_close(j, js, 1e-12) {
                return Err(fail(format!("index {j} vs scaled {js}")));
            }
            if !(j > 0.0 && j <= 1.0 + 1e-15) {
                return Err(fail(format!("index {j} outside (0, 1]")));
            }
            let all_equal = values.iter().all(|v| *v == values[0]);
            if all_equal != ((1.0 - j).abs() <= 1e-12) {
                return Err(fail(format!("index {j} for values {values:?}")));
            }
            let flat = vec![values[0]; values.len()];
            if !rel_close(jain_fairness_index(&flat).unwrap(), 1.0, 1e-12) {
                return Err(fail("equal values do not give 1"));
            }
            Ok(())
        },
    )
}

pub fn trace_strategy() -> impl Strategy<Value = TraceSet> {
    let value = prop_oneof![
        4 => -1e6f64..1e6,
        1 => prop::num::f64::POSITIVE | prop::num::f64::NEGATIVE | prop::num::f64::ZERO,
    ];
    let acr = prop::collection::vec((0.0f64..1.0, 0usize..4, value.clone()), 0..40);
    let ports = prop::collection::vec((0.0f64..1.0, 0usize..3, value.clone(), value.clone(), value, any::<u32>()), 0..40);
    (acr, ports).prop_map(|(mut acr, mut ports)| {
        acr.sort_by(|a, b| a.0.total_cmp(&b.0));
        ports.sort_by(|a, b| a.0.total_cmp(&b.0));
        TraceSet {
            acr: acr
                .into_iter()
                .map(|(t, v, r)| AcrSample {
                    time_s: t,
                    vc_id: format!("S{v}"),
                    acr_mbps: r,
                })
                .collect(),
            ports: ports
                .into_iter()
                .map(|(t, p, z, n, fs, q)| PortSample {
                    time_s: t,
                    port_id: format!("link{p}"),
                    z,
                    n_eff: n,
                    fair_share_mbps: fs,
                    queue_cells: q as u64,
                })
                .collect(),
            ..TraceSet::default()
        }
    })
}

pub fn prop_csv_roundtrip(cases: u32) -> Check {
    check(cases, trace_strategy(), |trace| {
        let dir = tempfile::tempdir().map_err(|e| fail(e.to_string()))?;
        write_csv(&trace, dir.path()).map_err(|e| fail(e.to_string()))?;
        let back = read_csv(dir.path()).map_err(|e| fail(e.to_string()))?;
        if back.acr != trace.acr || back.ports != trace.ports {
            return Err(fail("csv round trip changed the trace"));
        }
        Ok(())
    })
}

/// Every randomized property with its name.
pub type Property = fn(u32) -> Check;

pub fn randomized_properties() -> Vec<(&'static str, Property)> {
    vec![
        ("ratealloc clamp invariant", prop_clamp_invariant),
        ("ratealloc activity bounds", prop_activity_bounds),
        ("ratealloc n_eff bound", prop_neff_bound),
        ("ratealloc fixed-point equivalence", prop_fixed_point_equivalence),
        ("ratealloc fixed-point self-consistency", prop_fixed_point_self_consistency),
        ("ratealloc stall witness", prop_stall_witness),
        ("ratealloc equalization", prop_equalization),
        ("ratealloc scale covariance", prop_scale_covariance),
        ("maxmin verify round trip", prop_maxmin_roundtrip),
        ("maxmin permutation equivariance", prop_maxmin_permutation),
        ("maxmin capacity monotonicity, per flow", prop_maxmin_monotone),
        ("maxmin capacity monotonicity, leximin", prop_maxmin_leximin_monotone),
        ("maxmin single-link agreement", prop_maxmin_single_link),
        ("scenario render/parse round trip", prop_scenario_roundtrip),
        ("sim conservation, ER, ACR ceiling, determinism", prop_sim_invariants),
        ("metrics jain index", prop_jain),
        ("metrics csv round trip", prop_csv_roundtrip),
    ]
}
