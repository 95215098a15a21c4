//! End-to-end acceptance checks. Each test prints one line
//! `criterion NN <name>: PASS/FAIL (details)` and then asserts, so the full
//! ledger of measured values survives in the test output either way.

use metastab::chain::{MarkovChain, ProbMeasure};
use metastab::config::parse_config;
use metastab::experiments::run_experiment;
use metastab::meta::{
    check_condition_d, check_condition_r, check_h0_h1, extract_reduced_generator,
    reflected_chain, spectral_gap, tv_curve, TvStart,
};
use metastab::models::double_well_birth_death;
use metastab::potential::{
    capacity, equilibrium_measure_dagger, equilibrium_potential, mean_jump_rate,
    mean_jump_rate_capacity, occupation_profile, occupation_time, resolvent_bound_slack,
    solve_resolvent, StartSpec,
};
use metastab::sim::{hitting_tail, next_state, RngStream, StreamSpec};
use metastab::testkit::{random_chain, random_probe, random_reversible_chain, random_wells};
use metastab::trace::trace_generator;
use metastab::zrp::{
    capacity_test_function_q, complete_walk, enumerate_configs,
    search_superharmonic_certificate, zr_generator, zr_measure, zr_wells, ConfigTable, ZRModel,
    ZRWells,
};
use rayon::prelude::*;
use std::path::Path;
use std::time::Instant;

fn verdict(num: u32, name: &str, pass: bool, detail: String) {
    println!(
        "criterion {num:02} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {num:02} {name} failed: {detail}");
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Two-site critical zero-range instance on the accelerated clock.
struct Zr {
    model: ZRModel,
    table: ConfigTable,
    mu: ProbMeasure,
    wells: ZRWells,
    chain: MarkovChain,
}

fn zr(n: usize, speedup: bool) -> Zr {
    let model = ZRModel::new(2, n, &complete_walk(2), 0.5, 0.25, speedup).unwrap();
    let table = enumerate_configs(n, 2).unwrap();
    let (mu, _) = zr_measure(&model, &table).unwrap();
    let wells = zr_wells(&model, &table).unwrap();
    let chain = zr_generator(&model, &table).unwrap();
    Zr { model, table, mu, wells, chain }
}

#[test]
fn c01_exact_resolvent() {
    let t0 = Instant::now();
    let two = MarkovChain::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
    let sol = solve_resolvent(&two, 1.0, &[1.0, 0.0]).unwrap();
    let exact_gap = (sol.values()[0] - 2.0 / 3.0)
        .abs()
        .max((sol.values()[1] - 1.0 / 3.0).abs());

    let mut worst_slack = f64::NEG_INFINITY;
    let mut rng = RngStream::new(1401, 0);
    for trial in 0..100u64 {
        let n = 2 + ((trial as usize) * 48) / 99;
        let chain = random_chain(&mut rng, n, n / 2);
        let g = random_probe(&mut rng, n, 3.0);
        for lambda in [0.5, 1.0, 2.0] {
            let sol = solve_resolvent(&chain, lambda, &g).unwrap();
            worst_slack = worst_slack.max(resolvent_bound_slack(&sol, &g));
        }
    }
    let pass = exact_gap <= 1e-12 && worst_slack <= 1e-9;
    verdict(
        1,
        "exact resolvent",
        pass,
        format!(
            "two-state gap {exact_gap:.2e}, worst sup-bound slack {worst_slack:.2e} over 300 solves, {:.2?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn c02_potential_theory_identities() {
    let t0 = Instant::now();
    // Worst relative gap across: the adjoint pairing
    // mu(E^x) r_adj(x,y) = mu(E^y) r(y,x), the rate-sum capacity identity
    // sum_z r(x,z) = cap(E^x, rest)/mu(E^x) (both clocks of r), the averaged
    // adjoint-potential identity, and the reversible capacity formula for
    // the mean jump rate. The entry-measure normalizer (weights sum to the
    // capacity) is enforced inside equilibrium_measure_dagger itself.
    let mut worst = 0.0f64;
    let mut check = |chain: &MarkovChain, mu: &ProbMeasure, wells: &metastab::trace::WellPartition| {
        let n = chain.n_states();
        let adj = chain.adjoint(mu).unwrap();
        let r_dag_01 = mean_jump_rate(&adj, mu, wells, 0, 1).unwrap();
        let r_10 = mean_jump_rate(chain, mu, wells, 1, 0).unwrap();
        worst = worst.max(rel_gap(
            mu.mass(wells.well(0)) * r_dag_01,
            mu.mass(wells.well(1)) * r_10,
        ));

        let k = wells.n_labels();
        let sum_r: f64 = (1..k).map(|z| mean_jump_rate(chain, mu, wells, 0, z).unwrap()).sum();
        let sum_r_dag: f64 = (1..k).map(|z| mean_jump_rate(&adj, mu, wells, 0, z).unwrap()).sum();
        let escape = capacity(chain, mu, wells.well(0), &wells.other_wells(0))
            .unwrap()
            .capacity
            / mu.mass(wells.well(0));
        worst = worst.max(rel_gap(sum_r, escape)).max(rel_gap(sum_r_dag, escape));

        let a = wells.well(0);
        let b = wells.well(1);
        let (nu, cap) = equilibrium_measure_dagger(chain, mu, a, b).unwrap();
        let h_dag = equilibrium_potential(&adj, a, b).unwrap();
        let outside: Vec<usize> =
            (0..n).filter(|s| !a.contains(s) && !b.contains(s)).collect();
        let lhs: f64 = outside.iter().map(|&s| mu.get(s) * h_dag[s]).sum();
        let rhs =
            cap * occupation_time(chain, &StartSpec::Dist(nu), b, &outside).unwrap();
        worst = worst.max(rel_gap(lhs, rhs));

        if chain.check_reversible(mu).0 {
            let direct = mean_jump_rate(chain, mu, wells, 0, 1).unwrap();
            let formula = mean_jump_rate_capacity(chain, mu, wells, 0, 1).unwrap();
            worst = worst.max(rel_gap(direct, formula));
        }
    };

    let mut rng = RngStream::new(1402, 0);
    for trial in 0..20u64 {
        let n = 10 + ((trial as usize) * 90) / 19;
        let chain = random_chain(&mut rng, n, n);
        let mu = chain.stationary_distribution().unwrap();
        let wells = random_wells(&mut rng, n, 3, 2);
        check(&chain, &mu, &wells);

        let (rchain, rpi) = random_reversible_chain(&mut rng, n, n);
        let rwells = random_wells(&mut rng, n, 3, 2);
        check(&rchain, &rpi, &rwells);
    }

    let inst = zr(30, false);
    check(&inst.chain, &inst.mu, &inst.wells.partition);

    let pass = worst <= 1e-8;
    verdict(
        2,
        "potential-theory identities",
        pass,
        format!("worst relative gap {worst:.2e} over 41 instances, {:.2?}", t0.elapsed()),
    );
}

#[test]
fn c03_trace_equivalence() {
    let t0 = Instant::now();
    let path = MarkovChain::from_rates(
        3,
        &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
    )
    .unwrap();
    let (tpath, kept) = trace_generator(&path, &[0, 2]).unwrap();
    assert_eq!(kept, vec![0, 2]);
    let exact_ok =
        (tpath.rate(0, 1) - 0.5).abs() < 1e-14 && (tpath.rate(1, 0) - 0.5).abs() < 1e-14;

    let n_samples = 100_000usize;
    let mut worst_z = 0.0f64;
    let mut worst_pi_gap = 0.0f64;
    for trial in 0..10u64 {
        let mut rng = RngStream::new(1403, trial);
        let n = 5 + ((trial as usize) * 45) / 9;
        let chain = random_chain(&mut rng, n, n);
        let mut a: Vec<usize> = {
            use metastab::testkit::random_permutation;
            random_permutation(&mut rng, n)
                .into_iter()
                .take((2 + n / 5).max(2))
                .collect()
        };
        a.sort_unstable();
        let (tchain, kept) = trace_generator(&chain, &a).unwrap();

        // Trace stationarity: restriction of the full stationary measure.
        let mu = chain.stationary_distribution().unwrap();
        let tpi = tchain.stationary_distribution().unwrap();
        let cond = mu.conditioned_on(&a).unwrap();
        for (local, &global) in kept.iter().enumerate() {
            worst_pi_gap = worst_pi_gap.max((tpi.get(local) - cond.get(global)).abs());
        }

        // Simulate holding at the first trace state until arrival elsewhere
        // in A, with the time outside A excised on the fly.
        let start = kept[0];
        let mut in_a = vec![false; n];
        for &s in &a {
            in_a[s] = true;
        }
        let streams = StreamSpec::new(1500 + trial, 0);
        let drawn: Vec<(f64, usize)> = (0..n_samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = streams.stream(i as u64);
                let mut cur = start;
                let mut held = 0.0;
                for _ in 0..10_000_000u64 {
                    let dt = rng.exp(chain.holding(cur));
                    if cur == start {
                        held += dt;
                    }
                    cur = next_state(&chain, cur, rng.uniform());
                    if cur != start && in_a[cur] {
                        return (held, cur);
                    }
                }
                unreachable!("irreducible chain reenters A");
            })
            .collect();

        let exit_rate = tchain.holding(0);
        let mean: f64 = drawn.iter().map(|&(t, _)| t).sum::<f64>() / n_samples as f64;
        // Holding times are exponential, so the sd equals the mean.
        let se = mean / (n_samples as f64).sqrt();
        worst_z = worst_z.max((mean - 1.0 / exit_rate).abs() / se);

        // Dominant landing rate: arrivals at the most likely target.
        let (top_local, top_rate) = tchain
            .row(0)
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("trace state has neighbors");
        let hits = drawn.iter().filter(|&&(_, c)| c == kept[top_local]).count();
        let p = top_rate / exit_rate;
        let p_hat = hits as f64 / n_samples as f64;
        let p_se = (p * (1.0 - p) / n_samples as f64).sqrt();
        worst_z = worst_z.max((p_hat - p).abs() / p_se);
    }

    let pass = exact_ok && worst_z <= 3.0 && worst_pi_gap <= 1e-10;
    verdict(
        3,
        "trace equivalence",
        pass,
        format!(
            "three-state trace rate exact: {exact_ok}, worst simulation z {worst_z:.2}, worst stationary gap {worst_pi_gap:.2e}, {:.2?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn c04_zero_range_exactness() {
    let t0 = Instant::now();
    let tiny = ZRModel::complete(2, 2).unwrap();
    let table = enumerate_configs(2, 2).unwrap();
    let (mu, _) = zr_measure(&tiny, &table).unwrap();
    let measure_gap = [0.25, 0.5, 0.25]
        .iter()
        .zip(mu.as_slice())
        .map(|(e, g)| (e - g).abs())
        .fold(0.0f64, f64::max);

    let mut worst_balance = 0.0f64;
    for kappa in [2usize, 3] {
        for n in 2..=20usize {
            let model = ZRModel::complete(kappa, n).unwrap();
            let table = enumerate_configs(n, kappa).unwrap();
            let (mu, _) = zr_measure(&model, &table).unwrap();
            let chain = zr_generator(&model, &table).unwrap();
            let (_, violation) = chain.check_reversible(&mu);
            let max_flux = chain
                .entries()
                .map(|(i, _, r)| mu.get(i) * r)
                .fold(0.0f64, f64::max);
            worst_balance = worst_balance.max(violation / max_flux);
        }
    }

    let pass = measure_gap <= 1e-12 && worst_balance <= 1e-12;
    verdict(
        4,
        "zero-range exactness",
        pass,
        format!(
            "two-particle measure gap {measure_gap:.2e}, worst relative detailed-balance violation {worst_balance:.2e}, {:.2?}",
            t0.elapsed()
        ),
    );
}

const N_GRID: [usize; 4] = [50, 100, 200, 400];

#[test]
fn c05_condensation_trend() {
    let t0 = Instant::now();
    let mut mu_delta = Vec::new();
    let mut mu_e_last = 0.0;
    for &n in &N_GRID {
        let inst = zr(n, false);
        let wp = &inst.wells.partition;
        mu_delta.push(inst.mu.mass(wp.delta()));
        mu_e_last = (0..wp.n_labels()).map(|x| inst.mu.mass(wp.well(x))).sum();
    }
    let decreasing = mu_delta.windows(2).all(|w| w[1] < w[0]);
    let pass = decreasing && mu_e_last > 0.9;
    verdict(
        5,
        "condensation trend",
        pass,
        format!(
            "mu_Delta over N {N_GRID:?} = {mu_delta:?} (strictly decreasing: {decreasing}), wells mass at N=400 {mu_e_last:.4} (needs > 0.9), {:.2?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn c06_capacity_limit_trend() {
    let t0 = Instant::now();
    let mut ratios = Vec::new();
    let mut witnesses = Vec::new();
    for &n in &N_GRID {
        let inst = zr(n, true);
        let wp = &inst.wells.partition;
        let cap = capacity(&inst.chain, &inst.mu, wp.well(0), wp.well(1))
            .unwrap()
            .capacity;
        let limit = 6.0 * inst.model.walk_capacity(&[0], &[1]).unwrap();
        ratios.push(cap / limit);
        let q = capacity_test_function_q(&inst.model, &inst.table, &inst.chain, &inst.mu, 0)
            .unwrap();
        witnesses.push(q.witness);
    }
    let closer = (ratios[3] - 1.0).abs() < (ratios[0] - 1.0).abs();
    let w_min = witnesses.iter().copied().fold(f64::INFINITY, f64::min);
    let w_max = witnesses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bounded = w_max <= 2.0 * w_min;
    let pass = closer && bounded;
    verdict(
        6,
        "capacity limit trend",
        pass,
        format!(
            "ratios over N {N_GRID:?} = {ratios:?} (N=400 closer to 1 than N=50: {closer}), witness range [{w_min:.4}, {w_max:.4}] (within 2x: {bounded}), {:.2?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn c07_resolvent_oscillation_trend() {
    let t0 = Instant::now();
    let mut osc = Vec::new();
    for &n in &N_GRID {
        let inst = zr(n, true);
        let (report, _, _) =
            check_condition_r(&inst.chain, &inst.mu, &inst.wells.partition, 1.0, &[1.0, 0.0])
                .unwrap();
        osc.push(report.diagnostics["osc_max"]);
    }
    let pass = osc.windows(2).all(|w| w[1] < w[0]);
    verdict(
        7,
        "resolvent oscillation trend",
        pass,
        format!("osc_max over N {N_GRID:?} = {osc:?}, {:.2?}", t0.elapsed()),
    );
}

#[test]
fn c08_reduced_generator_coherence() {
    let t0 = Instant::now();
    let discrepancy = |n: usize| -> f64 {
        let inst = zr(n, true);
        let lo =
            extract_reduced_generator(&inst.chain, &inst.mu, &inst.wells.partition, 0.5).unwrap();
        let hi =
            extract_reduced_generator(&inst.chain, &inst.mu, &inst.wells.partition, 2.0).unwrap();
        let mut worst = 0.0f64;
        for x in 0..2 {
            for y in 0..2 {
                if x != y {
                    worst = worst.max(rel_gap(lo.rate(x, y), hi.rate(x, y)));
                }
            }
        }
        worst
    };
    let d100 = discrepancy(100);
    let d200 = discrepancy(200);
    let d400 = discrepancy(400);
    let pass = d200 <= 0.15 && d400 < d100;
    verdict(
        8,
        "reduced-generator coherence",
        pass,
        format!(
            "lambda 0.5 vs 2 off-diagonal discrepancy: N=100 {d100:.4}, N=200 {d200:.4} (needs <= 0.15), N=400 {d400:.4} (needs < N=100), {:.2?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn c09_condition_d_trend() {
    let t0 = Instant::now();
    let mut maxima: Vec<Vec<f64>> = vec![Vec::new(); 2];
    for &n in &N_GRID {
        let inst = zr(n, true);
        let report = check_condition_d(&inst.chain, &inst.wells.partition, 1.0).unwrap();
        for (x, series) in maxima.iter_mut().enumerate() {
            series.push(report.diagnostics[&format!("u_max_well{x}")]);
        }
    }
    let pass = maxima.iter().all(|series| series.windows(2).all(|w| w[1] < w[0]));
    verdict(
        9,
        "condition D trend",
        pass,
        format!(
            "per-well dwell maxima over N {N_GRID:?}: well 0 {:?}, well 1 {:?} (both must strictly decrease), {:.2?}",
            maxima[0],
            maxima[1],
            t0.elapsed()
        ),
    );
}

#[test]
fn c10_superharmonic_certificate() {
    let t0 = Instant::now();
    let model = ZRModel::complete(2, 100).unwrap();
    let table = enumerate_configs(100, 2).unwrap();
    let (_, report) = search_superharmonic_certificate(&model, &table, 0, 8).unwrap();
    let margins_negative = report.margin_max_full < 0.0 && report.margin_max_reflected < 0.0;
    let ratio = report.bound_c2 / report.bound_c1;
    let interval_ok = report.bound_c1 > 0.0 && ratio <= 50.0;
    let pass = margins_negative && interval_ok;
    verdict(
        10,
        "superharmonic certificate",
        pass,
        format!(
            "scaled drift margins: full {:.4}, reflected {:.4} (both must be < 0), G/(N - eta) in [{:.4}, {:.4}] ratio {ratio:.3} (needs positive, <= 50), {:.2?}",
            report.margin_max_full,
            report.margin_max_reflected,
            report.bound_c1,
            report.bound_c2,
            t0.elapsed()
        ),
    );
}

const N_GRID_SIM: [usize; 3] = [50, 100, 200];

#[test]
fn c11_mixing_and_gap() {
    let t0 = Instant::now();
    let mut products = Vec::new();
    let mut tvs = Vec::new();
    for &n in &N_GRID_SIM {
        let inst = zr(n, true);
        let s_n = inst.wells.scales.s;
        let (local, kept) = reflected_chain(&inst.chain, &inst.wells.v[0]).unwrap();
        let pi = ProbMeasure::from_weights(kept.iter().map(|&s| inst.mu.get(s)).collect())
            .unwrap();
        products.push(spectral_gap(&local, &pi).unwrap() * s_n);
        tvs.push(tv_curve(&local, &pi, &[s_n], &TvStart::Worst).unwrap()[0].1);
    }
    let p_min = products.iter().copied().fold(f64::INFINITY, f64::min);
    let p_max = products.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gap_ok = p_min > 0.0 && p_min / p_max >= 0.2;
    let tv_decreasing = tvs.windows(2).all(|w| w[1] < w[0]);
    let pass = gap_ok && tv_decreasing;
    verdict(
        11,
        "mixing and gap",
        pass,
        format!(
            "gap times s_N over N {N_GRID_SIM:?} = {products:?} (min/max {:.3}, needs >= 0.2), worst TV at s_N = {tvs:?} (must strictly decrease), {:.2?}",
            p_min / p_max,
            t0.elapsed()
        ),
    );
}

#[test]
fn c12_condition_v_tails() {
    let t0 = Instant::now();
    let samples = 10_000usize;
    let mut tails = Vec::new();
    let mut tail_ses = Vec::new();
    let mut mean_zs = Vec::new();
    for (i, &n) in N_GRID_SIM.iter().enumerate() {
        let inst = zr(n, true);
        let anchor = inst.wells.anchors[0];
        let all: Vec<usize> = (0..inst.table.count()).collect();
        let exact = occupation_profile(&inst.chain, &[anchor], &all).unwrap();
        let well = inst.wells.partition.well(0);
        let &worst = well
            .iter()
            .max_by(|&&a, &&b| exact[a].total_cmp(&exact[b]))
            .unwrap();
        let u_n = inst.wells.scales.u;
        let report = hitting_tail(
            &inst.chain,
            worst,
            &[anchor],
            &[u_n],
            samples,
            StreamSpec::new(1412, (i as u64) << 32),
        )
        .unwrap();
        assert_eq!(report.censored, 0, "no censored hitting paths expected");
        tails.push(report.tails[0].mean);
        tail_ses.push(report.tails[0].std_error);
        mean_zs.push(
            (report.time_stats.mean - exact[worst]).abs() / report.time_stats.std_error,
        );
    }
    let mut tails_decrease = true;
    for i in 1..tails.len() {
        let band = 3.0 * (tail_ses[i].powi(2) + tail_ses[i - 1].powi(2)).sqrt();
        if tails[i] >= tails[i - 1] + band {
            tails_decrease = false;
        }
    }
    let worst_z = mean_zs.iter().copied().fold(0.0f64, f64::max);
    let pass = tails_decrease && worst_z <= 3.0;
    verdict(
        12,
        "condition V tails",
        pass,
        format!(
            "tails P[tau >= u_N] over N {N_GRID_SIM:?} = {tails:?} (decreasing within 3-sigma bands: {tails_decrease}), worst mean-vs-exact z {worst_z:.2}, {:.2?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn c13_h1_negative_control() {
    let t0 = Instant::now();
    let mut zr_ratios = Vec::new();
    for &n in &N_GRID {
        let inst = zr(n, false);
        let report = check_h0_h1(
            &inst.chain,
            &inst.mu,
            &inst.wells.partition,
            &inst.wells.anchors,
        )
        .unwrap();
        zr_ratios.push(report.diagnostics["h1_max"]);
    }
    let zr_floor = zr_ratios.iter().copied().fold(f64::INFINITY, f64::min);

    let mut toy_ratios = Vec::new();
    for n in [20usize, 40, 60] {
        let toy = double_well_birth_death(n, 5, 4.0).unwrap();
        let report = check_h0_h1(&toy.chain, &toy.mu, &toy.wells, &toy.anchors).unwrap();
        toy_ratios.push(report.diagnostics["h1_max"]);
    }
    let toy_decreasing = toy_ratios.windows(2).all(|w| w[1] < w[0]);

    let pass = zr_floor > 0.01 && toy_decreasing;
    verdict(
        13,
        "H1 negative control",
        pass,
        format!(
            "zero-range ratio over N {N_GRID:?} = {zr_ratios:?} (floor {zr_floor:.4}, needs > 0.01), double-well ratio over sizes [20, 40, 60] = {toy_ratios:?} (strictly decreasing: {toy_decreasing}), {:.2?}",
            t0.elapsed()
        ),
    );
}

#[test]
fn c14_determinism() {
    let t0 = Instant::now();
    let base = std::env::temp_dir().join(format!("metastab-acceptance-{}", std::process::id()));
    let mut checked = 0usize;
    for name in metastab::config::EXPERIMENT_NAMES {
        let text = format!(
            "experiment {name}\nkappa 2\nN 30\nN 40\nlambda 1\nseed 11\nsamples 300\n"
        );
        let config = parse_config(&text, Path::new(".")).unwrap();
        let dir1 = base.join(format!("{name}-w1"));
        let dir2 = base.join(format!("{name}-w3"));
        let out1 = run_experiment(&config, &dir1, 1).unwrap();
        let out2 = run_experiment(&config, &dir2, 3).unwrap();
        assert_eq!(out1.n_failed, 0, "{name} cells failed");
        assert_eq!(out2.n_failed, 0, "{name} cells failed");
        let bytes1 = std::fs::read(&out1.csv_path).unwrap();
        let bytes2 = std::fs::read(&out2.csv_path).unwrap();
        assert!(
            bytes1 == bytes2,
            "{name} CSV differs between 1 and 3 workers"
        );
        assert!(!bytes1.is_empty());
        checked += 1;
    }
    std::fs::remove_dir_all(&base).ok();
    verdict(
        14,
        "determinism",
        checked == 11,
        format!(
            "{checked} experiments byte-identical between 1-worker and 3-worker runs, {:.2?}",
            t0.elapsed()
        ),
    );
}
