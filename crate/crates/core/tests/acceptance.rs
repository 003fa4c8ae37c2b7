//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each, and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tivasim::bank::{criterion, ModelGrid, SelectorConfig};
use tivasim::pkpd::*;
use tivasim::population::{sample_cohort, SampledPatient, UncertaintySpec};
use tivasim::sim::output::write_metrics_csv;
use tivasim::sim::{run_closed_loop, run_monte_carlo, MonteCarloResult};
use tivasim::{ControllerKind, SimConfig};

const COHORT: usize = 100;
const COHORT_SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn pd_identities() -> Outcome {
    let pd = PdParams::NOMINAL;
    let baseline = bis_output(&StateVec::zeros(), &pd);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let gamma = rng.random_range(0.3..6.0);
        let pd = PdParams::with_theta(ThetaVector::new(4.47, 19.3, gamma).unwrap());
        for split in [0.0, 0.25, 0.5, 1.0] {
            // U = x_p/C50p + x_r/C50r = 1 along the isobole.
            let mut x = StateVec::zeros();
            x[PROPOFOL_EFFECT_SITE] = split * 4.47;
            x[REMIFENTANIL_EFFECT_SITE] = (1.0 - split) * 19.3;
            worst = worst.max((bis_output(&x, &pd) - 48.7).abs());
        }
    }
    outcome(
        baseline == 97.4 && worst <= 1e-9,
        format!("BIS(0) = {baseline}, max |BIS(U=1) - 48.7| = {worst:.1e}"),
    )
}

fn jacobian_check() -> Outcome {
    let started = Instant::now();
    let cohort = sample_cohort(100, &UncertaintySpec::default(), 202);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for p in &cohort {
        let x = StateVec::from_fn(|i, _| match i {
            PROPOFOL_EFFECT_SITE => rng.random_range(0.1..8.0),
            REMIFENTANIL_EFFECT_SITE => rng.random_range(0.1..30.0),
            _ => rng.random_range(0.0..10.0),
        });
        let analytic = bis_jacobian(&x, &p.pd);
        let mut fd = OutputRow::zeros();
        for j in 0..N_STATES {
            let h = 1e-6 * x[j].abs().max(1.0);
            let (mut up, mut dn) = (x, x);
            up[j] += h;
            dn[j] -= h;
            fd[j] = (bis_output(&up, &p.pd) - bis_output(&dn, &p.pd)) / (2.0 * h);
        }
        let rel = (analytic - fd).amax() / fd.amax().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs < 1.0,
        format!("max relative error {worst:.1e} over 100 states in {secs:.3} s"),
    )
}

fn positivity_and_stability() -> Outcome {
    let cohort = sample_cohort(100, &UncertaintySpec::default(), 303);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut negatives = 0usize;
    let mut increases = 0usize;
    let mut sequences = 0usize;
    for p in &cohort {
        let mut template = p.model(2.0).unwrap();
        template.state = StateVec::zeros();
        for _ in 0..100 {
            let mut m = template.clone();
            let len = rng.random_range(1..60);
            for _ in 0..len {
                let u = Infusion::new(
                    rng.random_range(0.0..=PROPOFOL_MAX_RATE),
                    rng.random_range(0.0..=REMIFENTANIL_MAX_RATE),
                );
                m.step(u, 0.0).unwrap();
                negatives += m.state.iter().filter(|&&v| v < 0.0).count();
            }
            let mut norm = m.mass_norm();
            for _ in 0..100 {
                m.step(Infusion::ZERO, 0.0).unwrap();
                negatives += m.state.iter().filter(|&&v| v < 0.0).count();
                let next = m.mass_norm();
                if next > norm {
                    increases += 1;
                }
                norm = next;
            }
            sequences += 1;
        }
    }
    outcome(
        negatives == 0 && increases == 0,
        format!("{sequences} sequences: {negatives} negative components, {increases} norm increases"),
    )
}

fn criterion_oracle() -> Outcome {
    let cfg = SelectorConfig {
        n_c: 30,
        alpha: 0.0,
        beta: 1.0,
        lambda: 0.05,
        ..SelectorConfig::default()
    };
    let j = criterion(&[1.0; 31], &cfg);
    outcome((j - 16.15).abs() <= 0.01, format!("J = {j:.4}"))
}

fn matched_identification() -> Outcome {
    let cfg = SimConfig::default();
    let grid = ModelGrid::build(cfg.population.nominal_pd().theta, &cfg.grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut locked = 0;
    for _ in 0..50 {
        let idx = rng.random_range(0..grid.len());
        let mut patient = SampledPatient::nominal();
        patient.pd = PdParams::with_theta(grid.candidates[idx]);
        let trace = run_closed_loop(&patient, &cfg, ControllerKind::Mmpc, 1).unwrap();
        let from = trace.rows.iter().position(|r| r.t_s >= 120.0).unwrap();
        if trace.rows[from..].iter().all(|r| r.model_index == Some(idx)) {
            locked += 1;
        }
    }
    outcome(
        locked * 10 >= 50 * 9,
        format!("{locked}/50 locked on the true candidate by 2 min and stayed"),
    )
}

fn constraints(mc: &MonteCarloResult) -> Outcome {
    let violations: usize = mc.records.iter().map(|r| r.bound_violations).sum();
    let failed = mc.records.iter().filter(|r| r.error.is_some()).count();
    outcome(
        violations == 0 && failed == 0,
        format!("{} runs, {violations} out-of-bounds samples, {failed} failed runs", mc.records.len()),
    )
}

fn solver_budget(mc: &MonteCarloResult) -> Outcome {
    let mut times: Vec<f64> = mc.records.iter().flat_map(|r| r.solve_times_ms.iter().copied()).collect();
    times.sort_by(|a, b| a.total_cmp(b));
    let max = times.last().copied().unwrap_or(0.0);
    let median = times.get(times.len() / 2).copied().unwrap_or(0.0);
    outcome(
        !times.is_empty() && max <= 500.0,
        format!("{} solves, max {max:.2} ms, median {median:.2} ms", times.len()),
    )
}

fn table_reproduction(mc: &MonteCarloResult) -> Outcome {
    let s = |k| mc.summary(k).expect("all controllers ran");
    let (m, n, p) = (s(ControllerKind::Mmpc), s(ControllerKind::Nmpc), s(ControllerKind::Pid));
    let a = m.us.mean < n.us.mean && n.us.mean < p.us.mean && m.us.extreme < n.us.extreme && n.us.extreme < p.us.extreme;
    let b = (1.2..=3.5).contains(&m.tt.mean) && m.tt.defined == m.runs;
    let c = m.bis_nadir.extreme >= n.bis_nadir.extreme;
    let d = [m, n, p].iter().all(|x| x.st20.mean <= 3.0 && x.st20.defined == x.runs);
    let flag = |ok: bool| if ok { "ok" } else { "FAIL" };
    outcome(
        a && b && c && d,
        format!(
            "(a) {} US mean/max MMPC {:.3}/{:.2} NMPC {:.3}/{:.2} PID {:.3}/{:.2}; \
             (b) {} MMPC TT {:.2} min; (c) {} nadir MMPC {:.1} NMPC {:.1}; \
             (d) {} ST20 {:.2}/{:.2}/{:.2} min",
            flag(a),
            m.us.mean,
            m.us.extreme,
            n.us.mean,
            n.us.extreme,
            p.us.mean,
            p.us.extreme,
            flag(b),
            m.tt.mean,
            flag(c),
            m.bis_nadir.extreme,
            n.bis_nadir.extreme,
            flag(d),
            m.st20.mean,
            n.st20.mean,
            p.st20.mean
        ),
    )
}

fn metrics_csv(mc: &MonteCarloResult) -> Vec<u8> {
    let mut buf = Vec::new();
    write_metrics_csv(&mc.records, &mut buf).unwrap();
    buf
}

fn determinism(first: &MonteCarloResult, cfg: &SimConfig, threads: usize) -> Outcome {
    let again = run_monte_carlo(COHORT, &ControllerKind::ALL, cfg, COHORT_SEED, 1, false).unwrap();
    let (a, b) = (metrics_csv(first), metrics_csv(&again));
    outcome(
        a == b,
        format!("{threads} vs 1 worker threads: {} vs {} bytes, identical = {}", a.len(), b.len(), a == b),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "PD identities", pd_identities()),
        (2, "Jacobian check", jacobian_check()),
        (3, "Positivity and stability", positivity_and_stability()),
        (4, "Criterion oracle", criterion_oracle()),
        (5, "Matched-model identification", matched_identification()),
    ];

    let cfg = SimConfig::default();
    let threads = 4;
    let started = Instant::now();
    let mc = run_monte_carlo(COHORT, &ControllerKind::ALL, &cfg, COHORT_SEED, threads, false)
        .expect("Monte-Carlo run");
    let wall = started.elapsed().as_secs_f64();
    results.push((6, "Constraint satisfaction", constraints(&mc)));
    results.push((7, "Solver budget", solver_budget(&mc)));
    results.push((8, "Cohort reproduction", table_reproduction(&mc)));
    results.push((9, "Determinism", determinism(&mc, &cfg, threads)));

    println!();
    println!("acceptance: {COHORT} patients x 3 controllers, seed {COHORT_SEED}, {wall:.1} s");
    let mut failed = 0;
    for (id, name, o) in &results {
        println!("{} {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{}/{} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
