use proptest::prelude::*;

use tivasim::controllers::ZeroController;
use tivasim::pkpd::NOMINAL_E0;
use tivasim::population::{sample_cohort, SampledPatient};
use tivasim::sim::output::{write_metrics_csv, write_trace_csv, METRICS_COLUMNS, TRACE_COLUMNS};
use tivasim::sim::*;
use tivasim::{ControllerKind, SimConfig};

fn short_config(duration_s: f64) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.scenario.duration_s = duration_s;
    cfg
}

#[test]
fn zero_controller_leaves_patient_awake() {
    let cfg = SimConfig::default();
    let patient = sample_cohort(1, &cfg.population, 3).remove(0);
    let trace = run_with_controller(&patient, &cfg, &mut ZeroController { period_s: 2.0 }, 3).unwrap();
    assert_eq!(trace.rows.len(), 600);
    assert!(trace.bis().all(|b| b == NOMINAL_E0));
    assert!(trace.rows.iter().all(|r| r.state.iter().all(|&x| x == 0.0)));
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = short_config(300.0);
    cfg.scenario.noise_std = 2.0;
    let patient = sample_cohort(2, &cfg.population, 8).remove(1);
    for kind in ControllerKind::ALL {
        let a = run_closed_loop(&patient, &cfg, kind, 21).unwrap();
        let b = run_closed_loop(&patient, &cfg, kind, 21).unwrap();
        let strip = |t: &RunTrace| -> Vec<(f64, f64, f64)> { t.rows.iter().map(|r| (r.bis_measured, r.u_p, r.u_r)).collect() };
        assert_eq!(strip(&a), strip(&b), "{kind}");
    }
}

#[test]
fn controllers_see_the_same_noise() {
    let mut cfg = short_config(120.0);
    cfg.scenario.noise_std = 3.0;
    let patient = SampledPatient::nominal();
    let noise = |kind| -> Vec<f64> {
        let t = run_closed_loop(&patient, &cfg, kind, 4).unwrap();
        t.rows.iter().map(|r| r.bis_measured - r.bis_true).collect()
    };
    let pid = noise(ControllerKind::Pid);
    for kind in [ControllerKind::Nmpc, ControllerKind::Mmpc] {
        let other = noise(kind);
        assert!(pid.iter().zip(&other).all(|(a, b)| (a - b).abs() < 1e-9));
    }
    assert!(pid.iter().any(|&w| w != 0.0));
}

#[test]
fn nominal_patient_ends_in_band() {
    let cfg = SimConfig::default();
    let patient = SampledPatient::nominal();
    for kind in ControllerKind::ALL {
        let trace = run_closed_loop(&patient, &cfg, kind, 1).unwrap();
        let last = trace.rows.last().unwrap().bis_true;
        assert!((45.0..=55.0).contains(&last), "{kind} ends at {last}");
        assert_eq!(trace.failures, 0);
        assert_eq!(trace.bound_violations(), 0);
    }
}

#[test]
fn finer_base_rate_changes_little() {
    let coarse = SimConfig::default();
    let mut fine = SimConfig::default();
    fine.scenario.base_period_s = 0.5;
    let patient = sample_cohort(1, &coarse.population, 12).remove(0);
    for kind in ControllerKind::ALL {
        let a = run_closed_loop(&patient, &coarse, kind, 1).unwrap();
        let b = run_closed_loop(&patient, &fine, kind, 1).unwrap();
        assert_eq!(b.rows.len(), 2 * a.rows.len());
        for (i, r) in a.rows.iter().enumerate() {
            let s = &b.rows[2 * i];
            assert_eq!(r.t_s, s.t_s);
            assert!((r.bis_true - s.bis_true).abs() < 0.5, "{kind} at {} s", r.t_s);
        }
    }
}

#[test]
fn mismatched_periods_rejected() {
    let mut cfg = short_config(60.0);
    cfg.scenario.base_period_s = 0.7;
    let patient = SampledPatient::nominal();
    assert!(run_closed_loop(&patient, &cfg, ControllerKind::Nmpc, 1).is_err());
}

#[test]
fn metrics_examples() {
    let band = TargetBand::default();
    let times: Vec<f64> = (0..6).map(|k| 60.0 * k as f64).collect();
    let m = compute_metrics_from_series(&times, &[97.0, 70.0, 52.0, 38.0, 47.0, 50.0], band);
    assert_eq!(m.tt, Some(2.0));
    assert_eq!(m.bis_nadir, 38.0);
    assert_eq!(m.us, 7.0);
    assert_eq!(m.st10, Some(4.0));
    assert_eq!(m.st20, Some(4.0));

    let never = compute_metrics_from_series(&times, &[97.0; 6], band);
    assert_eq!(never.tt, None);
    assert_eq!(never.st20, None);
    assert_eq!(never.us, 0.0);
}

#[test]
fn summary_counts_and_extremes() {
    let band = TargetBand::default();
    let t = [0.0, 60.0, 120.0];
    let records = [
        compute_metrics_from_series(&t, &[90.0, 50.0, 50.0], band),
        compute_metrics_from_series(&t, &[90.0, 30.0, 48.0], band),
        compute_metrics_from_series(&t, &[90.0, 80.0, 70.0], band),
    ];
    let s = summarize(&records, 1, 2.0);
    assert_eq!(s.runs, 3);
    assert_eq!(s.failed, 1);
    assert_eq!(s.tt.defined, 2);
    assert_eq!(s.tt.mean, 1.0);
    assert_eq!(s.tt.extreme, 2.0);
    assert_eq!(s.bis_nadir.extreme, 30.0);
    assert_eq!(s.us.extreme, 15.0);
    assert!((s.us.mean - 5.0).abs() < 1e-12);
    assert!((s.us.std - 50.0f64.sqrt()).abs() < 1e-12);
}

#[test]
fn monte_carlo_is_parallelism_invariant() {
    let cfg = short_config(240.0);
    let kinds = ControllerKind::ALL;
    let csv = |threads| {
        let r = run_monte_carlo(6, &kinds, &cfg, 17, threads, false).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&r.records, &mut buf).unwrap();
        (r, buf)
    };
    let (r1, a) = csv(1);
    let (r4, b) = csv(4);
    assert_eq!(a, b);
    assert_eq!(r1.summaries, r4.summaries);
    assert_eq!(r1.records.len(), 18);
    assert_eq!(r1.records_for(ControllerKind::Pid).count(), 6);
    assert!(r1.records.iter().all(|r| r.bound_violations == 0 && r.error.is_none()));
    assert!(run_monte_carlo(0, &kinds, &cfg, 17, 1, false).is_err());
}

#[test]
fn csv_columns() {
    let cfg = short_config(20.0);
    let r = run_monte_carlo(2, &[ControllerKind::Mmpc], &cfg, 3, 1, true).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&r.records, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), METRICS_COLUMNS.join(","));
    assert_eq!(lines.count(), 2);

    let traces = r.traces.unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&traces[0], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), TRACE_COLUMNS.join(","));
    assert_eq!(text.lines().count(), 21);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metric_invariants(bis in prop::collection::vec(0.0..100.0f64, 1..200)) {
        let times: Vec<f64> = (0..bis.len()).map(|k| k as f64).collect();
        let m = compute_metrics_from_series(&times, &bis, TargetBand::default());
        prop_assert!(m.us >= 0.0);
        prop_assert_eq!(m.us > 0.0, m.bis_nadir < 45.0);
        if let Some(st10) = m.st10 {
            prop_assert!(m.st20.unwrap() <= st10);
            prop_assert!(m.tt.unwrap() <= st10);
        }
        if let Some(tt) = m.tt {
            prop_assert!(m.bis_nadir <= 55.0);
            prop_assert!(tt >= 0.0);
        }
    }
}
