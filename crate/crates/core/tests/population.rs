use tivasim::pkpd::{PdParams, PkParams};
use tivasim::population::*;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn zero_spread_gives_nominal_patient() {
    let spec = UncertaintySpec::default().deterministic();
    let p = sample_patient(&spec, 123);
    assert_eq!(p.pk_p, PkParams::PROPOFOL_NOMINAL);
    assert_eq!(p.pk_r, PkParams::REMIFENTANIL_NOMINAL);
    assert_eq!(p.pd, PdParams::NOMINAL);
}

#[test]
fn e0_is_fixed() {
    for p in sample_cohort(500, &UncertaintySpec::default(), 2) {
        assert_eq!(p.pd.e0, 97.4);
    }
}

#[test]
fn c50p_median_over_ten_thousand_draws() {
    let cohort = sample_cohort(10_000, &UncertaintySpec::default(), 77);
    let m = median(cohort.iter().map(|p| p.pd.theta.c50p).collect());
    assert!((m / 4.47 - 1.0).abs() < 0.02, "median {m}");
}

#[test]
fn every_parameter_median_near_nominal() {
    let spec = UncertaintySpec::default();
    let cohort = sample_cohort(10_000, &spec, 78);
    let pk_fields = |pk: &PkParams| [pk.v1, pk.v2, pk.v3, pk.cl1, pk.cl2, pk.cl3, pk.ke];
    let nominal_p = pk_fields(&spec.propofol.nominal());
    let nominal_r = pk_fields(&spec.remifentanil.nominal());
    for i in 0..7 {
        let mp = median(cohort.iter().map(|p| pk_fields(&p.pk_p)[i]).collect());
        let mr = median(cohort.iter().map(|p| pk_fields(&p.pk_r)[i]).collect());
        // V3 of propofol has a log-std of 2.66; its median is far noisier.
        let tol = if i == 2 { 0.1 } else { 0.03 };
        assert!((mp / nominal_p[i] - 1.0).abs() < tol, "propofol field {i}: {mp}");
        assert!((mr / nominal_r[i] - 1.0).abs() < 0.03, "remifentanil field {i}: {mr}");
    }
    for (which, nominal) in [(0, 19.3), (1, 1.43)] {
        let m = median(
            cohort
                .iter()
                .map(|p| if which == 0 { p.pd.theta.c50r } else { p.pd.theta.gamma })
                .collect(),
        );
        assert!((m / nominal - 1.0).abs() < 0.03, "{m} vs {nominal}");
    }
}

#[test]
fn parameters_strictly_positive() {
    for p in sample_cohort(100_000, &UncertaintySpec::default(), 9) {
        let pk = [p.pk_p, p.pk_r];
        for k in pk {
            for v in [k.v1, k.v2, k.v3, k.cl1, k.cl2, k.cl3, k.ke] {
                assert!(v > 0.0 && v.is_finite());
            }
        }
        let th = p.pd.theta;
        assert!(th.c50p > 0.0 && th.c50r > 0.0 && th.gamma > 0.0);
    }
}

#[test]
fn demographics_within_ranges() {
    let r = DemographicRanges::default();
    for p in sample_cohort(2000, &UncertaintySpec::default(), 3) {
        let d = p.demographics;
        assert!((r.age.0..=r.age.1).contains(&d.age));
        assert!((r.height.0..=r.height.1).contains(&d.height));
        assert!((r.weight.0..=r.weight.1).contains(&d.weight));
    }
    assert_eq!(r.age, (18.0, 70.0));
    assert_eq!(r.height, (150.0, 190.0));
    assert_eq!(r.weight, (50.0, 100.0));
}

#[test]
fn cohorts_are_reproducible() {
    let spec = UncertaintySpec::default();
    assert_eq!(sample_cohort(50, &spec, 5), sample_cohort(50, &spec, 5));
    assert_ne!(sample_cohort(5, &spec, 5), sample_cohort(5, &spec, 6));
    let single = sample_cohort(1, &spec, 5);
    assert_eq!(single.len(), 1);
    assert_eq!(single[0], sample_cohort(10, &spec, 5)[0]);
    assert_eq!(sample_cohort(500, &spec, 1).len(), 500);
}

#[test]
fn patient_depends_only_on_its_seed() {
    let spec = UncertaintySpec::default();
    let cohort = sample_cohort(20, &spec, 42);
    for p in &cohort {
        assert_eq!(p.seed, derive_seed(42, p.index as u64));
        let again = sample_patient(&spec, p.seed);
        assert_eq!(again.pk_p, p.pk_p);
        assert_eq!(again.pd, p.pd);
    }
}

#[test]
fn clamped_spec_caps_outliers() {
    let spec = UncertaintySpec::clamped();
    let cap = spec.propofol.v3.at(3.0);
    let floor = spec.propofol.v3.at(-3.0);
    for p in sample_cohort(20_000, &spec, 8) {
        assert!(p.pk_p.v3 <= cap * (1.0 + 1e-12) && p.pk_p.v3 >= floor * (1.0 - 1e-12));
    }
}

#[test]
fn invalid_spec_rejected() {
    let mut spec = UncertaintySpec::default();
    spec.c50p.log_std = -0.1;
    assert!(spec.validate().is_err());
    let mut spec = UncertaintySpec::default();
    spec.e0.log_std = 0.1;
    assert!(spec.validate().is_err());
    assert!(UncertaintySpec::default().validate().is_ok());
}

#[test]
fn quantile_of_median_is_nominal() {
    let d = LogNormal {
        nominal: 4.47,
        log_std: 0.18,
    };
    assert!((d.quantile(0.5) - 4.47).abs() < 1e-9);
    assert!((standard_normal_quantile(0.975) - 1.959964).abs() < 1e-6);
    assert!(d.quantile(0.1) < d.quantile(0.3));
}
