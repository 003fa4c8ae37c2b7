//! Virtual patient generation.
//!
//! Every parameter is drawn as `nominal · exp(σ·z)` with `z ~ N(0, 1)`.
//! Demographics are sampled uniformly and carried as metadata only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::pkpd::{PatientModel, PdParams, PkParams, ThetaVector, NOMINAL_E0};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: f64,
    pub height: f64,
    pub weight: f64,
    pub sex: Sex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemographicRanges {
    pub age: (f64, f64),
    pub height: (f64, f64),
    pub weight: (f64, f64),
}

impl Default for DemographicRanges {
    fn default() -> Self {
        DemographicRanges {
            age: (18.0, 70.0),
            height: (150.0, 190.0),
            weight: (50.0, 100.0),
        }
    }
}

/// Nominal value and standard deviation of its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormal {
    pub nominal: f64,
    pub log_std: f64,
}

const fn ln(nominal: f64, log_std: f64) -> LogNormal {
    LogNormal { nominal, log_std }
}

impl LogNormal {
    /// Value at the given standard-normal deviate.
    pub fn at(&self, z: f64) -> f64 {
        self.nominal * (self.log_std * z).exp()
    }

    /// Value at a probability level in (0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        self.at(standard_normal_quantile(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkUncertainty {
    pub v1: LogNormal,
    pub v2: LogNormal,
    pub v3: LogNormal,
    pub cl1: LogNormal,
    pub cl2: LogNormal,
    pub cl3: LogNormal,
    pub ke: LogNormal,
}

impl PkUncertainty {
    pub const PROPOFOL: PkUncertainty = PkUncertainty {
        v1: ln(4.27, 0.17),
        v2: ln(25.94, 0.25),
        v3: ln(238.0, 2.66),
        cl1: ln(1.64, 0.16),
        cl2: ln(1.72, 0.02),
        cl3: ln(0.84, 0.10),
        ke: ln(0.456, 0.19),
    };

    pub const REMIFENTANIL: PkUncertainty = PkUncertainty {
        v1: ln(5.22, 0.26),
        v2: ln(10.26, 0.28),
        v3: ln(5.42, 0.60),
        cl1: ln(2.69, 0.14),
        cl2: ln(2.20, 0.35),
        cl3: ln(0.08, 0.39),
        ke: ln(0.63, 0.62),
    };

    fn entries(&self) -> [(&'static str, LogNormal); 7] {
        [
            ("v1", self.v1),
            ("v2", self.v2),
            ("v3", self.v3),
            ("cl1", self.cl1),
            ("cl2", self.cl2),
            ("cl3", self.cl3),
            ("ke", self.ke),
        ]
    }

    pub fn nominal(&self) -> PkParams {
        self.sample_with(|d| d.nominal)
    }

    fn sample_with(&self, mut draw: impl FnMut(&LogNormal) -> f64) -> PkParams {
        PkParams {
            v1: draw(&self.v1),
            v2: draw(&self.v2),
            v3: draw(&self.v3),
            cl1: draw(&self.cl1),
            cl2: draw(&self.cl2),
            cl3: draw(&self.cl3),
            ke: draw(&self.ke),
        }
    }
}

/// Population distribution of the PK and PD parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UncertaintySpec {
    pub propofol: PkUncertainty,
    pub remifentanil: PkUncertainty,
    pub c50p: LogNormal,
    pub c50r: LogNormal,
    pub gamma: LogNormal,
    pub e0: LogNormal,
    /// When set, standard-normal deviates are clipped to `±clamp_sigmas`.
    pub clamp_sigmas: Option<f64>,
    pub demographics: DemographicRanges,
}

impl Default for UncertaintySpec {
    fn default() -> Self {
        UncertaintySpec {
            propofol: PkUncertainty::PROPOFOL,
            remifentanil: PkUncertainty::REMIFENTANIL,
            c50p: ln(4.47, 0.18),
            c50r: ln(19.3, 0.76),
            gamma: ln(1.43, 0.30),
            e0: ln(NOMINAL_E0, 0.0),
            clamp_sigmas: None,
            demographics: DemographicRanges::default(),
        }
    }
}

impl UncertaintySpec {
    /// Default spec with every parameter capped at `nominal·exp(±3σ)`.
    pub fn clamped() -> Self {
        UncertaintySpec {
            clamp_sigmas: Some(3.0),
            ..Self::default()
        }
    }

    /// Degenerate spec: every draw returns the nominal value.
    pub fn deterministic(&self) -> Self {
        let mut spec = self.clone();
        for pk in [&mut spec.propofol, &mut spec.remifentanil] {
            for d in [
                &mut pk.v1,
                &mut pk.v2,
                &mut pk.v3,
                &mut pk.cl1,
                &mut pk.cl2,
                &mut pk.cl3,
                &mut pk.ke,
            ] {
                d.log_std = 0.0;
            }
        }
        for d in [&mut spec.c50p, &mut spec.c50r, &mut spec.gamma, &mut spec.e0] {
            d.log_std = 0.0;
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let mut all: Vec<(&'static str, LogNormal)> = Vec::new();
        all.extend(self.propofol.entries());
        all.extend(self.remifentanil.entries());
        all.extend([
            ("c50p", self.c50p),
            ("c50r", self.c50r),
            ("gamma", self.gamma),
            ("e0", self.e0),
        ]);
        for (name, d) in all {
            if !(d.nominal > 0.0 && d.nominal.is_finite()) {
                return Err(SimError::ParameterDomain {
                    name,
                    value: d.nominal,
                });
            }
            if !(d.log_std >= 0.0 && d.log_std.is_finite()) {
                return Err(SimError::ParameterDomain {
                    name,
                    value: d.log_std,
                });
            }
        }
        if self.e0.log_std != 0.0 {
            return Err(SimError::Config("e0 must have zero log-std".into()));
        }
        if self.e0.nominal > 100.0 {
            return Err(SimError::ParameterDomain {
                name: "e0",
                value: self.e0.nominal,
            });
        }
        if let Some(k) = self.clamp_sigmas {
            if !(k > 0.0) {
                return Err(SimError::ParameterDomain {
                    name: "clamp_sigmas",
                    value: k,
                });
            }
        }
        for (name, (lo, hi)) in [
            ("age", self.demographics.age),
            ("height", self.demographics.height),
            ("weight", self.demographics.weight),
        ] {
            if !(lo <= hi) {
                return Err(SimError::ParameterDomain { name, value: lo });
            }
        }
        Ok(())
    }

    pub fn nominal_pd(&self) -> PdParams {
        PdParams {
            theta: ThetaVector {
                c50p: self.c50p.nominal,
                c50r: self.c50r.nominal,
                gamma: self.gamma.nominal,
            },
            e0: self.e0.nominal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPatient {
    pub index: usize,
    pub seed: u64,
    pub demographics: Demographics,
    pub pk_p: PkParams,
    pub pk_r: PkParams,
    pub pd: PdParams,
}

impl SampledPatient {
    /// The nominal reference patient.
    pub fn nominal() -> Self {
        SampledPatient {
            index: 0,
            seed: 0,
            demographics: Demographics {
                age: 35.0,
                height: 170.0,
                weight: 70.0,
                sex: Sex::Male,
            },
            pk_p: PkParams::PROPOFOL_NOMINAL,
            pk_r: PkParams::REMIFENTANIL_NOMINAL,
            pd: PdParams::NOMINAL,
        }
    }

    pub fn model(&self, period_s: f64) -> Result<PatientModel> {
        PatientModel::new(self.pk_p, self.pk_r, self.pd, period_s)
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-item seed from a master seed and an index.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    mix64(mix64(master_seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn sample_patient(spec: &UncertaintySpec, seed: u64) -> SampledPatient {
    sample_indexed(spec, seed, 0)
}

fn sample_indexed(spec: &UncertaintySpec, seed: u64, index: usize) -> SampledPatient {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &spec.demographics;
    let demographics = Demographics {
        age: uniform(&mut rng, r.age),
        height: uniform(&mut rng, r.height),
        weight: uniform(&mut rng, r.weight),
        sex: if rng.random_bool(0.5) {
            Sex::Male
        } else {
            Sex::Female
        },
    };
    let clamp = spec.clamp_sigmas;
    let mut draw = |d: &LogNormal| {
        let mut z: f64 = rng.sample(StandardNormal);
        if let Some(k) = clamp {
            z = z.clamp(-k, k);
        }
        d.at(z)
    };
    let pk_p = spec.propofol.sample_with(&mut draw);
    let pk_r = spec.remifentanil.sample_with(&mut draw);
    let theta = ThetaVector {
        c50p: draw(&spec.c50p),
        c50r: draw(&spec.c50r),
        gamma: draw(&spec.gamma),
    };
    let e0 = draw(&spec.e0);
    SampledPatient {
        index,
        seed,
        demographics,
        pk_p,
        pk_r,
        pd: PdParams { theta, e0 },
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

pub fn sample_cohort(n: usize, spec: &UncertaintySpec, master_seed: u64) -> Vec<SampledPatient> {
    (0..n)
        .map(|i| sample_indexed(spec, derive_seed(master_seed, i as u64), i))
        .collect()
}

/// Inverse standard-normal CDF (Acklam's rational approximation, |err| < 1.2e-9).
pub fn standard_normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    assert!(p > 0.0 && p < 1.0, "quantile level must be in (0, 1)");
    if p == 0.5 {
        return 0.0;
    }
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -standard_normal_quantile(1.0 - p)
    }
}
