//! Reference systems with analytically known answers.

use serde::{Deserialize, Serialize};

use crate::base::BaseSystemSpec;
use crate::error::{Error, Result};
use crate::estimation::CloudSpec;
use crate::fiber::{FiberKind, FiberSpaceSpec, MetricSpec, DEFAULT_CLOUD_CAP};
use crate::measure::{MeasureRep, PotentialFamily};
use crate::optimize::SearchSettings;
use crate::rds::{PotentialSpec, RandomMapSpec, TrigTerm};

use super::config::{MmdimConfig, NamedMeasure, RunConfig, Task};

/// Which summary field the expected value applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Entropy,
    MdimSlope,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub quantity: Quantity,
    pub value: f64,
    pub tolerance: f64,
}

pub const REFERENCE_NAMES: [&str; 7] = [
    "identity",
    "doubling",
    "random_expanding",
    "torus_shift",
    "torus_shift_d2",
    "shift_random_rotation",
    "torus_shift_mmdim",
];

fn circle() -> FiberSpaceSpec {
    FiberSpaceSpec::new(FiberKind::TorusSeq, 1, 1, MetricSpec::sup())
}

fn dyadic_ladder(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 0.5f64.powi(k)).collect()
}

fn base_config(name: &str, task: Task, fiber: FiberSpaceSpec, map: RandomMapSpec, cloud: CloudSpec) -> RunConfig {
    RunConfig {
        name: name.into(),
        task,
        base: BaseSystemSpec::bernoulli_half(2024),
        fiber,
        map,
        cloud,
        window_margin: None,
        cloud_cap: DEFAULT_CLOUD_CAP,
        potential: PotentialSpec::Zero,
        epsilon_ladder: dyadic_ladder(2, 5),
        n_schedule: vec![1, 2, 3, 4],
        m_omega: 4,
        stream_offset: 0,
        seed: None,
        threads: None,
        mmdim: None,
    }
}

fn shift(name: &str, d: usize, map: RandomMapSpec, m_omega: usize) -> RunConfig {
    let mut c = base_config(
        name,
        Task::Mdim,
        FiberSpaceSpec::new(FiberKind::TorusSeq, d, 3, MetricSpec::sup()),
        map,
        // 8255 = 5·13·127: at ε = 2^{-k}, k ≤ 7, a full-weight axis packs 2^k − 1 points.
        CloudSpec::Lattice { m: 8255 },
    );
    c.window_margin = Some(2);
    c.epsilon_ladder = dyadic_ladder(3, 7);
    c.m_omega = m_omega;
    c
}

fn cos_term(coord: usize, amplitude: f64) -> TrigTerm {
    TrigTerm {
        coord,
        amplitude,
        frequency: 1.0,
        phase: 0.0,
    }
}

/// Configuration of a named reference system.
pub fn reference_config(name: &str) -> Result<RunConfig> {
    Ok(match name {
        "identity" => base_config(name, Task::Mdim, circle(), RandomMapSpec::Identity, CloudSpec::Lattice { m: 64 }),
        "doubling" => {
            let mut c = base_config(name, Task::Entropy, circle(), RandomMapSpec::DoublingCircle, CloudSpec::Lattice { m: 1 << 18 });
            c.epsilon_ladder = vec![1.0 / 16.0, 1.0 / 32.0];
            c.n_schedule = vec![4, 5, 6, 7, 8];
            c.m_omega = 16;
            c
        }
        "random_expanding" => {
            let mut c = base_config(
                name,
                Task::Entropy,
                circle(),
                RandomMapSpec::RandomExpanding { factors: vec![2, 3] },
                CloudSpec::Lattice { m: 1 << 19 },
            );
            c.epsilon_ladder = vec![1.0 / 8.0, 1.0 / 16.0];
            c.n_schedule = vec![4, 5, 6, 7];
            c.m_omega = 64;
            c
        }
        "torus_shift" => shift(name, 1, RandomMapSpec::Shift, 2),
        "torus_shift_d2" => shift(name, 2, RandomMapSpec::Shift, 2),
        "shift_random_rotation" => shift(name, 1, RandomMapSpec::ShiftRandomRotation { scale: 1.0 }, 32),
        "torus_shift_mmdim" => {
            let mut c = shift(name, 1, RandomMapSpec::Shift, 2);
            c.epsilon_ladder = dyadic_ladder(3, 6);
            c.mmdim = Some(MmdimConfig {
                measures: vec![
                    NamedMeasure {
                        name: "uniform".into(),
                        measure: MeasureRep::uniform(),
                    },
                    NamedMeasure {
                        name: "atom".into(),
                        measure: MeasureRep::atom(vec![0.5]),
                    },
                ],
                family: PotentialFamily {
                    basis: vec![
                        PotentialSpec::Trig {
                            terms: vec![cos_term(0, 1.0)],
                        },
                        PotentialSpec::CoordinateLinear { coefficients: vec![1.0] },
                        // cos 2πx₁ − cos 2πx₀ = g∘Θ − g for g = cos 2πx₀ under the shift.
                        PotentialSpec::Trig {
                            terms: vec![cos_term(1, 1.0), cos_term(0, -1.0)],
                        },
                    ],
                    lower: vec![-1.0; 3],
                    upper: vec![1.0; 3],
                },
                m_samples: 2000,
                sample_seed: 7,
                search: SearchSettings::new(40),
            });
            c
        }
        _ => return Err(Error::validation("system", format!("unknown reference system {name:?}"))),
    })
}

/// Analytic value the reference run should reproduce, if any.
pub fn expected(name: &str) -> Option<Expected> {
    let e = |quantity, value, tolerance| Some(Expected { quantity, value, tolerance });
    match name {
        "identity" => e(Quantity::MdimSlope, 0.0, 0.05),
        "doubling" => e(Quantity::Entropy, 2f64.ln(), 0.05),
        "random_expanding" => e(Quantity::Entropy, 0.5 * (2f64.ln() + 3f64.ln()), 0.07),
        "torus_shift" | "shift_random_rotation" => e(Quantity::MdimSlope, 1.0, 0.15),
        "torus_shift_d2" => e(Quantity::MdimSlope, 2.0, 0.3),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_reference_validates() {
        for name in REFERENCE_NAMES {
            let c = reference_config(name).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(c.name, name);
        }
        assert!(reference_config("nope").is_err());
    }
}
