//! Architecture descriptions and the named presets 0–4.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AwUnit, MtUnit, RbfUnit, SrRbfUnit, Unit, WarpStack};
use crate::error::{Error, Result};

/// Noise added to identity Möbius coefficients at initialization.
pub const MT_INIT_NOISE: f64 = 1e-3;
/// Default rate of a free RBF unit; equals the SR-RBF(1) rate.
pub const DEFAULT_RBF_RATE: f64 = 8.0;

/// Config entry for one unit. `axis` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum UnitSpec {
    Aw {
        axis: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m: Option<usize>,
    },
    Rbf {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        centroid: Option<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<f64>,
    },
    Srrbf {
        resolution: u32,
    },
    Mt,
}

/// Ordered list of units; deserializes from either a list of unit specs or
/// a preset name (`"arch0"` … `"arch4"`).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Architecture {
    pub units: Vec<UnitSpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ArchitectureRepr {
    Preset(String),
    Units(Vec<UnitSpec>),
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match ArchitectureRepr::deserialize(d)? {
            ArchitectureRepr::Units(units) => Ok(Architecture { units }),
            ArchitectureRepr::Preset(name) => {
                Architecture::named(&name).map_err(serde::de::Error::custom)
            }
        }
    }
}

impl Architecture {
    /// Presets: 0 stationary; 1 AW+AW+SR-RBF(1)+MT; 2 adds SR-RBF(2) before
    /// the MT; 3 and 4 are 1 and 2 without the MT unit.
    pub fn preset(k: u8) -> Result<Self> {
        let aw = |axis| UnitSpec::Aw { axis, m: None };
        let sr = |resolution| UnitSpec::Srrbf { resolution };
        let units = match k {
            0 => vec![],
            1 => vec![aw(1), aw(2), sr(1), UnitSpec::Mt],
            2 => vec![aw(1), aw(2), sr(1), sr(2), UnitSpec::Mt],
            3 => vec![aw(1), aw(2), sr(1)],
            4 => vec![aw(1), aw(2), sr(1), sr(2)],
            _ => return Err(Error::invalid(format!("no architecture preset {k}"))),
        };
        Ok(Self { units })
    }

    pub fn named(name: &str) -> Result<Self> {
        let key = name
            .trim()
            .to_ascii_lowercase()
            .trim_start_matches("table1-")
            .trim_start_matches("architecture")
            .trim_start_matches("arch")
            .trim_start_matches(['-', '_', ' '])
            .to_string();
        match key.as_str() {
            "stationary" => Self::preset(0),
            k => k
                .parse::<u8>()
                .map_err(|_| Error::invalid(format!("unknown architecture `{name}`")))
                .and_then(Self::preset),
        }
    }

    /// A single free RBF unit.
    pub fn single_rbf() -> Self {
        Self {
            units: vec![UnitSpec::Rbf {
                centroid: None,
                rate: None,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, u) in self.units.iter().enumerate() {
            match u {
                UnitSpec::Aw { axis, m } => {
                    if !(1..=2).contains(axis) {
                        return Err(Error::Config {
                            pointer: format!("/architecture/{i}/axis"),
                            message: format!("axis must be 1 or 2, got {axis}"),
                        });
                    }
                    if *m == Some(0) {
                        return Err(Error::Config {
                            pointer: format!("/architecture/{i}/m"),
                            message: "an AW unit needs at least one basis".into(),
                        });
                    }
                }
                UnitSpec::Rbf { rate: Some(r), .. } if !(*r > 0.0) => {
                    return Err(Error::Config {
                        pointer: format!("/architecture/{i}/rate"),
                        message: "RBF rate must be positive".into(),
                    });
                }
                UnitSpec::Srrbf { resolution } if !(1..=2).contains(resolution) => {
                    return Err(Error::Config {
                        pointer: format!("/architecture/{i}/resolution"),
                        message: format!("SR-RBF resolution must be 1 or 2, got {resolution}"),
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Near-identity stack ready for fitting.
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<WarpStack> {
        self.validate()?;
        let noise = Normal::new(0.0, MT_INIT_NOISE).unwrap();
        let units = self
            .units
            .iter()
            .map(|u| match u {
                UnitSpec::Aw { axis, m } => {
                    Unit::Aw(AwUnit::new(axis - 1, m.unwrap_or(super::aw::DEFAULT_BASES)))
                }
                UnitSpec::Rbf { centroid, rate } => Unit::Rbf(RbfUnit::new(
                    centroid.unwrap_or([0.0, 0.0]),
                    rate.unwrap_or(DEFAULT_RBF_RATE),
                )),
                UnitSpec::Srrbf { resolution } => Unit::SrRbf(SrRbfUnit::new(*resolution)),
                UnitSpec::Mt => {
                    let mut mt = MtUnit::identity();
                    for p in mt.params.iter_mut() {
                        *p += noise.sample(rng);
                    }
                    Unit::Mt(mt)
                }
            })
            .collect();
        Ok(WarpStack::new(units))
    }

    /// Stack with randomly drawn constrained parameters, used as a
    /// simulation truth and for bijectivity checks. Möbius draws keep the
    /// pole at least 0.5 away from the unit square.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<WarpStack> {
        let mut stack = self.build(rng)?;
        let std = Normal::new(0.0, 1.0).unwrap();
        for unit in stack.units.iter_mut() {
            match unit {
                Unit::Aw(u) => {
                    for r in u.raw_weights.iter_mut() {
                        *r = -0.5 + std.sample(rng);
                    }
                }
                Unit::Rbf(u) => {
                    u.centroid = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
                    u.raw_rate = rng.random_range(1f64.ln()..30f64.ln());
                    u.raw_weight = 2.0 * std.sample(rng);
                }
                Unit::SrRbf(u) => {
                    for l in u.layers.iter_mut() {
                        l.raw_weight = 1.5 * std.sample(rng);
                    }
                }
                Unit::Mt(u) => loop {
                    let mut cand = MtUnit::identity();
                    for p in cand.params.iter_mut() {
                        *p += 0.3 * std.sample(rng);
                    }
                    let far = cand
                        .pole()
                        .map(|p| square_distance(p) > 0.5)
                        .unwrap_or(true);
                    if far && cand.determinant().norm() > 0.1 {
                        *u = cand;
                        break;
                    }
                },
            }
        }
        Ok(stack)
    }
}

/// Distance from `p` to the square `[-0.5, 0.5]^2`.
fn square_distance(p: [f64; 2]) -> f64 {
    let dx = (p[0].abs() - 0.5).max(0.0);
    let dy = (p[1].abs() - 0.5).max(0.0);
    dx.hypot(dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn preset_depths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let depths: Vec<usize> = (0..=4)
            .map(|k| Architecture::preset(k).unwrap().build(&mut rng).unwrap().depth())
            .collect();
        assert_eq!(depths, vec![0, 12, 93, 11, 92]);
    }

    #[test]
    fn json_forms() {
        let a: Architecture = serde_json::from_str("\"arch3\"").unwrap();
        assert_eq!(a, Architecture::preset(3).unwrap());
        let a: Architecture = serde_json::from_str("\"table1-arch1\"").unwrap();
        assert_eq!(a, Architecture::preset(1).unwrap());
        let a: Architecture = serde_json::from_str(
            r#"[{"type": "aw", "axis": 1, "m": 4}, {"type": "srrbf", "resolution": 1}, {"type": "mt"}]"#,
        )
        .unwrap();
        assert_eq!(a.units.len(), 3);
        assert!(serde_json::from_str::<Architecture>("\"arch9\"").is_err());
        assert!(serde_json::from_str::<Architecture>(r#"[{"type": "warp"}]"#).is_err());
    }

    #[test]
    fn bad_axis_rejected() {
        let a = Architecture {
            units: vec![UnitSpec::Aw { axis: 3, m: None }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(a.build(&mut rng), Err(Error::Config { .. })));
    }

    #[test]
    fn initialization_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stack = Architecture::preset(2).unwrap().build(&mut rng).unwrap();
        let grid = crate::geometry::unit_grid(11);
        let out = stack.forward(&grid).unwrap();
        let max_shift = grid
            .iter()
            .zip(&out.coords)
            .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
            .fold(0.0, f64::max);
        assert!(max_shift < 0.05, "max shift {max_shift}");
    }
}
