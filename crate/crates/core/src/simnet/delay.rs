use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{secs_to_us, SimError, SimTime};
use crate::hash::NodeId;

/// A delay distribution in simulated seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DelayKind {
    Fixed { secs: f64 },
    Uniform { lo: f64, hi: f64 },
    Exponential { mean: f64 },
}

impl DelayKind {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = match *self {
            DelayKind::Fixed { secs } => secs.is_finite() && secs >= 0.0,
            DelayKind::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi,
            DelayKind::Exponential { mean } => mean.is_finite() && mean > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidDelay(format!("{self:?}")))
        }
    }

    pub fn sample_secs<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DelayKind::Fixed { secs } => secs,
            DelayKind::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            }
            DelayKind::Exponential { mean } => Exp::new(1.0 / mean).expect("positive rate").sample(rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub default: DelayKind,
    /// Per directed link `(from, to)`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, DelayKind>,
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel { default: DelayKind::Uniform { lo: 0.1, hi: 1.0 }, overrides: BTreeMap::new() }
    }
}

impl DelayModel {
    pub fn new(default: DelayKind) -> Self {
        DelayModel { default, overrides: BTreeMap::new() }
    }

    fn link_key(from: &NodeId, to: &NodeId) -> String {
        format!("{}->{}", from.to_hex(), to.to_hex())
    }

    pub fn set_link(&mut self, from: NodeId, to: NodeId, kind: DelayKind) {
        self.overrides.insert(Self::link_key(&from, &to), kind);
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.default.validate()?;
        self.overrides.values().try_for_each(|k| k.validate())
    }

    pub fn kind_for(&self, from: &NodeId, to: &NodeId) -> &DelayKind {
        if self.overrides.is_empty() {
            return &self.default;
        }
        self.overrides.get(&Self::link_key(from, to)).unwrap_or(&self.default)
    }

    pub fn sample<R: Rng + ?Sized>(&self, from: &NodeId, to: &NodeId, rng: &mut R) -> SimTime {
        secs_to_us(self.kind_for(from, to).sample_secs(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn exponential_mean() {
        let k = DelayKind::Exponential { mean: 2.0 };
        let mut rng = seeded(3);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| k.sample_secs(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn uniform_bounds_and_non_negative() {
        let m = DelayModel::default();
        let mut rng = seeded(1);
        for _ in 0..1000 {
            let d = m.sample(&NodeId::default(), &NodeId::default(), &mut rng);
            assert!((100_000..=1_000_000).contains(&d));
        }
    }

    #[test]
    fn link_override() {
        let mut m = DelayModel::new(DelayKind::Fixed { secs: 1.0 });
        let (a, b) = (NodeId::from_byte(1), NodeId::from_byte(2));
        m.set_link(a, b, DelayKind::Fixed { secs: 3.0 });
        let mut rng = seeded(0);
        assert_eq!(m.sample(&a, &b, &mut rng), 3_000_000);
        assert_eq!(m.sample(&b, &a, &mut rng), 1_000_000);
    }

    #[test]
    fn invalid_kinds() {
        assert!(DelayKind::Uniform { lo: 2.0, hi: 1.0 }.validate().is_err());
        assert!(DelayKind::Exponential { mean: 0.0 }.validate().is_err());
        assert!(DelayKind::Fixed { secs: -1.0 }.validate().is_err());
    }
}
