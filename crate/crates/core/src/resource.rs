//! CPU / memory / bandwidth vectors and the weighted scoring used by every
//! placement and migration decision.
//!
//! All components are percent-of-capacity of the server they describe, so a
//! VM demand and a server usage can be added and compared directly.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::ResourceError;

/// Tolerance on the sum of a [`WeightVector`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// A `(cpu, mem, bandwidth)` utilization or demand triple.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu: f64,
    pub mem: f64,
    #[serde(rename = "bw")]
    pub bandwidth: f64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector { cpu: 0.0, mem: 0.0, bandwidth: 0.0 };

    pub const fn new(cpu: f64, mem: f64, bandwidth: f64) -> Self {
        ResourceVector { cpu, mem, bandwidth }
    }

    pub const fn splat(v: f64) -> Self {
        ResourceVector::new(v, v, v)
    }

    /// Builds a vector after checking that every component is finite and
    /// non-negative.
    pub fn try_new(cpu: f64, mem: f64, bandwidth: f64) -> Result<Self, ResourceError> {
        let v = ResourceVector::new(cpu, mem, bandwidth);
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), ResourceError> {
        for (name, x) in self.named() {
            if !x.is_finite() || x < 0.0 {
                return Err(ResourceError::InvalidComponent { component: name, value: x });
            }
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.cpu, self.mem, self.bandwidth]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        ResourceVector::new(a[0], a[1], a[2])
    }

    fn named(&self) -> [(&'static str, f64); 3] {
        [("cpu", self.cpu), ("mem", self.mem), ("bw", self.bandwidth)]
    }

    /// Componentwise difference, clamped at zero.
    pub fn saturating_sub(self, other: ResourceVector) -> ResourceVector {
        ResourceVector::new(
            (self.cpu - other.cpu).max(0.0),
            (self.mem - other.mem).max(0.0),
            (self.bandwidth - other.bandwidth).max(0.0),
        )
    }

    pub fn scale(self, k: f64) -> ResourceVector {
        ResourceVector::new(self.cpu * k, self.mem * k, self.bandwidth * k)
    }

    /// True iff every component is strictly below the matching component of
    /// `other`. Equality in any component fails.
    pub fn strictly_less(&self, other: &ResourceVector) -> bool {
        self.cpu < other.cpu && self.mem < other.mem && self.bandwidth < other.bandwidth
    }

    /// True iff any component reaches or exceeds the matching component of
    /// `limit`.
    pub fn any_at_or_above(&self, limit: &ResourceVector) -> bool {
        self.cpu >= limit.cpu || self.mem >= limit.mem || self.bandwidth >= limit.bandwidth
    }

    pub fn sum_components(&self) -> f64 {
        self.cpu + self.mem + self.bandwidth
    }

    pub fn distance(&self, other: &ResourceVector) -> f64 {
        let d = *self - *other;
        (d.cpu * d.cpu + d.mem * d.mem + d.bandwidth * d.bandwidth).sqrt()
    }

    /// Componentwise mean of a set of vectors; `None` when the set is empty.
    pub fn mean<'a, I>(vectors: I) -> Option<ResourceVector>
    where
        I: IntoIterator<Item = &'a ResourceVector>,
    {
        let mut n = 0usize;
        let mut acc = ResourceVector::ZERO;
        for v in vectors {
            acc = acc + *v;
            n += 1;
        }
        (n > 0).then(|| acc.scale(1.0 / n as f64))
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;

    fn add(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector::new(self.cpu + rhs.cpu, self.mem + rhs.mem, self.bandwidth + rhs.bandwidth)
    }
}

/// Plain componentwise difference. May go negative; callers that store the
/// result as usage should use [`ResourceVector::saturating_sub`].
impl Sub for ResourceVector {
    type Output = ResourceVector;

    fn sub(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector::new(self.cpu - rhs.cpu, self.mem - rhs.mem, self.bandwidth - rhs.bandwidth)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3}, {:.3})", self.cpu, self.mem, self.bandwidth)
    }
}

/// `rv_add`: componentwise sum.
pub fn rv_add(a: ResourceVector, b: ResourceVector) -> ResourceVector {
    a + b
}

/// `rv_strictly_less`: the feasibility comparison `usage + demand < threshold`.
pub fn rv_strictly_less(a: ResourceVector, b: ResourceVector) -> bool {
    a.strictly_less(&b)
}

/// AHP priority weights over (cpu, mem, bandwidth). Components lie in
/// `[0, 1]` and sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct WeightVector {
    cpu: f64,
    mem: f64,
    bandwidth: f64,
}

#[derive(Serialize, Deserialize)]
struct RawWeights {
    w_cpu: f64,
    w_mem: f64,
    w_bw: f64,
}

impl TryFrom<RawWeights> for WeightVector {
    type Error = ResourceError;

    fn try_from(raw: RawWeights) -> Result<Self, Self::Error> {
        WeightVector::new(raw.w_cpu, raw.w_mem, raw.w_bw)
    }
}

impl From<WeightVector> for RawWeights {
    fn from(w: WeightVector) -> Self {
        RawWeights { w_cpu: w.cpu, w_mem: w.mem, w_bw: w.bandwidth }
    }
}

impl WeightVector {
    pub fn new(cpu: f64, mem: f64, bandwidth: f64) -> Result<Self, ResourceError> {
        let w = WeightVector { cpu, mem, bandwidth };
        for x in w.to_array() {
            if !x.is_finite() || !(0.0..=1.0).contains(&x) {
                return Err(ResourceError::InvalidWeights(w.to_array()));
            }
        }
        if (w.cpu + w.mem + w.bandwidth - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(ResourceError::InvalidWeights(w.to_array()));
        }
        Ok(w)
    }

    /// Normalizes a non-negative triple to sum one.
    pub fn normalized(raw: [f64; 3]) -> Result<Self, ResourceError> {
        let total: f64 = raw.iter().sum();
        if !total.is_finite() || total <= 0.0 || raw.iter().any(|x| *x < 0.0) {
            return Err(ResourceError::InvalidWeights(raw));
        }
        WeightVector::new(raw[0] / total, raw[1] / total, raw[2] / total)
    }

    pub fn uniform() -> Self {
        let third = 1.0 / 3.0;
        WeightVector { cpu: third, mem: third, bandwidth: third }
    }

    pub fn cpu(&self) -> f64 {
        self.cpu
    }

    pub fn mem(&self) -> f64 {
        self.mem
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.cpu, self.mem, self.bandwidth]
    }

    /// Dot product with a utilization vector.
    pub fn score(&self, m: &ResourceVector) -> f64 {
        self.cpu * m.cpu + self.mem * m.mem + self.bandwidth * m.bandwidth
    }
}

impl Default for WeightVector {
    fn default() -> Self {
        WeightVector::uniform()
    }
}

impl fmt::Display for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.6}, {:.6}, {:.6}]", self.cpu, self.mem, self.bandwidth)
    }
}

/// `weighted_score`: the evaluation value of a server, lower is better.
pub fn weighted_score(w: &WeightVector, m: &ResourceVector) -> f64 {
    w.score(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rv(c: f64, m: f64, b: f64) -> ResourceVector {
        ResourceVector::new(c, m, b)
    }

    fn reference_weights() -> WeightVector {
        WeightVector::new(0.2, 0.6, 0.2).unwrap()
    }

    #[test]
    fn add_examples() {
        assert_eq!(rv_add(rv(0.0, 0.0, 0.0), rv(5.0, 5.0, 5.0)), rv(5.0, 5.0, 5.0));
        assert_eq!(rv_add(rv(50.0, 40.0, 30.0), rv(20.0, 30.0, 40.0)), rv(70.0, 70.0, 70.0));
        assert_eq!(rv_add(rv(70.4, 40.0, 60.0), ResourceVector::ZERO), rv(70.4, 40.0, 60.0));
    }

    #[test]
    fn strictly_less_examples() {
        let t = ResourceVector::splat(80.0);
        assert!(rv_strictly_less(rv(70.0, 70.0, 70.0), t));
        assert!(!rv_strictly_less(rv(80.0, 70.0, 70.0), t));
        assert!(!rv_strictly_less(rv(79.0, 81.0, 70.0), t));
    }

    #[test]
    fn score_examples() {
        let w = reference_weights();
        assert_eq!(weighted_score(&w, &ResourceVector::ZERO), 0.0);
        assert!((weighted_score(&w, &rv(50.0, 30.0, 40.0)) - 36.0).abs() < 1e-12);
        // 0.2*70.4 + 0.6*40 + 0.2*60
        assert!((weighted_score(&w, &rv(70.4, 40.0, 60.0)) - 50.08).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_components() {
        assert!(ResourceVector::try_new(-1.0, 0.0, 0.0).is_err());
        assert!(ResourceVector::try_new(f64::NAN, 0.0, 0.0).is_err());
        assert!(ResourceVector::try_new(120.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(WeightVector::new(0.2, 0.6, 0.2).is_ok());
        assert!(WeightVector::new(0.2, 0.6, 0.3).is_err());
        assert!(WeightVector::new(-0.1, 0.6, 0.5).is_err());
        assert!(WeightVector::normalized([0.0, 0.0, 0.0]).is_err());
        let w = WeightVector::normalized([20.0, 60.0, 20.0]).unwrap();
        assert!((w.mem() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn json_shapes() {
        let v: ResourceVector = serde_json::from_str(r#"{"cpu": 1, "mem": 2, "bw": 3}"#).unwrap();
        assert_eq!(v, rv(1.0, 2.0, 3.0));
        let w: WeightVector =
            serde_json::from_str(r#"{"w_cpu": 0.2, "w_mem": 0.6, "w_bw": 0.2}"#).unwrap();
        assert_eq!(w, reference_weights());
        assert!(serde_json::from_str::<WeightVector>(r#"{"w_cpu": 1, "w_mem": 1, "w_bw": 1}"#).is_err());
    }

    fn arb_rv() -> impl Strategy<Value = ResourceVector> {
        (0.0..100.0f64, 0.0..100.0f64, 0.0..100.0f64).prop_map(|(c, m, b)| rv(c, m, b))
    }

    fn arb_weights() -> impl Strategy<Value = WeightVector> {
        (0.001..1.0f64, 0.001..1.0f64, 0.001..1.0f64)
            .prop_map(|(a, b, c)| WeightVector::normalized([a, b, c]).unwrap())
    }

    proptest! {
        #[test]
        fn score_is_linear(w in arb_weights(), a in arb_rv(), b in arb_rv()) {
            let lhs = weighted_score(&w, &rv_add(a, b));
            let rhs = weighted_score(&w, &a) + weighted_score(&w, &b);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn score_is_monotone(w in arb_weights(), a in arb_rv(), d in arb_rv()) {
            let b = a + d;
            prop_assert!(weighted_score(&w, &a) <= weighted_score(&w, &b));
        }

        #[test]
        fn strict_order_is_irreflexive_and_transitive(a in arb_rv(), b in arb_rv(), c in arb_rv()) {
            prop_assert!(!a.strictly_less(&a));
            if a.strictly_less(&b) && b.strictly_less(&c) {
                prop_assert!(a.strictly_less(&c));
            }
        }

        #[test]
        fn uniform_weights_give_mean(a in arb_rv()) {
            let mean = a.sum_components() / 3.0;
            prop_assert!((weighted_score(&WeightVector::uniform(), &a) - mean).abs() < 1e-9);
        }
    }
}
