use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One source direction in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    /// Euclidean distance in the (azimuth, elevation) plane, degrees.
    pub fn distance(&self, other: &Direction) -> f64 {
        (self.azimuth - other.azimuth).hypot(self.elevation - other.elevation)
    }

    /// Canonical total order: azimuth first, elevation breaks ties.
    pub fn canonical_cmp(&self, other: &Direction) -> std::cmp::Ordering {
        self.azimuth
            .total_cmp(&other.azimuth)
            .then(self.elevation.total_cmp(&other.elevation))
    }
}

/// Stacked directions of `M` sources, `L = 2M` values `[az1, el1, az2, el2, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DirectionVector(pub Vec<f64>);

impl DirectionVector {
    pub fn from_directions(dirs: &[Direction]) -> Self {
        Self(dirs.iter().flat_map(|d| [d.azimuth, d.elevation]).collect())
    }

    /// Directions sorted into canonical order.
    pub fn canonical(dirs: &[Direction]) -> Self {
        let mut v = dirs.to_vec();
        v.sort_by(|a, b| a.canonical_cmp(b));
        Self::from_directions(&v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn num_sources(&self) -> usize {
        self.0.len() / 2
    }

    pub fn directions(&self) -> Result<Vec<Direction>> {
        if self.0.len() % 2 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "direction vector length {} is odd",
                self.0.len()
            )));
        }
        Ok(self
            .0
            .chunks_exact(2)
            .map(|c| Direction::new(c[0], c[1]))
            .collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn canonical_order_is_total(a in -20.0f64..20.0, b in -20.0f64..20.0, c in -20.0f64..20.0, e in -20.0f64..20.0) {
            let x = Direction::new(a, b);
            let y = Direction::new(c, e);
            prop_assume!(x != y);
            let lhs = x.canonical_cmp(&y);
            let rhs = y.canonical_cmp(&x);
            prop_assert_eq!(lhs, rhs.reverse());
            prop_assert_ne!(lhs, std::cmp::Ordering::Equal);
            prop_assert_eq!(DirectionVector::canonical(&[x, y]), DirectionVector::canonical(&[y, x]));
        }
    }

    #[test]
    fn ties_broken_by_elevation() {
        let v = DirectionVector::canonical(&[Direction::new(1.0, 5.0), Direction::new(1.0, -2.0)]);
        assert_eq!(v.0, vec![1.0, -2.0, 1.0, 5.0]);
    }
}
