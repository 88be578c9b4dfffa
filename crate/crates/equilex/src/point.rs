use crate::error::{Error, Result};

/// Dense coordinate vector in the ambient d-dimensional section.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point { coords }
    }

    pub fn zeros(dim: usize) -> Self {
        Point {
            coords: vec![0.0; dim],
        }
    }

    /// Standard basis vector e_index (1-based) in dimension `dim`.
    pub fn basis(dim: usize, index: usize) -> Self {
        debug_assert!(index >= 1 && index <= dim);
        let mut coords = vec![0.0; dim];
        coords[index - 1] = 1.0;
        Point { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.coords.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.coords.len(),
            });
        }
        for (i, c) in self.coords.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
        }
        Ok(())
    }

    pub fn scale(&self, a: f64) -> Point {
        Point {
            coords: self.coords.iter().map(|c| a * c).collect(),
        }
    }

    pub fn sub(&self, other: &Point) -> Point {
        debug_assert_eq!(self.coords.len(), other.coords.len());
        Point {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Point) -> Point {
        debug_assert_eq!(self.coords.len(), other.coords.len());
        Point {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// self + a * other, without forming the intermediate scaled point.
    pub fn axpy(&self, a: f64, other: &Point) -> Point {
        debug_assert_eq!(self.coords.len(), other.coords.len());
        Point {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(s, o)| s + a * o)
                .collect(),
        }
    }

    pub fn dot(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.coords.len(), other.coords.len());
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a * b)
            .sum()
    }
}

impl From<Vec<f64>> for Point {
    fn from(coords: Vec<f64>) -> Self {
        Point { coords }
    }
}
