//! Per-position z-scoring fitted on benign trajectories.

use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation at every position. Standard
    /// deviations below [`STD_FLOOR`] are raised to it.
    pub fn fit<S: AsRef<[f64]>>(rows: &[S]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "standardization needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let len = rows[0].as_ref().len();
        if len == 0 || rows.iter().any(|r| r.as_ref().len() != len) {
            return Err(Error::InvalidArgument("rows differ in length".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; len];
        for r in rows {
            mean.iter_mut().zip(r.as_ref()).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; len];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::InvalidArgument("mean and std lengths differ".into()));
        }
        if std.iter().any(|&s| !(s >= STD_FLOOR) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("invalid standardization statistics".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.len() {
            return Err(Error::shape(
                "standardize",
                format!("fitted on length {}, got {}", self.len(), row.len()),
            ));
        }
        Ok(row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitted_rows_have_unit_moments() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, (i * i) as f64 * 0.1, 3.0 - i as f64 * 0.5])
            .collect();
        let s = Standardizer::fit(&rows).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| s.apply(r).unwrap()).collect();
        for p in 0..3 {
            let mean: f64 = z.iter().map(|r| r[p]).sum::<f64>() / 20.0;
            let var: f64 = z.iter().map(|r| (r[p] - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-6);
            assert!((var.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_position_maps_to_zero() {
        let rows = vec![vec![2.0, 1.0], vec![2.0, 3.0], vec![2.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.std()[0], STD_FLOOR);
        assert_eq!(s.apply(&[2.0, 3.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn held_out_matches_hand_values() {
        let rows = vec![vec![1.0, 10.0], vec![3.0, 14.0]];
        let s = Standardizer::fit(&rows).unwrap();
        let z = s.apply(&[4.0, 8.0]).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-12);
        assert!((z[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(Standardizer::fit(&[vec![1.0]]).is_err());
        assert!(Standardizer::fit(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        let s = Standardizer::fit(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(s.apply(&[1.0, 2.0]), Err(Error::Shape { .. })));
    }
}
