//! Small column-statistics helpers shared by the generator and transfer code.

use crate::error::{Error, Result};

/// Per-column mean and population standard deviation of a set of equal-length rows.
pub fn column_moments<'a, I>(rows: I, dim: usize) -> Result<(Vec<f64>, Vec<f64>)>
where
    I: IntoIterator<Item = &'a [f64]> + Clone,
{
    let mut mean = vec![0.0; dim];
    let mut n = 0usize;
    for row in rows.clone() {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("moments of an empty set"));
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut var = vec![0.0; dim];
    for row in rows {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
    Ok((mean, std))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
