//! Column-major training data with per-feature sorted row orders, shared
//! by the classification and regression tree learners.

use rayon::prelude::*;

use crate::ids_data::Dataset;

pub(crate) struct Columns {
    pub cols: Vec<Vec<f64>>,
    pub n: usize,
}

impl Columns {
    pub fn from_dataset(data: &Dataset) -> Self {
        let cols = (0..data.n_features())
            .into_par_iter()
            .map(|j| data.column(j))
            .collect();
        Self {
            cols,
            n: data.len(),
        }
    }

    /// Row ids sorted by value per feature, ties by row id.
    pub fn presort(&self) -> Vec<Vec<u32>> {
        self.cols
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..self.n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect()
    }
}

/// Splits every feature order by `left[row]`, keeping relative order.
pub(crate) fn partition(orders: &[Vec<u32>], left: &[bool]) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    orders
        .iter()
        .map(|o| o.iter().partition::<Vec<u32>, _>(|&&r| left[r as usize]))
        .unzip()
}

/// A threshold `t` with `a <= t < b`.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a / 2.0 + b / 2.0;
    if m < a || m >= b {
        a
    } else {
        m
    }
}

/// Work above which feature scans run in parallel.
pub(crate) const PARALLEL_WORK: usize = 20_000;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_bounds() {
        assert_eq!(midpoint(1.0, 3.0), 2.0);
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a <= m && m < b);
        let m = midpoint(-1e308, 1e308);
        assert!((-1e308..1e308).contains(&m));
    }

    #[test]
    fn partition_is_stable() {
        let orders = vec![vec![3, 0, 2, 1]];
        let (l, r) = partition(&orders, &[true, false, true, false]);
        assert_eq!(l, vec![vec![0, 2]]);
        assert_eq!(r, vec![vec![3, 1]]);
    }
}
