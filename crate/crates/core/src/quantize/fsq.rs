//! Finite scalar quantization: each dimension is squashed with `tanh` into
//! `(-1, 1)` and rounded to a uniform grid of `levels[i]` points spanning
//! `[-1, 1]`. The token id is the mixed-radix number formed by the per-dim
//! grid indices, first dimension most significant.

use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::tensor::Real;

pub fn fsq_bound<T: Real>(g: &mut Graph<T>, z: Var) -> Var {
    g.tanh(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsqRounded<T> {
    pub indices: Vec<u32>,
    pub values: Vec<T>,
}

fn grid_value<T: Real>(j: usize, l: usize) -> T {
    T::c(-1.0 + 2.0 * j as f64 / (l - 1) as f64)
}

/// Rounds bounded values (`[m, levels.len()]`, row-major) to the nearest grid
/// point per dimension.
pub fn fsq_round<T: Real>(bounded: &[T], levels: &[usize]) -> FsqRounded<T> {
    let d = levels.len();
    let mut indices = Vec::with_capacity(bounded.len() / d);
    let mut values = Vec::with_capacity(bounded.len());
    let mut per_dim = Vec::with_capacity(d);
    for row in bounded.chunks_exact(d) {
        per_dim.clear();
        for (v, &l) in row.iter().zip(levels) {
            let s = (v.f64() + 1.0) * 0.5 * (l - 1) as f64;
            let j = libm::round(s).clamp(0.0, (l - 1) as f64) as usize;
            per_dim.push(j);
            values.push(grid_value(j, l));
        }
        indices.push(fsq_composite_index(&per_dim, levels) as u32);
    }
    FsqRounded { indices, values }
}

pub fn fsq_composite_index(per_dim: &[usize], levels: &[usize]) -> usize {
    per_dim.iter().zip(levels).fold(0, |acc, (j, l)| acc * l + j)
}

pub fn fsq_split_index(mut index: usize, levels: &[usize]) -> Vec<usize> {
    let mut out = alloc::vec![0; levels.len()];
    for (o, l) in out.iter_mut().zip(levels).rev() {
        *o = index % l;
        index /= l;
    }
    out
}

pub fn fsq_grid_point<T: Real>(index: usize, levels: &[usize]) -> Vec<T> {
    fsq_split_index(index, levels).into_iter().zip(levels).map(|(j, &l)| grid_value(j, l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_radix_by_hand() {
        assert_eq!(fsq_composite_index(&[1, 0], &[2, 2]), 2);
        assert_eq!(fsq_split_index(2, &[2, 2]), [1, 0]);
        assert_eq!(fsq_composite_index(&[2, 1, 3], &[3, 2, 5]), 2 * 10 + 5 + 3);
    }

    #[test]
    fn grid_points_are_fixed_points() {
        let levels = [2, 3, 5, 8];
        for id in 0..levels.iter().product::<usize>() {
            let p = fsq_grid_point::<f64>(id, &levels);
            let r = fsq_round(&p, &levels);
            assert_eq!(r.values, p);
            assert_eq!(r.indices, [id as u32]);
        }
    }

    #[test]
    fn rounding_picks_nearest() {
        let r = fsq_round(&[0.2f64, -0.9, 0.99], &[3, 3, 2]);
        assert_eq!(r.values, [0.0, -1.0, 1.0]);
        assert_eq!(r.indices, [fsq_composite_index(&[1, 0, 1], &[3, 3, 2]) as u32]);
    }
}
