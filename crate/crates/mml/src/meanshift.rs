//! One-dimensional MeanShift clustering with Gaussian kernel, used to split
//! per-head loss averages into performance groups.

use serde::{Deserialize, Serialize};

use crate::error::{MmlError, Result};

const MAX_ITER: usize = 500;
const CONVERGENCE: f64 = 1e-8;

/// Kernel recorded in [`ClusterResult`] metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kernel {
    Gaussian,
}

/// MeanShift output: sorted centroids and a cluster index per input value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Strictly increasing, pairwise separated by more than the merge tolerance.
    pub centroids: Vec<f64>,
    /// `assignment[i]` indexes `centroids` for input value `i`.
    pub assignment: Vec<usize>,
    pub bandwidth_used: f64,
    pub kernel: Kernel,
}

impl ClusterResult {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }
}

/// Silverman-style bandwidth: `1.06 * min(std, IQR/1.34) * n^(-1/5)`,
/// floored at `1e-6 * (max - min)` and at an absolute 1e-12.
pub fn estimate_bandwidth(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "bandwidth of empty value set");
    let n = values.len();
    let spread = {
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    };
    let floor = (1e-6 * spread).max(1e-12);
    if n < 2 {
        return floor;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    let std = var.sqrt();
    let iqr = {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        quantile(&sorted, 0.75) - quantile(&sorted, 0.25)
    };
    let scale = std.min(iqr / 1.34);
    let bw = 1.06 * scale * (n as f64).powf(-0.2);
    bw.max(floor)
}

/// Linear-interpolation quantile of an already sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// MeanShift over scalar values: every point is iteratively shifted to the
/// Gaussian-weighted mean of all points until movement drops below 1e-8 or
/// 500 iterations pass; converged points are then merged into clusters.
///
/// Merging works on the sorted converged positions, so the result is
/// permutation-equivariant in the inputs.
pub fn mean_shift_1d(values: &[f64], bandwidth: f64) -> Result<ClusterResult> {
    if values.is_empty() {
        return Err(MmlError::InvalidInput("mean shift of empty value set".into()));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(MmlError::InvalidInput(format!(
            "bandwidth must be positive and finite, got {bandwidth}"
        )));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(MmlError::InvalidInput("non-finite value in mean shift".into()));
    }

    let inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let converged: Vec<f64> = values
        .iter()
        .map(|&start| {
            let mut x = start;
            for _ in 0..MAX_ITER {
                let mut wsum = 0.0;
                let mut wx = 0.0;
                for &v in values {
                    let d = x - v;
                    let w = (-d * d * inv_two_h2).exp();
                    wsum += w;
                    wx += w * v;
                }
                let next = wx / wsum;
                let moved = (next - x).abs();
                x = next;
                if moved < CONVERGENCE {
                    break;
                }
            }
            x
        })
        .collect();

    // Merge converged modes within bandwidth/2, scanning in value order so the
    // grouping depends only on the multiset of positions.
    let tol = bandwidth / 2.0;
    let mut order: Vec<usize> = (0..converged.len()).collect();
    order.sort_by(|&a, &b| converged[a].total_cmp(&converged[b]));

    let mut centroids: Vec<f64> = Vec::new();
    let mut member_counts: Vec<usize> = Vec::new();
    let mut assignment = vec![0usize; values.len()];
    for &idx in &order {
        let pos = converged[idx];
        match centroids.last_mut() {
            Some(c) if (pos - *c).abs() <= tol => {
                let k = centroids.len() - 1;
                member_counts[k] += 1;
                // Running mean of the merged converged positions.
                *c += (pos - *c) / member_counts[k] as f64;
                assignment[idx] = k;
            }
            _ => {
                centroids.push(pos);
                member_counts.push(1);
                assignment[idx] = centroids.len() - 1;
            }
        }
    }

    Ok(ClusterResult {
        centroids,
        assignment,
        bandwidth_used: bandwidth,
        kernel: Kernel::Gaussian,
    })
}

/// Indices of all inputs assigned to the cluster with the smallest centroid.
/// With a single cluster this is every index.
pub fn min_centroid_members(result: &ClusterResult) -> Vec<usize> {
    // Centroids are sorted ascending, so cluster 0 is the minimal one.
    result
        .assignment
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_floors_on_degenerate_spread() {
        assert_eq!(estimate_bandwidth(&[0.3, 0.3, 0.3]), 1e-12);
        assert_eq!(estimate_bandwidth(&[0.5]), 1e-12);
    }

    #[test]
    fn bandwidth_keeps_separated_groups_apart() {
        // Hand evaluation: std=0.459, IQR=0.4 => 1.06*(0.4/1.34)*3^-0.2 = 0.254.
        let bw = estimate_bandwidth(&[0.1, 0.11, 0.9]);
        assert!(bw > 0.0 && bw < 0.4, "bw={bw}");
        assert!((bw - 0.254).abs() < 0.01, "bw={bw}");
    }

    #[test]
    fn single_value_single_cluster() {
        let r = mean_shift_1d(&[0.42], 0.1).unwrap();
        assert_eq!(r.n_clusters(), 1);
        assert!((r.centroids[0] - 0.42).abs() < 1e-9);
        assert_eq!(r.assignment, vec![0]);
    }

    #[test]
    fn identical_values_single_cluster() {
        let r = mean_shift_1d(&[0.7; 6], 0.05).unwrap();
        assert_eq!(r.n_clusters(), 1);
        assert_eq!(min_centroid_members(&r), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn two_groups_split_and_min_cluster_selected() {
        let vals = [0.1, 0.11, 0.9];
        let r = mean_shift_1d(&vals, 0.05).unwrap();
        assert_eq!(r.n_clusters(), 2);
        assert_eq!(r.assignment, vec![0, 0, 1]);
        assert_eq!(min_centroid_members(&r), vec![0, 1]);
        assert!((r.centroids[0] - 0.105).abs() < 1e-3);
        assert!((r.centroids[1] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_bandwidth() {
        assert!(mean_shift_1d(&[1.0], 0.0).is_err());
        assert!(mean_shift_1d(&[1.0], -1.0).is_err());
        assert!(mean_shift_1d(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn centroids_sorted_and_separated() {
        let vals = [0.95, 0.1, 0.9, 0.12, 0.5];
        let bw = 0.04;
        let r = mean_shift_1d(&vals, bw).unwrap();
        for w in r.centroids.windows(2) {
            assert!(w[1] - w[0] > bw / 2.0);
        }
        assert!(r.assignment.iter().all(|&c| c < r.n_clusters()));
    }
}
