//! Detection by existence thresholding and MMSE state/class estimates.

use serde::{Deserialize, Serialize};

use crate::engine::AugmentedBelief;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEstimate {
    pub pt_index: usize,
    pub time: usize,
    /// Position (m).
    pub position: [f64; 2],
    /// Velocity (m/s).
    pub velocity: [f64; 2],
    pub existence_prob: f64,
    pub class_pmf: Vec<f64>,
    /// The PT index doubles as the persistent track label.
    pub label: u64,
}

/// Emits one estimate per PT whose existence probability exceeds `threshold`.
pub fn detect_and_estimate(beliefs: &[AugmentedBelief], threshold: f64, time: usize) -> Vec<TrackEstimate> {
    beliefs
        .iter()
        .enumerate()
        .filter_map(|(k, b)| {
            let existence = b.existence_prob();
            if existence <= threshold || existence <= 0.0 {
                return None;
            }
            let mut mean = [0.0; 4];
            for (j, x) in b.particles.iter().enumerate() {
                let w: f64 = b.row(j).iter().sum();
                if w == 0.0 {
                    continue;
                }
                for (m, v) in mean.iter_mut().zip(x) {
                    *m += w * v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= existence);
            let class_pmf = b.class_marginals().into_iter().map(|w| w / existence).collect();
            Some(TrackEstimate {
                pt_index: k,
                time,
                position: [mean[0], mean[1]],
                velocity: [mean[2], mean[3]],
                existence_prob: existence,
                class_pmf,
                label: k as u64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn belief(particles: Vec<[f64; 4]>, weights: Vec<f64>, classes: usize) -> AugmentedBelief {
        let e: f64 = weights.iter().sum();
        AugmentedBelief::new(particles, weights, 1.0 - e, classes).unwrap()
    }

    #[test]
    fn below_threshold_is_silent() {
        let b = belief(vec![[0.0; 4]], vec![0.4], 1);
        assert!(detect_and_estimate(&[b], 0.5, 0).is_empty());
    }

    #[test]
    fn single_particle_is_exact() {
        let x = [3.5, -2.0, 0.7, 0.1];
        let b = belief(vec![x], vec![0.2, 0.8], 2);
        let est = detect_and_estimate(&[b], 0.5, 4);
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].position, [3.5, -2.0]);
        assert_eq!(est[0].velocity, [0.7, 0.1]);
        assert_eq!(est[0].time, 4);
        assert!((est[0].class_pmf[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn two_particles_give_midpoint() {
        let b = belief(vec![[0.0, 0.0, 1.0, 0.0], [10.0, 4.0, 3.0, 2.0]], vec![0.45, 0.45], 1);
        let est = detect_and_estimate(&[AugmentedBelief::nonexistent(1), b], 0.5, 0);
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].label, 1);
        assert!((est[0].position[0] - 5.0).abs() < 1e-12);
        assert!((est[0].position[1] - 2.0).abs() < 1e-12);
        assert!((est[0].velocity[0] - 2.0).abs() < 1e-12);
    }
}
