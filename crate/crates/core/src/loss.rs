//! Simulated-versus-reference trajectory discrepancy.

use crate::error::LossError;
use crate::trajectory::Trajectory;

/// Loss assigned to candidates whose simulation fails. Finite, so ranking
/// stays well defined, and far above any physical mismatch.
pub const DIVERGED_LOSS: f64 = 1e6;

/// Timestamps may differ by at most this much between paired trajectories.
pub const TIME_TOLERANCE: f64 = 1e-9;

fn check_compatible(sim: &Trajectory, real: &Trajectory) -> Result<(), LossError> {
    if sim.n_samples() != real.n_samples() {
        return Err(LossError::ShapeMismatch(format!(
            "{} vs {} samples",
            sim.n_samples(),
            real.n_samples()
        )));
    }
    if sim.labels() != real.labels() {
        return Err(LossError::ShapeMismatch(format!(
            "keypoints {:?} vs {:?}",
            sim.labels(),
            real.labels()
        )));
    }
    for (row, (&a, &b)) in sim.times().iter().zip(real.times()).enumerate() {
        if (a - b).abs() > TIME_TOLERANCE {
            return Err(LossError::TimeMismatch { row, a, b });
        }
    }
    Ok(())
}

/// Mean over samples of the squared distance between the stacked keypoint
/// vectors: `(1/N) Σₜ ‖y_sim(t) − y_real(t)‖²`, in m².
pub fn trajectory_mse(sim: &Trajectory, real: &Trajectory) -> Result<f64, LossError> {
    check_compatible(sim, real)?;
    let total: f64 = (0..sim.n_samples())
        .map(|i| {
            sim.row(i)
                .iter()
                .zip(real.row(i))
                .map(|(a, b)| (a - b).norm_squared())
                .sum::<f64>()
        })
        .sum();
    Ok(total / sim.n_samples() as f64)
}

/// Time-averaged Euclidean error of each keypoint, in meters.
pub fn per_keypoint_mean_errors(sim: &Trajectory, real: &Trajectory) -> Result<Vec<f64>, LossError> {
    check_compatible(sim, real)?;
    let n = sim.n_samples() as f64;
    Ok((0..sim.n_keypoints())
        .map(|k| {
            (0..sim.n_samples())
                .map(|i| (sim.point(i, k) - real.point(i, k)).norm())
                .sum::<f64>()
                / n
        })
        .collect())
}

/// Keypoint distance averaged over time and keypoints, divided by the
/// characteristic length of the mechanism.
pub fn normalized_endpoint_error(
    sim: &Trajectory,
    real: &Trajectory,
    system_length: f64,
) -> Result<f64, LossError> {
    if !(system_length > 0.0) {
        return Err(LossError::InvalidLength(system_length));
    }
    let per = per_keypoint_mean_errors(sim, real)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64 / system_length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::keypoint_labels;
    use nalgebra::Vector2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Trajectory {
        let times = (0..n).map(|i| i as f64 * 0.02).collect();
        let pts = (0..n * k)
            .map(|_| Vector2::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
            .collect();
        Trajectory::new(times, keypoint_labels(k), pts).unwrap()
    }

    #[test]
    fn identical_trajectories_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_traj(&mut rng, 10, 4);
        assert_eq!(trajectory_mse(&t, &t).unwrap(), 0.0);
        assert_eq!(normalized_endpoint_error(&t, &t, 0.08).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_traj(&mut rng, 25, 3);
        let s = t.translated(Vector2::new(0.01, 0.0));
        let l = trajectory_mse(&s, &t).unwrap();
        assert!((l - 3e-4).abs() < 1e-15, "{l}");
    }

    #[test]
    fn four_millimetre_error_is_five_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_traj(&mut rng, 30, 4);
        let s = t.translated(Vector2::new(0.0024, -0.0032));
        let e = normalized_endpoint_error(&s, &t, 0.080).unwrap();
        assert!((e - 0.05).abs() < 1e-12, "{e}");
    }

    #[test]
    fn table_style_millimetre_errors_normalize() {
        // 0.87 mm and 2.79 mm on an 80 mm chain
        for (mm, pct) in [(0.87, 1.0875), (2.79, 3.4875)] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let t = random_traj(&mut rng, 10, 1);
            let s = t.translated(Vector2::new(mm * 1e-3, 0.0));
            let e = normalized_endpoint_error(&s, &t, 0.080).unwrap();
            assert!((100.0 * e - pct).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_traj(&mut rng, 40, 4);
        let b = random_traj(&mut rng, 40, 4);
        let mut naive = 0.0;
        for i in 0..40 {
            let mut row = 0.0;
            for k in 0..4 {
                let (p, q) = (a.point(i, k), b.point(i, k));
                row += (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y);
            }
            naive += row;
        }
        naive /= 40.0;
        let l = trajectory_mse(&a, &b).unwrap();
        assert!((l - naive).abs() <= 1e-15 * naive);
    }

    #[test]
    fn mismatches_are_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_traj(&mut rng, 10, 4);
        let b = random_traj(&mut rng, 9, 4);
        assert!(matches!(trajectory_mse(&a, &b), Err(LossError::ShapeMismatch(_))));
        let c = random_traj(&mut rng, 10, 3);
        assert!(matches!(trajectory_mse(&a, &c), Err(LossError::ShapeMismatch(_))));
        let shifted = Trajectory::new(
            a.times().iter().map(|t| t + 1e-6).collect(),
            a.labels().to_vec(),
            a.points().to_vec(),
        )
        .unwrap();
        assert!(matches!(trajectory_mse(&a, &shifted), Err(LossError::TimeMismatch { row: 0, .. })));
        assert!(normalized_endpoint_error(&a, &a, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_translation_sensitive(seed in any::<u64>(), dx in -0.05..0.05f64, dy in -0.05..0.05f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_traj(&mut rng, 12, 3);
            let b = random_traj(&mut rng, 12, 3);
            prop_assert_eq!(trajectory_mse(&a, &b).unwrap(), trajectory_mse(&b, &a).unwrap());
            let d = Vector2::new(dx, dy);
            let l = trajectory_mse(&a.translated(d), &a).unwrap();
            let expected = 3.0 * d.norm_squared();
            prop_assert!((l - expected).abs() <= 1e-14 * expected.max(1e-300) + 1e-300);
            prop_assert!(trajectory_mse(&a, &b).unwrap() > 0.0);
        }
    }
}
