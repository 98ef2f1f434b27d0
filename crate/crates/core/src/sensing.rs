//! PU activity, per-user sensing reports and Bayesian fusion.
//!
//! `S = true` means the PU is idle and the subchannel is available.

use rand::Rng;

/// True availability `s[m][n]`, reports `reports[m][n][j]` and posteriors `beta[m][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingSnapshot {
    pub s: Vec<Vec<bool>>,
    pub reports: Vec<Vec<Vec<bool>>>,
    pub beta: Vec<Vec<f64>>,
    /// Set for each (m, n) whose likelihoods both vanished.
    pub degenerate: Vec<Vec<bool>>,
}

/// Fused availability posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub beta: f64,
    /// Both likelihoods were zero; `beta` fell back to the prior.
    pub degenerate: bool,
}

/// Availability from a uniform draw. Thresholding keeps draws comparable
/// across activity levels.
pub fn pu_state_from_uniform(u: f64, q_act: f64) -> bool {
    u >= q_act
}

/// Report from a uniform draw given the true state.
pub fn report_from_uniform(u: f64, available: bool, q_f: f64, q_d: f64) -> bool {
    if available {
        u >= q_f
    } else {
        u < 1.0 - q_d
    }
}

/// Draws `s[m][n]` with activity `q_act[m]` in cluster `m`.
pub fn draw_pu_states<R: Rng + ?Sized>(q_act: &[f64], subchannels: usize, rng: &mut R) -> Vec<Vec<bool>> {
    q_act
        .iter()
        .map(|&q| (0..subchannels).map(|_| pu_state_from_uniform(rng.random(), q)).collect())
        .collect()
}

/// Draws one report per reporter of each cluster. `reporters[m]` is the
/// number of sensing users in cluster `m`.
pub fn draw_reports<R: Rng + ?Sized>(
    s: &[Vec<bool>],
    reporters: &[usize],
    q_f: f64,
    q_d: f64,
    rng: &mut R,
) -> Vec<Vec<Vec<bool>>> {
    s.iter()
        .zip(reporters)
        .map(|(row, &j)| {
            row.iter()
                .map(|&avail| (0..j).map(|_| report_from_uniform(rng.random(), avail, q_f, q_d)).collect())
                .collect()
        })
        .collect()
}

/// Bayes fusion of conditionally independent reports.
pub fn posterior_beta(reports: &[bool], prior_avail: f64, q_f: f64, q_d: f64) -> Posterior {
    let (mut l1, mut l0) = (1.0, 1.0);
    for &r in reports {
        if r {
            l1 *= 1.0 - q_f;
            l0 *= 1.0 - q_d;
        } else {
            l1 *= q_f;
            l0 *= q_d;
        }
    }
    let num = prior_avail * l1;
    let den = num + (1.0 - prior_avail) * l0;
    if den > 0.0 {
        Posterior { beta: (num / den).clamp(0.0, 1.0), degenerate: false }
    } else {
        Posterior { beta: prior_avail, degenerate: true }
    }
}

/// Fuses every (m, n) with prior availability `1 - q_act[m]`.
pub fn fuse(
    s: Vec<Vec<bool>>,
    reports: Vec<Vec<Vec<bool>>>,
    q_act: &[f64],
    q_f: f64,
    q_d: f64,
) -> SensingSnapshot {
    let mut beta = Vec::with_capacity(s.len());
    let mut degenerate = Vec::with_capacity(s.len());
    for (m, rows) in reports.iter().enumerate() {
        let post: Vec<Posterior> =
            rows.iter().map(|r| posterior_beta(r, 1.0 - q_act[m], q_f, q_d)).collect();
        beta.push(post.iter().map(|p| p.beta).collect());
        degenerate.push(post.iter().map(|p| p.degenerate).collect());
    }
    SensingSnapshot { s, reports, beta, degenerate }
}

/// Conditional average interference `(sum p) tau (1 - beta)`.
pub fn interference_level(total_power: f64, tau: f64, beta: f64) -> f64 {
    total_power * tau * (1.0 - beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn test_pu_state_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s0 = draw_pu_states(&[0.0; 3], 4, &mut rng);
        assert!(s0.iter().flatten().all(|&s| s));
        let s1 = draw_pu_states(&[1.0; 3], 4, &mut rng);
        assert!(s1.iter().flatten().all(|&s| !s));
    }

    #[test]
    fn test_pu_activity_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = draw_pu_states(&[0.3], 100_000, &mut rng);
        let busy = s[0].iter().filter(|&&x| !x).count() as f64 / 1e5;
        assert!((busy - 0.3).abs() < 0.005, "{busy}");
    }

    #[test]
    fn test_perfect_sensing_reports_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = draw_pu_states(&[0.5, 0.5], 50, &mut rng);
        let r = draw_reports(&s, &[3, 2], 0.0, 1.0, &mut rng);
        for (m, row) in r.iter().enumerate() {
            for (n, reps) in row.iter().enumerate() {
                assert!(reps.iter().all(|&x| x == s[m][n]));
            }
        }
    }

    #[test]
    fn test_report_error_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let s = vec![vec![true; n], vec![false; n]];
        let r = draw_reports(&s, &[1, 1], 0.2, 0.8, &mut rng);
        let fa = r[0].iter().filter(|x| !x[0]).count() as f64 / n as f64;
        let miss = r[1].iter().filter(|x| x[0]).count() as f64 / n as f64;
        assert!((fa - 0.2).abs() < 0.005, "{fa}");
        assert!((miss - 0.2).abs() < 0.005, "{miss}");
    }

    #[test]
    fn test_single_report_posterior() {
        let p = posterior_beta(&[true], 0.7, 0.2, 0.8);
        let want = 0.7 * 0.8 / (0.7 * 0.8 + 0.3 * 0.2);
        assert!((p.beta - want).abs() < 1e-15);
        assert!((p.beta - 0.90323).abs() < 1e-5);
        assert!(!p.degenerate);
    }

    #[test]
    fn test_no_reports_returns_prior() {
        assert_eq!(posterior_beta(&[], 0.7, 0.2, 0.8).beta, 0.7);
    }

    #[test]
    fn test_perfect_sensing_is_certain() {
        assert_eq!(posterior_beta(&[true; 4], 0.3, 0.0, 1.0).beta, 1.0);
        assert_eq!(posterior_beta(&[false; 4], 0.3, 0.0, 1.0).beta, 0.0);
    }

    #[test]
    fn test_contradictory_perfect_reports_are_flagged() {
        let p = posterior_beta(&[true, false], 0.6, 0.0, 1.0);
        assert!(p.degenerate);
        assert_eq!(p.beta, 0.6);
    }

    #[test]
    fn test_interference_level() {
        assert_eq!(interference_level(5.0, 0.3, 1.0), 0.0);
        assert_eq!(interference_level(0.0, 0.3, 0.2), 0.0);
        assert!((interference_level(2.0, 0.5, 0.6) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn test_posterior_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (q, qf, qd) = (0.3, 0.2, 0.8);
        let bins = 10;
        let mut hits = vec![0.0; bins];
        let mut mass = vec![0.0; bins];
        let mut count = vec![0usize; bins];
        for _ in 0..40_000 {
            let s = draw_pu_states(&[q], 5, &mut rng);
            let r = draw_reports(&s, &[3], qf, qd, &mut rng);
            for n in 0..5 {
                let b = posterior_beta(&r[0][n], 1.0 - q, qf, qd).beta;
                let i = ((b * bins as f64) as usize).min(bins - 1);
                count[i] += 1;
                mass[i] += b;
                if s[0][n] {
                    hits[i] += 1.0;
                }
            }
        }
        for i in 0..bins {
            if count[i] > 2000 {
                let freq = hits[i] / count[i] as f64;
                let mean = mass[i] / count[i] as f64;
                assert!((freq - mean).abs() < 0.02, "bin {i}: {freq} vs {mean}");
            }
        }
    }

    proptest! {
        #[test]
        fn prop_beta_monotone_in_idle_reports(j in 1usize..12, ones in 0usize..12,
                                              prior in 0.01f64..0.99,
                                              qf in 0.0f64..0.5, qd in 0.51f64..1.0) {
            let ones = ones.min(j - 1);
            let mut a = vec![false; j];
            a[..ones].iter_mut().for_each(|x| *x = true);
            let mut b = a.clone();
            b[ones] = true;
            let pa = posterior_beta(&a, prior, qf, qd);
            let pb = posterior_beta(&b, prior, qf, qd);
            prop_assert!((0.0..=1.0).contains(&pa.beta));
            if !pa.degenerate && !pb.degenerate {
                prop_assert!(pb.beta >= pa.beta - 1e-12);
            }
        }
    }
}
