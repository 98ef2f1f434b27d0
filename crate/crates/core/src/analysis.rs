//! Asymptotic throughput formulas, brute-force oracles and run metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::goodput_curve::GoodputCurve;
use crate::scheduler::{System, TrialResult};
use crate::solver_bs::BsInput;
use crate::solver_rs::RelayInput;

/// Asymptotic per-user throughput of a relay-cluster mobile under PFS:
/// `N (1-q)(1-q^N) / (4 K_c) * log2(1 + (P/N) l ln K_c)`.
pub fn theorem1_throughput(subchannels: usize, q_act: f64, users: usize, power: f64, gain: f64) -> f64 {
    let n = subchannels as f64;
    let kc = users as f64;
    let gating = n * (1.0 - q_act) * (1.0 - q_act.powf(n));
    gating / (4.0 * kc) * (1.0 + power / n * gain * kc.ln()).log2()
}

/// Finite-`K_c` form: the log term averaged over the maximum of `K_c` unit
/// exponentials instead of evaluated at `ln K_c`.
pub fn theorem1_quadrature(subchannels: usize, q_act: f64, users: usize, power: f64, gain: f64) -> f64 {
    let n = subchannels as f64;
    let kc = users as f64;
    let gating = n * (1.0 - q_act) * (1.0 - q_act.powf(n));
    let a = power / n * gain;
    gating / kc * expect_max_exponential(users, |x| 0.25 * (1.0 + a * x).log2())
}

/// `E f(X)` for `X` the maximum of `k` independent unit exponentials, by
/// composite Simpson on the density `k e^-x (1 - e^-x)^(k-1)`.
pub fn expect_max_exponential(k: usize, f: impl Fn(f64) -> f64) -> f64 {
    let kf = k as f64;
    let upper = kf.ln() + 40.0;
    let steps = 20_000;
    let h = upper / steps as f64;
    let density = |x: f64| {
        let e = (-x).exp();
        if k == 1 {
            e
        } else if x == 0.0 {
            0.0
        } else {
            kf * e * ((kf - 1.0) * (-e).ln_1p()).exp()
        }
    };
    let mut s = 0.0;
    for i in 0..=steps {
        let x = i as f64 * h;
        let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(x) * density(x);
    }
    s * h / 3.0
}

/// Asymptotic per-user throughput without relays:
/// `(1-q)^(M+1) N / (M K_c) * log2(1 + (P/N) l ln(K_c M))`.
pub fn baseline_throughput_no_rs(subchannels: usize, q_act: f64, users: usize, relays: usize, power: f64, gain: f64) -> f64 {
    let n = subchannels as f64;
    let kc = users as f64;
    let m = relays as f64;
    (1.0 - q_act).powf(m + 1.0) * n / (m * kc) * (1.0 + power / n * gain * (kc * m).ln()).log2()
}

/// Index of the largest fading magnitude; ties go to the lowest index.
pub fn pfs_user_selection_asymptotic(magnitudes: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &x) in magnitudes.iter().enumerate() {
        if best.is_none_or(|b| x > magnitudes[b]) {
            best = Some(k);
        }
    }
    best
}

const ORACLE_MAX_SUBCHANNELS: usize = 2;
const ORACLE_MAX_RECEIVERS: usize = 3;

fn check_size(subchannels: usize, receivers: usize, grid: usize) -> Result<()> {
    if subchannels > ORACLE_MAX_SUBCHANNELS || receivers > ORACLE_MAX_RECEIVERS {
        return Err(Error::OracleTooLarge(format!("{subchannels} subchannels, {receivers} receivers")));
    }
    if grid < 2 {
        return Err(Error::InvalidArgument("power grid needs at least two points".into()));
    }
    Ok(())
}

/// Every power vector on the grid `{P i / (grid - 1)}` meeting the budget and
/// the per-subchannel interference limits.
fn power_grid(subchannels: usize, power: f64, coef: &[f64], threshold: f64, grid: usize) -> Vec<Vec<f64>> {
    let step = power / (grid - 1) as f64;
    let mut out = vec![Vec::new()];
    for n in 0..subchannels {
        let mut next = Vec::new();
        for prefix in &out {
            let used: f64 = prefix.iter().sum();
            for i in 0..grid {
                let p = step * i as f64;
                if used + p > power * (1.0 + 1e-12) || coef[n] * p > threshold * (1.0 + 1e-12) {
                    break;
                }
                let mut v: Vec<f64> = prefix.clone();
                v.push(p);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Every map from subchannel to receiver (`None` leaves it idle).
fn assignments(subchannels: usize, receivers: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![Vec::new()];
    for _ in 0..subchannels {
        let mut next = Vec::new();
        for prefix in &out {
            for k in std::iter::once(None).chain((0..receivers).map(Some)) {
                let mut v: Vec<Option<usize>> = prefix.clone();
                v.push(k);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn full_band_rate(g: f64, p: f64, phi: f64) -> f64 {
    g * (p * phi).ln_1p() / std::f64::consts::LN_2
}

/// Best relay objective over whole-subchannel assignments and grid powers.
/// Rates above a user's budget are cut, the most valuable bits kept first.
pub fn brute_force_rs(input: &RelayInput, budgets: &[f64], grid: usize) -> Result<f64> {
    let (nn, kk) = (input.subchannels, input.users);
    check_size(nn, kk, grid)?;
    let powers = power_grid(nn, input.power, &input.coef, input.threshold, grid);
    let mut best = 0.0f64;
    for assign in assignments(nn, kk) {
        for p in &powers {
            let mut total = 0.0;
            for k in 0..kk {
                let mut links: Vec<(f64, f64)> = (0..nn)
                    .filter(|&n| assign[n] == Some(k))
                    .map(|n| (input.value(n, k), full_band_rate(input.efficiency, p[n], input.phi[n * kk + k])))
                    .collect();
                links.sort_by(|a, b| b.0.total_cmp(&a.0));
                let mut left = budgets[k];
                for (v, r) in links {
                    let sent = r.min(left);
                    left -= sent;
                    total += v * sent;
                }
            }
            best = best.max(total);
        }
    }
    Ok(best)
}

/// Best decoupled BS objective over whole-subchannel assignments and grid powers.
pub fn brute_force_bs(input: &BsInput, curves: &[&GoodputCurve], grid: usize) -> Result<f64> {
    let (nn, kk) = (input.subchannels, input.receivers);
    check_size(nn, kk, grid)?;
    let powers = power_grid(nn, input.power, &input.coef, input.threshold, grid);
    let mut best = 0.0f64;
    for assign in assignments(nn, kk) {
        for p in &powers {
            let mut total = 0.0;
            for n in 0..nn {
                if let Some(k) = assign[n] {
                    let r = full_band_rate(input.efficiency, p[n], input.phi[n * kk + k]);
                    total += if k < input.relays {
                        (1.0 - input.epsilon) * input.beta[n] * curves[k].eval_unchecked(r)
                    } else {
                        input.value(n, k) * r
                    };
                }
            }
            best = best.max(total);
        }
    }
    Ok(best)
}

/// Expected weighted goodput over every phase-one decode pattern. Relay `m`
/// is credited `G_m` of the bits it actually decoded on all its subchannels.
pub fn full_expectation_objective(input: &BsInput, rate: &[f64], curves: &[&GoodputCurve]) -> Result<f64> {
    let (nn, kk) = (input.subchannels, input.receivers);
    if nn > 20 {
        return Err(Error::OracleTooLarge(format!("{nn} subchannels")));
    }
    let success: Vec<f64> = input.beta.iter().map(|b| (1.0 - input.epsilon) * b).collect();
    let mut total = 0.0;
    for pattern in 0u32..(1 << nn) {
        let on = |n: usize| pattern >> n & 1 == 1;
        let prob: f64 = (0..nn).map(|n| if on(n) { success[n] } else { 1.0 - success[n] }).product();
        if prob == 0.0 {
            continue;
        }
        let mut value = 0.0;
        for k in 0..kk {
            if k < input.relays {
                let decoded: f64 = (0..nn).filter(|&n| on(n)).map(|n| rate[n * kk + k]).sum();
                value += curves[k].eval_unchecked(decoded);
            } else {
                value += (0..nn).filter(|&n| on(n)).map(|n| input.weights[k] * rate[n * kk + k]).sum::<f64>();
            }
        }
        total += prob * value;
    }
    Ok(total)
}

/// Number of distance bins in histogram outputs.
pub const DISTANCE_BINS: usize = 10;

pub fn distance_bin(distance: f64, cell_radius: f64, bins: usize) -> usize {
    ((distance / cell_radius * bins as f64) as usize).min(bins - 1)
}

/// Metrics of one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    /// `sum_k ln max(mean goodput_k, floor)`.
    pub sum_log_goodput: f64,
    /// `sum_k ln R~_k` at the final frame.
    pub sum_log_rtilde: f64,
    pub mean_goodput: f64,
    pub edge_goodput: f64,
    pub edge_access: f64,
    pub center_access: f64,
    pub hop1_per: f64,
    pub hop2_per: f64,
    pub hop1_packets: u64,
    pub hop2_packets: u64,
    pub feedback_per_frame: f64,
    pub clean_fraction: f64,
    pub relay_overloads: usize,
}

fn mean_where(values: &[f64], mask: &[bool], want: bool) -> f64 {
    let sel: Vec<f64> = values.iter().zip(mask).filter(|(_, &e)| e == want).map(|(&v, _)| v).collect();
    if sel.is_empty() { 0.0 } else { sel.iter().sum::<f64>() / sel.len() as f64 }
}

impl RunMetrics {
    pub fn from_trial(t: &TrialResult, subchannels: usize, floor: f64) -> Result<Self> {
        if t.frames == 0 {
            return Err(Error::Empty("trial without frames"));
        }
        if t.mean_goodput.is_empty() {
            return Err(Error::Empty("trial without users"));
        }
        let users = t.mean_goodput.len() as f64;
        Ok(Self {
            sum_log_goodput: t.mean_goodput.iter().map(|g| g.max(floor).ln()).sum(),
            sum_log_rtilde: t.final_rtilde.iter().map(|r| r.ln()).sum(),
            mean_goodput: t.mean_goodput.iter().sum::<f64>() / users,
            edge_goodput: mean_where(&t.mean_goodput, &t.edge, true),
            edge_access: mean_where(&t.access, &t.edge, true),
            center_access: mean_where(&t.access, &t.edge, false),
            hop1_per: t.hops[0].rate(),
            hop2_per: t.hops[1].rate(),
            hop1_packets: t.hops[0].scheduled,
            hop2_packets: t.hops[1].scheduled,
            feedback_per_frame: t.feedback_reals as f64 / t.frames as f64,
            clean_fraction: t.clean_subchannels as f64 / (t.frames * subchannels) as f64,
            relay_overloads: t.relay_overloads,
        })
    }

    /// Field names and values in output order.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("sum_log_goodput", self.sum_log_goodput),
            ("sum_log_rtilde", self.sum_log_rtilde),
            ("mean_goodput", self.mean_goodput),
            ("edge_goodput", self.edge_goodput),
            ("edge_access", self.edge_access),
            ("center_access", self.center_access),
            ("hop1_per", self.hop1_per),
            ("hop2_per", self.hop2_per),
            ("hop1_packets", self.hop1_packets as f64),
            ("hop2_packets", self.hop2_packets as f64),
            ("feedback_per_frame", self.feedback_per_frame),
            ("clean_fraction", self.clean_fraction),
            ("relay_overloads", self.relay_overloads as f64),
        ]
    }
}

/// Mean and sample standard deviation of every metric over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub trials: usize,
    pub mean: Vec<(&'static str, f64)>,
    pub std: Vec<f64>,
    /// Pooled packet error rates.
    pub hop1_per: f64,
    pub hop2_per: f64,
}

impl AggregateMetrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.mean.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

pub fn aggregate(runs: &[RunMetrics]) -> Result<AggregateMetrics> {
    if runs.is_empty() {
        return Err(Error::Empty("no runs to aggregate"));
    }
    let rows: Vec<Vec<(&'static str, f64)>> = runs.iter().map(|r| r.fields()).collect();
    let n = runs.len() as f64;
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for j in 0..rows[0].len() {
        let m = rows.iter().map(|r| r[j].1).sum::<f64>() / n;
        let v = if runs.len() > 1 { rows.iter().map(|r| (r[j].1 - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        mean.push((rows[0][j].0, m));
        std.push(v.sqrt());
    }
    let pooled = |pk: fn(&RunMetrics) -> (f64, u64)| {
        let (e, s) = runs.iter().map(pk).fold((0.0, 0u64), |a, (per, cnt)| (a.0 + per * cnt as f64, a.1 + cnt));
        if s == 0 { 0.0 } else { e / s as f64 }
    };
    Ok(AggregateMetrics {
        trials: runs.len(),
        mean,
        std,
        hop1_per: pooled(|r| (r.hop1_per, r.hop1_packets)),
        hop2_per: pooled(|r| (r.hop2_per, r.hop2_packets)),
    })
}

/// Per distance bin: user count and summed mean goodput.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceHistogram {
    pub system: System,
    pub counts: Vec<usize>,
    pub goodput_sum: Vec<f64>,
}

impl DistanceHistogram {
    pub fn new(system: System, bins: usize) -> Self {
        Self { system, counts: vec![0; bins], goodput_sum: vec![0.0; bins] }
    }

    pub fn add(&mut self, t: &TrialResult, cell_radius: f64) {
        let bins = self.counts.len();
        for (&d, &g) in t.distance.iter().zip(&t.mean_goodput) {
            let b = distance_bin(d, cell_radius, bins);
            self.counts[b] += 1;
            self.goodput_sum[b] += g;
        }
    }

    pub fn mean(&self, bin: usize) -> f64 {
        if self.counts[bin] == 0 { 0.0 } else { self.goodput_sum[bin] / self.counts[bin] as f64 }
    }
}

/// Empirical CDF of `values` at `points` evenly spaced probabilities:
/// pairs `(value, probability)`.
pub fn empirical_cdf(values: &[f64], points: usize) -> Vec<(f64, f64)> {
    if values.is_empty() || points == 0 {
        return Vec::new();
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (1..=points)
        .map(|i| {
            let p = i as f64 / points as f64;
            let idx = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
            (v[idx], p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goodput_curve::build_curve_general;
    use crate::scheduler::PacketStats;
    use crate::solver_bs::decoupled_objective;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn test_theorem1_example() {
        let v = theorem1_throughput(4, 0.3, 1000, 40.0, 1.0);
        let want = 4.0 * 0.7 * (1.0 - 0.3f64.powi(4)) / 4000.0 * (1.0 + 10.0 * 1000f64.ln()).log2();
        assert!((v - want).abs() < 1e-15);
        assert!((v - 4.257e-3).abs() < 5e-7);
    }

    #[test]
    fn test_theorem1_limits() {
        assert_eq!(theorem1_throughput(4, 1.0, 50, 40.0, 1.0), 0.0);
        let v = theorem1_throughput(4, 0.0, 50, 40.0, 1.0);
        assert!((v - 4.0 / 200.0 * (1.0 + 10.0 * 50f64.ln()).log2()).abs() < 1e-15);
    }

    #[test]
    fn test_theorem1_identity() {
        for &(n, q, k) in &[(4, 0.3, 25), (2, 0.1, 200), (8, 0.5, 7)] {
            let t = theorem1_throughput(n, q, k, 20.0, 0.5);
            let nf = n as f64;
            let lhs = t * k as f64 / (nf * (1.0 - q) * (1.0 - q.powf(nf)));
            let rhs = 0.25 * (1.0 + 20.0 / nf * 0.5 * (k as f64).ln()).log2();
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn test_baseline_formula() {
        let v = baseline_throughput_no_rs(4, 0.0, 30, 1, 40.0, 1.0);
        assert!((v - 4.0 / 30.0 * (1.0 + 10.0 * 30f64.ln()).log2()).abs() < 1e-15);
        assert_eq!(baseline_throughput_no_rs(4, 1.0, 30, 6, 40.0, 1.0), 0.0);
        let ratio = 0.7f64.powi(7) / (0.7 * (1.0 - 0.3f64.powi(4)));
        assert!((ratio - 0.1186).abs() < 5e-5);
    }

    #[test]
    fn test_gating_factor_order() {
        for qi in 1..100 {
            let q = qi as f64 / 100.0;
            for n in 1..9 {
                for m in 1..9 {
                    let relay = (1.0 - q) * (1.0 - q.powi(n));
                    let direct = (1.0 - q).powi(m + 1);
                    assert!(relay >= direct - 1e-15);
                }
            }
        }
    }

    #[test]
    fn test_max_exponential_moments() {
        // E max of k unit exponentials is the harmonic number H_k.
        for k in [1usize, 5, 200] {
            let h: f64 = (1..=k).map(|i| 1.0 / i as f64).sum();
            assert!((expect_max_exponential(k, |x| x) - h).abs() < 1e-8);
            assert!((expect_max_exponential(k, |_| 1.0) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn test_quadrature_tracks_closed_form() {
        let r25 = theorem1_quadrature(4, 0.3, 25, 40.0, 1.0) / theorem1_throughput(4, 0.3, 25, 40.0, 1.0);
        let r2000 = theorem1_quadrature(4, 0.3, 2000, 40.0, 1.0) / theorem1_throughput(4, 0.3, 2000, 40.0, 1.0);
        assert!((r2000 - 1.0).abs() < (r25 - 1.0).abs());
        assert!((r2000 - 1.0).abs() < 0.05);
    }

    #[test]
    fn test_selection_rule() {
        assert_eq!(pfs_user_selection_asymptotic(&[0.3]), Some(0));
        assert_eq!(pfs_user_selection_asymptotic(&[0.1, 2.0, 0.5]), Some(1));
        assert_eq!(pfs_user_selection_asymptotic(&[]), None);
    }

    fn relay(rng: &mut ChaCha8Rng, nn: usize, kk: usize) -> RelayInput {
        let beta: Vec<f64> = (0..nn).map(|_| rng.random_range(0.3..1.0)).collect();
        RelayInput {
            subchannels: nn,
            users: kk,
            phi: (0..nn * kk).map(|_| rng.random_range(0.1..5.0)).collect(),
            coef: beta.iter().map(|b| rng.random_range(0.0..0.2) * (1.0 - b)).collect(),
            beta,
            weights: (0..kk).map(|_| rng.random_range(0.5..2.0)).collect(),
            power: rng.random_range(1.0..10.0),
            threshold: 1.0,
            epsilon: 0.05,
            efficiency: 0.25,
        }
    }

    #[test]
    fn test_oracle_single_link() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut input = relay(&mut rng, 1, 1);
        input.coef = vec![0.0];
        let v = brute_force_rs(&input, &[f64::INFINITY], 51).unwrap();
        let want = input.value(0, 0) * full_band_rate(0.25, input.power, input.phi[0]);
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn test_oracle_zero_power_and_size_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut input = relay(&mut rng, 2, 2);
        input.power = 0.0;
        assert_eq!(brute_force_rs(&input, &[f64::INFINITY; 2], 51).unwrap(), 0.0);
        let big = relay(&mut rng, 3, 2);
        assert!(matches!(brute_force_rs(&big, &[1.0; 2], 51), Err(Error::OracleTooLarge(_))));
    }

    #[test]
    fn test_oracle_respects_budgets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = relay(&mut rng, 2, 2);
        let free = brute_force_rs(&input, &[f64::INFINITY; 2], 21).unwrap();
        let tight = brute_force_rs(&input, &[0.1, 0.1], 21).unwrap();
        assert!(tight <= free);
        let cap = input.weights.iter().map(|w| 0.95 * w * 0.1).sum::<f64>();
        assert!(tight <= cap + 1e-12);
    }

    #[test]
    fn test_power_grid_feasible() {
        for p in power_grid(2, 4.0, &[0.5, 0.0], 1.0, 11) {
            assert!(p.iter().sum::<f64>() <= 4.0 + 1e-12);
            assert!(0.5 * p[0] <= 1.0 + 1e-12);
        }
        assert_eq!(assignments(2, 2).len(), 9);
    }

    #[test]
    fn test_expectation_matches_decoupled_for_single_holdings() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let nn = rng.random_range(1..5);
            let relays = rng.random_range(0..3);
            let kk = relays + rng.random_range(1..3);
            let beta: Vec<f64> = (0..nn).map(|_| rng.random()).collect();
            let input = BsInput {
                subchannels: nn,
                receivers: kk,
                relays,
                phi: vec![1.0; nn * kk],
                beta,
                weights: (0..kk).map(|_| rng.random_range(0.1..2.0)).collect(),
                coef: vec![0.0; nn],
                power: 1.0,
                threshold: 1.0,
                epsilon: 0.05,
                efficiency: 0.5,
            };
            let curves: Vec<GoodputCurve> =
                (0..relays).map(|_| build_curve_general(&[(1.0, 2.0), (2.5, 3.0)])).collect();
            let refs: Vec<&GoodputCurve> = curves.iter().collect();
            let mut rate = vec![0.0; nn * kk];
            for n in 0..nn {
                let k = rng.random_range(0..kk);
                // A relay takes at most one subchannel.
                if k < relays && (0..n).any(|j| rate[j * kk + k] > 0.0) {
                    continue;
                }
                rate[n * kk + k] = rng.random_range(0.1..3.0);
            }
            let full = full_expectation_objective(&input, &rate, &refs).unwrap();
            let dec = decoupled_objective(&input, &rate, &refs);
            assert!((full - dec).abs() < 1e-12, "{full} vs {dec}");
        }
    }

    fn trial(goodput: Vec<f64>, access: Vec<f64>, edge: Vec<bool>, distance: Vec<f64>) -> TrialResult {
        let k = goodput.len();
        TrialResult {
            system: System::Proposed,
            replication: 0,
            topology_seed: 0,
            frames: 10,
            mean_scheduled: goodput.clone(),
            final_rtilde: vec![1.0; k],
            mean_goodput: goodput,
            access,
            distance,
            edge,
            hops: [PacketStats { scheduled: 20, errors: 1 }, PacketStats::default()],
            feedback_reals: 40,
            clean_subchannels: 12,
            relay_overloads: 0,
            trace: Vec::new(),
        }
    }

    #[test]
    fn test_metrics_basic() {
        let t = trial(vec![1.0, 2.0, 0.0], vec![1.0, 0.5, 0.0], vec![false, true, true], vec![100.0, 3000.0, 4999.0]);
        let m = RunMetrics::from_trial(&t, 4, 1e-6).unwrap();
        assert_eq!(m.sum_log_rtilde, 0.0);
        assert!((m.sum_log_goodput - (2f64.ln() + 1e-6f64.ln())).abs() < 1e-12);
        assert_eq!(m.edge_access, 0.25);
        assert_eq!(m.center_access, 1.0);
        assert_eq!(m.hop1_per, 0.05);
        assert_eq!(m.feedback_per_frame, 4.0);
        assert_eq!(m.clean_fraction, 0.3);
        let mut h = DistanceHistogram::new(System::Proposed, DISTANCE_BINS);
        h.add(&t, 5000.0);
        assert_eq!(h.counts.iter().sum::<usize>(), 3);
        assert_eq!(h.counts[9], 1);
        assert_eq!(h.mean(6), 2.0);
    }

    #[test]
    fn test_single_distance_single_bin() {
        let t = trial(vec![1.0; 4], vec![1.0; 4], vec![true; 4], vec![2500.0; 4]);
        let mut h = DistanceHistogram::new(System::Proposed, DISTANCE_BINS);
        h.add(&t, 5000.0);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn test_aggregate() {
        let t = trial(vec![1.0, 2.0], vec![1.0, 1.0], vec![true, true], vec![1.0, 2.0]);
        let a = RunMetrics::from_trial(&t, 4, 1e-6).unwrap();
        let mut b = a.clone();
        b.mean_goodput = 2.5;
        b.hop1_packets = 0;
        let agg = aggregate(&[a, b]).unwrap();
        assert_eq!(agg.get("mean_goodput"), Some(2.0));
        assert_eq!(agg.get("edge_access"), Some(1.0));
        assert_eq!(agg.hop1_per, 0.05);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn test_empty_trial_rejected() {
        let mut t = trial(vec![1.0], vec![1.0], vec![true], vec![1.0]);
        t.frames = 0;
        assert!(RunMetrics::from_trial(&t, 4, 1e-6).is_err());
    }

    #[test]
    fn test_empirical_cdf() {
        let c = empirical_cdf(&[3.0, 1.0, 2.0, 4.0], 4);
        assert_eq!(c, vec![(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]);
    }

    proptest! {
        #[test]
        fn prop_theorem1_monotone_in_activity(q in 0.0f64..0.99, dq in 0.001f64..0.01) {
            let a = theorem1_throughput(4, q, 50, 40.0, 1.0);
            let b = theorem1_throughput(4, (q + dq).min(1.0), 50, 40.0, 1.0);
            prop_assert!(b <= a + 1e-15);
        }

        #[test]
        fn prop_access_in_unit_interval(acc in proptest::collection::vec(0.0f64..=1.0, 1..20)) {
            let k = acc.len();
            let edge: Vec<bool> = (0..k).map(|i| i % 2 == 0).collect();
            let t = trial(vec![1.0; k], acc, edge, vec![10.0; k]);
            let m = RunMetrics::from_trial(&t, 4, 1e-6).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.edge_access));
            prop_assert!((0.0..=1.0).contains(&m.center_access));
        }
    }
}
