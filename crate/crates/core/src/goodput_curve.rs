//! Concave piecewise-linear relay value curves.
//!
//! A curve maps the backhaul bits granted to a relay to the best conditional
//! weighted goodput its cluster can deliver with them. It is stored as its
//! breakpoints, starting at the origin and flat after the last one. Each
//! vertex also remembers the per-user rates of the allocation that achieves
//! it, which is what packet partitioning needs later.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::scenario::SolverConfig;
use crate::solver_rs::{solve_rs, solve_rs_total, RelayInput};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodputCurve {
    points: Vec<(f64, f64)>,
}

impl Default for GoodputCurve {
    fn default() -> Self {
        Self { points: vec![(0.0, 0.0)] }
    }
}

impl GoodputCurve {
    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Rate at which the curve saturates.
    pub fn saturation(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.0)
    }

    pub fn max_value(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(invalid(format!("rate must be nonnegative, got {r}")));
        }
        Ok(self.eval_unchecked(r))
    }

    /// Right derivative at `r`.
    pub fn slope(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(invalid(format!("rate must be nonnegative, got {r}")));
        }
        Ok(self.slope_unchecked(r))
    }

    pub(crate) fn eval_unchecked(&self, r: f64) -> f64 {
        let p = &self.points;
        if r >= self.saturation() {
            return self.max_value();
        }
        let i = p.partition_point(|q| q.0 <= r);
        let (a, b) = (p[i - 1], p[i]);
        a.1 + (b.1 - a.1) * (r - a.0) / (b.0 - a.0)
    }

    pub(crate) fn slope_unchecked(&self, r: f64) -> f64 {
        let p = &self.points;
        if r >= self.saturation() {
            return 0.0;
        }
        let i = p.partition_point(|q| q.0 <= r);
        let (a, b) = (p[i - 1], p[i]);
        (b.1 - a.1) / (b.0 - a.0)
    }

    /// Segment slopes, left to right.
    pub fn slopes(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect()
    }

    /// Number of reals fed back to the BS for this curve.
    pub fn feedback_size(&self) -> usize {
        2 * (self.points.len() - 1)
    }
}

/// Upper concave envelope of the origin and `points`, cut at the highest
/// point. Returns the curve and, for every breakpoint after the origin, the
/// index of the input point it came from.
fn hull(points: &[(f64, f64)]) -> (GoodputCurve, Vec<usize>) {
    let mut idx: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].0 > 0.0 && points[i].1 > 0.0 && points[i].0.is_finite())
        .collect();
    idx.sort_by(|&a, &b| {
        points[a].0.total_cmp(&points[b].0).then(points[b].1.total_cmp(&points[a].1))
    });
    // Points past the first maximum never lie on a nondecreasing envelope.
    let mut kept: Vec<usize> = Vec::new();
    let mut top = 0.0;
    for i in idx {
        if points[i].1 > top {
            top = points[i].1;
            kept.push(i);
        }
    }
    let mut chain: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut src: Vec<usize> = Vec::new();
    for i in kept {
        let c = points[i];
        while chain.len() >= 2 {
            let a = chain[chain.len() - 2];
            let b = chain[chain.len() - 1];
            // Drop b unless it lies strictly above the chord a-c.
            let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
            if cross >= 0.0 {
                chain.pop();
                src.pop();
            } else {
                break;
            }
        }
        chain.push(c);
        src.push(i);
    }
    (GoodputCurve { points: chain }, src)
}

/// Concave nondecreasing envelope of class points.
pub fn build_curve_general(class_points: &[(f64, f64)]) -> GoodputCurve {
    hull(class_points).0
}

/// One QoS class evaluated with unconstrained backhaul.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPoint {
    pub rate: f64,
    pub goodput: f64,
    /// Planned phase-two rate of every user of the cluster.
    pub user_rates: Vec<f64>,
}

/// A relay's curve plus the user rates behind every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayPlan {
    pub curve: GoodputCurve,
    /// `vertex_rates[i]` belongs to breakpoint `i`; the origin plans nothing.
    pub vertex_rates: Vec<Vec<f64>>,
}

impl RelayPlan {
    pub fn empty(users: usize) -> Self {
        Self { curve: GoodputCurve::default(), vertex_rates: vec![vec![0.0; users]] }
    }

    pub fn from_class_points(points: &[ClassPoint], users: usize) -> Self {
        let raw: Vec<(f64, f64)> = points.iter().map(|p| (p.rate, p.goodput)).collect();
        let (curve, src) = hull(&raw);
        let mut vertex_rates = vec![vec![0.0; users]];
        vertex_rates.extend(src.iter().map(|&i| points[i].user_rates.clone()));
        Self { curve, vertex_rates }
    }

    pub fn users(&self) -> usize {
        self.vertex_rates[0].len()
    }
}

/// Class points: for each class, the relay problem restricted to the class
/// members with no flow limit.
pub fn compute_class_points(
    input: &RelayInput,
    classes: &[Vec<usize>],
    cfg: &SolverConfig,
) -> Vec<ClassPoint> {
    classes.iter().map(|members| class_point(input, members, &vec![f64::INFINITY; input.users], cfg)).collect()
}

fn class_point(input: &RelayInput, members: &[usize], budgets: &[f64], cfg: &SolverConfig) -> ClassPoint {
    let kk = input.users;
    let mut restricted = input.clone();
    for (k, w) in restricted.weights.iter_mut().enumerate() {
        if !members.contains(&k) {
            *w = 0.0;
        }
    }
    let alloc = solve_rs(&restricted, budgets, cfg);
    let user_rates: Vec<f64> = (0..kk).map(|k| alloc.user_rate(k)).collect();
    let rate = user_rates.iter().sum();
    if alloc.objective > 0.0 && rate > 0.0 {
        ClassPoint { rate, goodput: alloc.objective, user_rates }
    } else {
        ClassPoint { rate: 0.0, goodput: 0.0, user_rates: vec![0.0; kk] }
    }
}

/// General curve: the best weighted goodput as a function of the cluster's
/// total rate, sampled where it bends. A segment is halved while the solved
/// value at its midpoint clears the chord by more than `cfg.curve_tolerance`.
pub fn build_plan_general(input: &RelayInput, cfg: &SolverConfig) -> RelayPlan {
    let kk = input.users;
    let full = compute_class_points(input, &[(0..kk).collect()], cfg).remove(0);
    if full.rate <= 0.0 {
        return RelayPlan::empty(kk);
    }
    let origin = ClassPoint { rate: 0.0, goodput: 0.0, user_rates: vec![0.0; kk] };
    let mut pts = vec![full];
    let mut pending = vec![(origin, pts[0].clone())];
    while let Some((a, b)) = pending.pop() {
        if pts.len() >= cfg.curve_max_points.max(1) {
            break;
        }
        let mid = 0.5 * (a.rate + b.rate);
        let alloc = solve_rs_total(input, mid, cfg);
        let user_rates: Vec<f64> = (0..kk).map(|k| alloc.user_rate(k)).collect();
        let p = ClassPoint { rate: user_rates.iter().sum(), goodput: alloc.objective, user_rates };
        let chord = a.goodput + (b.goodput - a.goodput) * (p.rate - a.rate) / (b.rate - a.rate);
        if p.rate > a.rate && p.rate < b.rate && p.goodput > chord * (1.0 + cfg.curve_tolerance) {
            pts.push(p.clone());
            pending.push((p.clone(), b));
            pending.push((a, p));
        }
    }
    RelayPlan::from_class_points(&pts, kk)
}

/// Two-segment curve with power split over subchannels in proportion to the
/// availability posterior.
///
/// `gains` holds the long-term gain per user and is only used when
/// `literal_gain` multiplies it into the effective gain once more.
pub fn build_curve_pfs(input: &RelayInput, gains: &[f64], literal_gain: bool) -> RelayPlan {
    let (nn, kk) = (input.subchannels, input.users);
    let beta_sum: f64 = input.beta.iter().sum();
    let mut user_rates = vec![0.0; kk];
    let mut total_rate = 0.0;
    let mut goodput = 0.0;
    if beta_sum > 0.0 && input.power > 0.0 {
        for n in 0..nn {
            let mut p = input.beta[n] * input.power / beta_sum;
            if input.coef[n] > 0.0 && input.threshold.is_finite() {
                p = p.min(input.threshold / input.coef[n]);
            }
            let gain = |k: usize| {
                let phi = input.phi[n * kk + k];
                if literal_gain { phi * gains[k] } else { phi }
            };
            let mut winner: Option<(usize, f64)> = None;
            for k in 0..kk {
                let score = input.weights[k] * (p * gain(k)).ln_1p();
                if score > 0.0 && winner.is_none_or(|(_, s)| score > s) {
                    winner = Some((k, score));
                }
            }
            if let Some((a, _)) = winner {
                let r = input.efficiency * (p * gain(a)).ln_1p() / LN_2;
                user_rates[a] += r;
                total_rate += r;
                goodput += input.value(n, a) * r;
            }
        }
    }
    if total_rate > 0.0 && goodput > 0.0 {
        RelayPlan {
            curve: GoodputCurve { points: vec![(0.0, 0.0), (total_rate, goodput)] },
            vertex_rates: vec![vec![0.0; kk], user_rates],
        }
    } else {
        RelayPlan::empty(kk)
    }
}

/// Splits `granted` backhaul bits among users so that they follow the curve:
/// the two vertices around `granted` are time-shared and each user receives
/// its share of the mixed plan. Returns fractions `d[k]` with `sum d <= 1`.
pub fn packet_partition(plan: &RelayPlan, granted: f64) -> Vec<f64> {
    let kk = plan.users();
    let pts = plan.curve.breakpoints();
    let r = granted.min(plan.curve.saturation());
    if !(r > 0.0) {
        return vec![0.0; kk];
    }
    let i = pts.partition_point(|q| q.0 < r).min(pts.len() - 1);
    let (a, b) = (pts[i - 1].0, pts[i].0);
    let theta = ((r - a) / (b - a)).clamp(0.0, 1.0);
    let mut d: Vec<f64> = (0..kk)
        .map(|k| ((1.0 - theta) * plan.vertex_rates[i - 1][k] + theta * plan.vertex_rates[i][k]) / r)
        .collect();
    let s: f64 = d.iter().sum();
    if s > 1.0 {
        d.iter_mut().for_each(|x| *x /= s);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_well_formed(c: &GoodputCurve) {
        let p = c.breakpoints();
        assert_eq!(p[0], (0.0, 0.0));
        for w in p.windows(2) {
            assert!(w[1].0 > w[0].0);
            assert!(w[1].1 >= w[0].1);
        }
        let s = c.slopes();
        for w in s.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(s.iter().all(|&x| x > 0.0));
    }

    fn sample_input(rng: &mut ChaCha8Rng, nn: usize, kk: usize) -> RelayInput {
        let beta: Vec<f64> = (0..nn).map(|_| rng.random_range(0.3..1.0)).collect();
        RelayInput {
            subchannels: nn,
            users: kk,
            phi: (0..nn * kk).map(|_| rng.random_range(0.05..3.0)).collect(),
            coef: vec![0.0; nn],
            beta,
            weights: (0..kk).map(|_| rng.random_range(0.5..2.0)).collect(),
            power: rng.random_range(1.0..20.0),
            threshold: 1.0,
            epsilon: 0.05,
            efficiency: 0.25,
        }
    }

    #[test]
    fn test_two_class_hand_example() {
        let c = build_curve_general(&[(2.0, 4.0), (3.0, 5.0)]);
        assert_eq!(c.breakpoints(), &[(0.0, 0.0), (2.0, 4.0), (3.0, 5.0)]);
        assert_eq!(c.slopes(), vec![2.0, 1.0]);
        assert!((c.eval(2.5).unwrap() - 4.5).abs() < 1e-15);
        assert_eq!(c.eval(10.0).unwrap(), 5.0);
        assert_eq!(c.slope(3.0).unwrap(), 0.0);
        assert_eq!(c.slope(2.0).unwrap(), 1.0);
        assert_eq!(c.slope(0.0).unwrap(), 2.0);
    }

    #[test]
    fn test_single_point_and_dominated_point() {
        let one = build_curve_general(&[(2.0, 4.0)]);
        assert_eq!(one.breakpoints(), &[(0.0, 0.0), (2.0, 4.0)]);
        let two = build_curve_general(&[(2.0, 4.0), (2.0, 1.0)]);
        assert_eq!(one, two);
        // Below the chord from the origin.
        let three = build_curve_general(&[(2.0, 4.0), (1.0, 1.0), (4.0, 3.0)]);
        assert_eq!(one, three);
    }

    #[test]
    fn test_eval_edge_cases() {
        let c = build_curve_general(&[(2.0, 4.0)]);
        assert_eq!(c.eval(0.0).unwrap(), 0.0);
        assert!(c.eval(-1.0).is_err());
        assert!(c.slope(-0.1).is_err());
        let empty = build_curve_general(&[]);
        assert_eq!(empty.eval(3.0).unwrap(), 0.0);
        assert_eq!(empty.slope(0.0).unwrap(), 0.0);
        assert_eq!(empty.feedback_size(), 0);
    }

    #[test]
    fn test_single_user_class_point_closed_form() {
        let input = RelayInput {
            subchannels: 1,
            users: 1,
            phi: vec![3.0],
            beta: vec![1.0],
            weights: vec![2.0],
            coef: vec![0.0],
            power: 4.0,
            threshold: 1.0,
            epsilon: 1e-9,
            efficiency: 0.25,
        };
        let pts = compute_class_points(&input, &[vec![0]], &SolverConfig::default());
        let r = 0.25 * (1.0 + 4.0 * 3.0f64).log2();
        assert!((pts[0].rate - r).abs() < 1e-9);
        assert!((pts[0].goodput - 2.0 * (1.0 - 1e-9) * r).abs() < 1e-9);
    }

    #[test]
    fn test_weight_scaling_between_identical_classes() {
        let input = RelayInput {
            subchannels: 2,
            users: 2,
            phi: vec![1.5, 1.5, 0.7, 0.7],
            beta: vec![0.9, 0.6],
            weights: vec![2.0, 1.0],
            coef: vec![0.0; 2],
            power: 5.0,
            threshold: 1.0,
            epsilon: 0.05,
            efficiency: 0.25,
        };
        let pts = compute_class_points(&input, &[vec![0], vec![1]], &SolverConfig::default());
        assert!(pts[0].goodput > pts[1].goodput);
        assert!((pts[0].rate - pts[1].rate).abs() < 1e-9);
    }

    #[test]
    fn test_pfs_curve_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = sample_input(&mut rng, 4, 5);
        let plan = build_curve_pfs(&input, &[1.0; 5], false);
        let c = &plan.curve;
        assert_well_formed(c);
        assert_eq!(c.breakpoints().len(), 2);
        assert_eq!(c.eval(0.0).unwrap(), 0.0);
        let sat = c.saturation();
        assert_eq!(c.eval(sat * 2.0).unwrap(), c.max_value());
        let planned: f64 = plan.vertex_rates[1].iter().sum();
        assert!((planned - sat).abs() < 1e-12);
    }

    #[test]
    fn test_pfs_single_user_takes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut input = sample_input(&mut rng, 4, 1);
        input.weights = vec![1.0];
        let plan = build_curve_pfs(&input, &[1.0], false);
        assert!((plan.vertex_rates[1][0] - plan.curve.saturation()).abs() < 1e-12);
    }

    #[test]
    fn test_pfs_zero_availability_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut input = sample_input(&mut rng, 3, 2);
        input.beta = vec![0.0; 3];
        let plan = build_curve_pfs(&input, &[1.0; 2], false);
        assert_eq!(plan.curve.breakpoints(), &[(0.0, 0.0)]);
    }

    #[test]
    fn test_partition_vertices_and_origin() {
        let plan = RelayPlan {
            curve: build_curve_general(&[(2.0, 4.0), (3.0, 5.0)]),
            vertex_rates: vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]],
        };
        assert_eq!(packet_partition(&plan, 0.0), vec![0.0, 0.0]);
        assert_eq!(packet_partition(&plan, 2.0), vec![1.0, 0.0]);
        assert_eq!(packet_partition(&plan, 3.0), vec![0.0, 1.0]);
        let mid = packet_partition(&plan, 2.5);
        assert!((mid[0] * 2.5 - 1.0).abs() < 1e-12);
        assert!((mid[1] * 2.5 - 1.5).abs() < 1e-12);
        let beyond = packet_partition(&plan, 9.0);
        assert_eq!(beyond, vec![0.0, 1.0]);
    }

    #[test]
    fn test_general_curve_replays_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = SolverConfig::default();
        for _ in 0..5 {
            let input = sample_input(&mut rng, 3, 3);
            let plan = build_plan_general(&input, &cfg);
            assert!(plan.curve.breakpoints().len() <= cfg.curve_max_points + 1);
            for w in plan.curve.breakpoints().windows(2) {
                let r = 0.5 * (w[0].0 + w[1].0);
                let budgets: Vec<f64> = packet_partition(&plan, r).iter().map(|d| d * r).collect();
                let got = solve_rs(&input, &budgets, &cfg).objective;
                let want = plan.curve.eval(r).unwrap();
                assert!((got - want).abs() <= 0.01 * want, "r {r}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn test_curve_point_cap_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = SolverConfig { curve_max_points: 2, curve_tolerance: 0.0, ..SolverConfig::default() };
        let input = sample_input(&mut rng, 4, 4);
        let plan = build_plan_general(&input, &cfg);
        assert!(plan.curve.breakpoints().len() <= 3);
        assert_eq!(plan.vertex_rates.len(), plan.curve.breakpoints().len());
    }

    #[test]
    fn test_general_dominates_pfs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = SolverConfig::default();
        for _ in 0..20 {
            let input = sample_input(&mut rng, 4, 5);
            let general = build_plan_general(&input, &cfg).curve;
            let pfs = build_curve_pfs(&input, &[1.0; 5], false).curve;
            assert_well_formed(&general);
            for &(r, g) in pfs.breakpoints() {
                assert!(general.eval(r).unwrap() >= g * 0.98 - 1e-12, "r {r}: {} < {g}", general.eval(r).unwrap());
            }
        }
    }

    proptest! {
        #[test]
        fn prop_general_curve_well_formed(pts in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..12)) {
            let c = build_curve_general(&pts);
            assert_well_formed(&c);
            for &(r, g) in &pts {
                let top = pts.iter().map(|p| p.1).fold(0.0, f64::max);
                prop_assert!(c.eval(r).unwrap() >= g.min(top) - 1e-9 || r == 0.0);
            }
        }

        #[test]
        fn prop_partition_sums_to_one(r in 0.001f64..5.0) {
            let plan = RelayPlan {
                curve: build_curve_general(&[(1.0, 3.0), (2.0, 4.0), (4.0, 4.5)]),
                vertex_rates: vec![vec![0.0; 3], vec![1.0, 0.0, 0.0], vec![0.5, 1.5, 0.0], vec![0.0, 1.0, 3.0]],
            };
            let d = packet_partition(&plan, r);
            let s: f64 = d.iter().sum();
            prop_assert!(s <= 1.0 + 1e-15);
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(d.iter().all(|&x| x >= 0.0));
        }
    }
}
