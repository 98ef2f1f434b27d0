//! Relay-side allocation by dual decomposition.
//!
//! Subchannel, power, interference and flow-balance constraints are priced by
//! multipliers `(lambda, nu, eta, mu)` and the multipliers follow projected
//! subgradient steps. For fixed prices every link solves a scalar
//! water-filling problem and each subchannel goes to the link with the largest
//! marginal benefit `X`.
//!
//! Every subchannel assignment visited by the dual loop is turned into a
//! feasible allocation by solving the remaining convex problem exactly, and the
//! best one is returned together with the best dual bound. When flow budgets
//! bind and the gap stays open, a time-shared allocation is recovered from a
//! small LP over candidate link powers.
//!
//! Internally powers are in units of the budget and values are scaled so the
//! largest value per bit is one.

use std::collections::HashSet;
use std::f64::consts::LN_2;

use log::debug;
use microlp::{ComparisonOp, OptimizationDirection, Problem as Lp};

use crate::goodput_curve::GoodputCurve;
use crate::scenario::SolverConfig;

const NU_FLOOR: f64 = 1e-14;
/// Stop when the dual bound has not moved by this much over a window.
const STALL_WINDOW: usize = 400;

/// Rate of a link with bandwidth share `alpha`, power `p`, gain `phi`.
pub fn link_rate(efficiency: f64, alpha: f64, p: f64, phi: f64) -> f64 {
    if alpha <= 0.0 || p <= 0.0 || phi <= 0.0 {
        return 0.0;
    }
    efficiency * alpha * (p * phi / alpha).ln_1p() / LN_2
}

/// Optimal relay power on a link for fixed multipliers.
#[allow(clippy::too_many_arguments)]
pub fn power_closed_form(
    alpha: f64,
    beta: f64,
    w: f64,
    mu_k: f64,
    nu: f64,
    eta_n: f64,
    tau: f64,
    phi: f64,
    epsilon: f64,
) -> f64 {
    let price = nu + eta_n * tau * (1.0 - beta);
    water_level(alpha, 0.25, (1.0 - epsilon) * beta * w - mu_k, price, phi)
}

/// `alpha (g v / (ln2 price) - 1/phi)^+` with the degenerate cases clamped to zero.
pub fn water_level(alpha: f64, g: f64, value: f64, price: f64, phi: f64) -> f64 {
    if alpha <= 0.0 || value <= 0.0 || phi <= 0.0 || !(price > 0.0) {
        return 0.0;
    }
    alpha * (g * value / (LN_2 * price) - 1.0 / phi).max(0.0)
}

/// Marginal benefit of bandwidth for a relay link at `alpha = 1`.
pub fn marginal_benefit_x(p: f64, phi: f64, beta: f64, w: f64, mu_k: f64, epsilon: f64) -> f64 {
    marginal_benefit(0.25, (1.0 - epsilon) * beta * w - mu_k, p, phi)
}

pub fn marginal_benefit(g: f64, value: f64, p: f64, phi: f64) -> f64 {
    let s = p * phi;
    g * value * ((s).ln_1p() / LN_2 - s / (LN_2 * (1.0 + s)))
}

/// Index of the largest positive entry; the lowest index wins ties.
pub fn assign_subchannel(x: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in x.iter().enumerate() {
        if v > 0.0 && best.is_none_or(|b| v > x[b]) {
            best = Some(k);
        }
    }
    best
}

/// Multipliers of the relaxed problem.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub nu: f64,
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub iteration: usize,
}

/// Constraint slack (budget minus usage) at the current inner solution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Residuals {
    pub subchannel: Vec<f64>,
    pub power: f64,
    pub interference: Vec<f64>,
    pub flow: Vec<f64>,
}

/// One projected subgradient step with step size `step0 / sqrt(i)`.
pub fn subgradient_step(duals: &DualState, res: &Residuals, i: usize, step0: f64) -> DualState {
    let d = step0 / (i.max(1) as f64).sqrt();
    let upd = |m: &[f64], r: &[f64]| -> Vec<f64> {
        m.iter().zip(r).map(|(a, b)| (a - d * b).max(0.0)).collect()
    };
    DualState {
        lambda: upd(&duals.lambda, &res.subchannel),
        nu: (duals.nu - d * res.power).max(0.0),
        eta: upd(&duals.eta, &res.interference),
        mu: upd(&duals.mu, &res.flow),
        iteration: i + 1,
    }
}

/// Everything a relay knows about its cluster in one frame. Link arrays are
/// indexed `n * users + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayInput {
    pub subchannels: usize,
    pub users: usize,
    pub phi: Vec<f64>,
    pub beta: Vec<f64>,
    pub weights: Vec<f64>,
    /// Interference coefficient per subchannel, `tau (1 - beta)`.
    pub coef: Vec<f64>,
    pub power: f64,
    pub threshold: f64,
    pub epsilon: f64,
    pub efficiency: f64,
}

impl RelayInput {
    /// Conditional value of one delivered bit on link (n, k).
    pub fn value(&self, n: usize, k: usize) -> f64 {
        (1.0 - self.epsilon) * self.beta[n] * self.weights[k]
    }

    /// Weighted goodput of an allocation.
    pub fn objective(&self, rate: &[f64]) -> f64 {
        let mut s = 0.0;
        for n in 0..self.subchannels {
            for k in 0..self.users {
                s += self.value(n, k) * rate[n * self.users + k];
            }
        }
        s
    }
}

/// Relay allocation; arrays are indexed `n * users + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RsAllocation {
    pub subchannels: usize,
    pub users: usize,
    pub alpha: Vec<f64>,
    pub power: Vec<f64>,
    pub rate: Vec<f64>,
    pub objective: f64,
    pub dual_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    pub time_shared: bool,
    pub duals: DualState,
}

impl RsAllocation {
    pub fn empty(subchannels: usize, users: usize) -> Self {
        let z = vec![0.0; subchannels * users];
        Self {
            subchannels,
            users,
            alpha: z.clone(),
            power: z.clone(),
            rate: z,
            objective: 0.0,
            dual_bound: 0.0,
            iterations: 0,
            converged: true,
            time_shared: false,
            duals: DualState::default(),
        }
    }

    pub fn user_rate(&self, k: usize) -> f64 {
        (0..self.subchannels).map(|n| self.rate[n * self.users + k]).sum()
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    pub fn subchannel_power(&self, n: usize) -> f64 {
        self.power[n * self.users..(n + 1) * self.users].iter().sum()
    }
}

/// Solves the relay problem for per-user rate budgets (use infinity for none).
pub fn solve_rs(input: &RelayInput, budgets: &[f64], cfg: &SolverConfig) -> RsAllocation {
    assert_eq!(budgets.len(), input.users);
    solve_grouped(input, |_, k| k, budgets.to_vec(), cfg)
}

/// Solves the relay problem with one budget on the sum of all user rates.
pub fn solve_rs_total(input: &RelayInput, total: f64, cfg: &SolverConfig) -> RsAllocation {
    solve_grouped(input, |_, _| 0, vec![total], cfg)
}

fn solve_grouped(
    input: &RelayInput,
    group: impl Fn(usize, usize) -> usize,
    budgets: Vec<f64>,
    cfg: &SolverConfig,
) -> RsAllocation {
    let (nn, kk) = (input.subchannels, input.users);
    let mut links = Vec::with_capacity(nn * kk);
    for n in 0..nn {
        for k in 0..kk {
            links.push(LinkSpec {
                phi: input.phi[n * kk + k],
                g: input.efficiency,
                utility: Utility::Linear { value: input.value(n, k), group: Some(group(n, k)) },
            });
        }
    }
    let spec = ProblemSpec {
        subchannels: nn,
        receivers: kk,
        links,
        coef: input.coef.clone(),
        power: input.power,
        threshold: input.threshold,
        budgets,
        curves: &[],
    };
    let out = solve_problem(&spec, cfg);
    RsAllocation {
        subchannels: nn,
        users: kk,
        alpha: out.alpha,
        power: out.power,
        rate: out.rate,
        objective: out.objective,
        dual_bound: out.dual_bound,
        iterations: out.iterations,
        converged: out.converged,
        time_shared: out.time_shared,
        duals: out.duals,
    }
}

// ---------------------------------------------------------------------------
// Shared engine.

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Utility {
    /// `value * rate`, optionally counted against a flow group budget.
    Linear { value: f64, group: Option<usize> },
    /// `scale * curve(rate)`.
    Curve { scale: f64, curve: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LinkSpec {
    pub phi: f64,
    pub g: f64,
    pub utility: Utility,
}

pub(crate) struct ProblemSpec<'a> {
    pub subchannels: usize,
    pub receivers: usize,
    pub links: Vec<LinkSpec>,
    pub coef: Vec<f64>,
    pub power: f64,
    pub threshold: f64,
    pub budgets: Vec<f64>,
    pub curves: &'a [GoodputCurve],
}

pub(crate) struct Outcome {
    pub alpha: Vec<f64>,
    pub power: Vec<f64>,
    pub rate: Vec<f64>,
    pub objective: f64,
    pub dual_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    pub time_shared: bool,
    pub duals: DualState,
}

pub(crate) fn solve_problem(spec: &ProblemSpec, cfg: &SolverConfig) -> Outcome {
    let size = spec.subchannels * spec.receivers;
    let empty = || Outcome {
        alpha: vec![0.0; size],
        power: vec![0.0; size],
        rate: vec![0.0; size],
        objective: 0.0,
        dual_bound: 0.0,
        iterations: 0,
        converged: true,
        time_shared: false,
        duals: DualState::default(),
    };
    if !(spec.power > 0.0) {
        return empty();
    }
    let engine = match Engine::new(spec) {
        Some(e) => e,
        None => return empty(),
    };
    let res = engine.run(cfg);
    let mut out = empty();
    for j in 0..size {
        let a = res.best.alpha[j];
        if a > 0.0 && res.best.rate[j] > 0.0 {
            out.alpha[j] = a;
            out.power[j] = spec.power * a * res.best.x[j];
            out.rate[j] = res.best.rate[j];
        }
    }
    // Keep subchannel shares summing to at most one despite rounding.
    for n in 0..spec.subchannels {
        let row = &mut out.alpha[n * spec.receivers..(n + 1) * spec.receivers];
        let s: f64 = row.iter().sum();
        if s > 1.0 {
            row.iter_mut().for_each(|a| *a /= s);
        }
    }
    out.objective = res.best.value * engine.vscale;
    out.dual_bound = res.dual * engine.vscale;
    out.iterations = res.iterations;
    out.converged = res.converged;
    out.time_shared = res.time_shared;
    out.duals = res.duals;
    out
}

#[derive(Debug, Clone)]
struct Primal {
    alpha: Vec<f64>,
    /// Power per unit bandwidth share, in budget units.
    x: Vec<f64>,
    rate: Vec<f64>,
    value: f64,
    nu: f64,
    mu: Vec<f64>,
    eta: Vec<f64>,
}

struct RunResult {
    best: Primal,
    dual: f64,
    iterations: usize,
    converged: bool,
    time_shared: bool,
    duals: DualState,
}

struct Engine<'a> {
    nn: usize,
    kk: usize,
    links: Vec<LinkSpec>,
    /// Normalized interference coefficient per subchannel.
    coef: Vec<f64>,
    budgets: Vec<f64>,
    group_links: Vec<Vec<usize>>,
    /// Reference value per bit of each flow group.
    group_ref: Vec<f64>,
    useful: Vec<bool>,
    curves: &'a [GoodputCurve],
    vscale: f64,
}

/// Best rate for a curve-valued link: maximize `scale G(r) - price (2^(r/g) - 1) / phi`
/// over `r <= rcap`. Returns `(r, cost-free x, net value)`.
fn curve_best(curve: &GoodputCurve, scale: f64, g: f64, phi: f64, price: f64, rcap: f64) -> (f64, f64, f64) {
    let x_of = |r: f64| ((r / g * LN_2).exp_m1() / phi).max(0.0);
    let net = |r: f64| scale * curve.eval_unchecked(r) - price * x_of(r);
    let mut best = (0.0, 0.0, 0.0);
    let mut consider = |r: f64| {
        let r = r.clamp(0.0, rcap);
        let v = net(r);
        if v > best.2 {
            best = (r, x_of(r), v);
        }
    };
    let bp = curve.breakpoints();
    for w in bp.windows(2) {
        let (r0, r1) = (w[0].0, w[1].0);
        let s = (w[1].1 - w[0].1) / (r1 - r0);
        consider(r1);
        if price > 0.0 {
            let arg = scale * s * g * phi / (price * LN_2);
            if arg > 1.0 {
                let rs = g * arg.log2();
                if rs > r0 && rs < r1 {
                    consider(rs);
                }
            }
        } else {
            consider(r1);
        }
        if r0 >= rcap {
            break;
        }
    }
    consider(rcap.min(bp.last().map_or(0.0, |p| p.0)));
    best
}

impl<'a> Engine<'a> {
    fn new(spec: &'a ProblemSpec) -> Option<Self> {
        let p = spec.power;
        let nn = spec.subchannels;
        let kk = spec.receivers;
        let mut links = spec.links.clone();
        let mut useful = vec![false; links.len()];
        let mut vscale: f64 = 0.0;
        for (j, l) in links.iter_mut().enumerate() {
            l.phi *= p;
            let v = match l.utility {
                Utility::Linear { value, group } => {
                    let open = group.is_none_or(|g| spec.budgets[g] > 0.0);
                    if open { value } else { 0.0 }
                }
                Utility::Curve { scale, curve } => scale * spec.curves[curve].slope_unchecked(0.0),
            };
            useful[j] = v > 0.0 && l.phi > 0.0 && l.phi.is_finite();
            if useful[j] {
                vscale = vscale.max(v);
            }
        }
        if vscale <= 0.0 {
            return None;
        }
        for l in links.iter_mut() {
            match &mut l.utility {
                Utility::Linear { value, .. } => *value /= vscale,
                Utility::Curve { scale, .. } => *scale /= vscale,
            }
        }
        let coef: Vec<f64> = spec
            .coef
            .iter()
            .map(|c| if spec.threshold.is_finite() { c * p / spec.threshold } else { 0.0 })
            .collect();
        let groups = spec.budgets.len();
        let mut group_links = vec![Vec::new(); groups];
        let mut group_ref = vec![0.0f64; groups];
        for (j, l) in links.iter().enumerate() {
            if let Utility::Linear { value, group: Some(g) } = l.utility {
                if useful[j] {
                    group_links[g].push(j);
                    group_ref[g] = group_ref[g].max(value);
                }
            }
        }
        Some(Self {
            nn,
            kk,
            links,
            coef,
            budgets: spec.budgets.clone(),
            group_links,
            group_ref,
            useful,
            curves: spec.curves,
            vscale,
        })
    }

    fn cap(&self, n: usize, alpha: f64) -> f64 {
        let c = self.coef[n];
        let icap = if c > 0.0 { 1.0 / c } else { f64::INFINITY };
        icap.min(1.0 / alpha)
    }

    fn mu_of(&self, j: usize, mu: &[f64]) -> f64 {
        match self.links[j].utility {
            Utility::Linear { group: Some(g), .. } => mu[g],
            _ => 0.0,
        }
    }

    /// Unconstrained inner maximizer at `alpha = 1`: returns `(x, r, X)`.
    fn respond(&self, j: usize, price: f64, mu: f64) -> (f64, f64, f64) {
        let l = &self.links[j];
        match l.utility {
            Utility::Linear { value, .. } => {
                let eff = value - mu;
                let x = water_level(1.0, l.g, eff, price, l.phi);
                if x <= 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let r = l.g * (x * l.phi).ln_1p() / LN_2;
                (x, r, eff * r - price * x)
            }
            Utility::Curve { scale, curve } => {
                let (r, x, v) = curve_best(&self.curves[curve], scale, l.g, l.phi, price, f64::INFINITY);
                (x, r, v)
            }
        }
    }

    fn link_value(&self, j: usize) -> f64 {
        match self.links[j].utility {
            Utility::Linear { value, .. } => value,
            Utility::Curve { .. } => 0.0,
        }
    }

    fn has_flow(&self) -> bool {
        self.budgets.iter().any(|b| b.is_finite())
    }

    fn run(&self, cfg: &SolverConfig) -> RunResult {
        let (nn, kk) = (self.nn, self.kk);
        let groups = self.budgets.len();
        let mut duals = DualState {
            lambda: vec![0.0; nn],
            nu: self.initial_nu(),
            eta: vec![0.0; nn],
            mu: vec![0.0; groups],
            iteration: 0,
        };
        let nu_ref = duals.nu.max(1e-9);
        let mut best = Primal {
            alpha: vec![0.0; nn * kk],
            x: vec![0.0; nn * kk],
            rate: vec![0.0; nn * kk],
            value: 0.0,
            nu: 0.0,
            mu: vec![0.0; groups],
            eta: vec![0.0; nn],
        };
        let mut best_dual = f64::INFINITY;
        let mut best_prices = duals.clone();
        let mut seen: HashSet<Vec<u32>> = HashSet::new();
        let mut x = vec![0.0; nn * kk];
        let mut r = vec![0.0; nn * kk];
        let mut winners = vec![u32::MAX; nn];
        let mut converged = false;
        let mut iterations = 0;
        let mut stall_mark = (0usize, f64::INFINITY);
        let mut restarted = 0usize;

        for i in 1..=cfg.max_iter {
            iterations = i;
            // Inner problem.
            let mut dual = duals.nu;
            for n in 0..nn {
                let price = duals.nu + duals.eta[n] * self.coef[n];
                let mut bx = 0.0;
                winners[n] = u32::MAX;
                for k in 0..kk {
                    let j = n * kk + k;
                    if !self.useful[j] {
                        x[j] = 0.0;
                        r[j] = 0.0;
                        continue;
                    }
                    let (xj, rj, xv) = self.respond(j, price, self.mu_of(j, &duals.mu));
                    x[j] = xj;
                    r[j] = rj;
                    if xv > bx {
                        bx = xv;
                        winners[n] = k as u32;
                    }
                }
                duals.lambda[n] = bx;
                dual += bx;
                if self.coef[n] > 0.0 {
                    dual += duals.eta[n];
                }
            }
            for (g, b) in self.budgets.iter().enumerate() {
                if b.is_finite() {
                    dual += duals.mu[g] * b;
                }
            }
            if dual < best_dual {
                best_dual = dual;
                best_prices.clone_from(&duals);
            }

            if seen.insert(winners.clone()) {
                let mut alpha = vec![0.0; nn * kk];
                for (n, &w) in winners.iter().enumerate() {
                    if w != u32::MAX {
                        alpha[n * kk + w as usize] = 1.0;
                    }
                }
                let cand = self.solve_fixed(&alpha);
                if cand.value > best.value * (1.0 + 1e-12) {
                    best = cand;
                    // Jump to the multipliers certifying the new incumbent.
                    if restarted < 32 {
                        restarted += 1;
                        duals.nu = best.nu.max(NU_FLOOR);
                        duals.mu.clone_from(&best.mu);
                        duals.eta.clone_from(&best.eta);
                        continue;
                    }
                }
            }

            if best_dual - best.value <= cfg.gap_tolerance * best_dual.abs().max(1e-300) {
                converged = true;
                break;
            }
            if i >= stall_mark.0 + STALL_WINDOW {
                if stall_mark.1 - best_dual <= cfg.gap_tolerance * 0.1 * best_dual {
                    break;
                }
                stall_mark = (i, best_dual);
            }

            // Projected subgradient step with per-multiplier scaling.
            let step = cfg.step0 / (i as f64).sqrt();
            let clip = |v: f64| v.clamp(-1.0, 1.0);
            let mut used = 0.0;
            let mut change: f64 = 0.0;
            for n in 0..nn {
                let w = winners[n];
                let pn = if w == u32::MAX { 0.0 } else { x[n * kk + w as usize] };
                used += pn;
                if self.coef[n] > 0.0 {
                    let res = clip(1.0 - self.coef[n] * pn);
                    let new = (duals.eta[n] - step * nu_ref / self.coef[n] * res).max(0.0);
                    change = change.max((new - duals.eta[n]).abs() * self.coef[n] / nu_ref);
                    duals.eta[n] = new;
                }
            }
            let new_nu = (duals.nu - step * nu_ref * clip(1.0 - used)).max(NU_FLOOR);
            change = change.max((new_nu - duals.nu).abs() / nu_ref);
            duals.nu = new_nu;
            for g in 0..groups {
                let b = self.budgets[g];
                if !b.is_finite() || self.group_links[g].is_empty() {
                    continue;
                }
                let mut got = 0.0;
                for &j in &self.group_links[g] {
                    let n = j / kk;
                    if winners[n] as usize == j % kk {
                        got += r[j];
                    }
                }
                let res = clip((b - got) / b.max(1e-9));
                let reference = self.group_ref[g];
                let new = (duals.mu[g] - step * reference * res).max(0.0);
                change = change.max((new - duals.mu[g]).abs() / reference);
                duals.mu[g] = new;
            }
            if change < cfg.tolerance {
                converged = true;
                break;
            }
        }

        let mut time_shared = false;
        let gap_open = best_dual - best.value > cfg.gap_tolerance * best_dual.abs();
        if cfg.time_sharing && gap_open && self.has_flow() {
            if let Some(ts) = self.time_share(&best, &best_prices) {
                if ts.value > best.value * (1.0 + 1e-9) {
                    debug!("time sharing lifted objective {} -> {}", best.value, ts.value);
                    best = ts;
                    time_shared = true;
                }
            }
        }
        duals.iteration = iterations;
        RunResult { best, dual: best_dual, iterations, converged, time_shared, duals }
    }

    /// Power price at which the greedy winners use the whole budget.
    fn initial_nu(&self) -> f64 {
        let kk = self.kk;
        let used = |nu: f64| -> f64 {
            let mut tot = 0.0;
            for n in 0..self.nn {
                let mut bx = 0.0;
                let mut bp = 0.0;
                for k in 0..kk {
                    let j = n * kk + k;
                    if self.useful[j] {
                        let (x, _, xv) = self.respond(j, nu, 0.0);
                        if xv > bx {
                            bx = xv;
                            bp = x;
                        }
                    }
                }
                tot += bp;
            }
            tot
        };
        let (mut lo, mut hi) = (1e-12f64, 1.0f64);
        while used(hi) > 1.0 && hi < 1e12 {
            hi *= 4.0;
        }
        if used(lo) <= 1.0 {
            return lo;
        }
        for _ in 0..60 {
            let mid = (lo * hi).sqrt();
            if used(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.0 + 1e-6 {
                break;
            }
        }
        hi
    }

    /// Response of link `j` at share `alpha`, power price `nu` and flow price `mu`,
    /// with the per-link power cap. Returns `(x, r, value)`.
    fn respond_capped(&self, j: usize, alpha: f64, nu: f64, mu: f64) -> (f64, f64, f64) {
        let l = &self.links[j];
        let n = j / self.kk;
        let cap = self.cap(n, alpha);
        match l.utility {
            Utility::Linear { value, .. } => {
                let eff = value - mu;
                if eff <= 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let x = if nu > 0.0 {
                    (l.g * eff / (LN_2 * nu) - 1.0 / l.phi).clamp(0.0, cap)
                } else {
                    cap
                };
                let r = alpha * l.g * (x * l.phi).ln_1p() / LN_2;
                (x, r, value * r)
            }
            Utility::Curve { scale, curve } => {
                let ge = alpha * l.g;
                let rcap = ge * (cap * l.phi).ln_1p() / LN_2;
                let (r, _, _) = curve_best(&self.curves[curve], scale, ge, l.phi, nu * alpha, rcap);
                let x = ((r / ge * LN_2).exp_m1() / l.phi).clamp(0.0, cap);
                (x, r, scale * self.curves[curve].eval_unchecked(r))
            }
        }
    }

    /// Exact optimum for a fixed bandwidth split `alpha`.
    fn solve_fixed(&self, alpha: &[f64]) -> Primal {
        let (nn, kk) = (self.nn, self.kk);
        let groups = self.budgets.len();
        let active: Vec<usize> =
            (0..nn * kk).filter(|&j| alpha[j] > 0.0 && self.useful[j]).collect();
        let mut grouped: Vec<Vec<usize>> = vec![Vec::new(); groups];
        let mut free = Vec::new();
        for &j in &active {
            match self.links[j].utility {
                Utility::Linear { group: Some(g), .. } if self.budgets[g].is_finite() => {
                    grouped[g].push(j)
                }
                _ => free.push(j),
            }
        }

        // Evaluates every link at power price `nu`; flow prices are solved per group.
        let eval = |nu: f64, x: &mut [f64], r: &mut [f64], mu: &mut [f64]| -> (f64, f64) {
            let mut power = 0.0;
            let mut value = 0.0;
            for &j in &free {
                let (xj, rj, vj) = self.respond_capped(j, alpha[j], nu, 0.0);
                x[j] = xj;
                r[j] = rj;
                power += alpha[j] * xj;
                value += vj;
            }
            for (g, links) in grouped.iter().enumerate() {
                if links.is_empty() {
                    continue;
                }
                let b = self.budgets[g];
                let total = |m: f64, x: &mut [f64], r: &mut [f64]| -> f64 {
                    let mut s = 0.0;
                    for &j in links {
                        let (xj, rj, _) = self.respond_capped(j, alpha[j], nu, m);
                        x[j] = xj;
                        r[j] = rj;
                        s += rj;
                    }
                    s
                };
                mu[g] = 0.0;
                if total(0.0, x, r) > b {
                    if links.len() == 1 {
                        // A lone link simply stops at its budget.
                        let j = links[0];
                        let l = &self.links[j];
                        let ge = alpha[j] * l.g;
                        x[j] = ((b / ge * LN_2).exp_m1() / l.phi).max(0.0);
                        r[j] = b;
                        if let Utility::Linear { value, .. } = l.utility {
                            let m = if nu > 0.0 { value - nu * LN_2 * (1.0 + x[j] * l.phi) / (l.g * l.phi) } else { value };
                            mu[g] = m.max(0.0);
                        }
                    } else {
                        let (mut lo, mut hi) = (0.0, self.group_ref[g]);
                        for _ in 0..64 {
                            let mid = 0.5 * (lo + hi);
                            if total(mid, x, r) > b {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                            if hi - lo <= 1e-13 * self.group_ref[g] {
                                break;
                            }
                        }
                        // Responses jump at mu = value when power is free, so the
                        // bracket can straddle a discontinuity. Spend what is left of
                        // the budget on the best links between the two responses.
                        let mut below = vec![0.0; x.len()];
                        let mut rb = vec![0.0; r.len()];
                        total(lo, &mut below, &mut rb);
                        let mut left = b - total(hi, x, r);
                        let mut order = links.clone();
                        order.sort_by(|&a, &c| self.link_value(c).total_cmp(&self.link_value(a)));
                        let mut filled = Vec::new();
                        for &j in &order {
                            if left <= 0.0 {
                                break;
                            }
                            let extra = (rb[j] - r[j]).max(0.0).min(left);
                            if extra > 0.0 {
                                r[j] += extra;
                                left -= extra;
                                filled.push(j);
                            }
                        }
                        // Flow balance must hold exactly, not to rounding.
                        let sum = |r: &[f64]| links.iter().map(|&i| r[i]).sum::<f64>();
                        for &j in filled.iter().rev() {
                            let mut step = sum(r) - b;
                            while step > 0.0 && r[j] > 0.0 && sum(r) > b {
                                r[j] = (r[j] - step).max(0.0);
                                step *= 2.0;
                            }
                        }
                        for &j in &order {
                            let ge = alpha[j] * self.links[j].g;
                            if ge > 0.0 {
                                x[j] = ((r[j] / ge * LN_2).exp_m1() / self.links[j].phi).max(0.0);
                            }
                        }
                        mu[g] = hi;
                    }
                }
                for &j in links {
                    power += alpha[j] * x[j];
                    if let Utility::Linear { value: v, .. } = self.links[j].utility {
                        value += v * r[j];
                    }
                }
            }
            (power, value)
        };

        let mut x = vec![0.0; nn * kk];
        let mut r = vec![0.0; nn * kk];
        let mut mu = vec![0.0; groups];
        let (p0, _) = eval(0.0, &mut x, &mut r, &mut mu);
        let nu = if p0 <= 1.0 {
            0.0
        } else {
            let mut hi: f64 = 0.0;
            for &j in &active {
                let l = &self.links[j];
                let v = match l.utility {
                    Utility::Linear { value, .. } => value,
                    Utility::Curve { scale, curve } => scale * self.curves[curve].slope_unchecked(0.0),
                };
                hi = hi.max(v * l.g * l.phi / LN_2);
            }
            let mut hi = hi * 2.0 + 1e-300;
            let mut lo = hi * 1e-18;
            for _ in 0..200 {
                let mid = (lo * hi).sqrt();
                if eval(mid, &mut x, &mut r, &mut mu).0 > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi / lo < 1.0 + 1e-13 {
                    break;
                }
            }
            hi
        };
        let (_, value) = eval(nu, &mut x, &mut r, &mut mu);

        // Interference multipliers of links pinned at their cap.
        let mut eta = vec![0.0; nn];
        for &j in &active {
            let n = j / kk;
            let l = &self.links[j];
            if self.coef[n] > 0.0 && alpha[j] >= 1.0 - 1e-12 && x[j] >= self.cap(n, 1.0) * (1.0 - 1e-12) {
                if let Utility::Linear { value: v, group } = l.utility {
                    let m = group.map_or(0.0, |g| mu[g]);
                    let marginal = (v - m) * l.g * l.phi / (LN_2 * (1.0 + x[j] * l.phi)) - nu;
                    eta[n] = (marginal / self.coef[n]).max(0.0);
                }
            }
        }
        let mut alpha_out = alpha.to_vec();
        for j in 0..nn * kk {
            if !active.contains(&j) {
                alpha_out[j] = 0.0;
                x[j] = 0.0;
                r[j] = 0.0;
            }
        }
        Primal { alpha: alpha_out, x, rate: r, value, nu, mu, eta }
    }

    /// Time-shared allocation from an LP over candidate link powers.
    ///
    /// Columns start from a half-octave power grid, the incumbent and the
    /// responses at the prices of the best dual bound. Each round re-solves the
    /// powers for the LP's shares exactly and adds them as new columns.
    fn time_share(&self, incumbent: &Primal, prices: &DualState) -> Option<Primal> {
        let (nn, kk) = (self.nn, self.kk);
        let mut levels: Vec<Vec<f64>> = vec![Vec::new(); nn * kk];
        for (j, lv) in levels.iter_mut().enumerate() {
            if !self.useful[j] || !matches!(self.links[j].utility, Utility::Linear { .. }) {
                continue;
            }
            let n = j / kk;
            let cap = self.cap(n, 1.0);
            lv.extend((0..28).map(|i| cap * 2f64.powf(-(i as f64) / 2.0)));
            if incumbent.x[j] > 0.0 {
                lv.push(incumbent.x[j].min(cap));
            }
            let price = prices.nu + prices.eta[n] * self.coef[n];
            let (x, _, _) = self.respond(j, price, self.mu_of(j, &prices.mu));
            if x > 0.0 {
                lv.push(x.min(cap));
            }
        }
        let mut best: Option<Primal> = None;
        for _ in 0..4 {
            let alpha = self.share_lp(&levels)?;
            let cand = self.solve_fixed(&alpha);
            let mut grew = false;
            for j in 0..nn * kk {
                let x = cand.x[j].min(self.cap(j / kk, 1.0));
                if cand.alpha[j] > 0.0 && x > 0.0 && !levels[j].iter().any(|&l| (l - x).abs() <= 1e-12 * x) {
                    levels[j].push(x);
                    grew = true;
                }
            }
            let improved = best.as_ref().is_none_or(|b| cand.value > b.value * (1.0 + 1e-9));
            if improved {
                best = Some(cand);
            }
            if !grew || !improved {
                break;
            }
        }
        best
    }

    /// Bandwidth shares from the LP over the given power levels per link.
    fn share_lp(&self, levels: &[Vec<f64>]) -> Option<Vec<f64>> {
        let (nn, kk) = (self.nn, self.kk);
        let mut lp = Lp::new(OptimizationDirection::Maximize);
        struct Col {
            j: usize,
            var: microlp::Variable,
            x: f64,
            r: f64,
        }
        let mut cols: Vec<Col> = Vec::new();
        for (j, lv) in levels.iter().enumerate() {
            let l = &self.links[j];
            let Utility::Linear { value, .. } = l.utility else { continue };
            for &x in lv {
                let r = l.g * (x * l.phi).ln_1p() / LN_2;
                if r <= 0.0 {
                    continue;
                }
                let var = lp.add_var(value * r, (0.0, 1.0));
                cols.push(Col { j, var, x, r });
            }
        }
        if cols.is_empty() {
            return None;
        }
        for n in 0..nn {
            let on: Vec<&Col> = cols.iter().filter(|c| c.j / kk == n).collect();
            if on.is_empty() {
                continue;
            }
            let share: Vec<(microlp::Variable, f64)> = on.iter().map(|c| (c.var, 1.0)).collect();
            lp.add_constraint(share.as_slice(), ComparisonOp::Le, 1.0);
            if self.coef[n] > 0.0 {
                let intf: Vec<_> = on.iter().map(|c| (c.var, self.coef[n] * c.x)).collect();
                lp.add_constraint(intf.as_slice(), ComparisonOp::Le, 1.0);
            }
        }
        let pw: Vec<_> = cols.iter().map(|c| (c.var, c.x)).collect();
        lp.add_constraint(pw.as_slice(), ComparisonOp::Le, 1.0);
        for (g, b) in self.budgets.iter().enumerate() {
            if !b.is_finite() {
                continue;
            }
            let fl: Vec<_> = cols
                .iter()
                .filter(|c| matches!(self.links[c.j].utility, Utility::Linear { group: Some(h), .. } if h == g))
                .map(|c| (c.var, c.r))
                .collect();
            if !fl.is_empty() {
                lp.add_constraint(fl.as_slice(), ComparisonOp::Le, *b);
            }
        }
        let sol = lp.solve().ok()?.into_solution().ok()?;
        let mut alpha = vec![0.0; nn * kk];
        for c in &cols {
            alpha[c.j] += sol.var_value(c.var).max(0.0);
        }
        for n in 0..nn {
            let row = &mut alpha[n * kk..(n + 1) * kk];
            let s: f64 = row.iter().sum();
            if s > 1.0 {
                row.iter_mut().for_each(|a| *a /= s);
            }
            row.iter_mut().for_each(|a| {
                if *a < 1e-9 {
                    *a = 0.0
                }
            });
        }
        Some(alpha)
    }
}
