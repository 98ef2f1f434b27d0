//! BS-side allocation over direct mobiles and relay backhaul links.
//!
//! Each relay enters the BS problem through its value curve. On subchannel `n`
//! a relay link granted `r` bits is worth `(1 - eps) beta_0n G(r)`, the relay
//! decoding with probability `(1 - eps) beta_0n`. This decoupled form is exact
//! as long as every relay holds at most one subchannel, which is checked after
//! solving.

use log::debug;

use crate::error::{Error, Result};
use crate::goodput_curve::{packet_partition, GoodputCurve, RelayPlan};
use crate::scenario::SolverConfig;
use crate::solver_rs::{solve_problem, DualState, LinkSpec, ProblemSpec, Utility};

/// What the BS knows in one frame. Receivers `0..relays` are the relays,
/// the rest are direct mobiles. Link arrays are indexed `n * receivers + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsInput {
    pub subchannels: usize,
    pub receivers: usize,
    pub relays: usize,
    pub phi: Vec<f64>,
    pub beta: Vec<f64>,
    /// Weight of every receiver; entries of relays are ignored.
    pub weights: Vec<f64>,
    pub coef: Vec<f64>,
    pub power: f64,
    pub threshold: f64,
    pub epsilon: f64,
    pub efficiency: f64,
}

impl BsInput {
    pub fn value(&self, n: usize, k: usize) -> f64 {
        (1.0 - self.epsilon) * self.beta[n] * self.weights[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsAllocation {
    pub subchannels: usize,
    pub receivers: usize,
    pub relays: usize,
    pub alpha: Vec<f64>,
    pub power: Vec<f64>,
    pub rate: Vec<f64>,
    /// Packet partition `d[m][k]` of relay `m`, shared by all its subchannels.
    pub partition: Vec<Vec<f64>>,
    pub objective: f64,
    pub dual_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Relays holding more than one subchannel.
    pub overloaded_relays: Vec<usize>,
    pub duals: DualState,
}

impl BsAllocation {
    pub fn idx(&self, n: usize, k: usize) -> usize {
        n * self.receivers + k
    }

    /// Backhaul bits granted to relay `m` over all subchannels.
    pub fn relay_rate(&self, m: usize) -> f64 {
        (0..self.subchannels).map(|n| self.rate[self.idx(n, m)]).sum()
    }

    /// Fraction of the relay-`m` packet on subchannel `n` meant for user `k`.
    pub fn d(&self, m: usize, n: usize, k: usize) -> f64 {
        if self.rate[self.idx(n, m)] > 0.0 {
            self.partition[m][k]
        } else {
            0.0
        }
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    pub fn subchannel_power(&self, n: usize) -> f64 {
        self.power[n * self.receivers..(n + 1) * self.receivers].iter().sum()
    }
}

/// Best backhaul grant for one relay on one subchannel at power price
/// `nu + eta tau_coef`: scans the curve breakpoints and the stationary point
/// of every segment. Returns `(rate, power, net value)`.
#[allow(clippy::too_many_arguments)]
pub fn rs_candidate(
    curve: &GoodputCurve,
    nu: f64,
    eta: f64,
    beta: f64,
    phi: f64,
    tau_coef: f64,
    epsilon: f64,
    efficiency: f64,
) -> (f64, f64, f64) {
    let scale = (1.0 - epsilon) * beta;
    let price = nu + eta * tau_coef;
    if scale <= 0.0 || phi <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let power = |r: f64| (2f64.powf(r / efficiency) - 1.0) / phi;
    let value = |r: f64| scale * curve.eval_unchecked(r) - price * power(r);
    let mut best = (0.0, 0.0, 0.0);
    let mut consider = |r: f64| {
        let v = value(r);
        if v > best.2 {
            best = (r, power(r), v);
        }
    };
    let bp = curve.breakpoints();
    for w in bp.windows(2) {
        consider(w[1].0);
        let s = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
        if price > 0.0 {
            let arg = scale * s * efficiency * phi / (price * std::f64::consts::LN_2);
            if arg > 1.0 {
                let r = efficiency * arg.log2();
                if r > w[0].0 && r < w[1].0 {
                    consider(r);
                }
            }
        }
    }
    best
}

/// Net value of every curve breakpoint at fixed prices; used to check that
/// the scan sees a unimodal sequence.
pub fn breakpoint_values(curve: &GoodputCurve, price: f64, beta: f64, phi: f64, epsilon: f64, efficiency: f64) -> Vec<f64> {
    curve
        .breakpoints()
        .iter()
        .map(|&(r, g)| (1.0 - epsilon) * beta * g - price * (2f64.powf(r / efficiency) - 1.0) / phi)
        .collect()
}

/// Direct-mobile goodput plus relay curve values, per subchannel.
pub fn decoupled_objective(input: &BsInput, rate: &[f64], curves: &[&GoodputCurve]) -> f64 {
    let kk = input.receivers;
    let mut total = 0.0;
    for n in 0..input.subchannels {
        for k in 0..kk {
            let r = rate[n * kk + k];
            if k < input.relays {
                total += (1.0 - input.epsilon) * input.beta[n] * curves[k].eval_unchecked(r);
            } else {
                total += input.value(n, k) * r;
            }
        }
    }
    total
}

pub fn solve_bs(input: &BsInput, plans: &[RelayPlan], cfg: &SolverConfig, strict: bool) -> Result<BsAllocation> {
    let (nn, kk, mm) = (input.subchannels, input.receivers, input.relays);
    if plans.len() != mm {
        return Err(Error::InvalidArgument(format!("{} plans for {mm} relays", plans.len())));
    }
    let curves: Vec<GoodputCurve> = plans.iter().map(|p| p.curve.clone()).collect();
    let mut links = Vec::with_capacity(nn * kk);
    for n in 0..nn {
        for k in 0..kk {
            let utility = if k < mm {
                Utility::Curve { scale: (1.0 - input.epsilon) * input.beta[n], curve: k }
            } else {
                Utility::Linear { value: input.value(n, k), group: None }
            };
            links.push(LinkSpec { phi: input.phi[n * kk + k], g: input.efficiency, utility });
        }
    }
    let spec = ProblemSpec {
        subchannels: nn,
        receivers: kk,
        links,
        coef: input.coef.clone(),
        power: input.power,
        threshold: input.threshold,
        budgets: Vec::new(),
        curves: &curves,
    };
    let out = solve_problem(&spec, cfg);

    let mut overloaded = Vec::new();
    let mut partition = Vec::with_capacity(mm);
    for (m, plan) in plans.iter().enumerate() {
        let held = (0..nn).filter(|&n| out.rate[n * kk + m] > 0.0).count();
        if held > 1 {
            overloaded.push(m);
        }
        let granted: f64 = (0..nn).map(|n| out.rate[n * kk + m]).sum();
        partition.push(packet_partition(plan, granted));
    }
    if !overloaded.is_empty() {
        if strict {
            return Err(Error::Solver(format!("relays {overloaded:?} hold several subchannels")));
        }
        debug!("relays {overloaded:?} hold several backhaul subchannels");
    }
    Ok(BsAllocation {
        subchannels: nn,
        receivers: kk,
        relays: mm,
        alpha: out.alpha,
        power: out.power,
        rate: out.rate,
        partition,
        objective: out.objective,
        dual_bound: out.dual_bound,
        iterations: out.iterations,
        converged: out.converged,
        overloaded_relays: overloaded,
        duals: out.duals,
    })
}
