//! Comparison systems without relays.
//!
//! The BS serves every mobile of the cell directly in one phase. Its coverage
//! reaches every PU, so a subchannel is usable only when all `M + 1` PUs are
//! idle. The composite posterior is the product of the per-cluster posteriors
//! and the interference coefficient is the largest one over the PUs.

use serde::Serialize;

use crate::channel::{LinkDraw, LinkSet};
use crate::error::Result;
use crate::scenario::{ScenarioConfig, Topology};
use crate::scheduler::{
    count_clean, decode_indicator, interference_coef, sense, system_activity, FrameEnvironment,
    FrameOutcome, PacketStats, System,
};
use crate::solver_bs::{solve_bs, BsInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum BaselineKind {
    /// No relays, rates scheduled against `l |Hhat|^2`.
    NaivePerfectCsit,
    /// No relays, every PU with the cluster-0 activity.
    NoRsEqualPuActivity,
    /// No relays, relay-cluster PUs with the reduced activity of [`low_activity`].
    NoRsLowRsPuActivity,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::NaivePerfectCsit => "naive",
            BaselineKind::NoRsEqualPuActivity => "no_rs",
            BaselineKind::NoRsLowRsPuActivity => "no_rs_low",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "naive" => Some(BaselineKind::NaivePerfectCsit),
            "no_rs" => Some(BaselineKind::NoRsEqualPuActivity),
            "no_rs_low" => Some(BaselineKind::NoRsLowRsPuActivity),
            _ => None,
        }
    }
}

/// Activity `1 - (1 - q0)^(1/M)` of the relay-cluster PUs, so that the
/// product of all relay-cluster idle probabilities equals the cluster-0 one.
pub fn low_relay_activity(q0: f64, relays: usize) -> f64 {
    if relays == 0 {
        return q0;
    }
    1.0 - (1.0 - q0).powf(1.0 / relays as f64)
}

/// Per-cluster activities of the reduced-activity variant.
pub fn low_activity(cfg: &ScenarioConfig) -> Vec<f64> {
    let q = low_relay_activity(cfg.pu_activity, cfg.num_relays);
    (0..=cfg.num_relays).map(|m| if m == 0 { cfg.pu_activity } else { q }).collect()
}

/// Probability that a subchannel is idle in every cluster.
pub fn composite_clean(activity: &[f64]) -> f64 {
    activity.iter().map(|q| 1.0 - q).product()
}

/// Direct BS links to every mobile, in global mobile order.
pub fn direct_links(cfg: &ScenarioConfig, topology: &Topology, env: &FrameEnvironment) -> LinkSet {
    let nn = cfg.num_subchannels;
    let mm = topology.num_relays();
    let k0 = topology.clusters[0].receiver_gains.len();
    let gains: Vec<f64> = topology.clusters.iter().flat_map(|c| c.direct_gains.iter().copied()).collect();
    let mut draws: Vec<LinkDraw> = Vec::with_capacity(nn * gains.len());
    for n in 0..nn {
        for (m, c) in topology.clusters.iter().enumerate() {
            let km = c.mobiles.len();
            for j in 0..km {
                draws.push(if m == 0 { env.cluster_links[0][n * k0 + mm + j] } else { env.direct_links[m][n * km + j] });
            }
        }
    }
    LinkSet::from_draws(&draws, &gains, nn, cfg.csit_error_variance, cfg.outage_target, cfg.csit_model)
}

/// One frame of a no-relay system.
pub fn run_frame_baseline(
    cfg: &ScenarioConfig,
    topology: &Topology,
    env: &FrameEnvironment,
    weights: &[f64],
    kind: BaselineKind,
) -> Result<FrameOutcome> {
    let nn = cfg.num_subchannels;
    let mm = topology.num_relays();
    let activity = system_activity(cfg, System::Baseline(kind));
    let reporters: Vec<_> = topology
        .clusters
        .iter()
        .enumerate()
        .map(|(m, c)| if m == 0 { mm..c.receiver_gains.len() } else { 0..c.receiver_gains.len() })
        .collect();
    let sensing = sense(env, &activity, &reporters, cfg.false_alarm, cfg.detection);
    let beta: Vec<f64> = (0..nn).map(|n| sensing.beta.iter().map(|b| b[n]).product()).collect();
    let coef: Vec<f64> = (0..nn)
        .map(|n| {
            topology
                .clusters
                .iter()
                .zip(&sensing.beta)
                .map(|(c, b)| interference_coef(c.bs_pu_gain, cfg.interference_gain_exponent, b[n]))
                .fold(0.0, f64::max)
        })
        .collect();
    let available: Vec<bool> = (0..nn).map(|n| sensing.s.iter().all(|row| row[n])).collect();

    let links = direct_links(cfg, topology, env);
    let kk = links.receivers;
    let phi = match kind {
        BaselineKind::NaivePerfectCsit => {
            (0..nn * kk).map(|i| links.nominal_gain(i / kk, i % kk)).collect()
        }
        _ => links.phi.clone(),
    };
    let input = BsInput {
        subchannels: nn,
        receivers: kk,
        relays: 0,
        phi,
        beta,
        weights: weights.to_vec(),
        coef,
        power: topology.bs_power,
        threshold: topology.interference_threshold,
        epsilon: cfg.outage_target,
        efficiency: cfg.bs_efficiency,
    };
    let bs = solve_bs(&input, &[], &cfg.solver, false)?;

    let mut scheduled = vec![0.0; kk];
    let mut goodput = vec![0.0; kk];
    let mut access = vec![false; kk];
    let mut hop = PacketStats::default();
    for n in 0..nn {
        let s = available[n];
        for k in 0..kk {
            let i = bs.idx(n, k);
            let r = bs.rate[i];
            if r <= 0.0 {
                continue;
            }
            let ok = decode_indicator(r, cfg.bs_efficiency, bs.alpha[i], bs.power[i], links.true_gain(n, k), s);
            if s {
                hop.record(ok);
            }
            scheduled[k] += r;
            access[k] |= s;
            if ok {
                goodput[k] += r;
            }
        }
    }
    Ok(FrameOutcome {
        scheduled,
        goodput,
        access,
        decoded: vec![Vec::new(); nn],
        hops: [hop, PacketStats::default()],
        feedback_reals: 0,
        clean_subchannels: count_clean(&sensing.s, nn),
        bs_input: input,
        bs,
        plans: Vec::new(),
        relay_inputs: Vec::new(),
        relays: Vec::new(),
        budgets: Vec::new(),
        relay_overloads: 0,
    })
}
