//! Frame-by-frame orchestration of the two-phase relay downlink.
//!
//! A frame runs: sensing and fusion, curve feedback from every relay, the BS
//! phase, relay decoding, the relay phase and the PFS update. All randomness
//! of a frame lives in a [`FrameEnvironment`] drawn from a per-trial stream,
//! so every system simulated on the same seed sees the same PU states,
//! reports and fading.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::{self, BaselineKind};
use crate::channel::{draw_links, LinkDraw, LinkSet};
use crate::error::Result;
use crate::goodput_curve::{build_curve_pfs, build_plan_general, RelayPlan};
use crate::scenario::{build_topology, CurveMode, PfsAverage, ScenarioConfig, Topology};
use crate::sensing::{fuse, pu_state_from_uniform, report_from_uniform, SensingSnapshot};
use crate::solver_bs::{solve_bs, BsAllocation, BsInput};
use crate::solver_rs::{solve_rs, RelayInput, RsAllocation};

/// Relative slack of the decoder against round-off in the rate formula.
const DECODE_SLACK: f64 = 1e-12;

/// Simulated system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum System {
    Proposed,
    Baseline(BaselineKind),
}

impl System {
    pub fn name(&self) -> &'static str {
        match self {
            System::Proposed => "proposed",
            System::Baseline(b) => b.name(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "proposed" {
            return Some(System::Proposed);
        }
        BaselineKind::parse(s).map(System::Baseline)
    }
}

/// SplitMix64 mixing of a master seed with stream identifiers.
pub fn mix_seed(master: u64, replication: u64, stream: u64) -> u64 {
    let mut z = master
        ^ replication.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Every random quantity of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEnvironment {
    /// `pu_uniform[m][n]`; the PU of cluster `m` is idle iff it is `>= q_act(m)`.
    pub pu_uniform: Vec<Vec<f64>>,
    /// `report_uniform[m][n][j]` for every receiver `j` of cluster `m`.
    pub report_uniform: Vec<Vec<Vec<f64>>>,
    /// Server-to-receiver fading of every cluster, `n * receivers + k`.
    pub cluster_links: Vec<Vec<LinkDraw>>,
    /// BS-to-mobile fading for mobiles of clusters `m >= 1` (entry 0 is empty).
    pub direct_links: Vec<Vec<LinkDraw>>,
}

/// Per-trial source of frame environments. PU states are held for
/// `coherence` frames; everything else is redrawn every frame.
pub struct EnvironmentStream {
    rng: ChaCha8Rng,
    subchannels: usize,
    receivers: Vec<usize>,
    mobiles: Vec<usize>,
    coherence: usize,
    frame: usize,
    pu: Vec<Vec<f64>>,
}

impl EnvironmentStream {
    pub fn new(topology: &Topology, subchannels: usize, coherence: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            subchannels,
            receivers: topology.clusters.iter().map(|c| c.receiver_gains.len()).collect(),
            mobiles: topology.clusters.iter().map(|c| c.mobiles.len()).collect(),
            coherence: coherence.max(1),
            frame: 0,
            pu: Vec::new(),
        }
    }

    pub fn next_frame(&mut self) -> FrameEnvironment {
        let nn = self.subchannels;
        if self.frame.is_multiple_of(self.coherence) {
            let rng = &mut self.rng;
            self.pu = self.receivers.iter().map(|_| (0..nn).map(|_| rng.random()).collect()).collect();
        }
        self.frame += 1;
        let rng = &mut self.rng;
        let report_uniform = self
            .receivers
            .iter()
            .map(|&k| (0..nn).map(|_| (0..k).map(|_| rng.random()).collect()).collect())
            .collect();
        let cluster_links = self.receivers.iter().map(|&k| draw_links(nn * k, rng)).collect();
        let direct_links = self
            .mobiles
            .iter()
            .enumerate()
            .map(|(m, &k)| if m == 0 { Vec::new() } else { draw_links(nn * k, rng) })
            .collect();
        FrameEnvironment { pu_uniform: self.pu.clone(), report_uniform, cluster_links, direct_links }
    }
}

/// True PU availability for per-cluster activities.
pub fn pu_states(env: &FrameEnvironment, activity: &[f64]) -> Vec<Vec<bool>> {
    env.pu_uniform
        .iter()
        .zip(activity)
        .map(|(row, &q)| row.iter().map(|&u| pu_state_from_uniform(u, q)).collect())
        .collect()
}

/// Reports of the selected reporters `reporters[m]` of every cluster.
pub fn sense(
    env: &FrameEnvironment,
    activity: &[f64],
    reporters: &[std::ops::Range<usize>],
    q_f: f64,
    q_d: f64,
) -> SensingSnapshot {
    let s = pu_states(env, activity);
    let reports = env
        .report_uniform
        .iter()
        .enumerate()
        .map(|(m, rows)| {
            rows.iter()
                .enumerate()
                .map(|(n, us)| {
                    us[reporters[m].clone()]
                        .iter()
                        .map(|&u| report_from_uniform(u, s[m][n], q_f, q_d))
                        .collect()
                })
                .collect()
        })
        .collect();
    fuse(s, reports, activity, q_f, q_d)
}

/// Interference coefficient `tau^e (1 - beta)`.
pub fn interference_coef(tau: f64, exponent: i32, beta: f64) -> f64 {
    tau.powi(exponent) * (1.0 - beta)
}

/// Whether a packet of `rate` bits is received on a link with realized gain
/// `true_gain` when scheduled with share `alpha` and power `power`.
pub fn decode_indicator(rate: f64, efficiency: f64, alpha: f64, power: f64, true_gain: f64, available: bool) -> bool {
    if !available {
        return false;
    }
    if rate <= 0.0 {
        return true;
    }
    if alpha <= 0.0 {
        return false;
    }
    let capacity = efficiency * alpha * (power * true_gain / alpha).ln_1p() / std::f64::consts::LN_2;
    rate <= capacity * (1.0 + DECODE_SLACK)
}

/// Long-term state of one mobile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UserStats {
    /// Exponentially averaged rate (bits/frame).
    pub rtilde: f64,
    pub goodput: f64,
    pub scheduled: f64,
    pub access_frames: usize,
}

impl UserStats {
    pub fn new(rtilde: f64) -> Self {
        Self { rtilde, goodput: 0.0, scheduled: 0.0, access_frames: 0 }
    }
}

/// One PFS averaging step; returns the new weights `1 / max(rtilde, floor)`.
pub fn update_pfs(stats: &mut [UserStats], rates: &[f64], window: f64, floor: f64) -> Vec<f64> {
    let a = 1.0 / window;
    stats
        .iter_mut()
        .zip(rates)
        .map(|(s, &r)| {
            s.rtilde = ((1.0 - a) * s.rtilde + a * r).max(floor);
            1.0 / s.rtilde
        })
        .collect()
}

/// Scheduled packets and receive failures on one hop, counted only on
/// PU-idle subchannels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PacketStats {
    pub scheduled: u64,
    pub errors: u64,
}

impl PacketStats {
    pub fn record(&mut self, ok: bool) {
        self.scheduled += 1;
        if !ok {
            self.errors += 1;
        }
    }

    pub fn merge(&mut self, o: &PacketStats) {
        self.scheduled += o.scheduled;
        self.errors += o.errors;
    }

    pub fn rate(&self) -> f64 {
        if self.scheduled == 0 { 0.0 } else { self.errors as f64 / self.scheduled as f64 }
    }
}

/// Result of one frame. Per-mobile arrays follow [`Topology::mobiles`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub scheduled: Vec<f64>,
    pub goodput: Vec<f64>,
    pub access: Vec<bool>,
    /// `decoded[n][m]`: relay `m` decoded its phase-one packet on `n`.
    pub decoded: Vec<Vec<bool>>,
    /// Phase-one (BS) and phase-two (relay) packet statistics.
    pub hops: [PacketStats; 2],
    pub feedback_reals: usize,
    /// Subchannels idle in every cluster.
    pub clean_subchannels: usize,
    pub bs_input: BsInput,
    pub bs: BsAllocation,
    /// Curves fed back by the relays.
    pub plans: Vec<RelayPlan>,
    pub relay_inputs: Vec<RelayInput>,
    pub relays: Vec<RsAllocation>,
    /// Relay budgets `R_{m,k}` handed to phase two.
    pub budgets: Vec<Vec<f64>>,
    pub relay_overloads: usize,
}

/// Global mobile offsets of every cluster.
pub fn mobile_offsets(topology: &Topology) -> Vec<usize> {
    let mut off = Vec::with_capacity(topology.clusters.len());
    let mut acc = 0;
    for c in &topology.clusters {
        off.push(acc);
        acc += c.mobiles.len();
    }
    off
}

pub fn count_clean(s: &[Vec<bool>], subchannels: usize) -> usize {
    (0..subchannels).filter(|&n| s.iter().all(|row| row[n])).count()
}

/// Relay `m`'s local problem at weights `w` (global mobile order).
fn relay_input(
    cfg: &ScenarioConfig,
    topology: &Topology,
    links: &LinkSet,
    sensing: &SensingSnapshot,
    m: usize,
    w: &[f64],
) -> RelayInput {
    let c = &topology.clusters[m];
    RelayInput {
        subchannels: cfg.num_subchannels,
        users: c.mobiles.len(),
        phi: links.phi.clone(),
        beta: sensing.beta[m].clone(),
        weights: w.to_vec(),
        coef: sensing.beta[m]
            .iter()
            .map(|&b| interference_coef(c.pu_gain, cfg.interference_gain_exponent, b))
            .collect(),
        power: topology.rs_power,
        threshold: topology.interference_threshold,
        epsilon: cfg.outage_target,
        efficiency: cfg.rs_efficiency,
    }
}

/// Runs the proposed two-hop system for one frame with PFS weights `weights`.
pub fn run_frame(
    cfg: &ScenarioConfig,
    topology: &Topology,
    env: &FrameEnvironment,
    weights: &[f64],
) -> Result<FrameOutcome> {
    let nn = cfg.num_subchannels;
    let mm = topology.num_relays();
    let offsets = mobile_offsets(topology);
    let total: usize = topology.clusters.iter().map(|c| c.mobiles.len()).sum();
    let activity: Vec<f64> = (0..=mm).map(|m| cfg.activity(m)).collect();
    let reporters: Vec<_> = topology.clusters.iter().map(|c| 0..c.receiver_gains.len()).collect();
    let sensing = sense(env, &activity, &reporters, cfg.false_alarm, cfg.detection);

    let links: Vec<LinkSet> = topology
        .clusters
        .iter()
        .zip(&env.cluster_links)
        .map(|(c, d)| {
            LinkSet::from_draws(d, &c.receiver_gains, nn, cfg.csit_error_variance, cfg.outage_target, cfg.csit_model)
        })
        .collect();

    // Backward recursion: every relay feeds its curve back.
    let mut relay_inputs = Vec::with_capacity(mm);
    let mut plans: Vec<RelayPlan> = Vec::with_capacity(mm);
    let mut feedback_reals = 0;
    for m in 1..=mm {
        let c = &topology.clusters[m];
        let w = &weights[offsets[m]..offsets[m] + c.mobiles.len()];
        let input = relay_input(cfg, topology, &links[m], &sensing, m, w);
        let plan = match cfg.curve_mode {
            CurveMode::Pfs => build_curve_pfs(&input, &c.receiver_gains, cfg.curve_literal_gain),
            CurveMode::General => build_plan_general(&input, &cfg.solver),
        };
        feedback_reals += plan.curve.feedback_size();
        relay_inputs.push(input);
        plans.push(plan);
    }

    // Phase one.
    let c0 = &topology.clusters[0];
    let k0 = c0.receiver_gains.len();
    let mut bs_weights = vec![0.0; mm];
    bs_weights.extend_from_slice(&weights[..c0.mobiles.len()]);
    let bs_input = BsInput {
        subchannels: nn,
        receivers: k0,
        relays: mm,
        phi: links[0].phi.clone(),
        beta: sensing.beta[0].clone(),
        weights: bs_weights,
        coef: sensing.beta[0]
            .iter()
            .map(|&b| interference_coef(c0.pu_gain, cfg.interference_gain_exponent, b))
            .collect(),
        power: topology.bs_power,
        threshold: topology.interference_threshold,
        epsilon: cfg.outage_target,
        efficiency: cfg.bs_efficiency,
    };
    let bs = solve_bs(&bs_input, &plans, &cfg.solver, cfg.strict_relay_subchannels)?;

    let mut scheduled = vec![0.0; total];
    let mut goodput = vec![0.0; total];
    let mut access = vec![false; total];
    let mut hops = [PacketStats::default(); 2];
    let mut decoded = vec![vec![false; mm]; nn];
    for n in 0..nn {
        let s = sensing.s[0][n];
        for k in 0..k0 {
            let i = bs.idx(n, k);
            let r = bs.rate[i];
            if r <= 0.0 {
                continue;
            }
            let ok = decode_indicator(r, cfg.bs_efficiency, bs.alpha[i], bs.power[i], links[0].true_gain(n, k), s);
            if s {
                hops[0].record(ok);
            }
            if k < mm {
                decoded[n][k] = ok;
            } else {
                let u = k - mm;
                scheduled[u] += r;
                access[u] |= s;
                if ok {
                    goodput[u] += r;
                }
            }
        }
    }

    // Phase two.
    let mut relays = Vec::with_capacity(mm);
    let mut budgets = Vec::with_capacity(mm);
    for m in 1..=mm {
        let input = &relay_inputs[m - 1];
        let received: f64 = (0..nn).filter(|&n| decoded[n][m - 1]).map(|n| bs.rate[bs.idx(n, m - 1)]).sum();
        let budget: Vec<f64> = bs.partition[m - 1].iter().map(|d| d * received).collect();
        let alloc = if received > 0.0 {
            solve_rs(input, &budget, &cfg.solver)
        } else {
            RsAllocation::empty(nn, input.users)
        };
        for n in 0..nn {
            let s = sensing.s[m][n];
            for k in 0..input.users {
                let i = n * input.users + k;
                let r = alloc.rate[i];
                if r <= 0.0 {
                    continue;
                }
                let ok =
                    decode_indicator(r, cfg.rs_efficiency, alloc.alpha[i], alloc.power[i], links[m].true_gain(n, k), s);
                if s {
                    hops[1].record(ok);
                }
                let u = offsets[m] + k;
                scheduled[u] += r;
                access[u] |= s;
                if ok {
                    goodput[u] += r;
                }
            }
        }
        budgets.push(budget);
        relays.push(alloc);
    }

    Ok(FrameOutcome {
        scheduled,
        goodput,
        access,
        decoded,
        hops,
        feedback_reals,
        clean_subchannels: count_clean(&sensing.s, nn),
        relay_overloads: bs.overloaded_relays.len(),
        bs_input,
        bs,
        plans,
        relay_inputs,
        relays,
        budgets,
    })
}

/// Per-frame trace record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub total_scheduled: f64,
    pub total_goodput: f64,
    pub served_users: usize,
    pub hop1_packets: u64,
    pub hop1_errors: u64,
    pub hop2_packets: u64,
    pub hop2_errors: u64,
    pub feedback_reals: usize,
}

/// Everything kept from one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub system: System,
    pub replication: u64,
    pub topology_seed: u64,
    pub frames: usize,
    /// Per-mobile average goodput per frame.
    pub mean_goodput: Vec<f64>,
    pub mean_scheduled: Vec<f64>,
    pub final_rtilde: Vec<f64>,
    /// Fraction of frames with access, per mobile.
    pub access: Vec<f64>,
    pub distance: Vec<f64>,
    pub edge: Vec<bool>,
    pub hops: [PacketStats; 2],
    pub feedback_reals: usize,
    pub clean_subchannels: usize,
    pub relay_overloads: usize,
    pub trace: Vec<FrameRecord>,
}

/// Activity vector of a system.
pub fn system_activity(cfg: &ScenarioConfig, system: System) -> Vec<f64> {
    match system {
        System::Baseline(BaselineKind::NoRsLowRsPuActivity) => baselines::low_activity(cfg),
        _ => (0..=cfg.num_relays).map(|m| cfg.activity(m)).collect(),
    }
}

/// Runs `cfg.frames_per_trial` frames of `system` on replication `replication`.
pub fn run_trial(
    cfg: &ScenarioConfig,
    system: System,
    master_seed: u64,
    replication: u64,
    trace: bool,
) -> Result<TrialResult> {
    let topology_seed = mix_seed(master_seed, replication, 0);
    let topology = build_topology(cfg, topology_seed)?;
    let mut stream =
        EnvironmentStream::new(&topology, cfg.num_subchannels, cfg.pu_coherence_frames, mix_seed(master_seed, replication, 1));
    let total: usize = topology.clusters.iter().map(|c| c.mobiles.len()).sum();
    let mut stats = vec![UserStats::new(cfg.pfs_start()); total];
    let mut weights: Vec<f64> = stats.iter().map(|s| 1.0 / s.rtilde).collect();
    let mut hops = [PacketStats::default(); 2];
    let (mut feedback_reals, mut clean, mut overloads) = (0, 0, 0);
    let mut records = Vec::new();
    let frames = cfg.frames_per_trial;
    for f in 0..frames {
        let env = stream.next_frame();
        let out = match system {
            System::Proposed => run_frame(cfg, &topology, &env, &weights)?,
            System::Baseline(kind) => baselines::run_frame_baseline(cfg, &topology, &env, &weights, kind)?,
        };
        for (s, ((&g, &r), &a)) in stats.iter_mut().zip(out.goodput.iter().zip(&out.scheduled).zip(&out.access)) {
            s.goodput += g;
            s.scheduled += r;
            s.access_frames += a as usize;
        }
        let averaged = match cfg.pfs_average {
            PfsAverage::Scheduled => &out.scheduled,
            PfsAverage::Goodput => &out.goodput,
        };
        weights = update_pfs(&mut stats, averaged, cfg.pfs_window, cfg.pfs_floor);
        for (h, o) in hops.iter_mut().zip(&out.hops) {
            h.merge(o);
        }
        feedback_reals += out.feedback_reals;
        clean += out.clean_subchannels;
        overloads += out.relay_overloads;
        if trace {
            records.push(FrameRecord {
                frame: f,
                total_scheduled: out.scheduled.iter().sum(),
                total_goodput: out.goodput.iter().sum(),
                served_users: out.scheduled.iter().filter(|&&r| r > 0.0).count(),
                hop1_packets: out.hops[0].scheduled,
                hop1_errors: out.hops[0].errors,
                hop2_packets: out.hops[1].scheduled,
                hop2_errors: out.hops[1].errors,
                feedback_reals: out.feedback_reals,
            });
        }
    }
    let f = frames.max(1) as f64;
    let mut distance = Vec::with_capacity(total);
    let mut edge = Vec::with_capacity(total);
    for (m, j) in topology.mobiles() {
        distance.push(topology.clusters[m].mobiles[j].norm());
        edge.push(m >= 1);
    }
    Ok(TrialResult {
        system,
        replication,
        topology_seed,
        frames,
        mean_goodput: stats.iter().map(|s| s.goodput / f).collect(),
        mean_scheduled: stats.iter().map(|s| s.scheduled / f).collect(),
        final_rtilde: stats.iter().map(|s| s.rtilde).collect(),
        access: stats.iter().map(|s| s.access_frames as f64 / f).collect(),
        distance,
        edge,
        hops,
        feedback_reals,
        clean_subchannels: clean,
        relay_overloads: overloads,
        trace: records,
    })
}
