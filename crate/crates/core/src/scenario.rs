//! Scenario parameters, cell geometry and long-term channel gains.
//!
//! The cell is split into a BS cluster (cluster 0) and `num_relays` relay
//! clusters. The first `num_relays` receivers of cluster 0 are the relays
//! themselves, so cluster 0 always has `cluster0_receivers` receivers of which
//! `cluster0_receivers - num_relays` are mobiles.
//!
//! All quantities are linear inside the library. Powers are relative to a unit
//! noise power per subchannel.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ACCESS_SLOPE_DB: f64 = 37.6;
pub const BACKHAUL_SLOPE_DB: f64 = 28.8;
const PATH_LOSS_INTERCEPT_DB: f64 = 128.1;

/// Link class for the path-loss model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    /// BS to mobile or relay to mobile.
    Access,
    /// BS to relay.
    Backhaul,
}

/// How the CSIT error is tied to the true channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsitModel {
    /// The estimate is drawn first and the error is orthogonal to it, so
    /// `H | Hhat ~ CN(Hhat, sigma_e2)`.
    Mmse,
    /// The true channel is drawn first and the estimate is `H + dH`.
    Forward,
}

/// Which distance the configured receive SNR refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrReference {
    /// Each transmitter is calibrated at the edge of its own cluster.
    ClusterEdge,
    /// The BS is calibrated at the cell edge, relays at their cluster edge.
    CellEdge,
}

/// Curve used by relays to summarize their cluster for the BS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMode {
    /// Two-segment equal-power curve.
    Pfs,
    /// Concave envelope of per-user class points.
    General,
}

/// Quantity averaged into the PFS throughput estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfsAverage {
    Scheduled,
    Goodput,
}

/// Dual solver knobs shared by the relay and BS solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Initial step, divided by sqrt(i) on iteration i.
    pub step0: f64,
    /// Stop once the largest multiplier change falls below this.
    pub tolerance: f64,
    /// Stop once (dual - primal) / dual falls below this.
    pub gap_tolerance: f64,
    /// Recover time-shared allocations when the gap stays open.
    pub time_sharing: bool,
    /// General curve: a segment is split while the envelope at its midpoint
    /// rises above the chord by more than this fraction.
    pub curve_tolerance: f64,
    /// General curve: cap on breakpoints after the origin.
    pub curve_max_points: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            step0: 1.0,
            tolerance: 1e-5,
            gap_tolerance: 1e-3,
            time_sharing: true,
            curve_tolerance: 2e-3,
            curve_max_points: 32,
        }
    }
}

/// Every tunable of a simulation run. Loaded from TOML; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub num_relays: usize,
    pub num_subchannels: usize,
    /// Receivers of cluster 0, relays included.
    pub cluster0_receivers: usize,
    pub relay_cluster_users: usize,
    /// When set, transmit powers are derived from this target instead of the
    /// explicit power fields.
    pub receive_snr_db: Option<f64>,
    pub snr_reference: SnrReference,
    pub bs_power_db: f64,
    pub rs_power_db: f64,
    pub interference_threshold_db: f64,
    pub outage_target: f64,
    pub csit_error_variance: f64,
    pub csit_model: CsitModel,
    /// Probability that the PU of a cluster is active on a subchannel.
    pub pu_activity: f64,
    /// PU activity in relay clusters. Defaults to `pu_activity`.
    pub relay_pu_activity: Option<f64>,
    pub false_alarm: f64,
    pub detection: f64,
    pub bs_efficiency: f64,
    pub rs_efficiency: f64,
    pub pfs_window: f64,
    pub pfs_floor: f64,
    /// Starting value of the PFS average. Defaults to the floor.
    pub pfs_initial_rate: Option<f64>,
    pub pfs_average: PfsAverage,
    pub cell_radius_m: f64,
    pub cluster0_radius_m: f64,
    pub rs_ring_radius_m: f64,
    pub rs_cluster_radius_m: f64,
    pub guard_distance_m: f64,
    pub shadowing_sigma_db: f64,
    /// Force every server-to-mobile long-term gain to this value.
    pub access_gain_db: Option<f64>,
    /// Force every BS-to-relay long-term gain to this value.
    pub backhaul_gain_db: Option<f64>,
    pub backhaul_antenna_gain_db: f64,
    pub pu_coherence_frames: usize,
    pub frames_per_trial: usize,
    pub curve_mode: CurveMode,
    /// Multiply the effective gain by the long-term gain a second time when
    /// building the PFS curve.
    pub curve_literal_gain: bool,
    /// Exponent applied to the PU gain in the interference constraint.
    pub interference_gain_exponent: i32,
    /// Treat a relay holding more than one backhaul subchannel as an error.
    pub strict_relay_subchannels: bool,
    pub solver: SolverConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            num_relays: 6,
            num_subchannels: 4,
            cluster0_receivers: 16,
            relay_cluster_users: 5,
            receive_snr_db: Some(10.0),
            snr_reference: SnrReference::ClusterEdge,
            bs_power_db: 30.0,
            rs_power_db: 30.0,
            interference_threshold_db: 0.0,
            outage_target: 0.05,
            csit_error_variance: 0.01,
            csit_model: CsitModel::Mmse,
            pu_activity: 0.3,
            relay_pu_activity: None,
            false_alarm: 0.2,
            detection: 0.8,
            bs_efficiency: 0.5,
            rs_efficiency: 0.25,
            pfs_window: 50.0,
            pfs_floor: 1e-6,
            pfs_initial_rate: None,
            pfs_average: PfsAverage::Scheduled,
            cell_radius_m: 5000.0,
            cluster0_radius_m: 2000.0,
            rs_ring_radius_m: 3000.0,
            rs_cluster_radius_m: 1500.0,
            guard_distance_m: 50.0,
            shadowing_sigma_db: 8.0,
            access_gain_db: None,
            backhaul_gain_db: None,
            backhaul_antenna_gain_db: 0.0,
            pu_coherence_frames: 1,
            frames_per_trial: 50,
            curve_mode: CurveMode::Pfs,
            curve_literal_gain: false,
            interference_gain_exponent: 1,
            strict_relay_subchannels: false,
            solver: SolverConfig::default(),
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Number of mobiles served directly by the BS.
    pub fn cluster0_mobiles(&self) -> usize {
        self.cluster0_receivers - self.num_relays
    }

    pub fn total_mobiles(&self) -> usize {
        self.cluster0_mobiles() + self.num_relays * self.relay_cluster_users
    }

    pub fn relay_activity(&self) -> f64 {
        self.relay_pu_activity.unwrap_or(self.pu_activity)
    }

    /// PU activity of cluster `m`.
    pub fn activity(&self, m: usize) -> f64 {
        if m == 0 {
            self.pu_activity
        } else {
            self.relay_activity()
        }
    }

    pub fn interference_threshold(&self) -> f64 {
        db_to_linear(self.interference_threshold_db)
    }

    pub fn pfs_start(&self) -> f64 {
        self.pfs_initial_rate.unwrap_or(self.pfs_floor).max(self.pfs_floor)
    }

    /// Radius of the area served by the BS itself.
    pub fn cluster0_radius(&self) -> f64 {
        if self.num_relays == 0 {
            self.cell_radius_m
        } else {
            self.cluster0_radius_m
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.outage_target > 0.0 && self.outage_target < 1.0) {
            return err("outage_target must lie in (0, 1)");
        }
        if !prob(self.pu_activity) || !self.relay_pu_activity.is_none_or(prob) {
            return err("PU activity must lie in [0, 1]");
        }
        if !prob(self.false_alarm) {
            return err("false_alarm must lie in [0, 1]");
        }
        if !(self.detection > 0.0 && self.detection <= 1.0) {
            return err("detection must lie in (0, 1]");
        }
        if self.num_subchannels == 0 {
            return err("num_subchannels must be at least 1");
        }
        if self.cluster0_receivers <= self.num_relays {
            return err("cluster0_receivers must exceed num_relays");
        }
        if self.num_relays > 0 && self.relay_cluster_users == 0 {
            return err("relay clusters need at least one user");
        }
        if !(self.csit_error_variance >= 0.0) {
            return err("csit_error_variance must be nonnegative");
        }
        if self.csit_model == CsitModel::Mmse && self.csit_error_variance > 1.0 {
            return err("csit_error_variance above 1 is impossible under the MMSE model");
        }
        let radii = [
            self.cell_radius_m,
            self.cluster0_radius_m,
            self.rs_ring_radius_m,
            self.rs_cluster_radius_m,
        ];
        if radii.iter().any(|r| !(*r > 0.0)) {
            return err("radii must be positive");
        }
        if !(self.guard_distance_m >= 0.0) || self.guard_distance_m >= self.rs_cluster_radius_m
        {
            return err("guard distance must be nonnegative and below the cluster radius");
        }
        if self.guard_distance_m >= self.cluster0_radius() {
            return err("guard distance must be below the cluster 0 radius");
        }
        if self.num_relays > 0 && self.rs_ring_radius_m + self.rs_cluster_radius_m <= self.cluster0_radius_m
        {
            return err("relay clusters lie entirely inside cluster 0");
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return err("shadowing sigma must be nonnegative");
        }
        for (name, v) in [
            ("bs_efficiency", self.bs_efficiency),
            ("rs_efficiency", self.rs_efficiency),
            ("pfs_floor", self.pfs_floor),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.solver.curve_max_points == 0 || !(self.solver.curve_tolerance >= 0.0) {
            return err("solver.curve_max_points must be positive and solver.curve_tolerance nonnegative");
        }
        if !(self.pfs_window >= 1.0) {
            return err("pfs_window must be at least 1");
        }
        if self.pu_coherence_frames == 0 || self.frames_per_trial == 0 {
            return err("frame counts must be at least 1");
        }
        if !matches!(self.interference_gain_exponent, 1 | 2) {
            return err("interference_gain_exponent must be 1 or 2");
        }
        let all_finite = [
            self.bs_power_db,
            self.rs_power_db,
            self.interference_threshold_db,
            self.backhaul_antenna_gain_db,
        ]
        .iter()
        .chain(self.receive_snr_db.iter())
        .chain(self.access_gain_db.iter())
        .chain(self.backhaul_gain_db.iter())
        .all(|x| x.is_finite());
        if !all_finite {
            return err("dB quantities must be finite");
        }
        let s = &self.solver;
        if s.max_iter == 0 || !(s.step0 > 0.0) || !(s.tolerance > 0.0) || !(s.gap_tolerance >= 0.0)
        {
            return err("invalid solver settings");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn dist(&self, o: &Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// One cluster: its server, its mobiles, its PU and all long-term gains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    pub server: Point,
    pub radius: f64,
    pub mobiles: Vec<Point>,
    pub pu: Point,
    /// Server to receiver gains. For cluster 0 the relays come first.
    pub receiver_gains: Vec<f64>,
    /// Server to PU gain, identical on every subchannel.
    pub pu_gain: f64,
    /// BS to mobile gains, used when the BS serves the mobiles directly.
    pub direct_gains: Vec<f64>,
    /// BS to this cluster's PU.
    pub bs_pu_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Topology {
    pub bs_power: f64,
    pub rs_power: f64,
    pub interference_threshold: f64,
    pub relays: Vec<Point>,
    pub clusters: Vec<Cluster>,
}

impl Topology {
    pub fn num_relays(&self) -> usize {
        self.relays.len()
    }

    /// Transmit power budget of the server of cluster `m`.
    pub fn power(&self, m: usize) -> f64 {
        if m == 0 {
            self.bs_power
        } else {
            self.rs_power
        }
    }

    /// Mobiles of the whole cell as (cluster, index within cluster).
    pub fn mobiles(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(m, c)| (0..c.mobiles.len()).map(move |j| (m, j)))
    }

    /// Receiver index of a mobile within its cluster's receiver list.
    pub fn receiver_index(&self, m: usize, j: usize) -> usize {
        if m == 0 {
            self.num_relays() + j
        } else {
            j
        }
    }
}

/// Path loss in dB at `distance_km`.
pub fn path_gain_db(distance_km: f64, link: LinkKind) -> Result<f64> {
    if !(distance_km > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance must be positive, got {distance_km}"
        )));
    }
    let slope = match link {
        LinkKind::Access => ACCESS_SLOPE_DB,
        LinkKind::Backhaul => BACKHAUL_SLOPE_DB,
    };
    Ok(PATH_LOSS_INTERCEPT_DB + slope * distance_km.log10())
}

/// Linear gain after a lognormal shadowing draw with `sigma_db` spread.
pub fn apply_shadowing<R: Rng + ?Sized>(path_loss_db: f64, sigma_db: f64, rng: &mut R) -> f64 {
    let x = if sigma_db > 0.0 {
        Normal::new(0.0, sigma_db).expect("finite sigma").sample(rng)
    } else {
        0.0
    };
    10f64.powf(-(path_loss_db + x) / 10.0)
}

fn shadowed_gain<R: Rng>(d_m: f64, link: LinkKind, cfg: &ScenarioConfig, rng: &mut R) -> f64 {
    // Distances below a metre only occur for degenerate layouts.
    let pl = path_gain_db(d_m.max(1.0) / 1000.0, link).expect("positive distance");
    apply_shadowing(pl, cfg.shadowing_sigma_db, rng).min(1.0)
}

fn polar(r: f64, theta: f64) -> Point {
    Point { x: r * theta.cos(), y: r * theta.sin() }
}

/// Uniform point in the annulus [guard, radius] around `center`, rejected
/// until `accept` holds.
fn sample_in_region<R: Rng>(
    rng: &mut R,
    center: Point,
    radius: f64,
    guard: f64,
    accept: impl Fn(&Point) -> bool,
) -> Point {
    for _ in 0..10_000 {
        let u: f64 = rng.random();
        let r = (u * (radius * radius - guard * guard) + guard * guard).sqrt();
        let theta = 2.0 * PI * rng.random::<f64>();
        let off = polar(r, theta);
        let p = Point { x: center.x + off.x, y: center.y + off.y };
        if accept(&p) {
            return p;
        }
    }
    panic!("cluster region has negligible area");
}

/// Reference gain used by the receive-SNR calibration.
fn reference_gain(cfg: &ScenarioConfig, distance_m: f64) -> f64 {
    match cfg.access_gain_db {
        Some(g) => db_to_linear(g),
        None => {
            let pl = path_gain_db(distance_m / 1000.0, LinkKind::Access).expect("positive");
            10f64.powf(-pl / 10.0)
        }
    }
}

/// Transmit powers (BS, relay) implied by the configuration.
pub fn transmit_powers(cfg: &ScenarioConfig) -> (f64, f64) {
    match cfg.receive_snr_db {
        None => (db_to_linear(cfg.bs_power_db), db_to_linear(cfg.rs_power_db)),
        Some(snr_db) => {
            // Equal split over subchannels gives the target SNR at the
            // reference distance with median shadowing.
            let snr = db_to_linear(snr_db) * cfg.num_subchannels as f64;
            let bs_ref = match cfg.snr_reference {
                SnrReference::ClusterEdge => cfg.cluster0_radius(),
                SnrReference::CellEdge => cfg.cell_radius_m,
            };
            (
                snr / reference_gain(cfg, bs_ref),
                snr / reference_gain(cfg, cfg.rs_cluster_radius_m),
            )
        }
    }
}

/// Places every node and draws long-term gains. Pure in `(cfg, seed)`.
pub fn build_topology(cfg: &ScenarioConfig, seed: u64) -> Result<Topology> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m_count = cfg.num_relays;
    let origin = Point { x: 0.0, y: 0.0 };
    let relays: Vec<Point> = (0..m_count)
        .map(|i| polar(cfg.rs_ring_radius_m, 2.0 * PI * i as f64 / m_count as f64))
        .collect();

    let access_override = cfg.access_gain_db.map(db_to_linear);
    let access = |d: f64, rng: &mut ChaCha8Rng| match access_override {
        Some(g) => g.min(1.0),
        None => shadowed_gain(d, LinkKind::Access, cfg, rng),
    };
    let gamma = cfg.guard_distance_m;
    let r0 = cfg.cluster0_radius();
    let mut clusters = Vec::with_capacity(m_count + 1);

    // Cluster 0.
    let mobiles: Vec<Point> = (0..cfg.cluster0_mobiles())
        .map(|_| sample_in_region(&mut rng, origin, r0, gamma, |_| true))
        .collect();
    let pu = sample_in_region(&mut rng, origin, r0, gamma, |_| true);
    let mut receiver_gains = Vec::with_capacity(cfg.cluster0_receivers);
    for rs in &relays {
        let g = match cfg.backhaul_gain_db {
            Some(g) => db_to_linear(g),
            None => {
                shadowed_gain(rs.norm(), LinkKind::Backhaul, cfg, &mut rng)
                    * db_to_linear(cfg.backhaul_antenna_gain_db)
            }
        };
        receiver_gains.push(g.min(1.0));
    }
    let direct_gains: Vec<f64> = mobiles.iter().map(|p| access(p.norm(), &mut rng)).collect();
    receiver_gains.extend_from_slice(&direct_gains);
    let pu_gain = shadowed_gain(pu.norm(), LinkKind::Access, cfg, &mut rng);
    clusters.push(Cluster {
        server: origin,
        radius: r0,
        mobiles,
        pu,
        receiver_gains,
        pu_gain,
        direct_gains,
        bs_pu_gain: pu_gain,
    });

    // Relay clusters: the disk around the relay outside cluster 0 and inside the cell.
    let in_region = |p: &Point| p.norm() >= r0 && p.norm() <= cfg.cell_radius_m;
    for rs in &relays {
        let rc = cfg.rs_cluster_radius_m;
        let mobiles: Vec<Point> = (0..cfg.relay_cluster_users)
            .map(|_| sample_in_region(&mut rng, *rs, rc, gamma, in_region))
            .collect();
        let pu = sample_in_region(&mut rng, *rs, rc, gamma, in_region);
        let receiver_gains: Vec<f64> =
            mobiles.iter().map(|p| access(p.dist(rs), &mut rng)).collect();
        let direct_gains: Vec<f64> = mobiles.iter().map(|p| access(p.norm(), &mut rng)).collect();
        let pu_gain = shadowed_gain(pu.dist(rs), LinkKind::Access, cfg, &mut rng);
        let bs_pu_gain = shadowed_gain(pu.norm(), LinkKind::Access, cfg, &mut rng);
        clusters.push(Cluster {
            server: *rs,
            radius: rc,
            mobiles,
            pu,
            receiver_gains,
            pu_gain,
            direct_gains,
            bs_pu_gain,
        });
    }

    let (bs_power, rs_power) = transmit_powers(cfg);
    Ok(Topology {
        bs_power,
        rs_power,
        interference_threshold: cfg.interference_threshold(),
        relays,
        clusters,
    })
}
