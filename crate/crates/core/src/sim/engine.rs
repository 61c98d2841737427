//! Event loop shared by the four access schemes.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::config::{Derived, JoinMode, ScenarioConfig, Shadowing, Traffic};
use crate::error::{SchedulerError, SimError};
use crate::mac::fsm::{DeviceFsm, FsmAction, FsmEvent, FsmState, TRANSITION_HEADER};
use crate::mac::{csma_step, next_tx_time_slotted_aloha, random_channel, CsmaDecision, Protocol, TdmaSlot};
use crate::phy::{dbm_to_mw, mw_to_dbm, ReceptionOutcome, Transmission};
use crate::scheduler::{AllocationRequest, QuotaOverflow, ResourceGrid, Scheduler, SchedulerConfig};
use crate::superframe::{SuperframeConfig, SuperframePlanner};
use crate::sync::{run_sync_attempt, BeaconSchedule, ClockModel, SyncAttempt, SyncPolicy, TruncatedGaussian};

use super::energy::{account_energy, EnergyLedger, EnergyMode, PowerProfile};
use super::gateway::Gateway;
use super::metrics::{compute_metrics, Counters, Metrics, MetricsAccumulator};
use super::queue::EventQueue;

pub const REPORT_HEADER: &str = "protocol,n_nodes,sf,interval_s,seed,sent,received,pdr,pdr_ci95,throughput_kbps,\
utilization,energy_mj_per_success,sync_events,collisions,below_sensitivity,dropped,status";

pub const TRACE_HEADER: &str = "t_ms,node,kind,channel,start_ms,end_ms,rx_dbm,outcome";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    /// Some devices never obtained a resource block.
    Infeasible(String),
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Infeasible(_) => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSummary {
    pub node_id: u32,
    pub distance_m: f64,
    pub counters: Counters,
    pub energy: EnergyLedger,
    pub channel: Option<usize>,
    pub first_slot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub protocol: Protocol,
    pub nodes: usize,
    pub sf: u8,
    pub interval_s: f64,
    pub seed: u64,
    pub duration_s: f64,
    pub counters: Counters,
    pub metrics: Metrics,
    pub energy: EnergyLedger,
    pub per_node: Vec<NodeSummary>,
    pub reuse_events: u64,
    pub degraded_events: u64,
    /// Largest |actual − nominal| TDMA emission offset, in true time.
    pub max_timing_error_ms: f64,
    pub events_processed: u64,
    pub status: RunStatus,
    pub trace_csv: Option<String>,
    pub fsm_csv: Option<String>,
    pub audit_csv: Option<String>,
}

fn fmt_energy(e: f64) -> String {
    if e.is_finite() {
        format!("{e:.6}")
    } else {
        "inf".to_string()
    }
}

impl SimulationReport {
    pub fn csv_row(&self) -> String {
        let c = &self.counters;
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
            self.protocol,
            self.nodes,
            self.sf,
            self.interval_s,
            self.seed,
            c.sent,
            c.delivered,
            m.pdr,
            m.pdr_ci95,
            m.throughput_kbps,
            m.utilization,
            fmt_energy(m.energy_per_success_mj),
            self.energy.n_sync,
            c.lost_collision,
            c.lost_below_sensitivity,
            c.dropped(),
            self.status.as_str()
        )
    }

    /// Delivered over frames actually put on the air.
    pub fn success_ratio(&self) -> f64 {
        if self.counters.transmitted == 0 {
            0.0
        } else {
            self.counters.delivered as f64 / self.counters.transmitted as f64
        }
    }
}

// named random streams
const S_PLACEMENT: u64 = 1;
const S_SHADOW: u64 = 2;
const S_TRAFFIC: u64 = 3;
const S_BACKOFF: u64 = 4;
const S_SYNC: u64 = 5;
const S_CHANNEL: u64 = 6;
const S_JOIN: u64 = 7;
const S_JITTER: u64 = 8;
const S_SENSING: u64 = 9;
const S_BEACON: u64 = 10;
const S_CLOCK: u64 = 11;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

struct Streams {
    shadow: ChaCha8Rng,
    traffic: ChaCha8Rng,
    backoff: ChaCha8Rng,
    sync: ChaCha8Rng,
    channel: ChaCha8Rng,
    join: ChaCha8Rng,
    jitter: ChaCha8Rng,
    sensing: ChaCha8Rng,
    beacon: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Data,
    TxStart { token: u64 },
    TxEnd { channel: usize, id: u64 },
    CadStart,
    CadEnd,
    JoinTx,
    JoinResult { ok: bool },
    Grant,
    SyncStart { token: u64 },
    SyncEnd { token: u64 },
}

#[derive(Debug, Clone, Copy)]
enum Frame {
    Data { t_gen: f64 },
    Join,
}

struct Node {
    x: f64,
    y: f64,
    distance_m: f64,
    link_shadow_db: f64,
    clock: ClockModel,
    period_ms: f64,
    priority: u8,
    radio_free_at: f64,
    listen_start: f64,
    listen_end: f64,
    tx_active: bool,
    pending: Option<f64>,
    tx_token: u64,
    tx_scheduled: bool,
    nominal_emit_ms: f64,
    start_token: u64,
    end_token: u64,
    sync_outcome: Option<SyncAttempt>,
    acquire: bool,
    synced: bool,
    sync_failures: u32,
    sync_target: u64,
    join_attempts: u32,
    slot: Option<TdmaSlot>,
    denied: bool,
    fsm: DeviceFsm,
    csma_active: bool,
    csma_stage: u32,
    csma_channel: usize,
    counters: Counters,
    energy: EnergyLedger,
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    d: Derived,
    protocol: Protocol,
    horizon_ms: f64,
    now: f64,
    q: EventQueue<Ev>,
    gw: Gateway,
    nodes: Vec<Node>,
    frames: HashMap<u64, (usize, Frame)>,
    acc: MetricsAccumulator,
    profile: PowerProfile,
    beacons: BeaconSchedule,
    policy: SyncPolicy,
    resync_beacons: u64,
    scheduler: Option<Scheduler>,
    planner: Option<SuperframePlanner>,
    rng: Streams,
    residual: TruncatedGaussian,
    jitter: TruncatedGaussian,
    shadow: Option<Normal<f64>>,
    max_timing_error_ms: f64,
    trace: Option<String>,
    fsm_log: Option<String>,
}

/// Runs one seed of `cfg` to completion.
pub fn run_simulation(cfg: &ScenarioConfig, seed: u64) -> Result<SimulationReport, SimError> {
    cfg.validate()?;
    let mut e = Engine::new(cfg, seed)?;
    e.start()?;
    let mut events = 0u64;
    while let Some(ev) = e.q.pop() {
        events += 1;
        e.now = ev.time_ms;
        e.dispatch(ev.node_id as usize, ev.kind)?;
    }
    Ok(e.finish(seed, events))
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ScenarioConfig, seed: u64) -> Result<Self, SimError> {
        let d = cfg.derived()?;
        let mut placement = stream(seed, S_PLACEMENT);
        let mut clock_rng = stream(seed, S_CLOCK);
        let mut shadow_rng = stream(seed, S_SHADOW);
        let shadow = (cfg.link.shadow_sigma_db > 0.0)
            .then(|| Normal::new(0.0, cfg.link.shadow_sigma_db).expect("sigma checked by validate"));
        let half = cfg.area_m / 2.0;
        let drift = cfg.sync.drift_ppm.abs();
        let mut nodes = Vec::with_capacity(cfg.nodes);
        for i in 0..cfg.nodes {
            let x = placement.gen_range(-half..=half);
            let y = placement.gen_range(-half..=half);
            let ppm = if drift > 0.0 { clock_rng.gen_range(-drift..=drift) } else { 0.0 };
            let offset = clock_rng.gen_range(-500.0..500.0);
            let link_shadow_db = match (cfg.shadowing, &shadow) {
                (Shadowing::PerLink, Some(n)) => n.sample(&mut shadow_rng),
                _ => 0.0,
            };
            let period_ms = if cfg.superframe.periods_s.is_empty() {
                cfg.interval_s * 1000.0
            } else {
                cfg.superframe.periods_s[i % cfg.superframe.periods_s.len()] * 1000.0
            };
            nodes.push(Node {
                x,
                y,
                distance_m: x.hypot(y).max(1.0),
                link_shadow_db,
                clock: ClockModel::new(offset, ppm, 0.0, cfg.sync.hw_sigma_ms),
                period_ms,
                priority: (i % usize::from(cfg.tdma.priority_levels)) as u8,
                radio_free_at: 0.0,
                listen_start: f64::NEG_INFINITY,
                listen_end: f64::NEG_INFINITY,
                tx_active: false,
                pending: None,
                tx_token: 0,
                tx_scheduled: false,
                nominal_emit_ms: 0.0,
                start_token: 0,
                end_token: 0,
                sync_outcome: None,
                acquire: true,
                synced: false,
                sync_failures: 0,
                sync_target: 0,
                join_attempts: 0,
                slot: None,
                denied: false,
                fsm: DeviceFsm::new(cfg.sync.holdover_failures),
                csma_active: false,
                csma_stage: 0,
                csma_channel: 0,
                counters: Counters::default(),
                energy: EnergyLedger::default(),
            });
        }

        let horizon_ms = cfg.duration_s * 1000.0;
        let max_cad = cfg.csma.cad_ms.iter().cloned().fold(0.0, f64::max);
        let beacon_ms = cfg.sync.beacon_interval_s * 1000.0;
        let (scheduler, planner) = if cfg.protocol == Protocol::Tdma {
            if cfg.superframe.k_max > 0 {
                let sf = SuperframeConfig::new(cfg.superframe.k_max, d.frame_ms, d.slots_per_frame);
                (None, Some(SuperframePlanner::new(sf, cfg.channels, &[(0, 0)])))
            } else {
                let grid = ResourceGrid::with_access_slot(cfg.channels, d.slots_per_frame)?;
                let sc = SchedulerConfig {
                    slot_len_ms: d.slot_ms,
                    rho_max: cfg.tdma.rho_max,
                    quota_overflow: if cfg.tdma.reject_over_quota {
                        QuotaOverflow::Reject
                    } else {
                        QuotaOverflow::Downgrade
                    },
                    reuse_enabled: cfg.tdma.reuse,
                    strict_priority: cfg.tdma.strict_priority,
                    audit: cfg.trace,
                };
                (Some(Scheduler::new(grid, sc).with_bandwidth(cfg.phy.bw_hz)), None)
            }
        } else {
            (None, None)
        };

        Ok(Engine {
            cfg,
            d,
            protocol: cfg.protocol,
            horizon_ms,
            now: 0.0,
            q: EventQueue::new(),
            gw: Gateway::new(cfg.link.clone(), cfg.channels, max_cad),
            nodes,
            frames: HashMap::new(),
            acc: MetricsAccumulator::new(cfg.segments, horizon_ms),
            profile: PowerProfile {
                tx_mw: cfg.energy.tx_mw,
                rx_mw: cfg.energy.rx_mw,
                sleep_mw: cfg.energy.sleep_mw,
                listen_ms: cfg.energy.listen_ms,
            },
            beacons: BeaconSchedule::periodic(beacon_ms, cfg.sync.beacon_toa_ms),
            policy: SyncPolicy {
                retry_ms: d.sync_retry_ms,
                holdover_failures: cfg.sync.holdover_failures,
            },
            resync_beacons: ((cfg.sync.interval_s / cfg.sync.beacon_interval_s).round() as u64).max(1),
            scheduler,
            planner,
            rng: Streams {
                shadow: shadow_rng,
                traffic: stream(seed, S_TRAFFIC),
                backoff: stream(seed, S_BACKOFF),
                sync: stream(seed, S_SYNC),
                channel: stream(seed, S_CHANNEL),
                join: stream(seed, S_JOIN),
                jitter: stream(seed, S_JITTER),
                sensing: stream(seed, S_SENSING),
                beacon: stream(seed, S_BEACON),
            },
            residual: TruncatedGaussian::three_sigma(cfg.sync.sigma_ms),
            jitter: TruncatedGaussian::three_sigma(cfg.sync.hw_sigma_ms),
            shadow,
            max_timing_error_ms: 0.0,
            trace: cfg.trace.then(|| format!("{TRACE_HEADER}\n")),
            fsm_log: (cfg.trace && cfg.protocol == Protocol::Tdma).then(|| format!("{TRANSITION_HEADER}\n")),
        })
    }

    fn push(&mut self, t: f64, i: usize, ev: Ev) {
        self.q.push(t, i as u32, ev);
    }

    fn start(&mut self) -> Result<(), SimError> {
        for i in 0..self.nodes.len() {
            let first = self.first_arrival(i);
            if first < self.horizon_ms {
                self.push(first, i, Ev::Data);
            }
            match self.protocol {
                Protocol::SlottedAloha => self.begin_sync(i),
                Protocol::Tdma => {
                    let acts = self.fsm(i, FsmEvent::PowerOn)?;
                    if self.cfg.tdma.join == JoinMode::Provisioned {
                        self.fsm(i, FsmEvent::JoinGranted)?;
                        self.grant(i)?;
                    } else {
                        self.apply(i, &acts, None)?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn first_arrival(&mut self, i: usize) -> f64 {
        let p = self.nodes[i].period_ms;
        match self.cfg.traffic {
            Traffic::Periodic => self.rng.traffic.gen_range(0.0..p),
            Traffic::Poisson => Exp::new(1.0 / p).expect("positive period").sample(&mut self.rng.traffic),
        }
    }

    fn next_arrival(&mut self, i: usize) -> f64 {
        let n = &self.nodes[i];
        match self.cfg.traffic {
            // the reporting timer runs on the node's own oscillator
            Traffic::Periodic => n.period_ms / (1.0 + n.clock.drift_ppm * 1e-6),
            Traffic::Poisson => Exp::new(1.0 / n.period_ms).expect("positive period").sample(&mut self.rng.traffic),
        }
    }

    fn dispatch(&mut self, i: usize, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Data => self.on_data(i),
            Ev::TxStart { token } => self.on_tx_start(i, token),
            Ev::TxEnd { channel, id } => self.on_tx_end(channel, id),
            Ev::CadStart => {
                self.cad_start(i);
                Ok(())
            }
            Ev::CadEnd => {
                self.cad_end(i);
                Ok(())
            }
            Ev::JoinTx => {
                self.nodes[i].counters.join_attempts += 1;
                self.acc.counters.join_attempts += 1;
                self.start_tx(i, 0, Frame::Join);
                Ok(())
            }
            Ev::JoinResult { ok } => {
                let w = self.d.rx_window_ms;
                account_energy(&mut self.nodes[i].energy, &self.profile, w, EnergyMode::Rx);
                let ev = if ok { FsmEvent::JoinGranted } else { FsmEvent::JoinFailed };
                let acts = self.fsm(i, ev)?;
                self.apply(i, &acts, None)
            }
            Ev::Grant => self.grant(i),
            Ev::SyncStart { token } => {
                if token != self.nodes[i].start_token {
                    return Ok(());
                }
                if self.protocol == Protocol::Tdma {
                    let acts = self.fsm(i, FsmEvent::SyncAgeExpired)?;
                    self.apply(i, &acts, None)
                } else {
                    self.begin_sync(i);
                    Ok(())
                }
            }
            Ev::SyncEnd { token } => {
                if token != self.nodes[i].end_token {
                    return Ok(());
                }
                self.on_sync_end(i)
            }
        }
    }

    // ---- bookkeeping

    fn stale(&mut self, i: usize) {
        self.acc.record_stale();
        self.nodes[i].counters.dropped_stale += 1;
    }

    fn replace_pending(&mut self, i: usize, t_gen: f64) {
        if self.nodes[i].pending.replace(t_gen).is_some() {
            self.stale(i);
        }
    }

    fn record_outcome(&mut self, i: usize, t_gen: f64, o: ReceptionOutcome) {
        self.acc.record_outcome(t_gen, o, self.d.toa_ms);
        let c = &mut self.nodes[i].counters;
        match o {
            ReceptionOutcome::Delivered => c.delivered += 1,
            ReceptionOutcome::LostCollision => c.lost_collision += 1,
            ReceptionOutcome::LostBelowSensitivity => c.lost_below_sensitivity += 1,
        }
    }

    fn fsm(&mut self, i: usize, ev: FsmEvent) -> Result<Vec<FsmAction>, SimError> {
        let (t, acts) = self.nodes[i].fsm.step(ev)?;
        if let Some(log) = self.fsm_log.as_mut() {
            log.push_str(&t.to_csv(self.now, i as u32));
            log.push('\n');
        }
        Ok(acts)
    }

    // ---- radio

    fn start_tx(&mut self, i: usize, channel: usize, frame: Frame) {
        let now = self.now;
        let toa = self.d.toa_ms;
        let shadow = match (self.cfg.shadowing, &self.shadow) {
            (Shadowing::PerLink, _) => self.nodes[i].link_shadow_db,
            (Shadowing::PerPacket, Some(n)) => n.sample(&mut self.rng.shadow),
            (Shadowing::PerPacket, None) => 0.0,
        };
        let n = &mut self.nodes[i];
        let rx = self
            .cfg
            .link
            .rx_power_dbm(self.cfg.phy.tx_power_dbm, n.distance_m, shadow);
        let id = self.gw.begin(Transmission {
            node_id: i as u32,
            channel_index: channel,
            sf: self.cfg.phy.sf,
            start_time_ms: now,
            toa_ms: toa,
            tx_power_dbm: self.cfg.phy.tx_power_dbm,
            distance_m: n.distance_m,
            sampled_rx_power_dbm: rx,
        });
        n.tx_active = true;
        n.radio_free_at = now + toa;
        account_energy(&mut n.energy, &self.profile, toa, EnergyMode::Tx);
        if let Frame::Data { .. } = frame {
            n.counters.transmitted += 1;
            self.acc.counters.transmitted += 1;
        }
        self.frames.insert(id, (i, frame));
        self.push(now + toa, i, Ev::TxEnd { channel, id });
    }

    fn on_tx_end(&mut self, channel: usize, id: u64) -> Result<(), SimError> {
        let now = self.now;
        let (tx, outcome) = self
            .gw
            .finish(channel, id, now)
            .ok_or_else(|| SimError::Internal(format!("unknown frame {id}")))?;
        let (i, frame) = self
            .frames
            .remove(&id)
            .ok_or_else(|| SimError::Internal(format!("unknown frame {id}")))?;
        self.nodes[i].tx_active = false;
        if let Some(tr) = self.trace.as_mut() {
            let kind = if matches!(frame, Frame::Join) { "join" } else { "data" };
            let o = match outcome {
                ReceptionOutcome::Delivered => "delivered",
                ReceptionOutcome::LostCollision => "collision",
                ReceptionOutcome::LostBelowSensitivity => "below_sensitivity",
            };
            let _ = writeln!(
                tr,
                "{now:.3},{i},{kind},{channel},{:.3},{:.3},{:.2},{o}",
                tx.start_time_ms,
                tx.end_time_ms(),
                tx.sampled_rx_power_dbm
            );
        }
        match frame {
            Frame::Join => {
                if outcome == ReceptionOutcome::LostCollision {
                    self.nodes[i].counters.join_collisions += 1;
                    self.acc.counters.join_collisions += 1;
                }
                let f = self.d.frame_ms;
                let next = (now / f - 1e-9).ceil() * f;
                self.push(
                    next,
                    i,
                    Ev::JoinResult {
                        ok: outcome == ReceptionOutcome::Delivered,
                    },
                );
                Ok(())
            }
            Frame::Data { t_gen } => {
                self.record_outcome(i, t_gen, outcome);
                match self.protocol {
                    Protocol::PureAloha => {
                        if let Some(t) = self.nodes[i].pending.take() {
                            let ch = random_channel(&mut self.rng.channel, self.cfg.channels);
                            self.start_tx(i, ch, Frame::Data { t_gen: t });
                        }
                    }
                    Protocol::SlottedAloha => {
                        if self.nodes[i].pending.is_some() && !self.nodes[i].tx_scheduled {
                            self.saloha_schedule(i);
                        }
                    }
                    Protocol::Csma => {
                        self.nodes[i].csma_active = false;
                        if self.nodes[i].pending.is_some() {
                            self.csma_begin(i);
                        }
                    }
                    Protocol::Tdma => {
                        if outcome == ReceptionOutcome::Delivered {
                            if let Some(s) = self.scheduler.as_mut() {
                                s.report(i as u32, now);
                                s.reclaim_expired(now, self.d.t_release_ms);
                            }
                        }
                        let acts = self.fsm(i, FsmEvent::TxDone)?;
                        self.apply(i, &acts, None)?;
                    }
                }
                Ok(())
            }
        }
    }

    // ---- traffic

    fn on_data(&mut self, i: usize) -> Result<(), SimError> {
        let now = self.now;
        let next = now + self.next_arrival(i);
        if next < self.horizon_ms {
            self.push(next, i, Ev::Data);
        }
        self.acc.record_generated(now);
        self.nodes[i].counters.sent += 1;
        match self.protocol {
            Protocol::PureAloha => {
                if self.nodes[i].tx_active {
                    self.replace_pending(i, now);
                } else {
                    let ch = random_channel(&mut self.rng.channel, self.cfg.channels);
                    self.start_tx(i, ch, Frame::Data { t_gen: now });
                }
            }
            Protocol::SlottedAloha => {
                if !self.nodes[i].synced {
                    self.stale(i);
                } else {
                    self.replace_pending(i, now);
                    let n = &self.nodes[i];
                    if !n.tx_scheduled && !n.tx_active {
                        self.saloha_schedule(i);
                    }
                }
            }
            Protocol::Csma => {
                self.replace_pending(i, now);
                let n = &self.nodes[i];
                if !n.csma_active && !n.tx_active {
                    self.csma_begin(i);
                }
            }
            Protocol::Tdma => {
                let acts = self.fsm(i, FsmEvent::DataReady)?;
                self.apply(i, &acts, Some(now))?;
            }
        }
        Ok(())
    }

    fn on_tx_start(&mut self, i: usize, token: u64) -> Result<(), SimError> {
        if token != self.nodes[i].tx_token {
            return Ok(());
        }
        match self.protocol {
            Protocol::SlottedAloha => {
                let now = self.now;
                let n = &mut self.nodes[i];
                n.tx_scheduled = false;
                if !n.synced {
                    if n.pending.take().is_some() {
                        self.stale(i);
                    }
                    return Ok(());
                }
                let toa = self.d.toa_ms;
                if now < n.listen_end && now + toa > n.listen_start {
                    self.saloha_schedule(i);
                    return Ok(());
                }
                if let Some(t) = n.pending.take() {
                    let ch = random_channel(&mut self.rng.channel, self.cfg.channels);
                    self.start_tx(i, ch, Frame::Data { t_gen: t });
                }
                Ok(())
            }
            Protocol::Tdma => {
                if self.nodes[i].fsm.state() != FsmState::Wait {
                    return Ok(());
                }
                let err = (self.now - self.nodes[i].nominal_emit_ms).abs();
                self.max_timing_error_ms = self.max_timing_error_ms.max(err);
                let acts = self.fsm(i, FsmEvent::SlotBoundary)?;
                self.apply(i, &acts, None)
            }
            _ => Ok(()),
        }
    }

    fn saloha_schedule(&mut self, i: usize) {
        let now = self.now;
        let toa = self.d.toa_ms;
        let ls = self.d.slot_ms;
        let jit = self.jitter.sample(&mut self.rng.jitter);
        let n = &mut self.nodes[i];
        let mut ready = now.max(n.radio_free_at);
        loop {
            let s = next_tx_time_slotted_aloha(ready, ls, &n.clock);
            let t = (s.true_ms + jit).max(ready);
            if t < n.listen_end && t + toa > n.listen_start {
                ready = n.listen_end;
                continue;
            }
            n.tx_token += 1;
            n.tx_scheduled = true;
            let token = n.tx_token;
            self.push(t, i, Ev::TxStart { token });
            return;
        }
    }

    // ---- carrier sense

    fn csma_begin(&mut self, i: usize) {
        let ch = random_channel(&mut self.rng.channel, self.cfg.channels);
        let n = &mut self.nodes[i];
        n.csma_active = true;
        n.csma_stage = 0;
        n.csma_channel = ch;
        self.cad_start(i);
    }

    fn cad_start(&mut self, i: usize) {
        let cad = self.cfg.csma.cad_duration_ms(self.cfg.phy.sf);
        let now = self.now;
        let n = &mut self.nodes[i];
        n.csma_stage += 1;
        n.radio_free_at = now + cad;
        account_energy(&mut n.energy, &self.profile, cad, EnergyMode::Rx);
        self.push(now + cad, i, Ev::CadEnd);
    }

    /// Power at node `i` of every frame on its channel during the CAD window.
    fn sense(&mut self, i: usize) -> f64 {
        let cad = self.cfg.csma.cad_duration_ms(self.cfg.phy.sf);
        let (x, y, ch) = (self.nodes[i].x, self.nodes[i].y, self.nodes[i].csma_channel);
        let mut mw = 0.0;
        let others: Vec<(u32, f64)> = self
            .gw
            .overlapping(ch, self.now - cad, self.now)
            .filter(|t| t.node_id as usize != i)
            .map(|t| (t.node_id, t.tx_power_dbm))
            .collect();
        for (other, p) in others {
            let o = &self.nodes[other as usize];
            let d = (o.x - x).hypot(o.y - y).max(1.0);
            let shadow = self.shadow.map_or(0.0, |n| n.sample(&mut self.rng.sensing));
            mw += dbm_to_mw(self.cfg.link.rx_power_dbm(p, d, shadow));
        }
        if mw > 0.0 {
            mw_to_dbm(mw)
        } else {
            f64::NEG_INFINITY
        }
    }

    fn cad_end(&mut self, i: usize) {
        let sensed = self.sense(i);
        let stage = self.nodes[i].csma_stage;
        match csma_step(&self.cfg.csma, stage, sensed, &mut self.rng.backoff) {
            CsmaDecision::Transmit => {
                let ch = self.nodes[i].csma_channel;
                if let Some(t) = self.nodes[i].pending.take() {
                    self.start_tx(i, ch, Frame::Data { t_gen: t });
                } else {
                    self.nodes[i].csma_active = false;
                }
            }
            CsmaDecision::Backoff { delay_ms } => self.push(self.now + delay_ms, i, Ev::CadStart),
            CsmaDecision::GiveUp => {
                self.nodes[i].csma_active = false;
                if self.nodes[i].pending.take().is_some() {
                    self.acc.record_backoff_drop();
                    self.nodes[i].counters.dropped_backoff += 1;
                }
            }
        }
    }

    // ---- TDMA control plane

    fn schedule_join(&mut self, i: usize, backoff_frames: u64) {
        let f = self.d.frame_ms;
        let frame = (self.now / f - 1e-9).ceil().max(0.0) as u64 + backoff_frames;
        let slack = (self.d.slot_ms - self.d.toa_ms).max(0.0);
        let offset = if slack > 0.0 { self.rng.join.gen_range(0.0..=slack) } else { 0.0 };
        let t = frame as f64 * f + offset;
        if t < self.horizon_ms {
            self.push(t, i, Ev::JoinTx);
        }
    }

    fn grant(&mut self, i: usize) -> Result<(), SimError> {
        let w = self.d.rx_window_ms;
        account_energy(&mut self.nodes[i].energy, &self.profile, w, EnergyMode::Rx);
        let now = self.now;
        let slot = if let Some(p) = self.planner.as_mut() {
            match p.place(i as u32, self.nodes[i].period_ms) {
                Ok(s) => Some(TdmaSlot {
                    channel_index: s.channel_index,
                    first_slot: s.slot,
                    n_slots: 1,
                    slot_len_ms: self.d.slot_ms,
                    frame_len_ms: self.d.frame_ms,
                    group: Some(s),
                }),
                Err(_) => None,
            }
        } else if let Some(s) = self.scheduler.as_mut() {
            let req = AllocationRequest {
                is_multi: self.cfg.tdma.multi_slot,
                ..AllocationRequest::single(i as u32, self.cfg.phy.sf, self.cfg.payload_bytes, self.nodes[i].priority)
            };
            match s.allocate(&req, now) {
                Ok(r) => Some(TdmaSlot {
                    channel_index: r.channel_index,
                    first_slot: r.slot_indices[0],
                    n_slots: r.slot_indices.len(),
                    slot_len_ms: self.d.slot_ms,
                    frame_len_ms: self.d.frame_ms,
                    group: None,
                }),
                Err(SchedulerError::Saturated(_) | SchedulerError::TooManySlots { .. } | SchedulerError::QuotaRejected(_)) => {
                    None
                }
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        match slot {
            Some(s) => {
                self.nodes[i].slot = Some(s);
                self.nodes[i].denied = false;
                let acts = self.fsm(i, FsmEvent::AllocGranted)?;
                self.apply(i, &acts, None)
            }
            None => {
                self.nodes[i].denied = true;
                let acts = self.fsm(i, FsmEvent::AllocDenied)?;
                self.apply(i, &acts, None)
            }
        }
    }

    fn schedule_slot(&mut self, i: usize) {
        let now = self.now;
        let guard = self.d.guard_ms;
        let jit = self.jitter.sample(&mut self.rng.jitter);
        let n = &mut self.nodes[i];
        let Some(slot) = n.slot else { return };
        let local = n.clock.local_time(now);
        let w = slot.next_window(local - guard / 2.0);
        let nominal = w.emit_local_ms(guard);
        let t = (n.clock.true_time_of(nominal) + jit).max(now);
        n.nominal_emit_ms = nominal;
        n.tx_token += 1;
        let token = n.tx_token;
        self.push(t, i, Ev::TxStart { token });
    }

    fn apply(&mut self, i: usize, acts: &[FsmAction], new_packet: Option<f64>) -> Result<(), SimError> {
        for a in acts {
            match a {
                FsmAction::TransmitOnAccessSlot => self.schedule_join(i, 0),
                FsmAction::BackoffJoin => {
                    let n = &mut self.nodes[i];
                    n.join_attempts += 1;
                    let exp = n.join_attempts.min(self.cfg.tdma.join_backoff_max_exp);
                    let b = self.rng.join.gen_range(0..(1u64 << exp));
                    self.schedule_join(i, b);
                }
                FsmAction::SendAllocRequest => {
                    let t = self.now + self.d.frame_ms;
                    self.push(t, i, Ev::Grant);
                }
                FsmAction::RetuneToSyncChannel => {
                    self.nodes[i].tx_token += 1;
                    self.begin_sync(i);
                }
                FsmAction::ReturnToUplinkChannel | FsmAction::SuspendUplinks => {
                    if *a == FsmAction::SuspendUplinks {
                        self.nodes[i].acquire = true;
                    }
                }
                FsmAction::ScheduleRetry => {
                    if self.nodes[i].fsm.state() == FsmState::Req {
                        let t = self.now + self.d.frame_ms;
                        if t < self.horizon_ms {
                            self.push(t, i, Ev::Grant);
                        }
                    } else {
                        self.schedule_sync_retry(i);
                    }
                }
                FsmAction::ScheduleWakeup => {
                    if let Some(t) = new_packet {
                        self.replace_pending(i, t);
                    }
                    self.schedule_slot(i);
                }
                FsmAction::Transmit => {
                    let t = self.nodes[i]
                        .pending
                        .take()
                        .ok_or_else(|| SimError::Internal(format!("node {i} entered SEND without a packet")))?;
                    let ch = self.nodes[i].slot.map_or(0, |s| s.channel_index);
                    self.start_tx(i, ch, Frame::Data { t_gen: t });
                }
                FsmAction::ReplacePending => {
                    if let Some(t) = new_packet {
                        self.replace_pending(i, t);
                    }
                }
                FsmAction::DeferPending => {
                    if let Some(t) = new_packet {
                        self.replace_pending(i, t);
                    }
                }
                FsmAction::DropStale => match new_packet {
                    Some(_) => self.stale(i),
                    None => {
                        if self.nodes[i].pending.take().is_some() {
                            self.stale(i);
                        }
                    }
                },
            }
        }
        Ok(())
    }

    // ---- synchronisation

    fn window_true(&self, i: usize, beacon: u64) -> (f64, f64) {
        let n = &self.nodes[i];
        let b = self.beacons.start_of(beacon);
        let half = self.profile.listen_ms / 2.0;
        (n.clock.true_time_of(b - half), n.clock.true_time_of(b + half))
    }

    fn schedule_steady_sync(&mut self, i: usize) {
        let (ws, _) = self.window_true(i, self.nodes[i].sync_target);
        let t = ws.max(self.now);
        if t < self.horizon_ms {
            let n = &mut self.nodes[i];
            n.start_token += 1;
            let token = n.start_token;
            self.push(t, i, Ev::SyncStart { token });
        }
    }

    fn schedule_sync_retry(&mut self, i: usize) {
        let retry = self.policy.retry_ms;
        if self.nodes[i].acquire {
            let t = self.now + retry;
            if t < self.horizon_ms {
                let n = &mut self.nodes[i];
                n.start_token += 1;
                let token = n.start_token;
                self.push(t, i, Ev::SyncStart { token });
            }
        } else {
            let local = self.nodes[i].clock.local_time(self.now + retry);
            let k = self
                .beacons
                .next_at_or_after(local + self.profile.listen_ms / 2.0)
                .unwrap_or(0);
            self.nodes[i].sync_target = k;
            self.schedule_steady_sync(i);
        }
    }

    /// Opens a listen on the beacon channel and queues its conclusion.
    fn begin_sync(&mut self, i: usize) {
        let now = self.now;
        let free = now.max(self.nodes[i].radio_free_at);
        let residual = self.residual.sample(&mut self.rng.sync);
        let loss = self.cfg.sync.beacon_loss;
        let clock = self.nodes[i].clock;
        let (start, end, timeout) = if self.nodes[i].acquire {
            let timeout = self.d.sync_timeout_ms;
            (free, free + timeout, timeout)
        } else {
            let mut k = self.nodes[i].sync_target;
            let (mut ws, mut we) = self.window_true(i, k);
            if we - self.beacons.toa_ms < free {
                let local = clock.local_time(free);
                k = self.beacons.next_at_or_after(local + self.profile.listen_ms / 2.0).unwrap_or(k + 1);
                self.nodes[i].sync_target = k;
                (ws, we) = self.window_true(i, k);
            }
            let start = ws.max(free);
            (start, we, (we - start).max(0.0))
        };
        let beacon_rng = &mut self.rng.beacon;
        let attempt = run_sync_attempt(&clock, &self.beacons, start, timeout, &self.policy, residual, |_| {
            loss > 0.0 && beacon_rng.gen_bool(loss)
        });
        let end = match attempt {
            SyncAttempt::Synced { wait_ms, .. } if self.nodes[i].acquire => start + wait_ms,
            _ => end,
        };
        let n = &mut self.nodes[i];
        n.listen_start = start;
        n.listen_end = end;
        n.radio_free_at = end;
        account_energy(&mut n.energy, &self.profile, end - start, EnergyMode::SyncListen);
        n.sync_outcome = Some(attempt);
        n.end_token += 1;
        let token = n.end_token;
        self.push(end, i, Ev::SyncEnd { token });
    }

    fn on_sync_end(&mut self, i: usize) -> Result<(), SimError> {
        let Some(outcome) = self.nodes[i].sync_outcome.take() else {
            return Ok(());
        };
        match outcome {
            SyncAttempt::Synced { clock, beacon_index, .. } => {
                let n = &mut self.nodes[i];
                n.clock = clock;
                n.acquire = false;
                n.synced = true;
                n.sync_failures = 0;
                n.sync_target = beacon_index + self.resync_beacons;
                self.schedule_steady_sync(i);
                match self.protocol {
                    Protocol::Tdma => {
                        let acts = self.fsm(i, FsmEvent::SyncDone)?;
                        self.apply(i, &acts, None)?;
                    }
                    _ => {
                        let n = &self.nodes[i];
                        if n.pending.is_some() && !n.tx_scheduled && !n.tx_active {
                            self.saloha_schedule(i);
                        }
                    }
                }
            }
            SyncAttempt::Failed { .. } => match self.protocol {
                Protocol::Tdma => {
                    let acts = self.fsm(i, FsmEvent::SyncTimeout)?;
                    self.apply(i, &acts, None)?;
                }
                _ => {
                    let holdover = self.policy.holdover_failures;
                    let n = &mut self.nodes[i];
                    if n.synced {
                        n.sync_failures += 1;
                        if n.sync_failures >= holdover {
                            n.synced = false;
                            n.acquire = true;
                            n.tx_token += 1;
                            n.tx_scheduled = false;
                            if n.pending.take().is_some() {
                                self.stale(i);
                            }
                        }
                    }
                    self.schedule_sync_retry(i);
                    let n = &self.nodes[i];
                    if n.synced && n.pending.is_some() && !n.tx_scheduled && !n.tx_active {
                        self.saloha_schedule(i);
                    }
                }
            },
        }
        Ok(())
    }

    fn finish(mut self, seed: u64, events: u64) -> SimulationReport {
        for i in 0..self.nodes.len() {
            if self.nodes[i].pending.take().is_some() {
                self.stale(i);
            }
        }
        let mut energy = EnergyLedger::default();
        let mut per_node = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter_mut().enumerate() {
            n.energy.close(&self.profile, self.horizon_ms);
            energy += &n.energy;
            per_node.push(NodeSummary {
                node_id: i as u32,
                distance_m: n.distance_m,
                counters: n.counters,
                energy: n.energy,
                channel: n.slot.map(|s| s.channel_index),
                first_slot: n.slot.map(|s| s.first_slot),
            });
        }
        let denied = self.nodes.iter().filter(|n| n.denied).count();
        let blocks = (self.d.slots_per_frame * self.cfg.channels).saturating_sub(1);
        let over_capacity = self.protocol == Protocol::Tdma
            && !self.cfg.tdma.reuse
            && self.cfg.superframe.k_max == 0
            && self.nodes.len() > blocks;
        let status = if denied > 0 {
            RunStatus::Infeasible(format!("{denied} of {} devices without a resource block", self.nodes.len()))
        } else if over_capacity {
            RunStatus::Infeasible(format!("{} devices exceed the {blocks} allocatable blocks", self.nodes.len()))
        } else {
            RunStatus::Ok
        };
        let metrics = compute_metrics(
            &self.acc,
            self.cfg.duration_s,
            self.cfg.payload_bytes,
            self.cfg.channels,
            energy.total_mj(),
        );
        SimulationReport {
            protocol: self.protocol,
            nodes: self.cfg.nodes,
            sf: self.cfg.phy.sf,
            interval_s: self.cfg.interval_s,
            seed,
            duration_s: self.cfg.duration_s,
            counters: self.acc.counters,
            metrics,
            energy,
            per_node,
            reuse_events: self.scheduler.as_ref().map_or(0, |s| s.reuse_events()),
            degraded_events: self.scheduler.as_ref().map_or(0, |s| s.degraded_events()),
            max_timing_error_ms: self.max_timing_error_ms,
            events_processed: events,
            status,
            trace_csv: self.trace,
            fsm_csv: self.fsm_log,
            audit_csv: if self.cfg.trace {
                self.scheduler.as_ref().map(|s| s.audit_csv())
            } else {
                None
            },
        }
    }
}
