//! Delivery counters and the derived report metrics.

use std::ops::AddAssign;

use crate::phy::ReceptionOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub sent: u64,
    pub delivered: u64,
    pub lost_collision: u64,
    pub lost_below_sensitivity: u64,
    /// Superseded by a newer packet or generated while the node could not send.
    pub dropped_stale: u64,
    /// Carrier sense gave up after the last backoff stage.
    pub dropped_backoff: u64,
    pub transmitted: u64,
    pub join_attempts: u64,
    pub join_collisions: u64,
}

impl Counters {
    pub fn accounted(&self) -> u64 {
        self.delivered + self.lost_collision + self.lost_below_sensitivity + self.dropped_stale + self.dropped_backoff
    }

    pub fn dropped(&self) -> u64 {
        self.dropped_stale + self.dropped_backoff
    }
}

impl AddAssign<&Counters> for Counters {
    fn add_assign(&mut self, o: &Counters) {
        self.sent += o.sent;
        self.delivered += o.delivered;
        self.lost_collision += o.lost_collision;
        self.lost_below_sensitivity += o.lost_below_sensitivity;
        self.dropped_stale += o.dropped_stale;
        self.dropped_backoff += o.dropped_backoff;
        self.transmitted += o.transmitted;
        self.join_attempts += o.join_attempts;
        self.join_collisions += o.join_collisions;
    }
}

/// Aggregate tallies plus per-segment sent/received for the confidence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsAccumulator {
    pub counters: Counters,
    pub segment_sent: Vec<u64>,
    pub segment_received: Vec<u64>,
    pub delivered_airtime_ms: f64,
    horizon_ms: f64,
}

impl MetricsAccumulator {
    pub fn new(segments: usize, horizon_ms: f64) -> Self {
        MetricsAccumulator {
            counters: Counters::default(),
            segment_sent: vec![0; segments.max(1)],
            segment_received: vec![0; segments.max(1)],
            delivered_airtime_ms: 0.0,
            horizon_ms,
        }
    }

    pub fn segment_of(&self, t_gen_ms: f64) -> usize {
        let m = self.segment_sent.len();
        ((t_gen_ms / self.horizon_ms * m as f64).floor().max(0.0) as usize).min(m - 1)
    }

    pub fn record_generated(&mut self, t_gen_ms: f64) {
        self.counters.sent += 1;
        let s = self.segment_of(t_gen_ms);
        self.segment_sent[s] += 1;
    }

    pub fn record_outcome(&mut self, t_gen_ms: f64, outcome: ReceptionOutcome, toa_ms: f64) {
        match outcome {
            ReceptionOutcome::Delivered => {
                self.counters.delivered += 1;
                self.delivered_airtime_ms += toa_ms;
                let s = self.segment_of(t_gen_ms);
                self.segment_received[s] += 1;
            }
            ReceptionOutcome::LostCollision => self.counters.lost_collision += 1,
            ReceptionOutcome::LostBelowSensitivity => self.counters.lost_below_sensitivity += 1,
        }
    }

    pub fn record_stale(&mut self) {
        self.counters.dropped_stale += 1;
    }

    pub fn record_backoff_drop(&mut self) {
        self.counters.dropped_backoff += 1;
    }

    /// Per-segment delivery ratios of segments that generated traffic.
    pub fn segment_pdrs(&self) -> Vec<f64> {
        self.segment_sent
            .iter()
            .zip(&self.segment_received)
            .filter(|(s, _)| **s > 0)
            .map(|(s, r)| *r as f64 / *s as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub pdr: f64,
    /// Half-width of the 95 % interval over temporal segments.
    pub pdr_ci95: f64,
    pub throughput_kbps: f64,
    pub utilization: f64,
    /// `f64::INFINITY` when nothing was received.
    pub energy_per_success_mj: f64,
}

pub fn pdr_ci95(samples: &[f64]) -> f64 {
    let m = samples.len();
    if m < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / m as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    1.96 * var.sqrt() / (m as f64).sqrt()
}

pub fn throughput_kbps(received: u64, payload_bytes: usize, duration_s: f64) -> f64 {
    received as f64 * payload_bytes as f64 * 8.0 / duration_s / 1000.0
}

pub fn compute_metrics(
    acc: &MetricsAccumulator,
    duration_s: f64,
    payload_bytes: usize,
    channels: usize,
    total_energy_mj: f64,
) -> Metrics {
    let c = &acc.counters;
    let pdr = if c.sent == 0 { 0.0 } else { c.delivered as f64 / c.sent as f64 };
    Metrics {
        pdr,
        pdr_ci95: pdr_ci95(&acc.segment_pdrs()),
        throughput_kbps: throughput_kbps(c.delivered, payload_bytes, duration_s),
        utilization: (acc.delivered_airtime_ms / (channels as f64 * duration_s * 1000.0)).clamp(0.0, 1.0),
        energy_per_success_mj: if c.delivered == 0 {
            f64::INFINITY
        } else {
            total_energy_mj / c.delivered as f64
        },
    }
}
