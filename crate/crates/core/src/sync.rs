//! Out-of-band time synchronisation.
//!
//! A sync node broadcasts short timestamp beacons on a channel disjoint
//! from every uplink channel. Devices retune, catch one beacon, rebuild
//! the sender's transmit time and reset their clock offset to whatever
//! residual error the reconstruction leaves. Between syncs the offset
//! grows linearly with the oscillator's rate error.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Per-device clock: local time = true time + offset(true time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockModel {
    /// Offset (local minus true) right after the last sync.
    pub offset_ms: f64,
    /// Signed oscillator rate error.
    pub drift_ppm: f64,
    pub last_sync_true_time_ms: f64,
    pub hw_jitter_sigma_ms: f64,
}

impl ClockModel {
    pub fn perfect() -> Self {
        ClockModel {
            offset_ms: 0.0,
            drift_ppm: 0.0,
            last_sync_true_time_ms: 0.0,
            hw_jitter_sigma_ms: 0.0,
        }
    }

    pub fn new(offset_ms: f64, drift_ppm: f64, last_sync_true_time_ms: f64, hw_jitter_sigma_ms: f64) -> Self {
        ClockModel {
            offset_ms,
            drift_ppm,
            last_sync_true_time_ms,
            hw_jitter_sigma_ms,
        }
    }

    fn rate(&self) -> f64 {
        self.drift_ppm * 1e-6
    }

    /// Offset at `true_time_ms`, extrapolated linearly from the last sync.
    pub fn offset_at(&self, true_time_ms: f64) -> f64 {
        self.offset_ms + self.rate() * (true_time_ms - self.last_sync_true_time_ms)
    }

    pub fn local_time(&self, true_time_ms: f64) -> f64 {
        true_time_ms + self.offset_at(true_time_ms)
    }

    /// Inverse of [`local_time`](Self::local_time).
    pub fn true_time_of(&self, local_ms: f64) -> f64 {
        let r = self.rate();
        (local_ms - self.offset_ms + r * self.last_sync_true_time_ms) / (1.0 + r)
    }

    /// Clock after a successful sync at `true_time_ms` leaving `residual_ms` error.
    pub fn resynced(&self, true_time_ms: f64, residual_ms: f64) -> Self {
        ClockModel {
            offset_ms: residual_ms,
            last_sync_true_time_ms: true_time_ms,
            ..*self
        }
    }
}

pub fn local_time(clock: &ClockModel, true_time_ms: f64) -> f64 {
    clock.local_time(true_time_ms)
}

/// Device-side estimate of the beacon's arrival instant: the sender's
/// transmit stamp plus encode, airtime and decode delays. Propagation and
/// interrupt latency are neglected.
pub fn reconstruct_timestamp(t1_ms: f64, toa_ms: f64, t_decode_ms: f64, t_encode_ms: f64) -> f64 {
    t1_ms + t_encode_ms + toa_ms + t_decode_ms
}

/// Worst-case timing components a guard interval has to absorb.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncBudget {
    pub sync_err_max_ms: f64,
    pub drift_max_ms: f64,
    pub hw_max_ms: f64,
}

impl SyncBudget {
    /// Budget implied by an oscillator class and resync period.
    pub fn from_clock(sync_err_max_ms: f64, drift_ppm: f64, resync_interval_ms: f64, hw_max_ms: f64) -> Self {
        SyncBudget {
            sync_err_max_ms,
            drift_max_ms: drift_ppm.abs() * 1e-6 * resync_interval_ms,
            hw_max_ms,
        }
    }
}

/// Adjacent slots can err in opposite directions, hence the factor two.
pub fn min_guard_time(budget: &SyncBudget) -> f64 {
    2.0 * (budget.sync_err_max_ms + budget.drift_max_ms + budget.hw_max_ms)
}

pub fn beacon_duty_cycle(toa_ms: f64, interval_ms: f64) -> f64 {
    toa_ms / interval_ms
}

pub const DUTY_CYCLE_LIMIT: f64 = 0.01;

pub fn exceeds_duty_limit(ratio: f64, limit: f64) -> bool {
    ratio > limit
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncBeacon {
    /// Transmit stamp carried in the payload.
    pub tx_true_time_ms: f64,
    pub toa_ms: f64,
    pub channel: usize,
    pub payload_bytes: usize,
}

/// Periodic beacon train. An empty schedule never emits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeaconSchedule {
    pub interval_ms: f64,
    pub first_ms: f64,
    pub toa_ms: f64,
    pub channel: usize,
    empty: bool,
}

impl BeaconSchedule {
    pub fn periodic(interval_ms: f64, toa_ms: f64) -> Self {
        BeaconSchedule {
            interval_ms,
            first_ms: 0.0,
            toa_ms,
            channel: usize::MAX,
            empty: false,
        }
    }

    pub fn empty() -> Self {
        BeaconSchedule {
            interval_ms: f64::INFINITY,
            first_ms: 0.0,
            toa_ms: 0.0,
            channel: usize::MAX,
            empty: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn start_of(&self, index: u64) -> f64 {
        self.first_ms + index as f64 * self.interval_ms
    }

    /// First beacon whose transmission starts at or after `t_ms`.
    pub fn next_at_or_after(&self, t_ms: f64) -> Option<u64> {
        if self.empty {
            return None;
        }
        let k = ((t_ms - self.first_ms) / self.interval_ms).ceil().max(0.0) as u64;
        // guard against the float ceil landing one short
        if self.start_of(k) < t_ms {
            Some(k + 1)
        } else {
            Some(k)
        }
    }

    pub fn beacon(&self, index: u64) -> SyncBeacon {
        SyncBeacon {
            tx_true_time_ms: self.start_of(index),
            toa_ms: self.toa_ms,
            channel: self.channel,
            payload_bytes: 4,
        }
    }
}

/// Knobs of the device-side sync procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncPolicy {
    /// Shortened wait before re-entering sync mode after a timeout.
    pub retry_ms: f64,
    /// Consecutive failures tolerated before uplinks are suspended.
    pub holdover_failures: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyncAttempt {
    Synced {
        clock: ClockModel,
        /// Listening time from `t_start` until the beacon finished.
        wait_ms: f64,
        beacon_index: u64,
    },
    Failed {
        /// Listening time spent before giving up.
        listened_ms: f64,
        retry_after_ms: f64,
    },
}

/// One pass of the device sync loop: listen from `t_start_ms` for at most
/// `timeout_ms`, take the first beacon that is fully received and not
/// lost, and reset the clock to `residual_ms`.
pub fn run_sync_attempt(
    clock: &ClockModel,
    beacons: &BeaconSchedule,
    t_start_ms: f64,
    timeout_ms: f64,
    policy: &SyncPolicy,
    residual_ms: f64,
    mut lost: impl FnMut(u64) -> bool,
) -> SyncAttempt {
    let deadline = t_start_ms + timeout_ms;
    if let Some(mut k) = beacons.next_at_or_after(t_start_ms) {
        loop {
            let start = beacons.start_of(k);
            let end = start + beacons.toa_ms;
            if end > deadline {
                break;
            }
            if !lost(k) {
                return SyncAttempt::Synced {
                    clock: clock.resynced(end, residual_ms),
                    wait_ms: end - t_start_ms,
                    beacon_index: k,
                };
            }
            k += 1;
        }
    }
    SyncAttempt::Failed {
        listened_ms: timeout_ms,
        retry_after_ms: policy.retry_ms,
    }
}

/// Zero-mean Gaussian truncated at `±k·σ`, drawn by rejection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussian {
    pub sigma: f64,
    pub k: f64,
}

impl TruncatedGaussian {
    pub fn three_sigma(sigma: f64) -> Self {
        TruncatedGaussian { sigma, k: 3.0 }
    }

    pub fn bound(&self) -> f64 {
        self.sigma * self.k
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma <= 0.0 {
            return 0.0;
        }
        let normal = Normal::new(0.0, self.sigma).expect("positive sigma");
        let bound = self.bound();
        loop {
            let x = normal.sample(rng);
            if x.abs() <= bound {
                return x;
            }
        }
    }
}
