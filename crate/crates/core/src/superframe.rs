//! Dyadic superframes for devices with different reporting periods.
//!
//! A superframe spans `2^K` base frames. A device with period `T0·2^k`
//! transmits in frames `f` with `f mod 2^k = g`, so devices with disjoint
//! residue classes can share one (channel, slot) cell.

use std::collections::BTreeMap;

use crate::error::SuperframeError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperframeConfig {
    pub k_max: u32,
    pub t0_ms: f64,
    pub slots_per_frame: usize,
}

impl SuperframeConfig {
    pub fn new(k_max: u32, t0_ms: f64, slots_per_frame: usize) -> Self {
        SuperframeConfig {
            k_max,
            t0_ms,
            slots_per_frame,
        }
    }

    pub fn m_super(&self) -> u64 {
        1u64 << self.k_max
    }

    pub fn slot_len_ms(&self) -> f64 {
        self.t0_ms / self.slots_per_frame as f64
    }

    pub fn validate_period(&self, t_ms: f64) -> Result<u32, SuperframeError> {
        validate_period(t_ms, self.t0_ms, self.k_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceSchedule {
    pub dev_id: u32,
    pub k: u32,
    pub g: u64,
    pub slot: usize,
    pub channel_index: usize,
}

impl DeviceSchedule {
    pub fn period_frames(&self) -> u64 {
        1u64 << self.k
    }
}

fn admissible_around(t_ms: f64, t0_ms: f64, k_max: u32) -> Vec<f64> {
    let all: Vec<f64> = (0..=k_max).map(|k| t0_ms * (1u64 << k) as f64).collect();
    let below = all.iter().copied().filter(|&p| p < t_ms).last();
    let above = all.iter().copied().find(|&p| p > t_ms);
    below.into_iter().chain(above).collect()
}

/// Exponent `k` with `t_ms = t0_ms·2^k`, `0 ≤ k ≤ k_max`.
pub fn validate_period(t_ms: f64, t0_ms: f64, k_max: u32) -> Result<u32, SuperframeError> {
    if !(t_ms > 0.0) || !(t0_ms > 0.0) {
        return Err(SuperframeError::NonPositive);
    }
    let ratio = t_ms / t0_ms;
    let k = ratio.log2().round();
    let dyadic = k >= 0.0 && ((ratio - k.exp2()) / ratio).abs() < 1e-9;
    if !dyadic {
        return Err(SuperframeError::NonDyadic {
            period_ms: t_ms,
            t0_ms,
            admissible: admissible_around(t_ms, t0_ms, k_max),
        });
    }
    let k = k as u32;
    if k > k_max {
        return Err(SuperframeError::TooDeep {
            k,
            k_max,
            admissible: admissible_around(t_ms, t0_ms, k_max),
        });
    }
    Ok(k)
}

pub fn is_active_frame(sched: &DeviceSchedule, frame_index: u64) -> bool {
    frame_index % sched.period_frames() == sched.g
}

/// Occupancy of every frame of a superframe by the given schedules.
fn occupancy(existing: &[DeviceSchedule], m_super: u64) -> Vec<u32> {
    let mut occ = vec![0u32; m_super as usize];
    for s in existing {
        let p = s.period_frames();
        let mut f = s.g;
        while f < m_super {
            occ[f as usize] += 1;
            f += p;
        }
    }
    occ
}

/// Frame offset for a new device on a shared (channel, slot) that collides
/// with none of `existing`. Among the conflict-free offsets the one giving
/// the smallest peak per-frame occupancy wins, lowest offset on ties.
pub fn assign_group_offset(existing: &[DeviceSchedule], k_new: u32, k_max: u32) -> Result<u64, SuperframeError> {
    if k_new > k_max {
        return Err(SuperframeError::TooDeep {
            k: k_new,
            k_max,
            admissible: Vec::new(),
        });
    }
    let m_super = 1u64 << k_max;
    let occ = occupancy(existing, m_super);
    let p = 1u64 << k_new;
    let mut best: Option<(u32, u64)> = None;
    for g in 0..p {
        let frames = (g..m_super).step_by(p as usize);
        if frames.clone().any(|f| occ[f as usize] > 0) {
            continue;
        }
        let peak = occ
            .iter()
            .enumerate()
            .map(|(f, &o)| o + u32::from((f as u64) % p == g))
            .max()
            .unwrap_or(0);
        if best.map_or(true, |(bp, _)| peak < bp) {
            best = Some((peak, g));
        }
    }
    best.map(|(_, g)| g).ok_or(SuperframeError::SlotFull(k_new))
}

/// Places devices of mixed periodicity on a channel × slot grid, sharing
/// cells whenever residue classes allow.
#[derive(Debug, Clone)]
pub struct SuperframePlanner {
    config: SuperframeConfig,
    channels: usize,
    reserved: Vec<(usize, usize)>,
    cells: BTreeMap<(usize, usize), Vec<DeviceSchedule>>,
}

impl SuperframePlanner {
    pub fn new(config: SuperframeConfig, channels: usize, reserved: &[(usize, usize)]) -> Self {
        SuperframePlanner {
            config,
            channels,
            reserved: reserved.to_vec(),
            cells: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &SuperframeConfig {
        &self.config
    }

    pub fn schedules(&self) -> impl Iterator<Item = &DeviceSchedule> {
        self.cells.values().flatten()
    }

    fn channel_load(&self, channel: usize) -> f64 {
        // fraction of (frame, slot) opportunities used on this channel
        let m = self.config.m_super() as f64;
        let used: f64 = self
            .cells
            .iter()
            .filter(|((c, _), _)| *c == channel)
            .flat_map(|(_, v)| v.iter())
            .map(|s| m / s.period_frames() as f64)
            .sum();
        let reserved = self.reserved.iter().filter(|(c, _)| *c == channel).count() as f64 * m;
        (used + reserved) / (m * self.config.slots_per_frame as f64)
    }

    /// Places `dev_id` with period `period_ms`; the least loaded channel and
    /// earliest slot with a conflict-free offset win.
    pub fn place(&mut self, dev_id: u32, period_ms: f64) -> Result<DeviceSchedule, SuperframeError> {
        let k = self.config.validate_period(period_ms)?;
        let mut order: Vec<usize> = (0..self.channels).collect();
        let loads: Vec<f64> = order.iter().map(|&c| self.channel_load(c)).collect();
        order.sort_by(|&a, &b| loads[a].total_cmp(&loads[b]).then(a.cmp(&b)));
        for c in order {
            for s in 0..self.config.slots_per_frame {
                if self.reserved.contains(&(c, s)) {
                    continue;
                }
                let existing = self.cells.get(&(c, s)).map(Vec::as_slice).unwrap_or(&[]);
                if let Ok(g) = assign_group_offset(existing, k, self.config.k_max) {
                    let sched = DeviceSchedule {
                        dev_id,
                        k,
                        g,
                        slot: s,
                        channel_index: c,
                    };
                    self.cells.entry((c, s)).or_default().push(sched);
                    return Ok(sched);
                }
            }
        }
        Err(SuperframeError::SlotFull(k))
    }

    pub fn remove(&mut self, dev_id: u32) -> bool {
        let mut found = false;
        for v in self.cells.values_mut() {
            let before = v.len();
            v.retain(|s| s.dev_id != dev_id);
            found |= v.len() != before;
        }
        self.cells.retain(|_, v| !v.is_empty());
        found
    }
}
