//! Centralised slot allocation on the application server.
//!
//! The server keeps a channel × slot grid and a device table. Requests are
//! served load-aware first-fit: among all runs of free consecutive cells the
//! one on the least-loaded channel with the earliest start wins. When no
//! free run exists the cell of the least critical, longest idle device is
//! shared with the newcomer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::SchedulerError;
use crate::phy::RadioConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell {
    Empty,
    Reserved,
    /// Holders in arrival order; more than one only after reuse.
    Held(Vec<u32>),
}

impl Cell {
    pub fn is_empty(&self) -> bool {
        matches!(self, Cell::Empty)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceGrid {
    channels: usize,
    slots: usize,
    cells: Vec<Cell>,
}

impl ResourceGrid {
    pub fn new(channels: usize, slots: usize, reserved: &[(usize, usize)]) -> Result<Self, SchedulerError> {
        if channels == 0 {
            return Err(SchedulerError::Channel(0));
        }
        if slots == 0 {
            return Err(SchedulerError::SlotLength);
        }
        let mut grid = ResourceGrid {
            channels,
            slots,
            cells: vec![Cell::Empty; channels * slots],
        };
        for &(c, s) in reserved {
            if c >= channels || s >= slots {
                return Err(SchedulerError::Channel(c));
            }
            grid.cells[c * slots + s] = Cell::Reserved;
        }
        Ok(grid)
    }

    /// Grid with the access cell (channel 0, slot 0) held back for join traffic.
    pub fn with_access_slot(channels: usize, slots: usize) -> Result<Self, SchedulerError> {
        Self::new(channels, slots, &[(0, 0)])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn slots_per_frame(&self) -> usize {
        self.slots
    }

    pub fn cell(&self, channel: usize, slot: usize) -> &Cell {
        &self.cells[channel * self.slots + slot]
    }

    fn cell_mut(&mut self, channel: usize, slot: usize) -> &mut Cell {
        &mut self.cells[channel * self.slots + slot]
    }

    pub fn reserved_count(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c, Cell::Reserved)).count()
    }

    pub fn capacity(&self) -> usize {
        self.channels * self.slots - self.reserved_count()
    }

    /// Non-empty cells on a channel; reserved cells count.
    pub fn occupied(&self, channel: usize) -> usize {
        (0..self.slots).filter(|&s| !self.cell(channel, s).is_empty()).count()
    }

    pub fn channel_load(&self, channel: usize) -> Result<f64, SchedulerError> {
        if channel >= self.channels {
            return Err(SchedulerError::Channel(channel));
        }
        Ok(self.occupied(channel) as f64 / self.slots as f64)
    }

    pub fn load_vector(&self) -> Vec<f64> {
        (0..self.channels)
            .map(|c| self.occupied(c) as f64 / self.slots as f64)
            .collect()
    }

    /// Starting slots of every run of `n` consecutive empty cells on `channel`.
    pub fn free_runs(&self, channel: usize, n: usize) -> impl Iterator<Item = usize> + '_ {
        let last = self.slots.saturating_sub(n.max(1)) + 1;
        (0..last).filter(move |&u| n <= self.slots && (u..u + n).all(|s| self.cell(channel, s).is_empty()))
    }

    fn hold(&mut self, dev_id: u32, channel: usize, slot: usize) {
        match self.cell_mut(channel, slot) {
            Cell::Held(ids) => ids.push(dev_id),
            c @ Cell::Empty => *c = Cell::Held(vec![dev_id]),
            Cell::Reserved => unreachable!("reserved cell handed out"),
        }
    }

    fn release(&mut self, dev_id: u32, channel: usize, slot: usize) {
        let cell = self.cell_mut(channel, slot);
        if let Cell::Held(ids) = cell {
            ids.retain(|&d| d != dev_id);
            if ids.is_empty() {
                *cell = Cell::Empty;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageType {
    Report,
    Request,
}

impl MessageType {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Report => "report",
            MessageType::Request => "request",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceRecord {
    pub dev_id: u32,
    pub channel_index: usize,
    pub slot_indices: Vec<usize>,
    pub t_last_ms: f64,
    pub n_slots: usize,
    /// Lower is less critical.
    pub priority: u8,
    pub is_reuse: bool,
    pub is_multi: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationRequest {
    pub dev_id: u32,
    pub kind: MessageType,
    pub sf: u8,
    pub payload_len: usize,
    pub is_multi: bool,
    pub priority: u8,
}

impl AllocationRequest {
    pub fn single(dev_id: u32, sf: u8, payload_len: usize, priority: u8) -> Self {
        AllocationRequest {
            dev_id,
            kind: MessageType::Request,
            sf,
            payload_len,
            is_multi: false,
            priority,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationResult {
    pub channel_index: usize,
    pub slot_indices: Vec<usize>,
    pub is_reuse: bool,
    /// A multi-slot request served with a single slot.
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuotaOverflow {
    #[default]
    Downgrade,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    pub slot_len_ms: f64,
    pub rho_max: f64,
    pub quota_overflow: QuotaOverflow,
    pub reuse_enabled: bool,
    /// Only displace victims of strictly lower priority than the requester.
    pub strict_priority: bool,
    pub audit: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            slot_len_ms: 200.0,
            rho_max: 0.3,
            quota_overflow: QuotaOverflow::Downgrade,
            reuse_enabled: true,
            strict_priority: false,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub t_now_ms: f64,
    pub dev_id: u32,
    pub kind: MessageType,
    pub channel: usize,
    pub first_slot: usize,
    pub n_slots: usize,
    pub is_reuse: bool,
    pub load_vector: Vec<f64>,
}

pub const AUDIT_HEADER: &str = "t_now,dev_id,type,channel,first_slot,n_slots,is_reuse,load_vector";

impl AuditRow {
    pub fn to_csv(&self) -> String {
        let loads = self
            .load_vector
            .iter()
            .map(|l| format!("{l:.4}"))
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "{:.3},{},{},{},{},{},{},{}",
            self.t_now_ms,
            self.dev_id,
            self.kind.as_str(),
            self.channel,
            self.first_slot,
            self.n_slots,
            self.is_reuse,
            loads
        )
    }
}

pub fn multislot_quota_ok(grid: &ResourceGrid, n_multi_current: usize, n_new: usize, rho_max: f64) -> bool {
    if rho_max <= 0.0 {
        return false;
    }
    // integer form of (cur + new) / (Nc·n) <= rho, avoiding 0.3·160 rounding
    let total = (grid.channels * grid.slots) as f64;
    (n_multi_current + n_new) as f64 <= (rho_max * total + 1e-9).floor()
}

pub fn slots_for_airtime(toa_ms: f64, slot_len_ms: f64) -> Result<usize, SchedulerError> {
    if !(slot_len_ms > 0.0) {
        return Err(SchedulerError::SlotLength);
    }
    Ok(((toa_ms / slot_len_ms) - 1e-12).ceil().max(1.0) as usize)
}

pub fn required_slots(
    radio: &RadioConfig,
    payload_len: usize,
    slot_len_ms: f64,
    is_multi: bool,
) -> Result<usize, SchedulerError> {
    if !(slot_len_ms > 0.0) {
        return Err(SchedulerError::SlotLength);
    }
    let toa = radio.time_on_air_ms(payload_len)?;
    if !is_multi {
        return Ok(1);
    }
    slots_for_airtime(toa, slot_len_ms)
}

/// Normalised control overhead of one join-and-grant exchange per session.
pub fn control_overhead_eta(t_up_s: f64, t_session_s: f64) -> f64 {
    2.0 * t_up_s / t_session_s
}

/// Grid plus device table under a single decision sequence.
#[derive(Debug, Clone)]
pub struct Scheduler {
    grid: ResourceGrid,
    table: BTreeMap<u32, DeviceRecord>,
    config: SchedulerConfig,
    radio_bw_hz: u32,
    audit: Vec<AuditRow>,
    reuse_events: u64,
    degraded_events: u64,
}

impl Scheduler {
    pub fn new(grid: ResourceGrid, config: SchedulerConfig) -> Self {
        Scheduler {
            grid,
            table: BTreeMap::new(),
            config,
            radio_bw_hz: 125_000,
            audit: Vec::new(),
            reuse_events: 0,
            degraded_events: 0,
        }
    }

    pub fn with_bandwidth(mut self, bw_hz: u32) -> Self {
        self.radio_bw_hz = bw_hz;
        self
    }

    pub fn grid(&self) -> &ResourceGrid {
        &self.grid
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn table(&self) -> &BTreeMap<u32, DeviceRecord> {
        &self.table
    }

    pub fn record(&self, dev_id: u32) -> Option<&DeviceRecord> {
        self.table.get(&dev_id)
    }

    pub fn audit_log(&self) -> &[AuditRow] {
        &self.audit
    }

    pub fn reuse_events(&self) -> u64 {
        self.reuse_events
    }

    pub fn degraded_events(&self) -> u64 {
        self.degraded_events
    }

    pub fn audit_csv(&self) -> String {
        let mut out = String::from(AUDIT_HEADER);
        out.push('\n');
        for row in &self.audit {
            let _ = writeln!(out, "{}", row.to_csv());
        }
        out
    }

    /// Multi-slot cells currently held.
    pub fn n_multi(&self) -> usize {
        self.table.values().filter(|d| d.is_multi).map(|d| d.n_slots).sum()
    }

    fn remove_device(&mut self, dev_id: u32) -> Option<DeviceRecord> {
        let rec = self.table.remove(&dev_id)?;
        for &s in &rec.slot_indices {
            self.grid.release(dev_id, rec.channel_index, s);
        }
        Some(rec)
    }

    pub fn release(&mut self, dev_id: u32) -> bool {
        self.remove_device(dev_id).is_some()
    }

    /// Drops every device idle for longer than `t_release_ms`.
    pub fn reclaim_expired(&mut self, t_now_ms: f64, t_release_ms: f64) -> usize {
        let expired: Vec<u32> = self
            .table
            .values()
            .filter(|d| t_now_ms - d.t_last_ms > t_release_ms)
            .map(|d| d.dev_id)
            .collect();
        for id in &expired {
            self.remove_device(*id);
        }
        expired.len()
    }

    /// A report only refreshes the sender's activity stamp.
    pub fn report(&mut self, dev_id: u32, t_now_ms: f64) -> bool {
        match self.table.get_mut(&dev_id) {
            Some(rec) => {
                rec.t_last_ms = t_now_ms;
                true
            }
            None => false,
        }
    }

    /// Handles either message type: reports refresh, requests allocate.
    pub fn handle(&mut self, req: &AllocationRequest, t_now_ms: f64) -> Result<Option<AllocationResult>, SchedulerError> {
        match req.kind {
            MessageType::Report => {
                self.report(req.dev_id, t_now_ms);
                Ok(None)
            }
            MessageType::Request => self.allocate(req, t_now_ms).map(Some),
        }
    }

    /// Best free run of `n` cells: minimal (load, start slot, channel).
    pub fn best_candidate(&self, n: usize) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, usize)> = None;
        for c in 0..self.grid.channels {
            let load = self.grid.occupied(c);
            if let Some(u) = self.grid.free_runs(c, n).next() {
                let key = (load, u, c);
                if best.map_or(true, |b| key < b) {
                    best = Some(key);
                }
            }
        }
        best.map(|(_, u, c)| (c, u))
    }

    fn pick_victim(&self, exclude: u32, t_now_ms: f64, requester_priority: u8) -> Option<&DeviceRecord> {
        self.table
            .values()
            .filter(|d| d.dev_id != exclude)
            .filter(|d| !self.config.strict_priority || d.priority < requester_priority)
            .min_by(|a, b| {
                a.priority
                    .cmp(&b.priority)
                    .then_with(|| (t_now_ms - b.t_last_ms).total_cmp(&(t_now_ms - a.t_last_ms)))
                    .then_with(|| a.dev_id.cmp(&b.dev_id))
            })
    }

    pub fn allocate(&mut self, req: &AllocationRequest, t_now_ms: f64) -> Result<AllocationResult, SchedulerError> {
        if req.kind != MessageType::Request {
            return Err(SchedulerError::NotARequest(req.dev_id));
        }
        let radio = RadioConfig::new(req.sf, self.radio_bw_hz)?;
        let mut n = required_slots(&radio, req.payload_len, self.config.slot_len_ms, req.is_multi)?;
        if n > self.grid.slots {
            return Err(SchedulerError::TooManySlots {
                dev_id: req.dev_id,
                needed: n,
                available: self.grid.slots,
            });
        }
        // idempotent re-join
        self.remove_device(req.dev_id);

        let mut degraded = false;
        if n > 1 && !multislot_quota_ok(&self.grid, self.n_multi(), n, self.config.rho_max) {
            match self.config.quota_overflow {
                QuotaOverflow::Downgrade => {
                    n = 1;
                    degraded = true;
                }
                QuotaOverflow::Reject => return Err(SchedulerError::QuotaRejected(req.dev_id)),
            }
        }

        let (channel, slots, is_reuse) = match self.best_candidate(n) {
            Some((c, u)) => (c, (u..u + n).collect::<Vec<_>>(), false),
            None => {
                if !self.config.reuse_enabled {
                    return Err(SchedulerError::Saturated(req.dev_id));
                }
                let victim = self
                    .pick_victim(req.dev_id, t_now_ms, req.priority)
                    .ok_or(SchedulerError::Saturated(req.dev_id))?;
                let take = if victim.n_slots >= n {
                    n
                } else {
                    degraded |= n > 1;
                    1
                };
                (victim.channel_index, victim.slot_indices[..take].to_vec(), true)
            }
        };

        for &s in &slots {
            self.grid.hold(req.dev_id, channel, s);
        }
        let n_slots = slots.len();
        self.table.insert(
            req.dev_id,
            DeviceRecord {
                dev_id: req.dev_id,
                channel_index: channel,
                slot_indices: slots.clone(),
                t_last_ms: t_now_ms,
                n_slots,
                priority: req.priority,
                is_reuse,
                is_multi: n_slots > 1,
            },
        );
        if is_reuse {
            self.reuse_events += 1;
        }
        if degraded {
            self.degraded_events += 1;
        }
        if self.config.audit {
            self.audit.push(AuditRow {
                t_now_ms,
                dev_id: req.dev_id,
                kind: req.kind,
                channel,
                first_slot: slots[0],
                n_slots,
                is_reuse,
                load_vector: self.grid.load_vector(),
            });
        }
        Ok(AllocationResult {
            channel_index: channel,
            slot_indices: slots,
            is_reuse,
            degraded,
        })
    }
}
