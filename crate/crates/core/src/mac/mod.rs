//! Per-device medium access: the TDMA state machine and slot window plus
//! the pure ALOHA, slotted ALOHA and CSMA transmit policies.

pub mod fsm;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::MacError;
use crate::superframe::{is_active_frame, DeviceSchedule};
use crate::sync::ClockModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    PureAloha,
    SlottedAloha,
    Csma,
    Tdma,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::PureAloha, Protocol::SlottedAloha, Protocol::Csma, Protocol::Tdma];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::PureAloha => "aloha",
            Protocol::SlottedAloha => "s-aloha",
            Protocol::Csma => "csma",
            Protocol::Tdma => "tdma",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Protocol::PureAloha => "LoRaWAN (ALOHA)",
            Protocol::SlottedAloha => "Slotted ALOHA",
            Protocol::Csma => "CSMA",
            Protocol::Tdma => "TDMA-LoRaWAN",
        }
    }

    /// Protocols whose nodes keep a beacon-disciplined clock.
    pub fn uses_sync(self) -> bool {
        matches!(self, Protocol::SlottedAloha | Protocol::Tdma)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aloha" | "pure-aloha" | "lorawan" => Ok(Protocol::PureAloha),
            "s-aloha" | "slotted-aloha" | "saloha" => Ok(Protocol::SlottedAloha),
            "csma" => Ok(Protocol::Csma),
            "tdma" | "tdma-lorawan" => Ok(Protocol::Tdma),
            other => Err(format!("unknown protocol `{other}` (aloha, s-aloha, csma, tdma)")),
        }
    }
}

pub fn next_tx_time_pure_aloha(t_ready_ms: f64) -> f64 {
    t_ready_ms
}

pub fn random_channel<R: Rng + ?Sized>(rng: &mut R, channels: usize) -> usize {
    rng.gen_range(0..channels)
}

/// First multiple of `slot_len_ms` at or after `local_ms`.
pub fn next_slot_boundary(local_ms: f64, slot_len_ms: f64) -> f64 {
    let k = (local_ms / slot_len_ms - 1e-9).ceil().max(0.0);
    k * slot_len_ms
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlottedTx {
    pub local_ms: f64,
    pub true_ms: f64,
}

/// Defers a packet ready at true time `t_ready_ms` to the next slot
/// boundary of the node's own clock.
pub fn next_tx_time_slotted_aloha(t_ready_ms: f64, slot_len_ms: f64, clock: &ClockModel) -> SlottedTx {
    let local = next_slot_boundary(clock.local_time(t_ready_ms), slot_len_ms);
    SlottedTx {
        local_ms: local,
        true_ms: clock.true_time_of(local).max(t_ready_ms),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsmaConfig {
    pub cca_threshold_dbm: f64,
    /// Indexed by SF − 7.
    pub cad_ms: [f64; 6],
    pub backoff_slot_ms: f64,
    pub window: u32,
    pub max_stages: u32,
}

impl Default for CsmaConfig {
    fn default() -> Self {
        let mut cad_ms = [0.0; 6];
        for (i, c) in cad_ms.iter_mut().enumerate() {
            *c = 2.0 * (1u32 << i) as f64;
        }
        CsmaConfig {
            cca_threshold_dbm: -110.0,
            cad_ms,
            backoff_slot_ms: 30.0,
            window: 8,
            max_stages: 8,
        }
    }
}

impl CsmaConfig {
    pub fn cad_duration_ms(&self, sf: u8) -> f64 {
        self.cad_ms[usize::from(sf.clamp(7, 12) - 7)]
    }

    pub fn draw_backoff_ms<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.gen_range(0..self.window.max(1)) as f64 * self.backoff_slot_ms
    }

    /// Upper bound on time spent in one attempt before giving up.
    pub fn max_attempt_ms(&self, sf: u8) -> f64 {
        self.max_stages as f64 * (self.cad_duration_ms(sf) + (self.window.max(1) - 1) as f64 * self.backoff_slot_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CsmaDecision {
    Transmit,
    Backoff { delay_ms: f64 },
    GiveUp,
}

/// Outcome of one CAD: `stage` counts completed CADs including this one.
pub fn csma_step<R: Rng + ?Sized>(cfg: &CsmaConfig, stage: u32, sensed_dbm: f64, rng: &mut R) -> CsmaDecision {
    if sensed_dbm < cfg.cca_threshold_dbm {
        CsmaDecision::Transmit
    } else if stage >= cfg.max_stages {
        CsmaDecision::GiveUp
    } else {
        CsmaDecision::Backoff {
            delay_ms: cfg.draw_backoff_ms(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsmaOutcome {
    pub t_tx_ms: Option<f64>,
    pub gave_up: bool,
    pub listen_ms: f64,
    pub cad_count: u32,
}

/// Full listen-before-talk attempt against a sensing oracle that returns
/// the power heard over a CAD window `[start, end)`.
pub fn csma_attempt<R: Rng + ?Sized>(
    t_ready_ms: f64,
    sf: u8,
    cfg: &CsmaConfig,
    rng: &mut R,
    mut sense: impl FnMut(f64, f64) -> f64,
) -> CsmaOutcome {
    let cad = cfg.cad_duration_ms(sf);
    let mut t = t_ready_ms;
    let mut listen = 0.0;
    let mut stage = 0;
    loop {
        stage += 1;
        listen += cad;
        let sensed = sense(t, t + cad);
        match csma_step(cfg, stage, sensed, rng) {
            CsmaDecision::Transmit => {
                return CsmaOutcome {
                    t_tx_ms: Some(t + cad),
                    gave_up: false,
                    listen_ms: listen,
                    cad_count: stage,
                }
            }
            CsmaDecision::GiveUp => {
                return CsmaOutcome {
                    t_tx_ms: None,
                    gave_up: true,
                    listen_ms: listen,
                    cad_count: stage,
                }
            }
            CsmaDecision::Backoff { delay_ms } => t += cad + delay_ms,
        }
    }
}

/// A device's share of the frame: consecutive slots on one channel,
/// optionally restricted to a residue class of a superframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdmaSlot {
    pub channel_index: usize,
    pub first_slot: usize,
    pub n_slots: usize,
    pub slot_len_ms: f64,
    pub frame_len_ms: f64,
    pub group: Option<DeviceSchedule>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxWindow {
    pub frame_index: u64,
    pub start_local_ms: f64,
    pub deadline_local_ms: f64,
}

impl TxWindow {
    /// Emission instant centred in the guard, so a clock error of up to
    /// half the guard either way keeps the frame inside the window.
    pub fn emit_local_ms(&self, guard_ms: f64) -> f64 {
        self.start_local_ms + guard_ms / 2.0
    }

    pub fn emit_true_ms(&self, guard_ms: f64, clock: &ClockModel) -> f64 {
        clock.true_time_of(self.emit_local_ms(guard_ms))
    }
}

impl TdmaSlot {
    pub fn window_len_ms(&self) -> f64 {
        self.n_slots as f64 * self.slot_len_ms
    }

    pub fn check_fit(&self, toa_ms: f64, guard_ms: f64) -> Result<(), MacError> {
        if toa_ms + guard_ms > self.window_len_ms() + 1e-9 {
            return Err(MacError::WindowTooShort {
                toa_ms,
                window_ms: self.window_len_ms(),
                guard_ms,
            });
        }
        Ok(())
    }

    pub fn is_active(&self, frame_index: u64) -> bool {
        match &self.group {
            None => true,
            Some(s) => is_active_frame(s, frame_index),
        }
    }

    /// Window of `frame_index`, or `None` when the device skips that frame.
    pub fn window(&self, frame_index: u64) -> Option<TxWindow> {
        self.is_active(frame_index).then(|| {
            let start = frame_index as f64 * self.frame_len_ms + self.first_slot as f64 * self.slot_len_ms;
            TxWindow {
                frame_index,
                start_local_ms: start,
                deadline_local_ms: start + self.window_len_ms(),
            }
        })
    }

    /// Earliest active window starting at or after `local_ms`.
    pub fn next_window(&self, local_ms: f64) -> TxWindow {
        let mut f = (local_ms / self.frame_len_ms).floor().max(0.0) as u64;
        loop {
            if let Some(w) = self.window(f) {
                if w.start_local_ms >= local_ms - 1e-9 {
                    return w;
                }
            }
            f += 1;
        }
    }
}

pub fn tdma_tx_window(slot: &TdmaSlot, frame_index: u64, toa_ms: f64, guard_ms: f64) -> Result<Option<TxWindow>, MacError> {
    slot.check_fit(toa_ms, guard_ms)?;
    Ok(slot.window(frame_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn slot(first: usize) -> TdmaSlot {
        TdmaSlot {
            channel_index: 1,
            first_slot: first,
            n_slots: 1,
            slot_len_ms: 200.0,
            frame_len_ms: 4000.0,
            group: None,
        }
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in Protocol::ALL {
            assert_eq!(p.as_str().parse::<Protocol>().unwrap(), p);
        }
        assert!("token-ring".parse::<Protocol>().is_err());
    }

    #[test]
    fn pure_aloha_is_immediate() {
        assert_eq!(next_tx_time_pure_aloha(1000.0), 1000.0);
    }

    #[test]
    fn slotted_aloha_boundaries() {
        let c = ClockModel::perfect();
        assert_eq!(next_tx_time_slotted_aloha(1010.0, 200.0, &c).local_ms, 1200.0);
        assert_eq!(next_tx_time_slotted_aloha(1000.0, 200.0, &c).true_ms, 1000.0);
        // a clock 5 ms fast reaches the boundary 5 ms early in true time
        let fast = ClockModel::new(5.0, 0.0, 0.0, 0.0);
        let tx = next_tx_time_slotted_aloha(1010.0, 200.0, &fast);
        assert_eq!((tx.local_ms, tx.true_ms), (1200.0, 1195.0));
    }

    #[test]
    fn csma_idle_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = CsmaConfig::default();
        let out = csma_attempt(0.0, 7, &cfg, &mut rng, |_, _| -130.0);
        assert_eq!(out.t_tx_ms, Some(2.0));
        assert_eq!((out.cad_count, out.gave_up), (1, false));
        assert_eq!(cfg.cad_duration_ms(9), 8.0);
    }

    #[test]
    fn csma_busy_forever_gives_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = CsmaConfig::default();
        let out = csma_attempt(0.0, 9, &cfg, &mut rng, |_, _| -90.0);
        assert!(out.gave_up && out.t_tx_ms.is_none());
        assert_eq!(out.cad_count, 8);
        assert_eq!(out.listen_ms, 64.0);
        assert!(out.listen_ms <= cfg.max_attempt_ms(9));
    }

    #[test]
    fn csma_below_threshold_transmits_blind() {
        // a hidden interferer sensed at -115 dBm does not block
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = csma_attempt(0.0, 9, &CsmaConfig::default(), &mut rng, |_, _| -115.0);
        assert_eq!(out.t_tx_ms, Some(8.0));
    }

    #[test]
    fn csma_backoff_stays_in_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = CsmaConfig::default();
        for _ in 0..1000 {
            let d = cfg.draw_backoff_ms(&mut rng);
            assert!((0.0..=210.0).contains(&d) && d % 30.0 == 0.0);
        }
    }

    #[test]
    fn window_examples() {
        let s = slot(0);
        assert!(tdma_tx_window(&s, 0, 144.384, 55.0).is_ok());
        assert!((s.window_len_ms() - 144.384 - 55.0 - 0.616).abs() < 1e-9);
        let w = tdma_tx_window(&s, 0, 144.384, 55.0).unwrap().unwrap();
        assert_eq!((w.start_local_ms, w.deadline_local_ms), (0.0, 200.0));
        assert!(matches!(
            tdma_tx_window(&s, 0, 150.0, 55.0),
            Err(MacError::WindowTooShort { .. })
        ));
    }

    #[test]
    fn lagging_clock_emits_late_but_inside() {
        let s = slot(3);
        let w = s.window(2).unwrap();
        let on_time = w.emit_true_ms(55.0, &ClockModel::perfect());
        let lag = ClockModel::new(-12.0, 0.0, 0.0, 0.0);
        let late = w.emit_true_ms(55.0, &lag);
        assert!((late - on_time - 12.0).abs() < 1e-9);
        assert!(late >= w.start_local_ms && late + 144.384 <= w.deadline_local_ms);
    }

    #[test]
    fn superframe_group_skips_frames() {
        let mut s = slot(2);
        s.group = Some(DeviceSchedule {
            dev_id: 0,
            k: 1,
            g: 1,
            slot: 2,
            channel_index: 1,
        });
        assert!(s.window(0).is_none());
        assert_eq!(s.window(1).unwrap().start_local_ms, 4400.0);
        assert_eq!(s.next_window(0.0).frame_index, 1);
        assert_eq!(s.next_window(4401.0).frame_index, 3);
    }
}
