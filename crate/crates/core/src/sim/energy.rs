//! Per-node energy ledger: transmit, receive, synchronisation listening
//! and sleep, in millijoules.

use std::ops::AddAssign;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyMode {
    Tx,
    Rx,
    SyncListen,
    Sleep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerProfile {
    pub tx_mw: f64,
    pub rx_mw: f64,
    pub sleep_mw: f64,
    /// Fixed listen window charged per steady-state sync.
    pub listen_ms: f64,
}

impl PowerProfile {
    pub fn power_mw(&self, mode: EnergyMode) -> f64 {
        match mode {
            EnergyMode::Tx => self.tx_mw,
            EnergyMode::Rx | EnergyMode::SyncListen => self.rx_mw,
            EnergyMode::Sleep => self.sleep_mw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyLedger {
    pub e_tx_mj: f64,
    pub e_rx_mj: f64,
    pub e_sync_mj: f64,
    pub e_sleep_mj: f64,
    pub n_sync: u64,
    /// Radio-on time, used to derive sleep time.
    pub active_ms: f64,
}

impl EnergyLedger {
    pub fn total_mj(&self) -> f64 {
        self.e_tx_mj + self.e_rx_mj + self.e_sync_mj + self.e_sleep_mj
    }

    /// Charges the sleep term for whatever part of `horizon_ms` the radio was off.
    pub fn close(&mut self, profile: &PowerProfile, horizon_ms: f64) {
        let idle = (horizon_ms - self.active_ms).max(0.0);
        account_energy(self, profile, idle, EnergyMode::Sleep);
    }
}

impl AddAssign<&EnergyLedger> for EnergyLedger {
    fn add_assign(&mut self, o: &EnergyLedger) {
        self.e_tx_mj += o.e_tx_mj;
        self.e_rx_mj += o.e_rx_mj;
        self.e_sync_mj += o.e_sync_mj;
        self.e_sleep_mj += o.e_sleep_mj;
        self.n_sync += o.n_sync;
        self.active_ms += o.active_ms;
    }
}

/// Adds `P_mode · duration` to the matching term. A sync listen also
/// counts one sync event.
pub fn account_energy(ledger: &mut EnergyLedger, profile: &PowerProfile, duration_ms: f64, mode: EnergyMode) {
    let e = profile.power_mw(mode) * duration_ms.max(0.0) / 1000.0;
    match mode {
        EnergyMode::Tx => ledger.e_tx_mj += e,
        EnergyMode::Rx => ledger.e_rx_mj += e,
        EnergyMode::SyncListen => {
            ledger.e_sync_mj += e;
            ledger.n_sync += 1;
        }
        EnergyMode::Sleep => ledger.e_sleep_mj += e,
    }
    if mode != EnergyMode::Sleep {
        ledger.active_ms += duration_ms.max(0.0);
    }
}

/// Closed-form sync energy: `N_sync · P_rx · T_listen`.
pub fn sync_energy_mj(n_sync: u64, rx_mw: f64, listen_ms: f64) -> f64 {
    n_sync as f64 * rx_mw * listen_ms / 1000.0
}
