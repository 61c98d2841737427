//! LoRa physical-layer arithmetic shared by every MAC policy and the simulator.
//!
//! Covers symbol time and time-on-air for a full LoRa framing, the
//! log-distance path-loss model with log-normal shadowing, and the
//! co-channel capture rule used to decide which overlapping uplinks a
//! gateway demodulates.

use crate::error::PhyError;

/// Low-data-rate optimisation (the `DE` bit).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowDataRate {
    /// Enabled exactly when the symbol time exceeds 16 ms.
    Auto,
    On,
    Off,
}

/// LoRa modulation and framing parameters that determine airtime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    sf: u8,
    bw_hz: u32,
    cr: u8,
    preamble_symbols: u16,
    crc_enabled: bool,
    explicit_header: bool,
    ldro: LowDataRate,
}

impl RadioConfig {
    /// Creates a config with CR 4/5, 8-symbol preamble, CRC on, explicit
    /// header and automatic DE.
    pub fn new(sf: u8, bw_hz: u32) -> Result<Self, PhyError> {
        if !(7..=12).contains(&sf) {
            return Err(PhyError::SpreadingFactor(sf));
        }
        if bw_hz == 0 {
            return Err(PhyError::Bandwidth(bw_hz));
        }
        Ok(RadioConfig {
            sf,
            bw_hz,
            cr: 1,
            preamble_symbols: 8,
            crc_enabled: true,
            explicit_header: true,
            ldro: LowDataRate::Auto,
        })
    }

    /// Coding-rate index: 1 means 4/5, 4 means 4/8.
    pub fn with_coding_rate(mut self, cr: u8) -> Result<Self, PhyError> {
        if !(1..=4).contains(&cr) {
            return Err(PhyError::CodingRate(cr));
        }
        self.cr = cr;
        Ok(self)
    }

    pub fn with_preamble(mut self, symbols: u16) -> Self {
        self.preamble_symbols = symbols;
        self
    }

    pub fn with_crc(mut self, enabled: bool) -> Self {
        self.crc_enabled = enabled;
        self
    }

    pub fn with_explicit_header(mut self, explicit: bool) -> Self {
        self.explicit_header = explicit;
        self
    }

    pub fn with_low_data_rate(mut self, mode: LowDataRate) -> Self {
        self.ldro = mode;
        self
    }

    pub fn sf(&self) -> u8 {
        self.sf
    }

    pub fn bw_hz(&self) -> u32 {
        self.bw_hz
    }

    pub fn coding_rate(&self) -> u8 {
        self.cr
    }

    pub fn preamble_symbols(&self) -> u16 {
        self.preamble_symbols
    }

    pub fn crc_enabled(&self) -> bool {
        self.crc_enabled
    }

    pub fn explicit_header(&self) -> bool {
        self.explicit_header
    }

    pub fn low_data_rate_mode(&self) -> LowDataRate {
        self.ldro
    }

    /// Symbol duration `2^SF / BW` in milliseconds.
    pub fn symbol_time_ms(&self) -> f64 {
        (1u64 << self.sf) as f64 * 1000.0 / self.bw_hz as f64
    }

    /// Effective DE bit after resolving `Auto`.
    pub fn low_data_rate(&self) -> bool {
        match self.ldro {
            LowDataRate::On => true,
            LowDataRate::Off => false,
            LowDataRate::Auto => self.symbol_time_ms() > 16.0,
        }
    }

    /// Number of payload symbols, including the 8 fixed header symbols.
    pub fn payload_symbols(&self, payload_bytes: usize) -> Result<u32, PhyError> {
        if !(1..=255).contains(&payload_bytes) {
            return Err(PhyError::PayloadLength(payload_bytes));
        }
        let sf = self.sf as i64;
        let crc = self.crc_enabled as i64;
        let h = (!self.explicit_header) as i64;
        let de = self.low_data_rate() as i64;
        let num = 8 * payload_bytes as i64 - 4 * sf + 28 + 16 * crc - 20 * h;
        let den = 4 * (sf - 2 * de);
        // ceil for a positive denominator; negative numerators clamp to zero below
        let blocks = if num <= 0 { 0 } else { (num + den - 1) / den };
        Ok(8 + (blocks * (self.cr as i64 + 4)) as u32)
    }

    /// Preamble plus payload duration in milliseconds.
    pub fn time_on_air_ms(&self, payload_bytes: usize) -> Result<f64, PhyError> {
        let n_payload = self.payload_symbols(payload_bytes)? as f64;
        let t_sym = self.symbol_time_ms();
        let t_preamble = (self.preamble_symbols as f64 + 4.25) * t_sym;
        Ok(t_preamble + n_payload * t_sym)
    }
}

pub fn symbol_time(cfg: &RadioConfig) -> f64 {
    cfg.symbol_time_ms()
}

pub fn payload_symbols(cfg: &RadioConfig, payload_bytes: usize) -> Result<u32, PhyError> {
    cfg.payload_symbols(payload_bytes)
}

pub fn time_on_air(cfg: &RadioConfig, payload_bytes: usize) -> Result<f64, PhyError> {
    cfg.time_on_air_ms(payload_bytes)
}

/// Airtime of the out-of-band sync beacon as reported for the deployed
/// sync node. The formula yields ~31 ms for a 4-byte SF7 frame; the
/// measured figure is kept for duty-cycle accounting.
pub const SYNC_BEACON_TOA_MS: f64 = 36.0;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Indoor propagation and receiver model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    /// Loss at the 1 m reference distance.
    pub pl0_db: f64,
    /// Path-loss exponent.
    pub gamma: f64,
    pub shadow_sigma_db: f64,
    pub noise_floor_dbm: f64,
    pub sensitivity_dbm: f64,
    /// Capture margin in dB, indexed by `SF - 7`.
    pub capture_db: [f64; 6],
    pub capture_enabled: bool,
    /// Only a packet that started no later than every interferer may capture.
    pub capture_requires_first: bool,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            pl0_db: 40.0,
            gamma: 4.0,
            shadow_sigma_db: 6.0,
            noise_floor_dbm: -117.0,
            sensitivity_dbm: -139.0,
            capture_db: [6.0, 7.0, 8.0, 8.0, 8.0, 8.0],
            capture_enabled: true,
            capture_requires_first: false,
        }
    }
}

impl LinkModel {
    pub fn capture_threshold_db(&self, sf: u8) -> f64 {
        let idx = (sf.clamp(7, 12) - 7) as usize;
        self.capture_db[idx]
    }

    /// `PL0 + 10 γ log10(d) + X`; distances under 1 m are clamped to 1 m.
    pub fn path_loss_db(&self, distance_m: f64, shadow_db: f64) -> f64 {
        let d = distance_m.max(1.0);
        self.pl0_db + 10.0 * self.gamma * d.log10() + shadow_db
    }

    pub fn rx_power_dbm(&self, tx_power_dbm: f64, distance_m: f64, shadow_db: f64) -> f64 {
        tx_power_dbm - self.path_loss_db(distance_m, shadow_db)
    }

    pub fn detectable(&self, rx_power_dbm: f64) -> bool {
        rx_power_dbm >= self.sensitivity_dbm
    }

    pub fn snr_db(&self, rx_power_dbm: f64) -> f64 {
        rx_power_dbm - self.noise_floor_dbm
    }
}

pub fn path_loss_db(link: &LinkModel, distance_m: f64, shadow_sample_db: f64) -> f64 {
    link.path_loss_db(distance_m, shadow_sample_db)
}

/// One uplink frame on the air.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub node_id: u32,
    pub channel_index: usize,
    pub sf: u8,
    pub start_time_ms: f64,
    pub toa_ms: f64,
    pub tx_power_dbm: f64,
    pub distance_m: f64,
    /// Received power at the gateway, drawn once per frame.
    pub sampled_rx_power_dbm: f64,
}

impl Transmission {
    pub fn end_time_ms(&self) -> f64 {
        self.start_time_ms + self.toa_ms
    }

    /// Half-open overlap in time, ignoring channel and SF.
    pub fn overlaps(&self, other: &Transmission) -> bool {
        self.start_time_ms < other.end_time_ms() && other.start_time_ms < self.end_time_ms()
    }

    /// Same channel, same SF and overlapping in time.
    pub fn interferes_with(&self, other: &Transmission) -> bool {
        self.channel_index == other.channel_index && self.sf == other.sf && self.overlaps(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReceptionOutcome {
    Delivered,
    LostCollision,
    LostBelowSensitivity,
}

/// Decides the fate of each transmission at the gateway.
///
/// A frame below sensitivity is lost outright. Otherwise it survives only
/// if nothing on the same channel and SF overlaps it, or if its power
/// beats the linear sum of every overlapping frame by the SF's capture
/// margin. Different channels and different SFs never interact.
pub fn resolve_reception(concurrent: &[Transmission], link: &LinkModel) -> Vec<ReceptionOutcome> {
    concurrent
        .iter()
        .enumerate()
        .map(|(i, tx)| resolve_one(tx, concurrent.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| o), link))
        .collect()
}

/// Outcome for `target` given every other frame that might overlap it.
pub fn resolve_one<'a, I>(target: &Transmission, others: I, link: &LinkModel) -> ReceptionOutcome
where
    I: IntoIterator<Item = &'a Transmission>,
{
    if !link.detectable(target.sampled_rx_power_dbm) {
        return ReceptionOutcome::LostBelowSensitivity;
    }
    let mut interference_mw = 0.0;
    let mut any = false;
    let mut started_first = true;
    for other in others {
        if !target.interferes_with(other) {
            continue;
        }
        any = true;
        interference_mw += dbm_to_mw(other.sampled_rx_power_dbm);
        if other.start_time_ms < target.start_time_ms {
            started_first = false;
        }
    }
    if !any {
        return ReceptionOutcome::Delivered;
    }
    if !link.capture_enabled || (link.capture_requires_first && !started_first) {
        return ReceptionOutcome::LostCollision;
    }
    let margin = target.sampled_rx_power_dbm - mw_to_dbm(interference_mw);
    if margin >= link.capture_threshold_db(target.sf) {
        ReceptionOutcome::Delivered
    } else {
        ReceptionOutcome::LostCollision
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent hand evaluation of the airtime formula, written with
    /// floating-point ceil so it shares no code with the integer path.
    fn oracle_toa(sf: u32, pl: u32, crc: u32, h: u32, de: u32, cr: u32, pre: u32, bw: f64) -> f64 {
        let tsym = 2f64.powi(sf as i32) / bw * 1e3;
        let num = 8.0 * pl as f64 - 4.0 * sf as f64 + 28.0 + 16.0 * crc as f64 - 20.0 * h as f64;
        let den = 4.0 * (sf as f64 - 2.0 * de as f64);
        let n = 8.0 + ((num / den).ceil() * (cr as f64 + 4.0)).max(0.0);
        (pre as f64 + 4.25) * tsym + n * tsym
    }

    fn tx(id: u32, ch: usize, sf: u8, start: f64, toa: f64, p: f64) -> Transmission {
        Transmission {
            node_id: id,
            channel_index: ch,
            sf,
            start_time_ms: start,
            toa_ms: toa,
            tx_power_dbm: 17.0,
            distance_m: 10.0,
            sampled_rx_power_dbm: p,
        }
    }

    #[test]
    fn symbol_times() {
        assert!((RadioConfig::new(9, 125_000).unwrap().symbol_time_ms() - 4.096).abs() < 1e-12);
        assert!((RadioConfig::new(7, 125_000).unwrap().symbol_time_ms() - 1.024).abs() < 1e-12);
        let sf12 = RadioConfig::new(12, 125_000).unwrap();
        assert!((sf12.symbol_time_ms() - 32.768).abs() < 1e-12);
        assert!(sf12.low_data_rate());
        assert!(!RadioConfig::new(10, 125_000).unwrap().low_data_rate());
    }

    #[test]
    fn payload_symbol_examples() {
        let sf9 = RadioConfig::new(9, 125_000).unwrap();
        assert_eq!(sf9.payload_symbols(10).unwrap(), 23);
        let sf7 = RadioConfig::new(7, 125_000).unwrap();
        assert_eq!(sf7.payload_symbols(10).unwrap(), 28);
        let bare = RadioConfig::new(12, 125_000).unwrap().with_crc(false);
        assert_eq!(bare.payload_symbols(1).unwrap(), 8);
    }

    #[test]
    fn payload_bounds_rejected() {
        let c = RadioConfig::new(9, 125_000).unwrap();
        assert_eq!(c.payload_symbols(0), Err(PhyError::PayloadLength(0)));
        assert_eq!(c.time_on_air_ms(256), Err(PhyError::PayloadLength(256)));
    }

    #[test]
    fn construction_bounds() {
        assert_eq!(RadioConfig::new(6, 125_000), Err(PhyError::SpreadingFactor(6)));
        assert_eq!(RadioConfig::new(13, 125_000), Err(PhyError::SpreadingFactor(13)));
        assert_eq!(RadioConfig::new(7, 0), Err(PhyError::Bandwidth(0)));
        let c = RadioConfig::new(7, 125_000).unwrap();
        assert_eq!(c.with_coding_rate(0), Err(PhyError::CodingRate(0)));
        assert_eq!(c.with_coding_rate(5), Err(PhyError::CodingRate(5)));
    }

    #[test]
    fn airtime_matches_hand_evaluation() {
        let sf9 = RadioConfig::new(9, 125_000).unwrap();
        let sf7 = RadioConfig::new(7, 125_000).unwrap();
        let o9 = oracle_toa(9, 10, 1, 0, 0, 1, 8, 125_000.0);
        let o7 = oracle_toa(7, 10, 1, 0, 0, 1, 8, 125_000.0);
        assert!((o9 - 144.384).abs() < 1e-9);
        assert!((o7 - 41.216).abs() < 1e-9);
        assert!((sf9.time_on_air_ms(10).unwrap() - o9).abs() < 1e-9);
        assert!((sf7.time_on_air_ms(10).unwrap() - o7).abs() < 1e-9);
        // clamped payload: (8 + 4.25) * 32.768 + 8 * 32.768
        let clamp = RadioConfig::new(12, 125_000).unwrap().with_crc(false).time_on_air_ms(1).unwrap();
        assert!((clamp - 663.552).abs() < 1e-9);
    }

    #[test]
    fn airtime_oracle_sweep() {
        for sf in 7..=12u8 {
            for pl in [1usize, 4, 10, 51, 128, 255] {
                for cr in 1..=4u8 {
                    let c = RadioConfig::new(sf, 125_000).unwrap().with_coding_rate(cr).unwrap();
                    let de = c.low_data_rate() as u32;
                    let want = oracle_toa(sf as u32, pl as u32, 1, 0, de, cr as u32, 8, 125_000.0);
                    assert!((c.time_on_air_ms(pl).unwrap() - want).abs() < 1e-9, "sf{sf} pl{pl} cr{cr}");
                }
            }
        }
    }

    #[test]
    fn beacon_formula_airtime_is_about_31ms() {
        let c = RadioConfig::new(7, 125_000).unwrap();
        assert!((c.time_on_air_ms(4).unwrap() - 30.976).abs() < 1e-9);
    }

    #[test]
    fn path_loss_examples() {
        let link = LinkModel::default();
        assert_eq!(link.path_loss_db(1.0, 0.0), 40.0);
        assert!((link.path_loss_db(10.0, 0.0) - 80.0).abs() < 1e-12);
        assert!((link.path_loss_db(100.0, 0.0) - 120.0).abs() < 1e-12);
        let rx = link.rx_power_dbm(17.0, 100.0, 0.0);
        assert!((rx + 103.0).abs() < 1e-12);
        assert!(link.detectable(rx));
        // sub-metre clamp
        assert_eq!(link.path_loss_db(0.2, 0.0), 40.0);
        assert_eq!(link.path_loss_db(1.0, 3.5), 43.5);
    }

    #[test]
    fn lone_transmission_delivered() {
        let out = resolve_reception(&[tx(1, 0, 9, 0.0, 144.384, -90.0)], &LinkModel::default());
        assert_eq!(out, vec![ReceptionOutcome::Delivered]);
        assert!(resolve_reception(&[], &LinkModel::default()).is_empty());
    }

    #[test]
    fn capture_with_ten_db_gap() {
        let link = LinkModel::default();
        let out = resolve_reception(
            &[tx(1, 0, 9, 0.0, 144.384, -60.0), tx(2, 0, 9, 50.0, 144.384, -70.0)],
            &link,
        );
        assert_eq!(out, vec![ReceptionOutcome::Delivered, ReceptionOutcome::LostCollision]);
    }

    #[test]
    fn no_capture_with_four_db_gap() {
        let link = LinkModel::default();
        let out = resolve_reception(
            &[tx(1, 0, 9, 0.0, 144.384, -60.0), tx(2, 0, 9, 50.0, 144.384, -64.0)],
            &link,
        );
        assert_eq!(out, vec![ReceptionOutcome::LostCollision, ReceptionOutcome::LostCollision]);
    }

    #[test]
    fn interferers_sum_linearly() {
        // -60 vs two -69 dBm frames: each alone is 9 dB down, together ~6 dB down
        let link = LinkModel::default();
        let out = resolve_reception(
            &[
                tx(1, 0, 9, 0.0, 100.0, -60.0),
                tx(2, 0, 9, 10.0, 100.0, -69.0),
                tx(3, 0, 9, 20.0, 100.0, -69.0),
            ],
            &link,
        );
        assert_eq!(out[0], ReceptionOutcome::LostCollision);
    }

    #[test]
    fn orthogonal_channels_and_sfs() {
        let link = LinkModel::default();
        let out = resolve_reception(
            &[
                tx(1, 0, 9, 0.0, 144.0, -80.0),
                tx(2, 1, 9, 0.0, 144.0, -80.0),
                tx(3, 0, 7, 0.0, 41.0, -80.0),
            ],
            &link,
        );
        assert!(out.iter().all(|o| *o == ReceptionOutcome::Delivered));
    }

    #[test]
    fn below_sensitivity_and_touching_frames() {
        let link = LinkModel::default();
        let out = resolve_reception(
            &[tx(1, 0, 9, 0.0, 100.0, -140.0), tx(2, 0, 9, 100.0, 100.0, -80.0)],
            &link,
        );
        assert_eq!(out, vec![ReceptionOutcome::LostBelowSensitivity, ReceptionOutcome::Delivered]);
    }

    #[test]
    fn arrival_order_flag() {
        let link = LinkModel {
            capture_requires_first: true,
            ..LinkModel::default()
        };
        let out = resolve_reception(
            &[tx(1, 0, 9, 50.0, 144.0, -60.0), tx(2, 0, 9, 0.0, 144.0, -75.0)],
            &link,
        );
        assert_eq!(out, vec![ReceptionOutcome::LostCollision, ReceptionOutcome::LostCollision]);
        let free = LinkModel::default();
        let out = resolve_reception(
            &[tx(1, 0, 9, 50.0, 144.0, -60.0), tx(2, 0, 9, 0.0, 144.0, -75.0)],
            &free,
        );
        assert_eq!(out[0], ReceptionOutcome::Delivered);
    }
}
