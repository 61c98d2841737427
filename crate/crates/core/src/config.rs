//! Scenario configuration.
//!
//! Plain text, one `key = value` per line, `#` comments, optional
//! `[section]` headers that prefix the following keys. Unknown keys are
//! rejected with the offending line number.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ConfigError, PhyError};
use crate::mac::{CsmaConfig, Protocol};
use crate::phy::{LinkModel, LowDataRate, RadioConfig, SYNC_BEACON_TOA_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Traffic {
    Periodic,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shadowing {
    PerPacket,
    PerLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinMode {
    /// Joins contend on the reserved access cell.
    Contention,
    /// Devices start already associated.
    Provisioned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhyParams {
    pub sf: u8,
    pub bw_hz: u32,
    pub cr: u8,
    pub preamble: u16,
    pub crc: bool,
    pub explicit_header: bool,
    pub ldro: LowDataRate,
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdmaParams {
    pub slots_per_frame: Option<usize>,
    pub slot_ms: Option<f64>,
    pub guard_ms: Option<f64>,
    /// Size the slot as airtime plus guard instead of frame / slots.
    pub slot_from_guard: bool,
    pub reuse: bool,
    pub strict_priority: bool,
    pub rho_max: f64,
    pub reject_over_quota: bool,
    pub t_release_s: Option<f64>,
    pub priority_levels: u8,
    pub join: JoinMode,
    pub join_backoff_max_exp: u32,
    pub multi_slot: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncParams {
    pub beacon_interval_s: f64,
    pub beacon_toa_ms: f64,
    pub interval_s: f64,
    pub sigma_ms: f64,
    pub hw_sigma_ms: f64,
    pub drift_ppm: f64,
    pub beacon_loss: f64,
    pub timeout_ms: Option<f64>,
    pub retry_ms: Option<f64>,
    pub holdover_failures: u32,
    pub t_encode_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParams {
    pub tx_mw: f64,
    pub rx_mw: f64,
    pub sleep_mw: f64,
    pub listen_ms: f64,
    pub rx_window_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperframeParams {
    pub k_max: u32,
    pub t0_s: Option<f64>,
    /// Device periods, assigned round-robin; empty means every device
    /// reports at the base interval.
    pub periods_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub protocol: Protocol,
    pub nodes: usize,
    pub area_m: f64,
    pub interval_s: f64,
    pub duration_s: f64,
    pub payload_bytes: usize,
    pub traffic: Traffic,
    pub seeds: Vec<u64>,
    pub phy: PhyParams,
    pub link: LinkModel,
    pub shadowing: Shadowing,
    pub channels: usize,
    pub tdma: TdmaParams,
    pub sync: SyncParams,
    pub csma: CsmaConfig,
    pub energy: EnergyParams,
    pub superframe: SuperframeParams,
    pub segments: usize,
    pub trace: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            protocol: Protocol::Tdma,
            nodes: 20,
            area_m: 100.0,
            interval_s: 4.0,
            duration_s: 4000.0,
            payload_bytes: 10,
            traffic: Traffic::Periodic,
            seeds: (1..=10).collect(),
            phy: PhyParams {
                sf: 9,
                bw_hz: 125_000,
                cr: 1,
                preamble: 8,
                crc: true,
                explicit_header: true,
                ldro: LowDataRate::Auto,
                tx_power_dbm: 17.0,
            },
            link: LinkModel::default(),
            shadowing: Shadowing::PerPacket,
            channels: 8,
            tdma: TdmaParams {
                slots_per_frame: None,
                slot_ms: None,
                guard_ms: None,
                slot_from_guard: false,
                reuse: true,
                strict_priority: false,
                rho_max: 0.3,
                reject_over_quota: false,
                t_release_s: None,
                priority_levels: 1,
                join: JoinMode::Contention,
                join_backoff_max_exp: 8,
                multi_slot: false,
            },
            sync: SyncParams {
                beacon_interval_s: 4.0,
                beacon_toa_ms: SYNC_BEACON_TOA_MS,
                interval_s: 600.0,
                sigma_ms: 2.0,
                hw_sigma_ms: 3.0,
                drift_ppm: 20.0,
                beacon_loss: 0.0,
                timeout_ms: None,
                retry_ms: None,
                holdover_failures: 3,
                t_encode_ms: 0.2,
            },
            csma: CsmaConfig::default(),
            energy: EnergyParams {
                tx_mw: 50.0,
                rx_mw: 10.0,
                sleep_mw: 0.01,
                listen_ms: 200.0,
                rx_window_ms: None,
            },
            superframe: SuperframeParams {
                k_max: 0,
                t0_s: None,
                periods_s: Vec::new(),
            },
            segments: 10,
            trace: false,
        }
    }
}

/// Values that follow from the configuration rather than being set directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derived {
    pub toa_ms: f64,
    pub frame_ms: f64,
    pub slots_per_frame: usize,
    pub slot_ms: f64,
    pub guard_ms: f64,
    pub t_release_ms: f64,
    pub sync_timeout_ms: f64,
    pub sync_retry_ms: f64,
    pub rx_window_ms: f64,
}

fn default_guard(sf: u8) -> f64 {
    if sf == 7 {
        25.0
    } else {
        55.0
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::value(key, format!("expected a boolean, got `{v}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse::<T>()
        .map_err(|_| ConfigError::value(key, format!("cannot parse `{v}` as a number")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = parse_num(key, v)?;
    if !x.is_finite() {
        return Err(ConfigError::value(key, "must be finite"));
    }
    Ok(x)
}

fn parse_opt_f64(key: &str, v: &str) -> Result<Option<f64>, ConfigError> {
    if v.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse_f64(key, v).map(Some)
    }
}

/// `1,2,5`, `1..11` (half-open) or `1..=10`.
pub fn parse_seeds(key: &str, v: &str) -> Result<Vec<u64>, ConfigError> {
    let v = v.trim();
    if let Some((a, b)) = v.split_once("..") {
        let a: u64 = parse_num(key, a.trim())?;
        let (b, inclusive) = match b.strip_prefix('=') {
            Some(b) => (b, true),
            None => (b, false),
        };
        let b: u64 = parse_num(key, b.trim())?;
        let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
        if seeds.is_empty() {
            return Err(ConfigError::value(key, "empty seed range"));
        }
        return Ok(seeds);
    }
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s.trim()))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Line {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            cfg.set(&key, v.trim().trim_matches('"')).map_err(|e| ConfigError::Line {
                line: line_no,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides, then re-validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::value(o, "override must look like key=value"))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let f = |v: &str| parse_f64(key, v);
        match key {
            "protocol" => self.protocol = v.parse().map_err(|e: String| ConfigError::value(key, e))?,
            "nodes" => self.nodes = parse_num(key, v)?,
            "area_m" => self.area_m = f(v)?,
            "interval_s" => self.interval_s = f(v)?,
            "duration_s" => self.duration_s = f(v)?,
            "payload_bytes" => self.payload_bytes = parse_num(key, v)?,
            "traffic" => {
                self.traffic = match v {
                    "periodic" => Traffic::Periodic,
                    "poisson" => Traffic::Poisson,
                    _ => return Err(ConfigError::value(key, "expected periodic or poisson")),
                }
            }
            "seeds" => self.seeds = parse_seeds(key, v)?,
            "phy.sf" => {
                let sf: u8 = parse_num(key, v)?;
                if !(7..=12).contains(&sf) {
                    return Err(ConfigError::value(key, crate::error::PhyError::SpreadingFactor(sf).to_string()));
                }
                self.phy.sf = sf;
            }
            "phy.bw_hz" => self.phy.bw_hz = parse_num(key, v)?,
            "phy.cr" => self.phy.cr = parse_num(key, v)?,
            "phy.preamble" => self.phy.preamble = parse_num(key, v)?,
            "phy.crc" => self.phy.crc = parse_bool(key, v)?,
            "phy.explicit_header" => self.phy.explicit_header = parse_bool(key, v)?,
            "phy.ldro" => {
                self.phy.ldro = match v {
                    "auto" => LowDataRate::Auto,
                    "on" | "true" | "1" => LowDataRate::On,
                    "off" | "false" | "0" => LowDataRate::Off,
                    _ => return Err(ConfigError::value(key, "expected auto, on or off")),
                }
            }
            "phy.tx_power_dbm" => self.phy.tx_power_dbm = f(v)?,
            "link.pl0_db" => self.link.pl0_db = f(v)?,
            "link.gamma" => self.link.gamma = f(v)?,
            "link.shadow_sigma_db" => self.link.shadow_sigma_db = f(v)?,
            "link.shadowing" => {
                self.shadowing = match v {
                    "per_packet" => Shadowing::PerPacket,
                    "per_link" => Shadowing::PerLink,
                    _ => return Err(ConfigError::value(key, "expected per_packet or per_link")),
                }
            }
            "link.noise_floor_dbm" => self.link.noise_floor_dbm = f(v)?,
            "link.sensitivity_dbm" => self.link.sensitivity_dbm = f(v)?,
            "link.capture" => self.link.capture_enabled = parse_bool(key, v)?,
            "link.capture_first_only" => self.link.capture_requires_first = parse_bool(key, v)?,
            "mac.channels" => self.channels = parse_num(key, v)?,
            "tdma.slots_per_frame" => {
                self.tdma.slots_per_frame = if v == "auto" { None } else { Some(parse_num(key, v)?) }
            }
            "tdma.slot_ms" => self.tdma.slot_ms = parse_opt_f64(key, v)?,
            "tdma.guard_ms" => self.tdma.guard_ms = parse_opt_f64(key, v)?,
            "tdma.slot_from_guard" => self.tdma.slot_from_guard = parse_bool(key, v)?,
            "tdma.reuse" => self.tdma.reuse = parse_bool(key, v)?,
            "tdma.strict_priority" => self.tdma.strict_priority = parse_bool(key, v)?,
            "tdma.rho_max" => self.tdma.rho_max = f(v)?,
            "tdma.reject_over_quota" => self.tdma.reject_over_quota = parse_bool(key, v)?,
            "tdma.t_release_s" => self.tdma.t_release_s = parse_opt_f64(key, v)?,
            "tdma.priority_levels" => self.tdma.priority_levels = parse_num(key, v)?,
            "tdma.join" => {
                self.tdma.join = match v {
                    "contention" => JoinMode::Contention,
                    "provisioned" => JoinMode::Provisioned,
                    _ => return Err(ConfigError::value(key, "expected contention or provisioned")),
                }
            }
            "tdma.join_backoff_max_exp" => self.tdma.join_backoff_max_exp = parse_num(key, v)?,
            "tdma.multi_slot" => self.tdma.multi_slot = parse_bool(key, v)?,
            "sync.beacon_interval_s" => self.sync.beacon_interval_s = f(v)?,
            "sync.beacon_toa_ms" => self.sync.beacon_toa_ms = f(v)?,
            "sync.interval_s" => self.sync.interval_s = f(v)?,
            "sync.sigma_ms" => self.sync.sigma_ms = f(v)?,
            "sync.hw_sigma_ms" => self.sync.hw_sigma_ms = f(v)?,
            "sync.drift_ppm" => self.sync.drift_ppm = f(v)?,
            "sync.beacon_loss" => self.sync.beacon_loss = f(v)?,
            "sync.timeout_ms" => self.sync.timeout_ms = parse_opt_f64(key, v)?,
            "sync.retry_ms" => self.sync.retry_ms = parse_opt_f64(key, v)?,
            "sync.holdover_failures" => self.sync.holdover_failures = parse_num(key, v)?,
            "sync.t_encode_ms" => self.sync.t_encode_ms = f(v)?,
            "csma.cca_dbm" => self.csma.cca_threshold_dbm = f(v)?,
            "csma.backoff_slot_ms" => self.csma.backoff_slot_ms = f(v)?,
            "csma.window" => self.csma.window = parse_num(key, v)?,
            "csma.max_stages" => self.csma.max_stages = parse_num(key, v)?,
            "energy.tx_mw" => self.energy.tx_mw = f(v)?,
            "energy.rx_mw" => self.energy.rx_mw = f(v)?,
            "energy.sleep_mw" => self.energy.sleep_mw = f(v)?,
            "energy.listen_ms" => self.energy.listen_ms = f(v)?,
            "energy.rx_window_ms" => self.energy.rx_window_ms = parse_opt_f64(key, v)?,
            "superframe.k_max" => self.superframe.k_max = parse_num(key, v)?,
            "superframe.t0_s" => self.superframe.t0_s = parse_opt_f64(key, v)?,
            "superframe.periods_s" => {
                self.superframe.periods_s = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_f64(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "metrics.segments" => self.segments = parse_num(key, v)?,
            "output.trace" => self.trace = parse_bool(key, v)?,
            _ => {
                if let Some(rest) = key.strip_prefix("link.capture_db.sf") {
                    let sf: u8 = parse_num(key, rest)?;
                    if !(7..=12).contains(&sf) {
                        return Err(ConfigError::value(key, "spreading factor outside 7..=12"));
                    }
                    self.link.capture_db[usize::from(sf - 7)] = f(v)?;
                } else if let Some(rest) = key.strip_prefix("csma.cad_ms.sf") {
                    let sf: u8 = parse_num(key, rest)?;
                    if !(7..=12).contains(&sf) {
                        return Err(ConfigError::value(key, "spreading factor outside 7..=12"));
                    }
                    self.csma.cad_ms[usize::from(sf - 7)] = f(v)?;
                } else {
                    return Err(ConfigError::value(key, "unknown key"));
                }
            }
        }
        Ok(())
    }

    pub fn radio(&self) -> Result<RadioConfig, PhyError> {
        Ok(RadioConfig::new(self.phy.sf, self.phy.bw_hz)?
            .with_coding_rate(self.phy.cr)?
            .with_preamble(self.phy.preamble)
            .with_crc(self.phy.crc)
            .with_explicit_header(self.phy.explicit_header)
            .with_low_data_rate(self.phy.ldro))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |k: &str, m: &str| Err(ConfigError::value(k, m));
        let radio = self.radio().map_err(|e| ConfigError::value(phy_key(&e), e.to_string()))?;
        radio
            .time_on_air_ms(self.payload_bytes)
            .map_err(|e| ConfigError::value("payload_bytes", e.to_string()))?;
        if self.nodes == 0 {
            return bad("nodes", "must be at least 1");
        }
        if !(self.area_m > 0.0) {
            return bad("area_m", "must be positive");
        }
        if !(self.interval_s > 0.0) {
            return bad("interval_s", "must be positive");
        }
        if !(self.duration_s > 0.0) {
            return bad("duration_s", "must be positive");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required");
        }
        if self.channels == 0 {
            return bad("mac.channels", "must be at least 1");
        }
        if self.link.gamma <= 0.0 {
            return bad("link.gamma", "must be positive");
        }
        if self.link.shadow_sigma_db < 0.0 {
            return bad("link.shadow_sigma_db", "must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.tdma.rho_max) {
            return bad("tdma.rho_max", "must lie in [0, 1]");
        }
        if self.tdma.priority_levels == 0 {
            return bad("tdma.priority_levels", "must be at least 1");
        }
        if self.tdma.join_backoff_max_exp > 16 {
            return bad("tdma.join_backoff_max_exp", "must be at most 16");
        }
        if matches!(self.tdma.slots_per_frame, Some(0)) {
            return bad("tdma.slots_per_frame", "must be at least 1");
        }
        if matches!(self.tdma.slot_ms, Some(x) if x <= 0.0) {
            return bad("tdma.slot_ms", "must be positive");
        }
        if matches!(self.tdma.guard_ms, Some(x) if x < 0.0) {
            return bad("tdma.guard_ms", "must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.sync.beacon_loss) {
            return bad("sync.beacon_loss", "must lie in [0, 1]");
        }
        if self.sync.sigma_ms < 0.0 || self.sync.hw_sigma_ms < 0.0 {
            return bad("sync.sigma_ms", "must be non-negative");
        }
        if !(self.sync.beacon_interval_s > 0.0) || !(self.sync.interval_s > 0.0) {
            return bad("sync.interval_s", "must be positive");
        }
        if self.sync.holdover_failures == 0 {
            return bad("sync.holdover_failures", "must be at least 1");
        }
        if self.csma.window == 0 {
            return bad("csma.window", "must be at least 1");
        }
        if self.csma.max_stages == 0 {
            return bad("csma.max_stages", "must be at least 1");
        }
        if self.segments < 2 {
            return bad("metrics.segments", "need at least 2 segments for a confidence interval");
        }
        for (k, v) in [
            ("energy.tx_mw", self.energy.tx_mw),
            ("energy.rx_mw", self.energy.rx_mw),
            ("energy.sleep_mw", self.energy.sleep_mw),
            ("energy.listen_ms", self.energy.listen_ms),
        ] {
            if v < 0.0 {
                return bad(k, "must be non-negative");
            }
        }
        let d = self.derived().map_err(|e| ConfigError::value("phy", e.to_string()))?;
        if d.slots_per_frame == 0 {
            return bad("tdma.slot_ms", "slot longer than the frame");
        }
        if self.protocol == Protocol::Tdma && self.superframe.k_max > 0 {
            crate::superframe::validate_period(self.frame_ms(), self.frame_ms(), self.superframe.k_max)
                .map_err(|e| ConfigError::value("superframe.t0_s", e.to_string()))?;
            for &p in &self.superframe.periods_s {
                crate::superframe::validate_period(p * 1000.0, self.frame_ms(), self.superframe.k_max)
                    .map_err(|e| ConfigError::value("superframe.periods_s", e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Base frame length: the superframe's T0 when set, else the reporting interval.
    pub fn frame_ms(&self) -> f64 {
        self.superframe.t0_s.unwrap_or(self.interval_s) * 1000.0
    }

    pub fn derived(&self) -> Result<Derived, PhyError> {
        let radio = self.radio()?;
        let toa = radio.time_on_air_ms(self.payload_bytes)?;
        let frame = self.frame_ms();
        let guard = self.tdma.guard_ms.unwrap_or_else(|| default_guard(self.phy.sf));
        let (slots, slot_ms) = if self.tdma.slot_from_guard {
            let ls = self.tdma.slot_ms.unwrap_or(toa + guard);
            ((frame / ls + 1e-9).floor() as usize, ls)
        } else {
            match (self.tdma.slots_per_frame, self.tdma.slot_ms) {
                (Some(n), Some(ls)) => (n, ls),
                (Some(n), None) => (n, frame / n as f64),
                (None, Some(ls)) => ((frame / ls + 1e-9).floor() as usize, ls),
                (None, None) => {
                    let n = match self.phy.sf {
                        9 => 20,
                        7 => 60,
                        _ => (frame / (toa + guard)).floor().max(1.0) as usize,
                    };
                    (n, frame / n as f64)
                }
            }
        };
        let beacon_ms = self.sync.beacon_interval_s * 1000.0;
        Ok(Derived {
            toa_ms: toa,
            frame_ms: frame,
            slots_per_frame: slots,
            slot_ms,
            guard_ms: guard,
            t_release_ms: self.tdma.t_release_s.unwrap_or(3.0 * self.interval_s) * 1000.0,
            sync_timeout_ms: self.sync.timeout_ms.unwrap_or(beacon_ms + 100.0),
            sync_retry_ms: self.sync.retry_ms.unwrap_or(beacon_ms / 4.0),
            rx_window_ms: self
                .energy
                .rx_window_ms
                .unwrap_or((f64::from(self.phy.preamble) + 4.25) * radio.symbol_time_ms()),
        })
    }

    /// Every key with its effective value; parsing the result yields an
    /// identical configuration.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("protocol", self.protocol.to_string());
        kv("nodes", self.nodes.to_string());
        kv("area_m", self.area_m.to_string());
        kv("interval_s", self.interval_s.to_string());
        kv("duration_s", self.duration_s.to_string());
        kv("payload_bytes", self.payload_bytes.to_string());
        kv(
            "traffic",
            match self.traffic {
                Traffic::Periodic => "periodic",
                Traffic::Poisson => "poisson",
            }
            .into(),
        );
        kv("seeds", fmt_list(&self.seeds));
        kv("phy.sf", self.phy.sf.to_string());
        kv("phy.bw_hz", self.phy.bw_hz.to_string());
        kv("phy.cr", self.phy.cr.to_string());
        kv("phy.preamble", self.phy.preamble.to_string());
        kv("phy.crc", self.phy.crc.to_string());
        kv("phy.explicit_header", self.phy.explicit_header.to_string());
        kv(
            "phy.ldro",
            match self.phy.ldro {
                LowDataRate::Auto => "auto",
                LowDataRate::On => "on",
                LowDataRate::Off => "off",
            }
            .into(),
        );
        kv("phy.tx_power_dbm", self.phy.tx_power_dbm.to_string());
        kv("link.pl0_db", self.link.pl0_db.to_string());
        kv("link.gamma", self.link.gamma.to_string());
        kv("link.shadow_sigma_db", self.link.shadow_sigma_db.to_string());
        kv(
            "link.shadowing",
            match self.shadowing {
                Shadowing::PerPacket => "per_packet",
                Shadowing::PerLink => "per_link",
            }
            .into(),
        );
        kv("link.noise_floor_dbm", self.link.noise_floor_dbm.to_string());
        kv("link.sensitivity_dbm", self.link.sensitivity_dbm.to_string());
        kv("link.capture", self.link.capture_enabled.to_string());
        kv("link.capture_first_only", self.link.capture_requires_first.to_string());
        for (i, c) in self.link.capture_db.iter().enumerate() {
            kv(&format!("link.capture_db.sf{}", i + 7), c.to_string());
        }
        kv("mac.channels", self.channels.to_string());
        kv(
            "tdma.slots_per_frame",
            self.tdma.slots_per_frame.map_or_else(|| "auto".into(), |n| n.to_string()),
        );
        kv("tdma.slot_ms", fmt_opt(self.tdma.slot_ms));
        kv("tdma.guard_ms", fmt_opt(self.tdma.guard_ms));
        kv("tdma.slot_from_guard", self.tdma.slot_from_guard.to_string());
        kv("tdma.reuse", self.tdma.reuse.to_string());
        kv("tdma.strict_priority", self.tdma.strict_priority.to_string());
        kv("tdma.rho_max", self.tdma.rho_max.to_string());
        kv("tdma.reject_over_quota", self.tdma.reject_over_quota.to_string());
        kv("tdma.t_release_s", fmt_opt(self.tdma.t_release_s));
        kv("tdma.priority_levels", self.tdma.priority_levels.to_string());
        kv(
            "tdma.join",
            match self.tdma.join {
                JoinMode::Contention => "contention",
                JoinMode::Provisioned => "provisioned",
            }
            .into(),
        );
        kv("tdma.join_backoff_max_exp", self.tdma.join_backoff_max_exp.to_string());
        kv("tdma.multi_slot", self.tdma.multi_slot.to_string());
        kv("sync.beacon_interval_s", self.sync.beacon_interval_s.to_string());
        kv("sync.beacon_toa_ms", self.sync.beacon_toa_ms.to_string());
        kv("sync.interval_s", self.sync.interval_s.to_string());
        kv("sync.sigma_ms", self.sync.sigma_ms.to_string());
        kv("sync.hw_sigma_ms", self.sync.hw_sigma_ms.to_string());
        kv("sync.drift_ppm", self.sync.drift_ppm.to_string());
        kv("sync.beacon_loss", self.sync.beacon_loss.to_string());
        kv("sync.timeout_ms", fmt_opt(self.sync.timeout_ms));
        kv("sync.retry_ms", fmt_opt(self.sync.retry_ms));
        kv("sync.holdover_failures", self.sync.holdover_failures.to_string());
        kv("sync.t_encode_ms", self.sync.t_encode_ms.to_string());
        kv("csma.cca_dbm", self.csma.cca_threshold_dbm.to_string());
        for (i, c) in self.csma.cad_ms.iter().enumerate() {
            kv(&format!("csma.cad_ms.sf{}", i + 7), c.to_string());
        }
        kv("csma.backoff_slot_ms", self.csma.backoff_slot_ms.to_string());
        kv("csma.window", self.csma.window.to_string());
        kv("csma.max_stages", self.csma.max_stages.to_string());
        kv("energy.tx_mw", self.energy.tx_mw.to_string());
        kv("energy.rx_mw", self.energy.rx_mw.to_string());
        kv("energy.sleep_mw", self.energy.sleep_mw.to_string());
        kv("energy.listen_ms", self.energy.listen_ms.to_string());
        kv("energy.rx_window_ms", fmt_opt(self.energy.rx_window_ms));
        kv("superframe.k_max", self.superframe.k_max.to_string());
        kv("superframe.t0_s", fmt_opt(self.superframe.t0_s));
        kv("superframe.periods_s", fmt_list(&self.superframe.periods_s));
        kv("metrics.segments", self.segments.to_string());
        kv("output.trace", self.trace.to_string());
        s
    }
}

fn phy_key(e: &PhyError) -> &'static str {
    match e {
        PhyError::SpreadingFactor(_) => "phy.sf",
        PhyError::Bandwidth(_) => "phy.bw_hz",
        PhyError::CodingRate(_) => "phy.cr",
        PhyError::PayloadLength(_) => "payload_bytes",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ScenarioConfig::parse("").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        let d = c.derived().unwrap();
        assert_eq!((c.phy.sf, d.slots_per_frame, c.channels), (9, 20, 8));
        assert!((d.slot_ms - 200.0).abs() < 1e-12);
        assert_eq!(c.interval_s, 4.0);
        assert!((d.toa_ms - 144.384).abs() < 1e-9);
    }

    #[test]
    fn sf7_defaults() {
        let c = ScenarioConfig::parse("phy.sf=7").unwrap();
        let d = c.derived().unwrap();
        assert_eq!(d.slots_per_frame, 60);
        assert_eq!(d.toa_ms.round(), 41.0);
    }

    #[test]
    fn out_of_range_sf_is_rejected() {
        let err = ScenarioConfig::parse("phy.sf=6").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1") && msg.contains("spreading factor 6"), "{msg}");
    }

    #[test]
    fn unknown_keys_name_the_line() {
        let err = ScenarioConfig::parse("nodes = 5\n\n tdma.gaurd_ms = 3").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Line {
                line: 3,
                message: "tdma.gaurd_ms: unknown key".into()
            }
        );
    }

    #[test]
    fn sections_prefix_keys() {
        let c = ScenarioConfig::parse("[tdma]\nguard_ms = 30 # tight\n[link]\ncapture_db.sf9 = 7").unwrap();
        assert_eq!(c.tdma.guard_ms, Some(30.0));
        assert_eq!(c.link.capture_db[2], 7.0);
    }

    #[test]
    fn zero_duration_is_invalid() {
        assert!(ScenarioConfig::parse("duration_s = 0").is_err());
    }

    #[test]
    fn seeds_forms() {
        assert_eq!(parse_seeds("s", "1..4").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("s", "1..=3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("s", "7, 9").unwrap(), vec![7, 9]);
        assert!(parse_seeds("s", "3..3").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = ScenarioConfig::default();
        c.apply_overrides(&["protocol=csma", "sync.sigma_ms=0.1", "tdma.guard_ms=12.5", "seeds=3,4"])
            .unwrap();
        c.link.capture_db[1] = 7.25;
        let back = ScenarioConfig::parse(&c.to_config_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn slot_from_guard_resizes_frame() {
        let c = ScenarioConfig::parse("tdma.slot_from_guard = true\ntdma.guard_ms = 5").unwrap();
        let d = c.derived().unwrap();
        assert!((d.slot_ms - 149.384).abs() < 1e-9);
        assert_eq!(d.slots_per_frame, 26);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            ScenarioConfig::load("/nonexistent/scenario.cfg"),
            Err(ConfigError::Io { .. })
        ));
    }
}
