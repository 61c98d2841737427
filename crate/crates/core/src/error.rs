use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhyError {
    #[error("spreading factor {0} outside 7..=12")]
    SpreadingFactor(u8),
    #[error("bandwidth must be positive, got {0} Hz")]
    Bandwidth(u32),
    #[error("coding-rate index {0} outside 1..=4")]
    CodingRate(u8),
    #[error("payload length {0} outside 1..=255 bytes")]
    PayloadLength(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("channel index {0} out of range")]
    Channel(usize),
    #[error("device {dev_id} needs {needed} consecutive slots but a frame has only {available}")]
    TooManySlots {
        dev_id: u32,
        needed: usize,
        available: usize,
    },
    #[error("no free resource block for device {0} and reuse is disabled")]
    Saturated(u32),
    #[error("multi-slot quota exceeded for device {0}")]
    QuotaRejected(u32),
    #[error("allocation requested with a report message for device {0}")]
    NotARequest(u32),
    #[error("slot length must be positive")]
    SlotLength,
    #[error(transparent)]
    Phy(#[from] PhyError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuperframeError {
    #[error("period {period_ms} ms is not a dyadic multiple of {t0_ms} ms; admissible neighbours: {}", fmt_periods(.admissible))]
    NonDyadic {
        period_ms: f64,
        t0_ms: f64,
        admissible: Vec<f64>,
    },
    #[error("period exponent {k} exceeds superframe depth {k_max}; admissible neighbours: {}", fmt_periods(.admissible))]
    TooDeep {
        k: u32,
        k_max: u32,
        admissible: Vec<f64>,
    },
    #[error("periods must be positive")]
    NonPositive,
    #[error("no conflict-free frame offset left on this slot for period exponent {0}")]
    SlotFull(u32),
}

fn fmt_periods(p: &[f64]) -> String {
    p.iter()
        .map(|v| format!("{v} ms"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MacError {
    #[error("protocol violation: event {event:?} is not accepted in state {state:?}")]
    ProtocolViolation {
        state: crate::mac::fsm::FsmState,
        event: crate::mac::fsm::FsmEvent,
    },
    #[error("airtime {toa_ms} ms does not fit a {window_ms} ms window with {guard_ms} ms guard")]
    WindowTooShort {
        toa_ms: f64,
        window_ms: f64,
        guard_ms: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
}

impl ConfigError {
    pub fn value(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Value {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Superframe(#[from] SuperframeError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown exhibit `{0}` (expected table3, fig7, fig8, fig9, fig10 or fig11)")]
    UnknownExhibit(String),
    #[error("{0}")]
    Invalid(String),
    #[error("internal simulator fault: {0}")]
    Internal(String),
}

impl SimError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True when the failure stems from user input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SimError::Config(_)
                | SimError::Phy(_)
                | SimError::Superframe(_)
                | SimError::UnknownExhibit(_)
                | SimError::Invalid(_)
                | SimError::Mac(MacError::WindowTooShort { .. })
        )
    }
}
