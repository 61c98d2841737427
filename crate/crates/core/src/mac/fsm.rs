//! Six-state device machine of the TDMA protocol.
//!
//! INIT joins through the shared access cell, REQ waits for a slot grant,
//! SYNC listens on the beacon channel, SLEEP idles, WAIT holds one packet
//! until the local slot boundary and SEND covers the transmission.

use std::fmt;

use crate::error::MacError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FsmState {
    Init,
    Req,
    Sync,
    Wait,
    Send,
    Sleep,
}

impl FsmState {
    pub fn as_str(self) -> &'static str {
        match self {
            FsmState::Init => "INIT",
            FsmState::Req => "REQ",
            FsmState::Sync => "SYNC",
            FsmState::Wait => "WAIT",
            FsmState::Send => "SEND",
            FsmState::Sleep => "SLEEP",
        }
    }
}

impl fmt::Display for FsmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FsmEvent {
    PowerOn,
    JoinGranted,
    /// Join request collided or went unanswered.
    JoinFailed,
    AllocGranted,
    AllocDenied,
    SyncDone,
    SyncTimeout,
    SlotBoundary,
    TxDone,
    DataReady,
    SyncAgeExpired,
}

impl FsmEvent {
    pub const ALL: [FsmEvent; 11] = [
        FsmEvent::PowerOn,
        FsmEvent::JoinGranted,
        FsmEvent::JoinFailed,
        FsmEvent::AllocGranted,
        FsmEvent::AllocDenied,
        FsmEvent::SyncDone,
        FsmEvent::SyncTimeout,
        FsmEvent::SlotBoundary,
        FsmEvent::TxDone,
        FsmEvent::DataReady,
        FsmEvent::SyncAgeExpired,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FsmEvent::PowerOn => "power_on",
            FsmEvent::JoinGranted => "join_granted",
            FsmEvent::JoinFailed => "join_failed",
            FsmEvent::AllocGranted => "alloc_granted",
            FsmEvent::AllocDenied => "alloc_denied",
            FsmEvent::SyncDone => "sync_done",
            FsmEvent::SyncTimeout => "sync_timeout",
            FsmEvent::SlotBoundary => "slot_boundary",
            FsmEvent::TxDone => "tx_done",
            FsmEvent::DataReady => "data_ready",
            FsmEvent::SyncAgeExpired => "sync_age_expired",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsmAction {
    TransmitOnAccessSlot,
    BackoffJoin,
    SendAllocRequest,
    RetuneToSyncChannel,
    ReturnToUplinkChannel,
    ScheduleRetry,
    /// Wake at the start of the next assigned local slot.
    ScheduleWakeup,
    Transmit,
    /// Drop an older queued packet in favour of the new one.
    ReplacePending,
    DropStale,
    /// Packet parked while the radio listens for a beacon.
    DeferPending,
    SuspendUplinks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub from: FsmState,
    pub event: FsmEvent,
    pub to: FsmState,
}

pub const TRANSITION_HEADER: &str = "t_ms,node,from,event,to";

impl Transition {
    pub fn to_csv(&self, t_ms: f64, node: u32) -> String {
        format!("{t_ms:.3},{node},{},{},{}", self.from, self.event.as_str(), self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceFsm {
    state: FsmState,
    has_grant: bool,
    synced_once: bool,
    consecutive_failures: u32,
    holdover_failures: u32,
    pending: bool,
    sync_due: bool,
}

impl DeviceFsm {
    pub fn new(holdover_failures: u32) -> Self {
        DeviceFsm {
            state: FsmState::Init,
            has_grant: false,
            synced_once: false,
            consecutive_failures: 0,
            holdover_failures,
            pending: false,
            sync_due: false,
        }
    }

    pub fn state(&self) -> FsmState {
        self.state
    }

    pub fn has_grant(&self) -> bool {
        self.has_grant
    }

    pub fn synced_once(&self) -> bool {
        self.synced_once
    }

    pub fn has_pending(&self) -> bool {
        self.pending
    }

    pub fn consecutive_failures(&self) -> u32 {
        self.consecutive_failures
    }

    /// Uplinks are allowed on the local clock: synced at least once and
    /// not beyond the holdover budget.
    pub fn may_transmit(&self) -> bool {
        self.has_grant && self.synced_once && self.consecutive_failures < self.holdover_failures
    }

    fn violation(&self, event: FsmEvent) -> MacError {
        MacError::ProtocolViolation {
            state: self.state,
            event,
        }
    }

    pub fn step(&mut self, event: FsmEvent) -> Result<(Transition, Vec<FsmAction>), MacError> {
        use FsmAction as A;
        use FsmEvent as E;
        use FsmState as S;
        let from = self.state;
        let (to, actions) = match (from, event) {
            (S::Init, E::PowerOn) => (S::Init, vec![A::TransmitOnAccessSlot]),
            (S::Init, E::JoinFailed) => (S::Init, vec![A::BackoffJoin]),
            (S::Init, E::JoinGranted) => (S::Req, vec![A::SendAllocRequest]),
            (S::Req, E::AllocDenied) => (S::Req, vec![A::ScheduleRetry]),
            (S::Req, E::AllocGranted) => {
                self.has_grant = true;
                (S::Sync, vec![A::RetuneToSyncChannel])
            }
            (S::Init | S::Req, E::DataReady) => (from, vec![A::DropStale]),
            (S::Sync, E::SyncDone) => {
                self.synced_once = true;
                self.consecutive_failures = 0;
                if self.pending {
                    (S::Wait, vec![A::ReturnToUplinkChannel, A::ScheduleWakeup])
                } else {
                    (S::Sleep, vec![A::ReturnToUplinkChannel])
                }
            }
            (S::Sync, E::SyncTimeout) => {
                if self.synced_once {
                    self.consecutive_failures += 1;
                }
                if self.may_transmit() {
                    // holdover: keep the slot on the local clock
                    if self.pending {
                        (S::Wait, vec![A::ReturnToUplinkChannel, A::ScheduleRetry, A::ScheduleWakeup])
                    } else {
                        (S::Sleep, vec![A::ReturnToUplinkChannel, A::ScheduleRetry])
                    }
                } else {
                    let mut acts = vec![A::ScheduleRetry];
                    if self.synced_once {
                        acts.push(A::SuspendUplinks);
                    }
                    if self.pending {
                        self.pending = false;
                        acts.push(A::DropStale);
                    }
                    (S::Sync, acts)
                }
            }
            // retry timer of a device still hunting for a beacon
            (S::Sync, E::SyncAgeExpired) => (S::Sync, vec![A::RetuneToSyncChannel]),
            (S::Sync, E::DataReady) => {
                if self.may_transmit() {
                    let act = if self.pending { A::ReplacePending } else { A::DeferPending };
                    self.pending = true;
                    (S::Sync, vec![act])
                } else {
                    (S::Sync, vec![A::DropStale])
                }
            }
            (S::Sleep, E::DataReady) => {
                if self.may_transmit() {
                    self.pending = true;
                    (S::Wait, vec![A::ScheduleWakeup])
                } else {
                    (S::Sleep, vec![A::DropStale])
                }
            }
            (S::Wait, E::DataReady) => (S::Wait, vec![A::ReplacePending]),
            (S::Wait, E::SlotBoundary) => {
                self.pending = false;
                (S::Send, vec![A::Transmit])
            }
            (S::Send, E::TxDone) => {
                if std::mem::take(&mut self.sync_due) {
                    (S::Sync, vec![A::RetuneToSyncChannel])
                } else if self.pending {
                    (S::Wait, vec![A::ScheduleWakeup])
                } else {
                    (S::Sleep, vec![])
                }
            }
            (S::Send, E::SyncAgeExpired) => {
                self.sync_due = true;
                (S::Send, vec![])
            }
            (S::Send, E::DataReady) => {
                let act = if self.pending { A::ReplacePending } else { A::DeferPending };
                self.pending = true;
                (S::Send, vec![act])
            }
            (S::Sleep | S::Wait, E::SyncAgeExpired) => (S::Sync, vec![A::RetuneToSyncChannel]),
            _ => return Err(self.violation(event)),
        };
        self.state = to;
        Ok((Transition { from, event, to }, actions))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ready() -> DeviceFsm {
        let mut f = DeviceFsm::new(3);
        for e in [FsmEvent::PowerOn, FsmEvent::JoinGranted, FsmEvent::AllocGranted, FsmEvent::SyncDone] {
            f.step(e).unwrap();
        }
        f
    }

    #[test]
    fn nominal_walk() {
        let mut f = DeviceFsm::new(3);
        assert_eq!(f.step(FsmEvent::PowerOn).unwrap().1, vec![FsmAction::TransmitOnAccessSlot]);
        assert_eq!(f.step(FsmEvent::JoinGranted).unwrap().0.to, FsmState::Req);
        let (t, a) = f.step(FsmEvent::AllocGranted).unwrap();
        assert_eq!((t.to, a), (FsmState::Sync, vec![FsmAction::RetuneToSyncChannel]));
        assert_eq!(f.step(FsmEvent::SyncDone).unwrap().0.to, FsmState::Sleep);
    }

    #[test]
    fn sleep_data_ready_waits_for_slot() {
        let mut f = ready();
        let (t, a) = f.step(FsmEvent::DataReady).unwrap();
        assert_eq!(t.to, FsmState::Wait);
        assert_eq!(a, vec![FsmAction::ScheduleWakeup]);
        assert_eq!(f.step(FsmEvent::SlotBoundary).unwrap().0.to, FsmState::Send);
        assert_eq!(f.step(FsmEvent::TxDone).unwrap().0.to, FsmState::Sleep);
    }

    #[test]
    fn sync_age_triggers_resync() {
        let mut f = ready();
        assert_eq!(f.step(FsmEvent::SyncAgeExpired).unwrap().0.to, FsmState::Sync);
    }

    #[test]
    fn resync_during_send_waits_for_tx_done() {
        let mut f = ready();
        f.step(FsmEvent::DataReady).unwrap();
        f.step(FsmEvent::SlotBoundary).unwrap();
        assert_eq!(f.step(FsmEvent::SyncAgeExpired).unwrap().0.to, FsmState::Send);
        assert_eq!(f.step(FsmEvent::TxDone).unwrap().0.to, FsmState::Sync);
    }

    #[test]
    fn data_during_send_waits_for_next_slot() {
        let mut f = ready();
        f.step(FsmEvent::DataReady).unwrap();
        f.step(FsmEvent::SlotBoundary).unwrap();
        assert_eq!(f.step(FsmEvent::DataReady).unwrap().1, vec![FsmAction::DeferPending]);
        let (t, a) = f.step(FsmEvent::TxDone).unwrap();
        assert_eq!((t.to, a), (FsmState::Wait, vec![FsmAction::ScheduleWakeup]));
    }

    #[test]
    fn wait_keeps_only_newest() {
        let mut f = ready();
        f.step(FsmEvent::DataReady).unwrap();
        assert_eq!(f.step(FsmEvent::DataReady).unwrap().1, vec![FsmAction::ReplacePending]);
    }

    #[test]
    fn early_data_is_stale() {
        let mut f = DeviceFsm::new(3);
        assert_eq!(f.step(FsmEvent::DataReady).unwrap().1, vec![FsmAction::DropStale]);
        f.step(FsmEvent::JoinGranted).unwrap();
        assert_eq!(f.step(FsmEvent::DataReady).unwrap().1, vec![FsmAction::DropStale]);
    }

    #[test]
    fn holdover_then_suspend() {
        let mut f = ready();
        for i in 1..=3 {
            f.step(FsmEvent::SyncAgeExpired).unwrap();
            let (t, a) = f.step(FsmEvent::SyncTimeout).unwrap();
            if i < 3 {
                assert_eq!(t.to, FsmState::Sleep);
                assert!(f.may_transmit());
            } else {
                assert_eq!(t.to, FsmState::Sync);
                assert!(a.contains(&FsmAction::SuspendUplinks));
                assert!(!f.may_transmit());
            }
        }
        assert_eq!(f.step(FsmEvent::DataReady).unwrap().1, vec![FsmAction::DropStale]);
        f.step(FsmEvent::SyncAgeExpired).unwrap();
        f.step(FsmEvent::SyncDone).unwrap();
        assert!(f.may_transmit());
    }

    #[test]
    fn undefined_pairs_are_rejected() {
        let mut f = ready();
        let err = f.step(FsmEvent::SlotBoundary).unwrap_err();
        assert_eq!(
            err,
            MacError::ProtocolViolation {
                state: FsmState::Sleep,
                event: FsmEvent::SlotBoundary
            }
        );
        assert_eq!(f.state(), FsmState::Sleep);
        assert!(DeviceFsm::new(3).step(FsmEvent::TxDone).is_err());
        assert!(DeviceFsm::new(3).step(FsmEvent::AllocGranted).is_err());
    }

    #[test]
    fn transition_csv() {
        let t = Transition {
            from: FsmState::Wait,
            event: FsmEvent::SlotBoundary,
            to: FsmState::Send,
        };
        assert_eq!(t.to_csv(1200.0, 4), "1200.000,4,WAIT,slot_boundary,SEND");
    }

    proptest! {
        #[test]
        fn send_requires_grant_and_sync(events in proptest::collection::vec(0usize..FsmEvent::ALL.len(), 0..200)) {
            let mut f = DeviceFsm::new(3);
            let mut granted = false;
            let mut synced = false;
            for i in events {
                let e = FsmEvent::ALL[i];
                if let Ok((t, _)) = f.step(e) {
                    granted |= e == FsmEvent::AllocGranted;
                    synced |= e == FsmEvent::SyncDone;
                    if t.to == FsmState::Send && t.from != FsmState::Send {
                        prop_assert!(granted && synced);
                        prop_assert_eq!(t.from, FsmState::Wait);
                    }
                }
            }
        }
    }
}
