//! Gateway receive side: one demodulation path per channel.

use std::collections::BTreeMap;

use crate::phy::{resolve_one, LinkModel, ReceptionOutcome, Transmission};

#[derive(Debug, Clone, Default)]
struct ChannelState {
    in_flight: BTreeMap<u64, Transmission>,
    /// Finished frames that may still overlap something in flight or a
    /// recent sensing window.
    ended: Vec<Transmission>,
}

#[derive(Debug, Clone)]
pub struct Gateway {
    link: LinkModel,
    channels: Vec<ChannelState>,
    retain_ms: f64,
    next_id: u64,
}

impl Gateway {
    /// `retain_ms` keeps finished frames around for look-back queries.
    pub fn new(link: LinkModel, channels: usize, retain_ms: f64) -> Self {
        Gateway {
            link,
            channels: vec![ChannelState::default(); channels],
            retain_ms,
            next_id: 0,
        }
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn in_flight(&self, channel: usize) -> usize {
        self.channels[channel].in_flight.len()
    }

    /// Puts a frame on the air and returns its handle.
    pub fn begin(&mut self, tx: Transmission) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.channels[tx.channel_index].in_flight.insert(id, tx);
        id
    }

    /// Closes frame `id` at its end time and decides its fate against
    /// everything that overlapped it.
    pub fn finish(&mut self, channel: usize, id: u64, now_ms: f64) -> Option<(Transmission, ReceptionOutcome)> {
        let ch = &mut self.channels[channel];
        let tx = ch.in_flight.remove(&id)?;
        let outcome = resolve_one(&tx, ch.in_flight.values().chain(ch.ended.iter()), &self.link);
        ch.ended.push(tx.clone());
        let horizon = ch
            .in_flight
            .values()
            .map(|t| t.start_time_ms)
            .fold(now_ms - self.retain_ms, f64::min);
        ch.ended.retain(|t| t.end_time_ms() > horizon);
        Some((tx, outcome))
    }

    /// Frames on `channel` overlapping `[start, end)`, finished or not.
    pub fn overlapping(&self, channel: usize, start_ms: f64, end_ms: f64) -> impl Iterator<Item = &Transmission> {
        let ch = &self.channels[channel];
        ch.in_flight
            .values()
            .chain(ch.ended.iter())
            .filter(move |t| t.start_time_ms < end_ms && start_ms < t.end_time_ms())
    }
}
