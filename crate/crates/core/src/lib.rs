//! TDMA scheduling over LoRaWAN with out-of-band time synchronisation,
//! plus pure ALOHA, slotted ALOHA and CSMA baselines, and a deterministic
//! discrete-event simulator to compare them.

pub mod config;
pub mod error;
pub mod experiment;
pub mod mac;
pub mod phy;
pub mod scheduler;
pub mod sim;
pub mod superframe;
pub mod sync;
