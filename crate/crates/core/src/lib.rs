//! Discrete-event simulator of a single-BSS Wi-Fi 7 network carrying
//! split-rendering VR traffic, comparing single-link operation (SLO) with
//! multi-link operation in STR mode (MLO), and checking packet-delay
//! percentiles against the Wi-Fi Alliance VR gaming thresholds.

pub mod engine;
pub mod error;
pub mod experiments;
pub mod mac;
pub mod metrics;
pub mod mld;
pub mod phy;
pub mod traffic;

pub use error::{Result, SimError};
