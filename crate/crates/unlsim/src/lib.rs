//! Deterministic protocol library and discrete-event network simulator for
//! UNL-based consensus overlays.
//!
//! The crate builds three comparable network designs — a random sparse
//! topology (`SimC`), a scaled-up random topology (`SimRM`), and a
//! Kelips-style affinity-group overlay (`SimK`) — and runs seeded
//! information-propagation and consensus experiments over them under
//! malicious-node and degraded-network scenarios.
//!
//! Module map:
//! * [`overlay`] — topology construction, trust-list structures, path census
//! * [`membership`] — dynamic list maintenance: liveness states, node join,
//!   trust tokens, node leave, UNL-B replenishment
//! * [`consensus`] — candidate-set and proposal machinery, threshold
//!   schedules, overlap/threshold algebra
//! * [`netsim`] — the seeded event loop: one scenario case end to end
//! * [`analysis`] — severity presets, batch runs, aggregate statistics,
//!   cross-variant comparison, CSV/JSON emission

pub mod analysis;
pub mod consensus;
pub mod membership;
pub mod netsim;
pub mod overlay;

/// Node identifier. Nodes are numbered `0..N`.
pub type NodeId = u16;
