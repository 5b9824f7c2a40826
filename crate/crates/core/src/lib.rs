//! Hands-on cryptography lessons: real primitives, simulated attacks, a
//! guided command terminal, a reflection coach and lesson analytics.

pub mod api;
pub mod channel;
pub mod coach;
pub mod crypto;
pub mod entropy;
pub mod lessons;
pub mod scenario;
pub mod terminal;
