//! Core of a text-to-image model auditing platform: staged audit sessions,
//! background image generation against inference providers, a
//! content-addressed image store, audit reports and a blinded battle arena.

pub mod arena;
pub mod clock;
pub mod orchestrator;
pub mod platform;
pub mod provider;
pub mod registry;
pub mod report;
pub mod retry;
pub mod session;
pub mod store;

pub use platform::{Platform, PlatformBuilder, PlatformError};
