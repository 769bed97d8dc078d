//! Compiles every chapter of the guide as rustdoc so `cargo test` runs its
//! snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/channel.md")]
pub mod channel {}
#[doc = include_str!("../../../book/src/mobility.md")]
pub mod mobility {}
#[doc = include_str!("../../../book/src/downlink.md")]
pub mod downlink {}
#[doc = include_str!("../../../book/src/uplink.md")]
pub mod uplink {}
#[doc = include_str!("../../../book/src/feedback.md")]
pub mod feedback {}
#[doc = include_str!("../../../book/src/update-interval.md")]
pub mod update_interval {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
