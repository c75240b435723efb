//! Delay-Doppler link-level library for CP-OTFS coexisting with OFDM frame
//! structures whose first symbol in every window carries a longer cyclic
//! prefix.
//!
//! The chain is `isfft -> modulate -> channel::apply -> demodulate -> sfft`;
//! [`effective`] gives the matching closed-form DD-domain model used by the
//! estimator in [`estimation`] and the message-passing detector in
//! [`detection`].

pub mod channel;
pub mod detection;
pub mod effective;
pub mod error;
pub mod estimation;
pub mod frame;
pub mod waveform;

pub use channel::{ChannelSpec, PathSpec, PowerDelayProfile};
pub use effective::{ChannelSource, EffectiveChannel, SpreadParams};
pub use error::{Error, Result};
pub use frame::{isfft, sfft, DdGrid, FrameConfig, TfGrid};
pub use waveform::{demodulate, modulate, SampleStream};
