//! Multi-channel subsidy distribution.
//!
//! Organizations define quotas of subsidized items; a periodic charging
//! cycle grants every enrolled beneficiary an entitlement per period; the
//! beneficiary redeems it at a merchant through a voucher whose quantities
//! may be reduced before delivery, with the unused subsidy refunded to the
//! beneficiary's cash balance.
//!
//! Beneficiaries reach the platform over plain text messages or a phone
//! app; merchants use the app. The [`orchestrator`] turns both into the same
//! engine calls, so the ledger never depends on the channel.
//!
//! Every change is an event in an append-only [`journal`]; [`State`] is a
//! fold over it and [`Platform`] keeps the two in step.

pub mod channels;
pub mod delivery;
pub mod domain;
pub mod error;
pub mod gateway;
pub mod ids;
pub mod journal;
pub mod money;
pub mod orchestrator;
pub mod platform;
pub mod quota;
pub mod service;
pub mod sim;
pub mod state;

pub use error::{Error, Result};
pub use ids::*;
pub use money::{Money, Quantity};
pub use platform::Platform;
pub use state::{EventPayload, State, Tx};
