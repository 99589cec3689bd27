//! Desk-scale simulation: seeded fixtures, scripted actors, random fuzzing
//! and the virtual clock.

pub mod clock;
pub mod fuzz;
pub mod script;
pub mod seed;

pub use clock::CalendarDuration;
pub use fuzz::{fuzz, fuzz_on, FuzzReport};
pub use script::{PlayReport, Player, Script, ScriptError};
pub use seed::{demo_start, seed, BeneficiaryEntry, Manifest, MerchantEntry, OrgEntry, Profile, QuotaEntry};
