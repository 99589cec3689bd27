//! Random actor runs with invariant checks after every step.

use chrono::Duration;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::seed::{seed, Manifest, Profile};
use crate::channels::AppFrame;
use crate::delivery::VoucherState;
use crate::domain::ChannelProfile;
use crate::error::Result;
use crate::journal::MemoryJournal;
use crate::orchestrator::Inbound;
use crate::platform::Platform;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FuzzReport {
    pub steps: usize,
    /// `(step, violation)` for every invariant broken after a step.
    pub violations: Vec<(usize, String)>,
    pub delivered: usize,
    pub cancelled: usize,
    pub open_sessions: usize,
    pub journal_events: u64,
}

impl FuzzReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty() && self.open_sessions == 0
    }
}

const QUOTA_CODES: [&str; 4] = ["FOOD", "BLANKET", "FOOD", "NOPE"];
const ITEM_CODES: [&str; 4] = ["OIL", "SUGAR", "BLANKET", "RICE"];
const GARBAGE: [&str; 6] = ["", "REQ", "OK 12", "HELLO", "REQ FOOD @X9", "OK 1234 5678"];

/// Runs `steps` random actions over a fresh demo fixture.
pub fn fuzz(seed_value: u64, steps: usize) -> Result<FuzzReport> {
    let mut platform = Platform::new(Box::new(MemoryJournal::new())).expect("empty journal replays");
    let manifest = seed(&mut platform, Profile::Demo)?;
    fuzz_on(&mut platform, &manifest, seed_value, steps)
}

fn random_qty(rng: &mut ChaCha8Rng) -> String {
    format!("{}.{:03}", rng.random_range(0..4), rng.random_range(0..4) * 250)
}

/// Runs `steps` random actions against `platform`, then lets every open
/// session time out.
pub fn fuzz_on(platform: &mut Platform, manifest: &Manifest, seed_value: u64, steps: usize) -> Result<FuzzReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
    let mut report = FuzzReport { steps, ..FuzzReport::default() };
    for step in 0..steps {
        perform_random(platform, manifest, &mut rng)?;
        for v in platform.state().check_invariants() {
            report.violations.push((step, v));
        }
    }
    let drain = platform.now() + platform.config().session_timeout + Duration::minutes(1);
    platform.advance_clock(drain)?;
    for v in platform.state().check_invariants() {
        report.violations.push((steps, v));
    }
    let state = platform.state();
    report.delivered = state.vouchers.values().filter(|v| v.state == VoucherState::Delivered).count();
    report.cancelled = state.vouchers.values().filter(|v| v.state == VoucherState::Cancelled).count();
    report.open_sessions = state.sessions.values().filter(|s| !s.is_closed()).count();
    report.journal_events = platform.last_seq();
    Ok(report)
}

fn perform_random(platform: &mut Platform, manifest: &Manifest, rng: &mut ChaCha8Rng) -> Result<()> {
    let b = manifest.beneficiaries.choose(rng).expect("fixture has beneficiaries").clone();
    let text = b.channel_profile == ChannelProfile::TextOnly;
    let roll = rng.random_range(0..100);
    let message = match roll {
        0..=19 => {
            let quota = *QUOTA_CODES.choose(rng).expect("non-empty");
            let merchant = rng.random_bool(0.2).then(|| manifest.merchants.choose(rng).expect("fixture has merchants").id);
            let items: Vec<(String, String)> =
                (0..rng.random_range(0..=2)).map(|_| (ITEM_CODES.choose(rng).expect("non-empty").to_string(), random_qty(rng))).collect();
            if text {
                let mut body = format!("REQ {quota}");
                if let Some(m) = merchant {
                    body.push_str(&format!(" @{m}"));
                }
                for (code, qty) in &items {
                    body.push_str(&format!(" {code}={qty}"));
                }
                Inbound::Text { mobile: b.mobile.clone(), body }
            } else {
                let items: serde_json::Map<String, serde_json::Value> = items.into_iter().map(|(c, q)| (c, json!(q))).collect();
                let mut body = json!({ "from": b.id, "quota": quota, "items": items });
                if let Some(m) = merchant {
                    body["merchant"] = json!(m);
                }
                Inbound::App(AppFrame { kind: "request".into(), session: None, body })
            }
        }
        20..=44 => {
            // Merchant side: act on a live session's voucher, or a stray id.
            let live: Vec<_> = platform.state().sessions.values().filter(|s| !s.is_closed() && s.voucher.is_some()).cloned().collect();
            let (merchant, voucher) = match live.choose(rng) {
                Some(s) if rng.random_bool(0.9) => (s.merchant, s.voucher.expect("filtered")),
                _ => (manifest.merchants.choose(rng).expect("non-empty").id, crate::ids::VoucherId(rng.random_range(1..40))),
            };
            let body = if rng.random_bool(0.6) {
                json!({ "from": merchant, "voucher": voucher, "item": ITEM_CODES.choose(rng).expect("non-empty"), "qty": random_qty(rng) })
            } else {
                json!({ "from": merchant, "voucher": voucher })
            };
            let kind = if body.get("item").is_some() { "adjust" } else { "submit" };
            Inbound::App(AppFrame { kind: kind.into(), session: None, body })
        }
        45..=69 => {
            // Confirm, preferring a beneficiary who has been asked to.
            let awaiting: Vec<_> = platform
                .state()
                .sessions
                .values()
                .filter(|s| s.phase == crate::orchestrator::Phase::AwaitBeneficiaryConfirm)
                .map(|s| s.beneficiary)
                .collect();
            let who = awaiting.choose(rng).and_then(|id| manifest.beneficiary(*id)).filter(|_| rng.random_bool(0.8)).cloned().unwrap_or(b);
            let pin = if rng.random_bool(0.75) { who.pin.clone() } else { format!("{:04}", rng.random_range(0..10_000)) };
            if who.channel_profile == ChannelProfile::TextOnly {
                Inbound::Text { mobile: who.mobile.clone(), body: format!("OK {pin}") }
            } else {
                Inbound::App(AppFrame { kind: "confirm".into(), session: None, body: json!({ "from": who.id, "pin": pin }) })
            }
        }
        70..=77 => {
            if text {
                Inbound::Text { mobile: b.mobile.clone(), body: "NO".into() }
            } else {
                Inbound::App(AppFrame { kind: "abandon".into(), session: None, body: json!({ "from": b.id }) })
            }
        }
        78..=83 => {
            if text {
                Inbound::Text { mobile: b.mobile.clone(), body: "BAL".into() }
            } else {
                let kind = if rng.random_bool(0.5) { "balance" } else { "sync" };
                Inbound::App(AppFrame { kind: kind.into(), session: None, body: json!({ "from": b.id }) })
            }
        }
        84..=89 => {
            let body = GARBAGE.choose(rng).expect("non-empty").to_string();
            let mobile = if rng.random_bool(0.8) { b.mobile.clone() } else { "0999".into() };
            if rng.random_bool(0.5) {
                Inbound::Text { mobile, body }
            } else {
                Inbound::App(AppFrame { kind: "request".into(), session: None, body: json!({ "from": "x", "quota": 3 }) })
            }
        }
        _ => {
            let ahead = if rng.random_bool(0.8) { Duration::minutes(rng.random_range(1..=20)) } else { Duration::days(rng.random_range(1..=40)) };
            platform.advance_clock(platform.now() + ahead)?;
            return Ok(());
        }
    };
    platform.handle_inbound(&message)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_fuzz_is_clean_and_deterministic() {
        let a = fuzz(7, 150).unwrap();
        assert!(a.clean(), "{:?}", a.violations);
        let b = fuzz(7, 150).unwrap();
        assert_eq!(a, b);
    }
}
