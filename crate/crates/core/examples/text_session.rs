//! A text-only beneficiary redeems at an app merchant. Every message in and
//! out is printed as it would cross the wire.

use chrono::Duration;
use serde_json::json;

use subsidy::channels::AppFrame;
use subsidy::journal::MemoryJournal;
use subsidy::orchestrator::{Inbound, OutboundAction};
use subsidy::sim::{demo_start, seed, Profile};
use subsidy::{BeneficiaryId, Platform};

fn show(out: &[OutboundAction]) {
    for action in out {
        match action.text() {
            Some(body) => println!("  -> {}|{body}", action.to),
            None => println!("  -> {} frame {:?}", action.to, action.app()),
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut platform = Platform::new(Box::new(MemoryJournal::new()))?;
    let manifest = seed(&mut platform, Profile::Demo)?;
    platform.advance_clock(demo_start() + Duration::days(3))?;
    let b3 = manifest.beneficiary(BeneficiaryId(3)).ok_or("demo has B3")?.clone();

    let text = |body: &str| Inbound::Text { mobile: b3.mobile.clone(), body: body.into() };
    let merchant = |kind: &str, body| Inbound::App(AppFrame { kind: kind.into(), session: None, body });

    let steps = [
        ("beneficiary", text("REQ FOOD")),
        ("merchant", merchant("adjust", json!({ "from": 1, "voucher": 1, "item": "SUGAR", "qty": "1.000" }))),
        ("merchant", merchant("submit", json!({ "from": 1, "voucher": 1 }))),
        ("beneficiary", text("OK 9999")),
        ("beneficiary", text(&format!("OK {}", b3.pin))),
        ("beneficiary", text("BAL")),
    ];
    for (who, message) in steps {
        match &message {
            Inbound::Text { body, .. } => println!("{who}: {body}"),
            Inbound::App(frame) => println!("{who}: {} {}", frame.kind, frame.body),
        }
        match platform.handle_inbound(&message) {
            Ok(out) => show(&out),
            Err(e) => println!("  rejected: {}", e.code()),
        }
    }
    println!("balance of B3: {}", platform.state().beneficiaries[&b3.id].cash_balance);
    Ok(())
}
