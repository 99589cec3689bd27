use chrono::Duration;
use serde_json::json;

use subsidy::channels::{AppFrame, AppOutbound};
use subsidy::delivery::{CancelReason, VoucherState};
use subsidy::journal::MemoryJournal;
use subsidy::orchestrator::{Address, Inbound, OrchestratorConfig, OutboundAction, Outcome, Phase};
use subsidy::quota::EntitlementStatus;
use subsidy::sim::{seed, BeneficiaryEntry, Manifest, Profile};
use subsidy::{BeneficiaryId, EventPayload, MerchantId, Money, Platform, VoucherId};

fn demo() -> (Platform, Manifest) {
    let mut platform = Platform::new(Box::new(MemoryJournal::new())).unwrap();
    let manifest = seed(&mut platform, Profile::Demo).unwrap();
    platform.advance_clock(subsidy::sim::demo_start() + Duration::days(4)).unwrap();
    (platform, manifest)
}

fn b(manifest: &Manifest, n: u64) -> BeneficiaryEntry {
    manifest.beneficiary(BeneficiaryId(n)).unwrap().clone()
}

fn text(who: &BeneficiaryEntry, body: &str) -> Inbound {
    Inbound::Text { mobile: who.mobile.clone(), body: body.into() }
}

fn app(kind: &str, body: serde_json::Value) -> Inbound {
    Inbound::App(AppFrame { kind: kind.into(), session: None, body })
}

fn texts_to(out: &[OutboundAction], who: &BeneficiaryEntry) -> Vec<String> {
    out.iter().filter(|a| a.to == Address::Mobile(who.mobile.clone())).filter_map(|a| a.text().map(str::to_owned)).collect()
}

fn frames_to(out: &[OutboundAction], to: Address) -> Vec<AppOutbound> {
    out.iter().filter(|a| a.to == to).filter_map(OutboundAction::app).collect()
}

fn merchant(n: u64) -> Address {
    Address::Merchant(MerchantId(n))
}

fn phase(platform: &Platform, who: BeneficiaryId) -> Option<Phase> {
    platform.state().sessions.values().rfind(|s| s.beneficiary == who).map(|s| s.phase)
}

fn entitlement(platform: &Platform, who: BeneficiaryId) -> EntitlementStatus {
    platform.state().entitlements.values().find(|e| e.beneficiary == who && e.schedule.0 == 1).unwrap().status
}

#[test]
fn text_beneficiary_with_app_merchant() {
    let (mut p, m) = demo();
    let b1 = b(&m, 1);

    let out = p.handle_inbound(&text(&b1, "REQ FOOD")).unwrap();
    let drafts = frames_to(&out, merchant(1));
    let Some(AppOutbound::Draft { voucher }) = drafts.first() else { panic!("no draft: {out:?}") };
    assert_eq!(voucher.id, VoucherId(1));
    assert_eq!(phase(&p, b1.id), Some(Phase::DraftOpen));
    assert_eq!(entitlement(&p, b1.id), EntitlementStatus::Claimed);

    let out = p.handle_inbound(&app("adjust", json!({ "from": 1, "voucher": 1, "item": "oil", "qty": "0.250" }))).unwrap();
    assert!(matches!(frames_to(&out, merchant(1))[0], AppOutbound::Draft { .. }));
    assert_eq!(phase(&p, b1.id), Some(Phase::AwaitMerchantAdjust));

    let out = p.handle_inbound(&app("submit", json!({ "from": 1, "voucher": 1 }))).unwrap();
    // B1 counts one person. Pays OIL 0.250 x 15.00 + SUGAR 1.000 x 5.00;
    // the 0.250 OIL left behind refunds at the 3.00 gap.
    assert_eq!(texts_to(&out, &b1), vec!["CONFIRM V1 PAY 8.75 REFUND 0.75 REPLY OK <pin>".to_string()]);
    assert_eq!(phase(&p, b1.id), Some(Phase::AwaitBeneficiaryConfirm));

    let out = p.handle_inbound(&text(&b1, &format!("OK {}", b1.pin))).unwrap();
    assert_eq!(texts_to(&out, &b1), vec!["DONE V1 OIL=0.250 SUGAR=1.000 REFUND 0.75".to_string()]);
    assert!(matches!(frames_to(&out, merchant(1))[0], AppOutbound::Receipt { .. }));
    assert_eq!(phase(&p, b1.id), Some(Phase::Closed(Outcome::Delivered)));
    assert_eq!(p.state().vouchers[&VoucherId(1)].state, VoucherState::Delivered);
    assert_eq!(p.state().beneficiaries[&b1.id].cash_balance, Money::from_piasters(75));

    let out = p.handle_inbound(&text(&b1, "bal")).unwrap();
    assert_eq!(texts_to(&out, &b1), vec!["BALANCE 0.75".to_string()]);
    let out = p.handle_inbound(&text(&b1, "REQ FOOD")).unwrap();
    assert_eq!(texts_to(&out, &b1), vec!["ERR NO_OPEN_ENTITLEMENT".to_string()]);
}

#[test]
fn app_beneficiary_gets_frames() {
    let (mut p, m) = demo();
    let b2 = b(&m, 2);
    let me = Address::Beneficiary(b2.id);

    let out = p.handle_inbound(&app("sync", json!({ "from": 2 }))).unwrap();
    let Some(AppOutbound::Sync { payload }) = frames_to(&out, me.clone()).into_iter().next() else { panic!("{out:?}") };
    assert_eq!(payload.preferred_merchant, Some(MerchantId(1)));
    assert!(payload.catalog.iter().any(|c| c.quota_code == "FOOD"));

    p.handle_inbound(&app("request", json!({ "from": 2, "quota": "food", "items": { "SUGAR": "1.000" } }))).unwrap();
    let out = p.handle_inbound(&app("submit", json!({ "from": 1, "voucher": 1 }))).unwrap();
    assert!(matches!(frames_to(&out, me.clone())[0], AppOutbound::ConfirmRequest { .. }));
    let out = p.handle_inbound(&app("confirm", json!({ "from": 2, "pin": b2.pin }))).unwrap();
    let Some(AppOutbound::Receipt { receipt }) = frames_to(&out, me).into_iter().next() else { panic!("{out:?}") };
    // Two persons, SUGAR 2.000 limited to 1.000 at a 7.00 gap.
    assert_eq!(receipt.refund, Money::from_piasters(700));
}

#[test]
fn idle_session_times_out() {
    let (mut p, m) = demo();
    let b1 = b(&m, 1);
    p.handle_inbound(&text(&b1, "REQ FOOD")).unwrap();
    let start = p.now();

    let report = p.advance_clock(start + Duration::minutes(14)).unwrap();
    assert_eq!(report.expired_sessions, 0);
    let report = p.advance_clock(start + Duration::minutes(16)).unwrap();
    assert_eq!(report.expired_sessions, 1);
    let out: Vec<OutboundAction> = report.outbound.into_iter().map(|(_, a)| a).collect();
    assert_eq!(texts_to(&out, &b1), vec!["ERR SESSION_TIMEOUT".to_string()]);
    assert_eq!(frames_to(&out, merchant(1)), vec![AppOutbound::Cancelled { voucher: VoucherId(1), reason: CancelReason::TimedOut }]);
    assert_eq!(phase(&p, b1.id), Some(Phase::Closed(Outcome::TimedOut)));
    assert_eq!(entitlement(&p, b1.id), EntitlementStatus::Open);

    // The entitlement can be claimed again.
    let out = p.handle_inbound(&text(&b1, "REQ FOOD")).unwrap();
    let Some(AppOutbound::Draft { voucher }) = frames_to(&out, merchant(1)).into_iter().next() else { panic!("{out:?}") };
    assert_eq!(voucher.id, VoucherId(2));
}

#[test]
fn activity_pushes_the_deadline() {
    let (p, m) = demo();
    let mut p = p.with_config(OrchestratorConfig { session_timeout: Duration::minutes(5) });
    let b1 = b(&m, 1);
    p.handle_inbound(&text(&b1, "REQ FOOD")).unwrap();
    let start = p.now();
    p.advance_clock(start + Duration::minutes(4)).unwrap();
    p.handle_inbound(&app("adjust", json!({ "from": 1, "voucher": 1, "item": "OIL", "qty": "0" }))).unwrap();
    let report = p.advance_clock(start + Duration::minutes(8)).unwrap();
    assert_eq!(report.expired_sessions, 0);
    let report = p.advance_clock(start + Duration::minutes(9)).unwrap();
    assert_eq!(report.expired_sessions, 1);
}

#[test]
fn three_wrong_pins_lock_the_voucher() {
    let (mut p, m) = demo();
    let b1 = b(&m, 1);
    p.handle_inbound(&text(&b1, "REQ FOOD")).unwrap();
    p.handle_inbound(&app("submit", json!({ "from": 1, "voucher": 1 }))).unwrap();
    for _ in 0..2 {
        let out = p.handle_inbound(&text(&b1, "OK 0000")).unwrap();
        assert_eq!(texts_to(&out, &b1), vec!["ERR INVALID_PIN".to_string()]);
    }
    let out = p.handle_inbound(&text(&b1, "OK 0000")).unwrap();
    assert_eq!(texts_to(&out, &b1), vec!["CANCELLED V1".to_string()]);
    assert_eq!(frames_to(&out, merchant(1)), vec![AppOutbound::Cancelled { voucher: VoucherId(1), reason: CancelReason::PinLocked }]);
    assert_eq!(phase(&p, b1.id), Some(Phase::Closed(Outcome::PinLocked)));
    assert_eq!(entitlement(&p, b1.id), EntitlementStatus::Open);
    assert_eq!(p.state().beneficiaries[&b1.id].cash_balance, Money::ZERO);
}

#[test]
fn out_of_order_messages_are_refused() {
    let (mut p, m) = demo();
    let b1 = b(&m, 1);
    let out = p.handle_inbound(&text(&b1, &format!("OK {}", b1.pin))).unwrap();
    assert_eq!(texts_to(&out, &b1), vec!["ERR NO_ACTIVE_SESSION".to_string()]);

    p.handle_inbound(&text(&b1, "REQ FOOD")).unwrap();
    let out = p.handle_inbound(&text(&b1, &format!("OK {}", b1.pin))).unwrap();
    assert_eq!(texts_to(&out, &b1), vec!["ERR PHASE_VIOLATION".to_string()]);
    let out = p.handle_inbound(&text(&b1, "REQ FOOD")).unwrap();
    assert_eq!(texts_to(&out, &b1), vec!["ERR SESSION_ACTIVE".to_string()]);

    let out = p.handle_inbound(&app("adjust", json!({ "from": 2, "voucher": 1, "item": "OIL", "qty": "0" }))).unwrap();
    assert_eq!(frames_to(&out, merchant(2)), vec![AppOutbound::Notice { code: "UNAUTHORIZED".into() }]);
    let out = p.handle_inbound(&app("adjust", json!({ "from": 1, "voucher": 1, "item": "OIL", "qty": "9" }))).unwrap();
    assert_eq!(frames_to(&out, merchant(1)), vec![AppOutbound::Notice { code: "QUANTITY_OUT_OF_RANGE".into() }]);

    p.handle_inbound(&app("submit", json!({ "from": 1, "voucher": 1 }))).unwrap();
    let out = p.handle_inbound(&app("adjust", json!({ "from": 1, "voucher": 1, "item": "OIL", "qty": "0" }))).unwrap();
    assert_eq!(frames_to(&out, merchant(1)), vec![AppOutbound::Notice { code: "PHASE_VIOLATION".into() }]);
    assert_eq!(p.state().vouchers[&VoucherId(1)].details[0].actual_qty.milli(), 500);
    assert!(p.state().check_invariants().is_empty());
}

#[test]
fn text_only_merchant_has_no_roadmap() {
    let (mut p, m) = demo();
    let b1 = b(&m, 1);
    let ledger = serde_json::to_vec(&p.state().ledger()).unwrap();
    let out = p.handle_inbound(&text(&b1, "REQ FOOD @M3")).unwrap();
    assert_eq!(texts_to(&out, &b1), vec!["ERR UNSUPPORTED_COMBINATION".to_string()]);
    assert_eq!(serde_json::to_vec(&p.state().ledger()).unwrap(), ledger);
    assert!(p.state().sessions.is_empty());

    let out = p.handle_inbound(&app("sync", json!({ "from": 1 }))).unwrap();
    assert_eq!(frames_to(&out, Address::Beneficiary(b1.id)), vec![AppOutbound::Notice { code: "NOT_APP_CAPABLE".into() }]);
}

#[test]
fn abandon_cancels_and_reopens() {
    let (mut p, m) = demo();
    let b1 = b(&m, 1);
    p.handle_inbound(&text(&b1, "REQ FOOD")).unwrap();
    let out = p.handle_inbound(&text(&b1, "NO")).unwrap();
    assert_eq!(texts_to(&out, &b1), vec!["CANCELLED V1".to_string()]);
    assert_eq!(phase(&p, b1.id), Some(Phase::Closed(Outcome::Abandoned)));
    assert_eq!(entitlement(&p, b1.id), EntitlementStatus::Open);
}

#[test]
fn garbage_gets_a_reply_and_changes_nothing() {
    let (mut p, m) = demo();
    let b1 = b(&m, 1);
    let before = serde_json::to_vec(&p.state().ledger()).unwrap();
    for body in ["", "HELLO", "REQ", "REQ FOOD OIL=x", "OK 12"] {
        let out = p.handle_inbound(&text(&b1, body)).unwrap();
        assert_eq!(texts_to(&out, &b1), vec!["ERR PARSE_ERROR".to_string()], "{body:?}");
    }
    let out = p.handle_inbound(&Inbound::Text { mobile: "0999".into(), body: "BAL".into() }).unwrap();
    assert_eq!(out[0].text(), Some("ERR UNKNOWN_BENEFICIARY"));
    let out = p.handle_inbound(&app("request", json!({ "from": "x" }))).unwrap();
    assert_eq!(out[0].app(), Some(AppOutbound::Notice { code: "BAD_FRAME".into() }));
    let out = p.handle_inbound(&text(&b1, "REQ FOOD RICE=1")).unwrap();
    assert_eq!(texts_to(&out, &b1), vec!["ERR UNKNOWN_ITEM".to_string()]);
    assert_eq!(serde_json::to_vec(&p.state().ledger()).unwrap(), before);
}

#[test]
fn transcript_never_holds_a_pin() {
    let (mut p, m) = demo();
    let b1 = b(&m, 1);
    let b2 = b(&m, 2);
    p.handle_inbound(&text(&b1, "REQ FOOD")).unwrap();
    p.handle_inbound(&app("submit", json!({ "from": 1, "voucher": 1 }))).unwrap();
    p.handle_inbound(&text(&b1, &format!("OK {}", b1.pin))).unwrap();
    p.handle_inbound(&app("request", json!({ "from": 2, "quota": "FOOD" }))).unwrap();
    p.handle_inbound(&app("submit", json!({ "from": 1, "voucher": 2 }))).unwrap();
    p.handle_inbound(&app("confirm", json!({ "from": 2, "pin": b2.pin }))).unwrap();
    let events = p.journal().read_all().unwrap();
    let bodies: Vec<String> = events
        .iter()
        .filter_map(|e| match &e.payload {
            EventPayload::MessageIn { body, .. } | EventPayload::MessageOut { body, .. } => Some(body.clone()),
            _ => None,
        })
        .collect();
    assert!(bodies.len() >= 12);
    assert!(bodies.iter().any(|b| b == "OK ****"));
    for body in &bodies {
        assert!(!body.contains(&b1.pin) && !body.contains(&b2.pin), "{body}");
    }
}

#[test]
fn charging_notifies_each_beneficiary_on_its_channel() {
    let (mut p, m) = demo();
    let report = p.advance_clock(subsidy::sim::demo_start() + Duration::days(31)).unwrap();
    assert_eq!(report.cycles.len(), 1);
    let out: Vec<OutboundAction> = report.outbound.into_iter().map(|(_, a)| a).collect();
    assert_eq!(texts_to(&out, &b(&m, 1)), vec!["CHARGED FOOD P1".to_string()]);
    assert_eq!(frames_to(&out, Address::Beneficiary(BeneficiaryId(2))), vec![AppOutbound::Charged { quota: "FOOD".into(), period: 1 }]);
    assert_eq!(out.len(), m.beneficiaries.len());
}
