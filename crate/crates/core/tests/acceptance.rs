//! Acceptance run: one PASS/FAIL line per primary criterion.
//!
//! Every check compares the engine against an oracle written here from
//! first principles, not against the engine's own helpers.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;

use chrono::{Datelike, Duration, NaiveDateTime};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use common::{at, fixture, item, Fixture, FixtureSpec, PIN};
use subsidy::channels::app::{CatalogEntry, EntitlementView, QuotaSummary};
use subsidy::channels::{
    compose_text, decode_frame, encode_frame, parse_outbound, parse_text, reassemble, AppFrame, AppInbound, AppOutbound, InboundText, OutboundText,
    SyncPayload, VoucherView, MAX_TEXT_LEN,
};
use subsidy::delivery::{compute_totals, CancelReason, DeliveryReceipt, Voucher, VoucherDetail, VoucherState};
use subsidy::domain::ChannelProfile;
use subsidy::journal::{canonical_json, FileJournal, Snapshot};
use subsidy::orchestrator::Inbound;
use subsidy::quota::{Basis, EntitlementStatus, ItemAvailability, ItemSpec, QuotaItem};
use subsidy::service::reports;
use subsidy::sim::{fuzz, fuzz_on, seed, Profile};
use subsidy::{BeneficiaryId, Error, ItemId, MerchantId, Money, Platform, Quantity, QuotaId, ScheduleId, SessionId, State, Tx, VoucherId};

type Outcome = Result<String, String>;

fn ensure(cond: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

const ITEM_POOL: [&str; 8] = ["OIL", "SUGAR", "RICE", "TEA", "FLOUR", "BEANS", "PASTA", "GHEE"];

fn random_items(rng: &mut ChaCha8Rng) -> Vec<ItemSpec> {
    let count = rng.random_range(1..=4);
    let names: Vec<&str> = ITEM_POOL.choose_multiple(rng, count).copied().collect();
    names
        .into_iter()
        .map(|name| {
            let merchant = rng.random_range(0..=5000);
            let consumer = rng.random_range(0..=merchant);
            let org = rng.random_range(0..=merchant);
            item(name, rng.random_range(1..=5000), merchant, consumer, org)
        })
        .collect()
}

fn random_spec(rng: &mut ChaCha8Rng) -> FixtureSpec {
    FixtureSpec {
        basis: if rng.random_bool(0.5) { Basis::Personal } else { Basis::Family },
        family_size: rng.random_range(1..=10),
        max_persons: if rng.random_bool(0.3) { None } else { Some(rng.random_range(1..=8)) },
        items: random_items(rng),
        channel: ChannelProfile::AppCapable,
    }
}

fn open_full(f: &mut Fixture) -> subsidy::Result<VoucherId> {
    let (b, m, q, s) = (f.beneficiary, f.merchant, f.quota, f.schedule);
    f.platform.execute(|tx| tx.open_voucher(b, m, q, s, None))
}

// ---------------------------------------------------------------------------

fn charging_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4A7);
    let mut rows = 0;
    for case in 0..200 {
        let spec = random_spec(&mut rng);
        let (basis, family, cap, specs) = (spec.basis, spec.family_size, spec.max_persons, spec.items.clone());
        let mut f = fixture(spec);
        let id = open_full(&mut f).map_err(|e| format!("case {case}: open failed: {e}"))?;

        // Brute force: add the per-person quantity once for every person counted.
        let persons = match basis {
            Basis::Personal => 1,
            Basis::Family => cap.map_or(family, |c| family.min(c)),
        };
        let expected: Vec<(String, i64, i64, i64, i64)> = specs
            .iter()
            .map(|s| {
                let mut formal = 0i64;
                for _ in 0..persons {
                    formal += s.qty_per_person.milli();
                }
                (s.name.clone(), formal, s.unit_merchant_price.piasters(), s.unit_consumer_price.piasters(), s.unit_org_cost.piasters())
            })
            .collect();
        let rows_of = |v: &Voucher| -> Vec<(String, i64, i64, i64, i64)> {
            v.details
                .iter()
                .map(|d| {
                    (
                        d.name.clone(),
                        d.formal_qty.milli(),
                        d.unit_merchant_price.piasters(),
                        d.unit_consumer_price.piasters(),
                        d.unit_org_cost.piasters(),
                    )
                })
                .collect()
        };
        let voucher = f.platform.state().vouchers[&id].clone();
        ensure(rows_of(&voucher) == expected, || format!("case {case}: {:?} != {:?}", rows_of(&voucher), expected))?;
        ensure(voucher.details.iter().all(|d| d.actual_qty == d.formal_qty), || format!("case {case}: actual differs"))?;

        // Later price edits must not reach the open voucher.
        let repriced: Vec<ItemSpec> = specs
            .iter()
            .map(|s| ItemSpec {
                unit_merchant_price: s.unit_merchant_price + Money::from_piasters(100),
                unit_org_cost: s.unit_org_cost + Money::from_piasters(7),
                ..s.clone()
            })
            .collect();
        let (admin, schedule) = (f.admin, f.schedule);
        f.platform.execute(|tx| tx.set_items(admin, schedule, repriced)).map_err(|e| format!("case {case}: repricing failed: {e}"))?;
        let after = f.platform.state().vouchers[&id].clone();
        ensure(rows_of(&after) == expected, || format!("case {case}: prices not frozen"))?;
        rows += expected.len();
    }
    Ok(format!("200 fixtures, {rows} detail rows exact"))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Open,
    UpdateQty,
    Confirm,
    Cancel,
}

const OPS: [Op; 4] = [Op::Open, Op::UpdateQty, Op::Confirm, Op::Cancel];

/// Reference model of one entitlement and the vouchers opened against it.
#[derive(Default)]
struct Model {
    vouchers: Vec<VoucherState>,
}

impl Model {
    fn latest(&self) -> Option<(VoucherId, VoucherState)> {
        self.vouchers.last().map(|s| (VoucherId(self.vouchers.len() as u64), *s))
    }

    fn step(&mut self, op: Op) -> Result<(), Error> {
        match op {
            Op::Open => {
                // A second open for the same entitlement, whether the first
                // is still open or already delivered.
                if self.vouchers.iter().any(|s| *s != VoucherState::Cancelled) {
                    return Err(Error::DuplicateVoucher);
                }
                self.vouchers.push(VoucherState::NotDelivered);
                Ok(())
            }
            _ => {
                let Some((_, state)) = self.latest() else {
                    return Err(Error::UnknownVoucher(VoucherId(1)));
                };
                if state != VoucherState::NotDelivered {
                    return Err(Error::VoucherClosed);
                }
                let last = self.vouchers.last_mut().expect("latest exists");
                match op {
                    Op::Confirm => *last = VoucherState::Delivered,
                    Op::Cancel => *last = VoucherState::Cancelled,
                    _ => {}
                }
                Ok(())
            }
        }
    }

    fn entitlement(&self) -> EntitlementStatus {
        if self.vouchers.iter().any(|s| *s != VoucherState::Cancelled) {
            EntitlementStatus::Claimed
        } else {
            EntitlementStatus::Open
        }
    }
}

fn run_op(tx: &mut Tx, f: &Fixture, op: Op) -> subsidy::Result<()> {
    let target = tx.state().vouchers.keys().next_back().copied().unwrap_or(VoucherId(1));
    match op {
        Op::Open => tx.open_voucher(f.beneficiary, f.merchant, f.quota, f.schedule, None).map(|_| ()),
        Op::UpdateQty => {
            let formal = tx.state().vouchers.get(&target).map_or(Quantity::ZERO, |v| v.details[0].formal_qty);
            tx.update_qty(target, f.items[0], Quantity::from_milli(formal.milli() / 2).unwrap())
        }
        Op::Confirm => tx.confirm_delivery(target, PIN).map(|_| ()),
        Op::Cancel => tx.cancel_voucher(target, CancelReason::Requested),
    }
}

fn state_machine() -> Outcome {
    let f = fixture(FixtureSpec::default());
    let base = f.platform.state().clone();
    let now = f.platform.now();
    let key = *base.entitlements.keys().next().expect("fixture is charged");
    let mut sequences = 0usize;
    let mut failures = 0usize;
    for len in 0..=6u32 {
        for code in 0..4usize.pow(len) {
            let ops: Vec<Op> = (0..len).map(|i| OPS[(code / 4usize.pow(i)) % 4]).collect();
            let mut state: State = base.clone();
            let mut model = Model::default();
            for (step, op) in ops.iter().enumerate() {
                let expected = model.step(*op);
                let mut tx = Tx::new(state.clone(), now);
                let got = run_op(&mut tx, &f, *op);
                ensure(got == expected, || format!("{ops:?} step {step}: engine {got:?}, model {expected:?}"))?;
                match got {
                    Ok(()) => state = tx.into_parts().0,
                    Err(_) => failures += 1,
                }
            }
            let states: Vec<VoucherState> = state.vouchers.values().map(|v| v.state).collect();
            ensure(states == model.vouchers, || format!("{ops:?}: vouchers {states:?}, model {:?}", model.vouchers))?;
            ensure(state.entitlements[&key].status == model.entitlement(), || format!("{ops:?}: entitlement status"))?;
            let delivered = states.iter().filter(|s| **s == VoucherState::Delivered).count();
            ensure(delivered <= 1, || format!("{ops:?}: {delivered} delivered vouchers for one entitlement"))?;
            let violations = state.check_invariants();
            ensure(violations.is_empty(), || format!("{ops:?}: {violations:?}"))?;
            sequences += 1;
        }
    }
    Ok(format!("{sequences} sequences, {failures} rejected steps all with the modelled error"))
}

// ---------------------------------------------------------------------------

/// `x / 1000` rounded half-up, for non-negative `x`.
fn milli_round(x: i128) -> i64 {
    ((2 * x + 1000) / 2000) as i64
}

fn refund_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x2EF0);
    let mut full = 0;
    for case in 0..500 {
        let mut f = fixture(random_spec(&mut rng));
        let id = open_full(&mut f).map_err(|e| format!("case {case}: {e}"))?;
        let details = f.platform.state().vouchers[&id].details.clone();
        let deliver_all = rng.random_bool(0.2);
        let mut expected = 0i64;
        for d in &details {
            let formal = d.formal_qty.milli();
            let actual = if deliver_all { formal } else { rng.random_range(0..=formal) };
            let gap = i128::from(d.unit_merchant_price.piasters() - d.unit_consumer_price.piasters());
            expected += milli_round(i128::from(formal - actual) * gap);
            if actual != formal {
                let item = d.item_id;
                f.platform.execute(|tx| tx.update_qty(id, item, Quantity::from_milli(actual).unwrap())).map_err(|e| format!("case {case}: {e}"))?;
            }
        }
        let before = f.platform.state().beneficiaries[&f.beneficiary].cash_balance;
        f.platform.execute(|tx| tx.confirm_delivery(id, PIN)).map_err(|e| format!("case {case}: {e}"))?;
        let after = f.platform.state().beneficiaries[&f.beneficiary].cash_balance;
        let delta = (after - before).piasters();
        ensure(delta == expected, || format!("case {case}: balance moved {delta}, expected {expected}"))?;
        if deliver_all {
            ensure(delta == 0, || format!("case {case}: full delivery refunded {delta}"))?;
            full += 1;
        }
        ensure(f.platform.state().vouchers[&id].state == VoucherState::Delivered, || format!("case {case}: not delivered"))?;
    }
    Ok(format!("500 deliveries exact, {full} full deliveries refunded 0"))
}

// ---------------------------------------------------------------------------

fn app(kind: &str, body: serde_json::Value) -> Inbound {
    Inbound::App(AppFrame { kind: kind.into(), session: None, body })
}

type LedgerSuffix = Vec<(NaiveDateTime, String)>;

/// Runs the same logical choices over one channel and returns the
/// non-transcript journal suffix and the ledger bytes.
fn drive(channel: ChannelProfile) -> Result<(LedgerSuffix, Vec<u8>), String> {
    let mut f = fixture(FixtureSpec { channel, ..FixtureSpec::default() });
    let setup = f.platform.last_seq();
    let (b, m, mobile) = (f.beneficiary, f.merchant, f.mobile.clone());
    let text = channel == ChannelProfile::TextOnly;
    let steps: Vec<(&str, Inbound)> = vec![
        (
            "2024-01-10T10:00",
            if text {
                Inbound::Text { mobile: mobile.clone(), body: "REQ FOOD".into() }
            } else {
                app("request", json!({ "from": b, "quota": "FOOD" }))
            },
        ),
        ("2024-01-10T10:01", app("adjust", json!({ "from": m, "voucher": 1, "item": "OIL", "qty": "0.000" }))),
        ("2024-01-10T10:02", app("adjust", json!({ "from": m, "voucher": 1, "item": "SUGAR", "qty": "1.500" }))),
        ("2024-01-10T10:03", app("submit", json!({ "from": m, "voucher": 1 }))),
        (
            "2024-01-10T10:04",
            if text { Inbound::Text { mobile: mobile.clone(), body: format!("OK {PIN}") } } else { app("confirm", json!({ "from": b, "pin": PIN })) },
        ),
    ];
    for (when, message) in steps {
        f.platform.advance_clock(at(when)).map_err(|e| e.to_string())?;
        f.platform.handle_inbound(&message).map_err(|e| e.to_string())?;
    }
    let v = f.platform.state().vouchers.get(&VoucherId(1)).ok_or("no voucher opened")?;
    ensure(v.state == VoucherState::Delivered, || format!("{channel:?}: voucher ended {:?}", v.state))?;
    let suffix = f
        .platform
        .journal()
        .read_all()
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|e| e.seq > setup && !e.payload.is_transcript())
        .map(|e| (e.at, canonical_json(&e.payload)))
        .collect();
    let ledger = serde_json::to_vec(&f.platform.state().ledger()).map_err(|e| e.to_string())?;
    Ok((suffix, ledger))
}

fn channel_independence() -> Outcome {
    let (text_suffix, text_ledger) = drive(ChannelProfile::TextOnly)?;
    let (app_suffix, app_ledger) = drive(ChannelProfile::AppCapable)?;
    ensure(text_suffix == app_suffix, || {
        let at = text_suffix.iter().zip(&app_suffix).position(|(a, b)| a != b).unwrap_or(text_suffix.len().min(app_suffix.len()));
        format!("suffixes diverge at event {at}: {:?} vs {:?}", text_suffix.get(at), app_suffix.get(at))
    })?;
    ensure(text_ledger == app_ledger, || "ledger bytes differ".into())?;
    Ok(format!("{} ledger events identical, ledger {} bytes identical", text_suffix.len(), text_ledger.len()))
}

// ---------------------------------------------------------------------------

fn charging_year() -> Outcome {
    let mut platform = Platform::new(Box::new(subsidy::journal::MemoryJournal::new())).map_err(|e| e.to_string())?;
    let manifest = seed(&mut platform, Profile::Demo).map_err(|e| e.to_string())?;
    let food = manifest.quotas.iter().find(|q| q.code == "FOOD").ok_or("demo has FOOD")?;
    let schedule = food.schedules[0];
    let mut reruns = 0;
    let mut rerun = |p: &mut Platform, when: Option<NaiveDateTime>| -> Result<(), String> {
        let (report, _) = p.run_charging_cycle(when).map_err(|e| e.to_string())?;
        reruns += 1;
        ensure(report.created.is_empty(), || format!("re-run at {:?} created {}", when, report.created.len()))
    };
    rerun(&mut platform, None)?;
    for month in 2..=12 {
        let first = at(&format!("2024-{month:02}-01T00:00"));
        platform.advance_clock(first).map_err(|e| e.to_string())?;
        rerun(&mut platform, None)?;
        rerun(&mut platform, None)?;
        let mid = first + Duration::days(14) + Duration::hours(9);
        platform.advance_clock(mid).map_err(|e| e.to_string())?;
        rerun(&mut platform, None)?;
    }
    platform.advance_clock(at("2025-02-01T00:00")).map_err(|e| e.to_string())?;
    rerun(&mut platform, None)?;

    let state = platform.state();
    for b in &manifest.beneficiaries {
        let mut periods: Vec<(u32, u32)> = state
            .entitlements
            .values()
            .filter(|e| e.beneficiary == b.id && e.schedule == schedule)
            .map(|e| (e.period_index, e.charged_at.month()))
            .collect();
        periods.sort_unstable();
        let expected: Vec<(u32, u32)> = (0..12).map(|i| (i, i + 1)).collect();
        ensure(periods == expected, || format!("{}: {periods:?}", b.id))?;
    }
    Ok(format!("{} beneficiaries x 12 monthly entitlements, {reruns} re-runs added 0", manifest.beneficiaries.len()))
}

// ---------------------------------------------------------------------------

fn code(rng: &mut ChaCha8Rng, max: usize) -> String {
    const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_";
    let len = rng.random_range(1..=max);
    (0..len).map(|_| *ALPHABET.choose(rng).expect("non-empty") as char).collect()
}

fn qty(rng: &mut ChaCha8Rng) -> Quantity {
    Quantity::from_milli(if rng.random_bool(0.3) { rng.random_range(0..10) * 250 } else { rng.random_range(0..100_000_000) }).unwrap()
}

fn money(rng: &mut ChaCha8Rng) -> Money {
    Money::from_piasters(rng.random_range(0..10_000_000))
}

fn random_inbound_text(rng: &mut ChaCha8Rng) -> InboundText {
    match rng.random_range(0..4) {
        0 => {
            let mut items: Vec<(String, Quantity)> = Vec::new();
            for _ in 0..rng.random_range(0..=5) {
                let c = code(rng, 8);
                if !items.iter().any(|(x, _)| *x == c) {
                    items.push((c, qty(rng)));
                }
            }
            InboundText::Request { quota: code(rng, 16), merchant: rng.random_bool(0.5).then(|| MerchantId(rng.random_range(0..100_000))), items }
        }
        1 => InboundText::Confirm { pin: format!("{:04}", rng.random_range(0..10_000)) },
        2 => InboundText::Abandon,
        _ => InboundText::Balance,
    }
}

fn random_outbound_text(rng: &mut ChaCha8Rng) -> OutboundText {
    let voucher = VoucherId(rng.random_range(1..10_000_000));
    match rng.random_range(0..6) {
        0 => OutboundText::Charged { quota: code(rng, 16), period: rng.random_range(0..1000) },
        1 => OutboundText::Confirm { voucher, due: money(rng), refund: money(rng) },
        2 => OutboundText::Done { voucher, items: (0..rng.random_range(0..=30)).map(|_| (code(rng, 16), qty(rng))).collect(), refund: money(rng) },
        3 => OutboundText::Cancelled { voucher },
        4 => OutboundText::Balance { amount: money(rng) },
        _ => OutboundText::Err { code: code(rng, 16) },
    }
}

fn random_detail(rng: &mut ChaCha8Rng) -> VoucherDetail {
    let merchant = rng.random_range(0..100_000);
    let formal = qty(rng);
    VoucherDetail {
        item_id: ItemId(rng.random_range(1..1000)),
        name: code(rng, 8),
        unit: ["kg", "l", "piece"].choose(rng).expect("non-empty").to_string(),
        formal_qty: formal,
        actual_qty: Quantity::from_milli(rng.random_range(0..=formal.milli())).unwrap(),
        unit_merchant_price: Money::from_piasters(merchant),
        unit_consumer_price: Money::from_piasters(rng.random_range(0..=merchant)),
        unit_org_cost: Money::from_piasters(rng.random_range(0..=merchant)),
    }
}

fn random_voucher(rng: &mut ChaCha8Rng) -> Voucher {
    let details: Vec<VoucherDetail> = (0..rng.random_range(0..4)).map(|_| random_detail(rng)).collect();
    let totals = compute_totals(&details);
    Voucher {
        id: VoucherId(rng.random_range(1..1_000_000)),
        beneficiary: BeneficiaryId(rng.random_range(1..1000)),
        quota: QuotaId(rng.random_range(1..50)),
        schedule: ScheduleId(rng.random_range(1..50)),
        period_index: rng.random_range(0..60),
        merchant: MerchantId(rng.random_range(1..100)),
        state: VoucherState::NotDelivered,
        opened_at: at("2024-03-01T09:30"),
        closed_at: None,
        total_merchant_price: totals.total_merchant_price,
        total_consumer_price: totals.total_consumer_price,
        pin_failures: 0,
        details,
    }
}

fn random_view(rng: &mut ChaCha8Rng) -> VoucherView {
    let v = random_voucher(rng);
    VoucherView {
        id: v.id,
        beneficiary: v.beneficiary,
        merchant: v.merchant,
        quota_code: code(rng, 16),
        period_index: v.period_index,
        totals: compute_totals(&v.details),
        lines: v.details,
    }
}

fn random_status(rng: &mut ChaCha8Rng) -> EntitlementStatus {
    *[EntitlementStatus::Open, EntitlementStatus::Claimed, EntitlementStatus::Expired].choose(rng).expect("non-empty")
}

fn random_sync(rng: &mut ChaCha8Rng) -> SyncPayload {
    let schedule = ScheduleId(rng.random_range(1..50));
    let items: Vec<QuotaItem> = (0..rng.random_range(0..3))
        .map(|_| {
            let d = random_detail(rng);
            QuotaItem {
                item_id: d.item_id,
                schedule,
                name: d.name,
                unit: d.unit,
                qty_per_person: d.formal_qty,
                unit_merchant_price: d.unit_merchant_price,
                unit_consumer_price: d.unit_consumer_price,
                unit_org_cost: d.unit_org_cost,
            }
        })
        .collect();
    let availability: Vec<ItemAvailability> = items
        .iter()
        .map(|i| ItemAvailability {
            item_id: i.item_id,
            name: i.name.clone(),
            unit: i.unit.clone(),
            entitled_qty: i.qty_per_person,
            unit_merchant_price: i.unit_merchant_price,
            unit_consumer_price: i.unit_consumer_price,
            status: random_status(rng),
        })
        .collect();
    let quota_code = code(rng, 16);
    SyncPayload {
        beneficiary: BeneficiaryId(rng.random_range(1..1000)),
        preferred_merchant: rng.random_bool(0.5).then(|| MerchantId(rng.random_range(1..100))),
        quotas: vec![QuotaSummary {
            id: QuotaId(rng.random_range(1..50)),
            code: quota_code.clone(),
            name: format!("{quota_code} quota"),
            basis: if rng.random_bool(0.5) { Basis::Personal } else { Basis::Family },
        }],
        entitlements: vec![EntitlementView {
            quota_code: quota_code.clone(),
            schedule,
            period_index: rng.random_range(0..60),
            status: random_status(rng),
            items: availability,
        }],
        catalog: vec![CatalogEntry { quota_code, schedule, items }],
    }
}

fn random_app_inbound(rng: &mut ChaCha8Rng) -> AppInbound {
    let from = BeneficiaryId(rng.random_range(1..100_000));
    match rng.random_range(0..7) {
        0 => AppInbound::Request {
            from,
            quota: code(rng, 16),
            merchant: rng.random_bool(0.5).then(|| MerchantId(rng.random_range(1..1000))),
            items: (0..rng.random_range(0..4)).map(|_| (code(rng, 8), qty(rng))).collect::<BTreeMap<_, _>>(),
        },
        1 => AppInbound::Confirm { from, pin: format!("{:04}", rng.random_range(0..10_000)) },
        2 => AppInbound::Abandon { from },
        3 => AppInbound::Balance { from },
        4 => AppInbound::Sync { from },
        5 => AppInbound::Adjust {
            from: MerchantId(rng.random_range(1..1000)),
            voucher: VoucherId(rng.random_range(1..1_000_000)),
            item: code(rng, 8),
            qty: qty(rng),
        },
        _ => AppInbound::Submit { from: MerchantId(rng.random_range(1..1000)), voucher: VoucherId(rng.random_range(1..1_000_000)) },
    }
}

fn random_app_outbound(rng: &mut ChaCha8Rng) -> AppOutbound {
    match rng.random_range(0..8) {
        0 => AppOutbound::Draft { voucher: random_view(rng) },
        1 => AppOutbound::ConfirmRequest { voucher: random_view(rng) },
        2 => AppOutbound::Receipt { receipt: DeliveryReceipt::for_voucher(&random_voucher(rng)) },
        3 => AppOutbound::Cancelled {
            voucher: VoucherId(rng.random_range(1..1_000_000)),
            reason: *[CancelReason::Requested, CancelReason::Abandoned, CancelReason::TimedOut, CancelReason::PinLocked]
                .choose(rng)
                .expect("non-empty"),
        },
        4 => AppOutbound::Notice { code: code(rng, 16) },
        5 => AppOutbound::Charged { quota: code(rng, 16), period: rng.random_range(0..1000) },
        6 => AppOutbound::Balance { amount: money(rng) },
        _ => AppOutbound::Sync { payload: random_sync(rng) },
    }
}

fn frame_round_trip(frame: &AppFrame) -> Result<AppFrame, String> {
    let bytes = encode_frame(frame).map_err(|e| e.to_string())?;
    let decoded = decode_frame(&bytes).map_err(|e| e.to_string())?;
    ensure(encode_frame(&decoded).map_err(|e| e.to_string())? == bytes, || "re-encoding changed bytes".into())?;
    Ok(decoded)
}

fn codec_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE);
    let mut parts_total = 0usize;
    let mut longest = 0usize;
    for n in 0..10_000 {
        let msg = random_inbound_text(&mut rng);
        let body = msg.to_string();
        ensure(body.len() <= MAX_TEXT_LEN, || format!("inbound {n}: {} chars", body.len()))?;
        let parsed = parse_text(&body).map_err(|e| format!("inbound {n} `{body}`: {e}"))?;
        ensure(parsed == msg, || format!("inbound {n}: `{body}` parsed to {parsed:?}"))?;

        let out = random_outbound_text(&mut rng);
        let parts = compose_text(&out);
        for p in &parts {
            longest = longest.max(p.chars().count());
            ensure(p.chars().count() <= MAX_TEXT_LEN, || format!("outbound {n}: part of {} chars", p.chars().count()))?;
            ensure(parse_text(p).is_err(), || format!("outbound {n}: part `{p}` reads as a command"))?;
        }
        parts_total += parts.len();
        let mut shuffled = parts.clone();
        shuffled.reverse();
        let whole = reassemble(&shuffled).ok_or_else(|| format!("outbound {n}: parts do not reassemble"))?;
        ensure(parse_outbound(&whole) == Some(out.clone()), || format!("outbound {n}: `{whole}` != {out:?}"))?;
    }
    for n in 0..10_000 {
        let session = rng.random_bool(0.5).then(|| SessionId(rng.random_range(1..100_000)));
        let msg = random_app_inbound(&mut rng);
        let decoded = frame_round_trip(&msg.to_frame(session))?;
        ensure(decoded.session == session, || format!("app inbound {n}: session lost"))?;
        ensure(AppInbound::from_frame(&decoded).map_err(|e| e.to_string())? == msg, || format!("app inbound {n}: {msg:?}"))?;

        let out = random_app_outbound(&mut rng);
        let decoded = frame_round_trip(&out.to_frame(session))?;
        ensure(AppOutbound::from_frame(&decoded).map_err(|e| e.to_string())? == out, || format!("app outbound {n}: {out:?}"))?;
    }
    Ok(format!("2 x 10000 text and 2 x 10000 app messages, {parts_total} text parts, longest {longest} chars"))
}

// ---------------------------------------------------------------------------

fn report_bytes(platform: &Platform) -> Result<Vec<u8>, String> {
    let events = platform.journal().read_all().map_err(|e| e.to_string())?;
    let state = platform.state();
    let mut out = Vec::new();
    for q in state.quotas.values() {
        for period in 0..12 {
            out.extend(serde_json::to_vec(&reports::region_distribution(&events, q.id, period)).map_err(|e| e.to_string())?);
        }
    }
    for m in state.merchants.keys() {
        out.extend(serde_json::to_vec(&reports::settlement(&events, *m, None)).map_err(|e| e.to_string())?);
    }
    for o in state.organizations.keys() {
        out.extend(serde_json::to_vec(&reports::subsidy_cost(&events, *o, None)).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn replay_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("journal.log");
    let open = || -> Result<Platform, String> {
        let journal = FileJournal::open(&path).map_err(|e| e.to_string())?;
        Platform::recover(Box::new(journal)).map_err(|e| e.to_string())
    };
    let mut platform = open()?;
    let manifest = seed(&mut platform, Profile::Demo).map_err(|e| e.to_string())?;
    let run = fuzz_on(&mut platform, &manifest, 50, 50).map_err(|e| e.to_string())?;
    let state_before = platform.state().canonical_bytes();
    let reports_before = report_bytes(&platform)?;
    let snapshot = platform.snapshot();
    let events = platform.last_seq();
    drop(platform);

    let replayed = open()?;
    ensure(replayed.state().canonical_bytes() == state_before, || "state differs after replay".into())?;
    ensure(report_bytes(&replayed)? == reports_before, || "reports differ after replay".into())?;
    drop(replayed);

    let snapshot = Snapshot::from_json(&snapshot.to_json()).map_err(|e| e.to_string())?;
    let journal = FileJournal::open(&path).map_err(|e| e.to_string())?;
    let restored = Platform::recover_from_snapshot(Box::new(journal), &snapshot).map_err(|e| e.to_string())?;
    ensure(restored.state().canonical_bytes() == state_before, || "state differs after snapshot restore".into())?;
    Ok(format!(
        "{events} events ({} delivered, {} cancelled), {} state bytes and {} report bytes identical",
        run.delivered,
        run.cancelled,
        state_before.len(),
        reports_before.len()
    ))
}

// ---------------------------------------------------------------------------

fn fuzz_survival() -> Outcome {
    let mut summary = Vec::new();
    for seed_value in [1u64, 2, 3] {
        let report = fuzz(seed_value, 1000).map_err(|e| e.to_string())?;
        ensure(report.violations.is_empty(), || format!("seed {seed_value}: {:?}", &report.violations[..report.violations.len().min(3)]))?;
        ensure(report.open_sessions == 0, || format!("seed {seed_value}: {} sessions left open", report.open_sessions))?;
        ensure(report.delivered > 0, || format!("seed {seed_value}: nothing was delivered"))?;
        summary.push(format!("seed {seed_value}: {} delivered {} cancelled", report.delivered, report.cancelled));
    }
    Ok(format!("3 x 1000 steps, 0 violations, all sessions closed ({})", summary.join("; ")))
}

// ---------------------------------------------------------------------------

type Criterion = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("charging equivalence", charging_equivalence),
        ("voucher state machine", state_machine),
        ("refund conservation", refund_conservation),
        ("channel independence", channel_independence),
        ("charging idempotence over a year", charging_year),
        ("codec round-trips", codec_round_trips),
        ("replay determinism", replay_determinism),
        ("fuzz survival", fuzz_survival),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
