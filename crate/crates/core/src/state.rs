//! Platform state and the events that change it.
//!
//! [`State::apply`] is the only mutator. Commands run inside a [`Tx`], which
//! validates against a working copy of the state and records the events it
//! emits; the platform journals them before swapping the copy in. Replaying
//! a journal through `apply` therefore reproduces the live state exactly.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::delivery::{compute_totals, CancelReason, DeliveryReceipt, Voucher, VoucherState};
use crate::domain::{Beneficiary, Merchant, OrgUser, Organization};
use crate::ids::{BeneficiaryId, ItemId, MerchantId, OrgUserId, OrganizationId, QuotaId, ScheduleId, SessionId, VoucherId};
use crate::money::{Money, Quantity};
use crate::orchestrator::{Outcome, Phase, Session};
use crate::quota::{Entitlement, EntitlementKey, EntitlementStatus, Quota, QuotaItem, QuotaSchedule};

/// Which boundary a transcript message crossed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Text,
    App,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventPayload {
    BeneficiaryRegistered(Beneficiary),
    MerchantRegistered(Merchant),
    OrgCreated(Organization),
    OrgUserCreated(OrgUser),
    QuotaDefined(Quota),
    ScheduleDefined(QuotaSchedule),
    ItemsSet { schedule: ScheduleId, items: Vec<QuotaItem> },
    EntitlementCharged(Entitlement),
    VoucherOpened(Voucher),
    QtyUpdated { voucher: VoucherId, item: ItemId, actual: Quantity },
    PinRejected { voucher: VoucherId, failures: u32 },
    DeliveryConfirmed { receipt: DeliveryReceipt },
    VoucherCancelled { voucher: VoucherId, reason: CancelReason },
    BalanceCredited { beneficiary: BeneficiaryId, amount: Money, voucher: VoucherId },
    EntitlementExpired { key: EntitlementKey },
    ClockAdvanced { to: NaiveDateTime },
    SessionOpened(Session),
    SessionAdvanced { session: SessionId, phase: Phase, voucher: Option<VoucherId>, deadline: NaiveDateTime },
    SessionClosed { session: SessionId, outcome: Outcome },
    MessageIn { channel: Channel, from: String, body: String },
    MessageOut { channel: Channel, to: String, body: String },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::BeneficiaryRegistered(_) => "BeneficiaryRegistered",
            EventPayload::MerchantRegistered(_) => "MerchantRegistered",
            EventPayload::OrgCreated(_) => "OrgCreated",
            EventPayload::OrgUserCreated(_) => "OrgUserCreated",
            EventPayload::QuotaDefined(_) => "QuotaDefined",
            EventPayload::ScheduleDefined(_) => "ScheduleDefined",
            EventPayload::ItemsSet { .. } => "ItemsSet",
            EventPayload::EntitlementCharged(_) => "EntitlementCharged",
            EventPayload::VoucherOpened(_) => "VoucherOpened",
            EventPayload::QtyUpdated { .. } => "QtyUpdated",
            EventPayload::PinRejected { .. } => "PinRejected",
            EventPayload::DeliveryConfirmed { .. } => "DeliveryConfirmed",
            EventPayload::VoucherCancelled { .. } => "VoucherCancelled",
            EventPayload::BalanceCredited { .. } => "BalanceCredited",
            EventPayload::EntitlementExpired { .. } => "EntitlementExpired",
            EventPayload::ClockAdvanced { .. } => "ClockAdvanced",
            EventPayload::SessionOpened(_) => "SessionOpened",
            EventPayload::SessionAdvanced { .. } => "SessionAdvanced",
            EventPayload::SessionClosed { .. } => "SessionClosed",
            EventPayload::MessageIn { .. } => "MessageIn",
            EventPayload::MessageOut { .. } => "MessageOut",
        }
    }

    /// Session bookkeeping and message transcripts: everything that records
    /// how a delivery was conducted rather than what it did to the ledger.
    pub fn is_transcript(&self) -> bool {
        matches!(
            self,
            EventPayload::SessionOpened(_)
                | EventPayload::SessionAdvanced { .. }
                | EventPayload::SessionClosed { .. }
                | EventPayload::MessageIn { .. }
                | EventPayload::MessageOut { .. }
        )
    }
}

mod as_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub clock: Option<NaiveDateTime>,
    pub organizations: BTreeMap<OrganizationId, Organization>,
    pub org_users: BTreeMap<OrgUserId, OrgUser>,
    pub beneficiaries: BTreeMap<BeneficiaryId, Beneficiary>,
    pub merchants: BTreeMap<MerchantId, Merchant>,
    pub quotas: BTreeMap<QuotaId, Quota>,
    pub schedules: BTreeMap<ScheduleId, QuotaSchedule>,
    pub items: BTreeMap<ScheduleId, Vec<QuotaItem>>,
    pub last_item_id: u64,
    #[serde(with = "as_pairs")]
    pub entitlements: BTreeMap<EntitlementKey, Entitlement>,
    pub vouchers: BTreeMap<VoucherId, Voucher>,
    pub sessions: BTreeMap<SessionId, Session>,
}

/// The financial part of the state: what was claimed, delivered and paid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerView<'a> {
    #[serde(with = "as_pairs")]
    pub entitlements: &'a BTreeMap<EntitlementKey, Entitlement>,
    pub vouchers: &'a BTreeMap<VoucherId, Voucher>,
    pub balances: BTreeMap<BeneficiaryId, Money>,
}

fn next_key<K: Copy, V>(map: &BTreeMap<K, V>, raw: impl Fn(K) -> u64) -> u64 {
    map.keys().next_back().map_or(1, |k| raw(*k) + 1)
}

impl State {
    pub fn next_organization_id(&self) -> OrganizationId {
        OrganizationId(next_key(&self.organizations, |k| k.0))
    }
    pub fn next_org_user_id(&self) -> OrgUserId {
        OrgUserId(next_key(&self.org_users, |k| k.0))
    }
    pub fn next_beneficiary_id(&self) -> BeneficiaryId {
        BeneficiaryId(next_key(&self.beneficiaries, |k| k.0))
    }
    pub fn next_merchant_id(&self) -> MerchantId {
        MerchantId(next_key(&self.merchants, |k| k.0))
    }
    pub fn next_quota_id(&self) -> QuotaId {
        QuotaId(next_key(&self.quotas, |k| k.0))
    }
    pub fn next_schedule_id(&self) -> ScheduleId {
        ScheduleId(next_key(&self.schedules, |k| k.0))
    }
    pub fn next_voucher_id(&self) -> VoucherId {
        VoucherId(next_key(&self.vouchers, |k| k.0))
    }
    pub fn next_session_id(&self) -> SessionId {
        SessionId(next_key(&self.sessions, |k| k.0))
    }

    pub fn beneficiary_by_national_id(&self, national_id: &str) -> Option<&Beneficiary> {
        self.beneficiaries.values().find(|b| b.national_id == national_id)
    }

    pub fn beneficiary_by_mobile(&self, mobile: &str) -> Option<&Beneficiary> {
        self.beneficiaries.values().find(|b| b.mobile == mobile)
    }

    pub fn quota_by_code(&self, code: &str) -> Option<&Quota> {
        self.quotas.values().find(|q| q.code.eq_ignore_ascii_case(code))
    }

    pub fn items_for(&self, schedule: ScheduleId) -> &[QuotaItem] {
        self.items.get(&schedule).map_or(&[], Vec::as_slice)
    }

    pub fn entitlements_for_period(&self, schedule: ScheduleId, period: u32) -> impl Iterator<Item = &Entitlement> {
        self.entitlements.values().filter(move |e| e.schedule == schedule && e.period_index == period)
    }

    /// The non-cancelled voucher for an entitlement, if any.
    pub fn live_voucher(&self, key: &EntitlementKey) -> Option<&Voucher> {
        self.vouchers.values().find(|v| v.state != VoucherState::Cancelled && v.entitlement_key() == *key)
    }

    pub fn active_session_for(&self, beneficiary: BeneficiaryId) -> Option<&Session> {
        self.sessions.values().find(|s| s.beneficiary == beneficiary && !s.is_closed())
    }

    pub fn session_for_voucher(&self, voucher: VoucherId) -> Option<&Session> {
        self.sessions.values().find(|s| s.voucher == Some(voucher))
    }

    pub fn ledger(&self) -> LedgerView<'_> {
        LedgerView {
            entitlements: &self.entitlements,
            vouchers: &self.vouchers,
            balances: self.beneficiaries.values().map(|b| (b.id, b.cash_balance)).collect(),
        }
    }

    /// Canonical serialization: maps are ordered, so equal states give equal
    /// bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state serializes")
    }

    pub fn apply(&mut self, at: NaiveDateTime, event: &EventPayload) {
        self.clock = Some(self.clock.map_or(at, |c| c.max(at)));
        match event {
            EventPayload::BeneficiaryRegistered(b) => {
                self.beneficiaries.insert(b.id, b.clone());
            }
            EventPayload::MerchantRegistered(m) => {
                self.merchants.insert(m.id, m.clone());
            }
            EventPayload::OrgCreated(o) => {
                self.organizations.insert(o.id, o.clone());
            }
            EventPayload::OrgUserCreated(u) => {
                self.org_users.insert(u.id, u.clone());
            }
            EventPayload::QuotaDefined(q) => {
                self.quotas.insert(q.id, q.clone());
            }
            EventPayload::ScheduleDefined(s) => {
                self.schedules.insert(s.id, s.clone());
            }
            EventPayload::ItemsSet { schedule, items } => {
                if let Some(max) = items.iter().map(|i| i.item_id.0).max() {
                    self.last_item_id = self.last_item_id.max(max);
                }
                self.items.insert(*schedule, items.clone());
            }
            EventPayload::EntitlementCharged(e) => {
                self.entitlements.insert(e.key(), e.clone());
            }
            EventPayload::VoucherOpened(v) => {
                if let Some(e) = self.entitlements.get_mut(&v.entitlement_key()) {
                    e.status = EntitlementStatus::Claimed;
                }
                self.vouchers.insert(v.id, v.clone());
            }
            EventPayload::QtyUpdated { voucher, item, actual } => {
                if let Some(v) = self.vouchers.get_mut(voucher) {
                    if let Some(d) = v.details.iter_mut().find(|d| d.item_id == *item) {
                        d.actual_qty = *actual;
                    }
                    v.refresh_totals();
                }
            }
            EventPayload::PinRejected { voucher, failures } => {
                if let Some(v) = self.vouchers.get_mut(voucher) {
                    v.pin_failures = *failures;
                }
            }
            EventPayload::DeliveryConfirmed { receipt } => {
                if let Some(v) = self.vouchers.get_mut(&receipt.voucher) {
                    v.state = VoucherState::Delivered;
                    v.closed_at = Some(at);
                }
            }
            EventPayload::VoucherCancelled { voucher, .. } => {
                if let Some(v) = self.vouchers.get_mut(voucher) {
                    v.state = VoucherState::Cancelled;
                    v.closed_at = Some(at);
                    let key = v.entitlement_key();
                    if let Some(e) = self.entitlements.get_mut(&key) {
                        e.status = EntitlementStatus::Open;
                    }
                }
            }
            EventPayload::BalanceCredited { beneficiary, amount, .. } => {
                if let Some(b) = self.beneficiaries.get_mut(beneficiary) {
                    b.cash_balance += *amount;
                }
            }
            EventPayload::EntitlementExpired { key } => {
                if let Some(e) = self.entitlements.get_mut(key) {
                    e.status = EntitlementStatus::Expired;
                }
            }
            EventPayload::ClockAdvanced { to } => {
                self.clock = Some(self.clock.map_or(*to, |c| c.max(*to)));
            }
            EventPayload::SessionOpened(s) => {
                self.sessions.insert(s.id, s.clone());
            }
            EventPayload::SessionAdvanced { session, phase, voucher, deadline } => {
                if let Some(s) = self.sessions.get_mut(session) {
                    s.phase = *phase;
                    s.voucher = *voucher;
                    s.deadline = *deadline;
                }
            }
            EventPayload::SessionClosed { session, outcome } => {
                if let Some(s) = self.sessions.get_mut(session) {
                    s.phase = Phase::Closed(*outcome);
                }
            }
            EventPayload::MessageIn { .. } | EventPayload::MessageOut { .. } => {}
        }
    }

    /// Checks every cross-entity invariant; returns one line per violation.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut bad = Vec::new();

        let mut national_ids = BTreeSet::new();
        let mut mobiles = BTreeSet::new();
        for b in self.beneficiaries.values() {
            if !national_ids.insert(&b.national_id) {
                bad.push(format!("duplicate national id {}", b.national_id));
            }
            if !mobiles.insert(&b.mobile) {
                bad.push(format!("duplicate mobile {}", b.mobile));
            }
            if b.cash_balance.is_negative() {
                bad.push(format!("{} has negative balance", b.id));
            }
            if b.family_size < 1 {
                bad.push(format!("{} has family_size 0", b.id));
            }
        }

        let mut refunds: BTreeMap<BeneficiaryId, Money> = BTreeMap::new();
        let mut live: BTreeMap<EntitlementKey, usize> = BTreeMap::new();
        let mut delivered: BTreeMap<EntitlementKey, usize> = BTreeMap::new();
        for v in self.vouchers.values() {
            let totals = compute_totals(&v.details);
            if totals.total_merchant_price != v.total_merchant_price || totals.total_consumer_price != v.total_consumer_price {
                bad.push(format!("{} header totals disagree with details", v.id));
            }
            for d in &v.details {
                if d.actual_qty > d.formal_qty {
                    bad.push(format!("{} item {} actual exceeds formal", v.id, d.item_id));
                }
                if d.line_refund() + d.line_settlement() != d.formal_qty.times(d.unit_subsidy()) {
                    bad.push(format!("{} item {} subsidy split not conserved", v.id, d.item_id));
                }
            }
            if !self.merchants.get(&v.merchant).is_some_and(|m| m.registered) {
                bad.push(format!("{} references unregistered merchant", v.id));
            }
            match v.state {
                VoucherState::NotDelivered if v.closed_at.is_some() => bad.push(format!("{} open but closed_at set", v.id)),
                VoucherState::Delivered | VoucherState::Cancelled if v.closed_at.is_none() => {
                    bad.push(format!("{} terminal without closed_at", v.id))
                }
                _ => {}
            }
            let key = v.entitlement_key();
            if v.state != VoucherState::Cancelled {
                *live.entry(key).or_default() += 1;
                if self.entitlements.get(&key).map(|e| e.status) != Some(EntitlementStatus::Claimed) {
                    bad.push(format!("{} is live but its entitlement is not Claimed", v.id));
                }
            }
            if v.state == VoucherState::Delivered {
                *delivered.entry(key).or_default() += 1;
                *refunds.entry(v.beneficiary).or_default() += totals.refund_if_confirmed_now;
            }
        }
        for (key, n) in live.iter().filter(|(_, n)| **n > 1) {
            bad.push(format!("{n} live vouchers for {}/{}/P{}", key.beneficiary, key.schedule, key.period_index));
        }
        for (key, n) in delivered.iter().filter(|(_, n)| **n > 1) {
            bad.push(format!("{n} delivered vouchers for {}/{}/P{}", key.beneficiary, key.schedule, key.period_index));
        }
        for (key, e) in &self.entitlements {
            if e.key() != *key {
                bad.push("entitlement stored under the wrong key".into());
            }
            if e.status == EntitlementStatus::Claimed && !live.contains_key(key) {
                bad.push(format!("entitlement {}/{}/P{} Claimed without a live voucher", key.beneficiary, key.schedule, key.period_index));
            }
        }
        for b in self.beneficiaries.values() {
            let expected = refunds.get(&b.id).copied().unwrap_or_default();
            if b.cash_balance != expected {
                bad.push(format!("{} balance {} differs from delivered refunds {}", b.id, b.cash_balance, expected));
            }
        }

        let mut active = BTreeSet::new();
        for s in self.sessions.values() {
            if s.is_closed() {
                if let (Phase::Closed(Outcome::Delivered), Some(v)) = (s.phase, s.voucher) {
                    if self.vouchers.get(&v).map(|v| v.state) != Some(VoucherState::Delivered) {
                        bad.push(format!("{} closed as delivered but voucher is not", s.id));
                    }
                }
                if let Some(v) = s.voucher.and_then(|v| self.vouchers.get(&v)) {
                    if v.is_open() {
                        bad.push(format!("{} closed with {} still open", s.id, v.id));
                    }
                }
                continue;
            }
            if !active.insert(s.beneficiary) {
                bad.push(format!("{} has more than one active session", s.beneficiary));
            }
            if let Some(v) = s.voucher {
                if !self.vouchers.get(&v).is_some_and(Voucher::is_open) {
                    bad.push(format!("{} active but voucher {v} is not open", s.id));
                }
            }
        }
        bad
    }
}

/// A unit of work against a private copy of the state.
#[derive(Debug)]
pub struct Tx {
    state: State,
    now: NaiveDateTime,
    pending: Vec<(NaiveDateTime, EventPayload)>,
}

impl Tx {
    pub fn new(state: State, now: NaiveDateTime) -> Self {
        Tx { state, now, pending: Vec::new() }
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn now(&self) -> NaiveDateTime {
        self.now
    }

    /// Moves the transaction's clock; later events carry the new time.
    pub fn set_now(&mut self, now: NaiveDateTime) {
        self.now = now;
    }

    pub fn emit(&mut self, payload: EventPayload) {
        self.state.apply(self.now, &payload);
        self.pending.push((self.now, payload));
    }

    pub fn pending(&self) -> &[(NaiveDateTime, EventPayload)] {
        &self.pending
    }

    pub fn into_parts(self) -> (State, Vec<(NaiveDateTime, EventPayload)>) {
        (self.state, self.pending)
    }
}
