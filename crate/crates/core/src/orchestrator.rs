//! The translation layer: per-delivery sessions that walk a scenario
//! roadmap, call the quota and delivery operations in order, and shape the
//! outbound messages for each actor's channel.
//!
//! Both roadmaps share one phase sequence:
//!
//! ```text
//! AwaitRequest -> DraftOpen -> AwaitMerchantAdjust -> AwaitBeneficiaryConfirm -> Closed(outcome)
//! ```
//!
//! A beneficiary request opens the voucher and pushes a draft to the
//! merchant app (`DraftOpen`). The merchant may adjust quantities
//! (`AwaitMerchantAdjust`) and then submits, which sends the beneficiary a
//! summary to confirm with their pin. A merchant submit straight from
//! `DraftOpen` skips the adjust phase. Text-only beneficiaries see the
//! summary as `CONFIRM ...` and reply `OK <pin>`; app beneficiaries get the
//! same content as frames, so their flow is two interactions: request and
//! confirm.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::channels::app::{CatalogEntry, EntitlementView, QuotaSummary};
use crate::channels::{compose_text, parse_text, AppFrame, AppInbound, AppOutbound, InboundText, OutboundText, SyncPayload, VoucherView};
use crate::delivery::{compute_totals, CancelReason, ConfirmOutcome, DeliveryReceipt, Voucher};
use crate::domain::{Beneficiary, ChannelProfile, Merchant, Region};
use crate::error::{Error, Result};
use crate::ids::{BeneficiaryId, ItemId, MerchantId, SessionId, VoucherId};
use crate::money::Quantity;
use crate::quota::{period_index, query_quota, ChargeNotice, EntitlementKey, EntitlementStatus};
use crate::state::{EventPayload, State, Tx};

/// Default idle time before a session is closed and its voucher cancelled.
pub const DEFAULT_SESSION_TIMEOUT_MINUTES: i64 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    TextBeneficiaryAppMerchant,
    AppBeneficiaryAppMerchant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Delivered,
    Abandoned,
    TimedOut,
    PinLocked,
    Cancelled,
}

impl From<CancelReason> for Outcome {
    fn from(reason: CancelReason) -> Self {
        match reason {
            CancelReason::Requested => Outcome::Cancelled,
            CancelReason::Abandoned => Outcome::Abandoned,
            CancelReason::TimedOut => Outcome::TimedOut,
            CancelReason::PinLocked => Outcome::PinLocked,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    AwaitRequest,
    DraftOpen,
    AwaitMerchantAdjust,
    AwaitBeneficiaryConfirm,
    Closed(Outcome),
}

impl Phase {
    /// Position along the roadmap; phases only move forward.
    pub fn rank(self) -> u8 {
        match self {
            Phase::AwaitRequest => 0,
            Phase::DraftOpen => 1,
            Phase::AwaitMerchantAdjust => 2,
            Phase::AwaitBeneficiaryConfirm => 3,
            Phase::Closed(_) => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub scenario: Scenario,
    pub beneficiary: BeneficiaryId,
    pub merchant: MerchantId,
    pub voucher: Option<VoucherId>,
    pub phase: Phase,
    pub started_at: NaiveDateTime,
    pub deadline: NaiveDateTime,
}

impl Session {
    pub fn is_closed(&self) -> bool {
        matches!(self.phase, Phase::Closed(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScreenClass {
    TextOnly,
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputKind {
    Keypad,
    Touch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Actor {
    Beneficiary(BeneficiaryId),
    Merchant(MerchantId),
}

/// What the orchestrator knows about an actor's device and habits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorProfile {
    pub actor: Actor,
    pub channel_profile: ChannelProfile,
    pub screen: ScreenClass,
    pub input: InputKind,
    pub preferred_merchant: Option<MerchantId>,
    pub region: Region,
    pub locale: String,
}

fn device_hints(profile: ChannelProfile) -> (ScreenClass, InputKind) {
    match profile {
        ChannelProfile::TextOnly => (ScreenClass::TextOnly, InputKind::Keypad),
        ChannelProfile::AppCapable => (ScreenClass::Small, InputKind::Touch),
    }
}

impl ActorProfile {
    pub fn of_beneficiary(b: &Beneficiary) -> Self {
        let (screen, input) = device_hints(b.channel_profile);
        ActorProfile {
            actor: Actor::Beneficiary(b.id),
            channel_profile: b.channel_profile,
            screen,
            input,
            preferred_merchant: b.preferred_merchant,
            region: b.region.clone(),
            locale: "ar-EG".into(),
        }
    }

    pub fn of_merchant(m: &Merchant) -> Self {
        let (screen, input) = device_hints(m.channel_profile);
        ActorProfile {
            actor: Actor::Merchant(m.id),
            channel_profile: m.channel_profile,
            screen,
            input,
            preferred_merchant: None,
            region: m.region.clone(),
            locale: "ar-EG".into(),
        }
    }
}

/// Where an outbound message goes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Address {
    Mobile(String),
    Beneficiary(BeneficiaryId),
    Merchant(MerchantId),
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Address::Mobile(m) => f.write_str(m),
            Address::Beneficiary(b) => write!(f, "{b}"),
            Address::Merchant(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutboundPayload {
    /// One text part, at most 160 characters.
    Text(String),
    App(AppFrame),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutboundAction {
    pub to: Address,
    pub payload: OutboundPayload,
}

impl OutboundAction {
    /// Body as recorded in the transcript.
    pub fn transcript_body(&self) -> String {
        match &self.payload {
            OutboundPayload::Text(body) => body.clone(),
            OutboundPayload::App(frame) => crate::journal::canonical_json(frame),
        }
    }

    pub fn text(&self) -> Option<&str> {
        match &self.payload {
            OutboundPayload::Text(t) => Some(t),
            OutboundPayload::App(_) => None,
        }
    }

    pub fn app(&self) -> Option<AppOutbound> {
        match &self.payload {
            OutboundPayload::App(frame) => AppOutbound::from_frame(frame).ok(),
            OutboundPayload::Text(_) => None,
        }
    }
}

/// A message arriving from a client channel.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Text { mobile: String, body: String },
    App(AppFrame),
}

/// Why an inbound message was turned away, and whom to tell.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub reply: OutboundAction,
    pub code: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrchestratorConfig {
    pub session_timeout: Duration,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig { session_timeout: Duration::minutes(DEFAULT_SESSION_TIMEOUT_MINUTES) }
    }
}

pub fn select_scenario(beneficiary: &ActorProfile, merchant: &ActorProfile) -> Result<Scenario> {
    match (beneficiary.channel_profile, merchant.channel_profile) {
        (_, ChannelProfile::TextOnly) => Err(Error::UnsupportedCombination),
        (ChannelProfile::TextOnly, ChannelProfile::AppCapable) => Ok(Scenario::TextBeneficiaryAppMerchant),
        (ChannelProfile::AppCapable, ChannelProfile::AppCapable) => Ok(Scenario::AppBeneficiaryAppMerchant),
    }
}

/// Catalog and entitlement bundle pushed to an app when it first joins.
pub fn first_join_sync(state: &State, profile: &ActorProfile, now: NaiveDateTime) -> Result<SyncPayload> {
    let Actor::Beneficiary(beneficiary) = profile.actor else {
        return Err(Error::UnknownBeneficiary);
    };
    if profile.channel_profile != ChannelProfile::AppCapable {
        return Err(Error::NotAppCapable);
    }
    let quotas = state.quotas.values().map(|q| QuotaSummary { id: q.id, code: q.code.clone(), name: q.name.clone(), basis: q.basis }).collect();
    let entitlements = state
        .entitlements
        .values()
        .filter(|e| e.beneficiary == beneficiary && e.status == EntitlementStatus::Open)
        .map(|e| {
            let schedule = &state.schedules[&e.schedule];
            let quota = &state.quotas[&schedule.quota];
            let answer = query_quota(state, beneficiary, quota.id, e.schedule, now);
            EntitlementView {
                quota_code: quota.code.clone(),
                schedule: e.schedule,
                period_index: e.period_index,
                status: e.status,
                items: if answer.success { answer.items } else { Vec::new() },
            }
        })
        .collect();
    let catalog = state
        .schedules
        .values()
        .filter(|s| period_index(s, now.date()).is_ok())
        .map(|s| CatalogEntry { quota_code: state.quotas[&s.quota].code.clone(), schedule: s.id, items: state.items_for(s.id).to_vec() })
        .collect();
    Ok(SyncPayload { beneficiary, preferred_merchant: profile.preferred_merchant, quotas, entitlements, catalog })
}

pub fn voucher_view(state: &State, voucher: &Voucher) -> VoucherView {
    VoucherView {
        id: voucher.id,
        beneficiary: voucher.beneficiary,
        merchant: voucher.merchant,
        quota_code: state.quotas.get(&voucher.quota).map(|q| q.code.clone()).unwrap_or_default(),
        period_index: voucher.period_index,
        lines: voucher.details.clone(),
        totals: compute_totals(&voucher.details),
    }
}

enum BeneficiaryCommand {
    Request { quota: String, merchant: Option<MerchantId>, items: Vec<(String, Quantity)> },
    Confirm { pin: String },
    Abandon,
    Balance,
    Sync,
}

enum MerchantCommand {
    Adjust { voucher: VoucherId, item: String, qty: Quantity },
    Submit { voucher: VoucherId },
}

/// Addresses a beneficiary on the channel its profile calls for.
fn to_beneficiary(b: &Beneficiary, text: OutboundText, app: AppOutbound, session: Option<SessionId>) -> Vec<OutboundAction> {
    match b.channel_profile {
        ChannelProfile::TextOnly => compose_text(&text)
            .into_iter()
            .map(|part| OutboundAction { to: Address::Mobile(b.mobile.clone()), payload: OutboundPayload::Text(part) })
            .collect(),
        ChannelProfile::AppCapable => {
            vec![OutboundAction { to: Address::Beneficiary(b.id), payload: OutboundPayload::App(app.to_frame(session)) }]
        }
    }
}

fn to_merchant(merchant: MerchantId, message: AppOutbound, session: Option<SessionId>) -> OutboundAction {
    OutboundAction { to: Address::Merchant(merchant), payload: OutboundPayload::App(message.to_frame(session)) }
}

fn done_text(receipt: &DeliveryReceipt) -> OutboundText {
    OutboundText::Done {
        voucher: receipt.voucher,
        items: receipt.lines.iter().filter(|l| !l.actual_qty.is_zero()).map(|l| (l.name.clone(), l.actual_qty)).collect(),
        refund: receipt.refund,
    }
}

fn notice(code: &str) -> (OutboundText, AppOutbound) {
    (OutboundText::Err { code: code.to_owned() }, AppOutbound::Notice { code: code.to_owned() })
}

/// Sender identity as resolved from the inbound message.
enum Sender {
    Beneficiary(Beneficiary, BeneficiaryCommand),
    Merchant(MerchantId, MerchantCommand, Option<SessionId>),
}

impl Tx {
    /// Builds the notification owed for a charged entitlement.
    pub fn notify(&self, notice: &ChargeNotice) -> Vec<OutboundAction> {
        let Some(b) = self.state().beneficiaries.get(&notice.beneficiary) else {
            return Vec::new();
        };
        to_beneficiary(
            b,
            OutboundText::Charged { quota: notice.quota_code.clone(), period: notice.period_index },
            AppOutbound::Charged { quota: notice.quota_code.clone(), period: notice.period_index },
            None,
        )
    }

    /// Closes the active session holding `voucher`, if there is one.
    pub(crate) fn close_session_for_voucher(&mut self, voucher: VoucherId, outcome: Outcome) {
        let open = self.state().sessions.values().find(|s| s.voucher == Some(voucher) && !s.is_closed()).map(|s| s.id);
        if let Some(session) = open {
            self.emit(EventPayload::SessionClosed { session, outcome });
        }
    }

    fn advance_session(&mut self, session: &Session, phase: Phase, config: &OrchestratorConfig) {
        debug_assert!(phase.rank() >= session.phase.rank());
        self.emit(EventPayload::SessionAdvanced {
            session: session.id,
            phase,
            voucher: session.voucher,
            deadline: self.now() + config.session_timeout,
        });
    }

    /// Routes one inbound message. On `Err` the caller must discard this
    /// transaction; nothing it did may be committed.
    pub fn handle_inbound(&mut self, config: &OrchestratorConfig, message: &Inbound) -> Result<Vec<OutboundAction>, Rejection> {
        let sender = self.resolve_sender(message)?;
        match sender {
            Sender::Beneficiary(b, command) => {
                let reply_channel_text = matches!(message, Inbound::Text { .. });
                self.beneficiary_command(config, &b, command).map_err(|e| {
                    let (text, app) = notice(e.code());
                    let reply = if reply_channel_text {
                        let body = compose_text(&text).remove(0);
                        OutboundAction { to: Address::Mobile(b.mobile.clone()), payload: OutboundPayload::Text(body) }
                    } else {
                        OutboundAction { to: Address::Beneficiary(b.id), payload: OutboundPayload::App(app.to_frame(None)) }
                    };
                    Rejection { reply, code: e.code().to_owned() }
                })
            }
            Sender::Merchant(m, command, session) => self.merchant_command(config, m, command).map_err(|e| Rejection {
                reply: to_merchant(m, AppOutbound::Notice { code: e.code().to_owned() }, session),
                code: e.code().to_owned(),
            }),
        }
    }

    fn resolve_sender(&self, message: &Inbound) -> Result<Sender, Rejection> {
        match message {
            Inbound::Text { mobile, body } => {
                let reject = |code: &str| Rejection {
                    reply: OutboundAction {
                        to: Address::Mobile(mobile.clone()),
                        payload: OutboundPayload::Text(OutboundText::Err { code: code.to_owned() }.to_string()),
                    },
                    code: code.to_owned(),
                };
                let b = self.state().beneficiary_by_mobile(mobile).ok_or_else(|| reject("UNKNOWN_BENEFICIARY"))?;
                let command = match parse_text(body).map_err(|_| reject("PARSE_ERROR"))? {
                    InboundText::Request { quota, merchant, items } => BeneficiaryCommand::Request { quota, merchant, items },
                    InboundText::Confirm { pin } => BeneficiaryCommand::Confirm { pin },
                    InboundText::Abandon => BeneficiaryCommand::Abandon,
                    InboundText::Balance => BeneficiaryCommand::Balance,
                };
                Ok(Sender::Beneficiary(b.clone(), command))
            }
            Inbound::App(frame) => {
                let parsed = AppInbound::from_frame(frame).map_err(|_| Rejection {
                    reply: OutboundAction {
                        to: frame_sender(frame),
                        payload: OutboundPayload::App(AppOutbound::Notice { code: "BAD_FRAME".into() }.to_frame(frame.session)),
                    },
                    code: "BAD_FRAME".into(),
                })?;
                let beneficiary = |id: BeneficiaryId| {
                    self.state().beneficiaries.get(&id).cloned().ok_or_else(|| Rejection {
                        reply: OutboundAction {
                            to: Address::Beneficiary(id),
                            payload: OutboundPayload::App(AppOutbound::Notice { code: "UNKNOWN_BENEFICIARY".into() }.to_frame(None)),
                        },
                        code: "UNKNOWN_BENEFICIARY".into(),
                    })
                };
                let merchant = |id: MerchantId| {
                    if self.state().merchants.get(&id).is_some_and(|m| m.registered) {
                        Ok(id)
                    } else {
                        Err(Rejection {
                            reply: to_merchant(id, AppOutbound::Notice { code: "UNKNOWN_MERCHANT".into() }, frame.session),
                            code: "UNKNOWN_MERCHANT".into(),
                        })
                    }
                };
                Ok(match parsed {
                    AppInbound::Request { from, quota, merchant, items } => Sender::Beneficiary(
                        beneficiary(from)?,
                        BeneficiaryCommand::Request { quota: quota.to_ascii_uppercase(), merchant, items: items.into_iter().collect() },
                    ),
                    AppInbound::Confirm { from, pin } => Sender::Beneficiary(beneficiary(from)?, BeneficiaryCommand::Confirm { pin }),
                    AppInbound::Abandon { from } => Sender::Beneficiary(beneficiary(from)?, BeneficiaryCommand::Abandon),
                    AppInbound::Balance { from } => Sender::Beneficiary(beneficiary(from)?, BeneficiaryCommand::Balance),
                    AppInbound::Sync { from } => Sender::Beneficiary(beneficiary(from)?, BeneficiaryCommand::Sync),
                    AppInbound::Adjust { from, voucher, item, qty } => {
                        Sender::Merchant(merchant(from)?, MerchantCommand::Adjust { voucher, item: item.to_ascii_uppercase(), qty }, frame.session)
                    }
                    AppInbound::Submit { from, voucher } => Sender::Merchant(merchant(from)?, MerchantCommand::Submit { voucher }, frame.session),
                })
            }
        }
    }

    fn beneficiary_command(&mut self, config: &OrchestratorConfig, b: &Beneficiary, command: BeneficiaryCommand) -> Result<Vec<OutboundAction>> {
        match command {
            BeneficiaryCommand::Request { quota, merchant, items } => self.start_delivery(config, b, &quota, merchant, &items),
            BeneficiaryCommand::Confirm { pin } => {
                let session = self.state().active_session_for(b.id).cloned().ok_or(Error::NoActiveSession)?;
                if session.phase != Phase::AwaitBeneficiaryConfirm {
                    return Err(Error::PhaseViolation);
                }
                let voucher = session.voucher.expect("confirming session holds a voucher");
                match self.confirm_delivery(voucher, &pin)? {
                    ConfirmOutcome::Delivered(receipt) => {
                        let mut out = to_beneficiary(b, done_text(&receipt), AppOutbound::Receipt { receipt: receipt.clone() }, Some(session.id));
                        out.push(to_merchant(session.merchant, AppOutbound::Receipt { receipt }, Some(session.id)));
                        Ok(out)
                    }
                    ConfirmOutcome::PinRejected { cancelled: false, .. } => {
                        self.advance_session(&session, session.phase, config);
                        let (text, app) = notice(Error::InvalidPin.code());
                        Ok(to_beneficiary(b, text, app, Some(session.id)))
                    }
                    ConfirmOutcome::PinRejected { cancelled: true, .. } => {
                        let cancelled = AppOutbound::Cancelled { voucher, reason: CancelReason::PinLocked };
                        let mut out = to_beneficiary(b, OutboundText::Cancelled { voucher }, cancelled.clone(), Some(session.id));
                        out.push(to_merchant(session.merchant, cancelled, Some(session.id)));
                        Ok(out)
                    }
                }
            }
            BeneficiaryCommand::Abandon => {
                let session = self.state().active_session_for(b.id).cloned().ok_or(Error::NoActiveSession)?;
                let mut out = Vec::new();
                match session.voucher {
                    Some(voucher) => {
                        self.cancel_voucher(voucher, CancelReason::Abandoned)?;
                        let cancelled = AppOutbound::Cancelled { voucher, reason: CancelReason::Abandoned };
                        out.extend(to_beneficiary(b, OutboundText::Cancelled { voucher }, cancelled.clone(), Some(session.id)));
                        out.push(to_merchant(session.merchant, cancelled, Some(session.id)));
                    }
                    None => self.emit(EventPayload::SessionClosed { session: session.id, outcome: Outcome::Abandoned }),
                }
                Ok(out)
            }
            BeneficiaryCommand::Balance => {
                let amount = self.state().beneficiaries[&b.id].cash_balance;
                Ok(to_beneficiary(b, OutboundText::Balance { amount }, AppOutbound::Balance { amount }, None))
            }
            BeneficiaryCommand::Sync => {
                let payload = first_join_sync(self.state(), &ActorProfile::of_beneficiary(b), self.now())?;
                Ok(vec![OutboundAction {
                    to: Address::Beneficiary(b.id),
                    payload: OutboundPayload::App(AppOutbound::Sync { payload }.to_frame(None)),
                }])
            }
        }
    }

    fn start_delivery(
        &mut self,
        config: &OrchestratorConfig,
        b: &Beneficiary,
        quota_code: &str,
        merchant: Option<MerchantId>,
        wanted: &[(String, Quantity)],
    ) -> Result<Vec<OutboundAction>> {
        if self.state().active_session_for(b.id).is_some() {
            return Err(Error::SessionActive);
        }
        let quota = self.state().quota_by_code(quota_code).cloned().ok_or(Error::UnknownQuota)?;
        let merchant_id = merchant.or(b.preferred_merchant).ok_or(Error::NoMerchant)?;
        let outlet = self.state().merchants.get(&merchant_id).filter(|m| m.registered).ok_or(Error::UnknownMerchant)?;
        let scenario = select_scenario(&ActorProfile::of_beneficiary(b), &ActorProfile::of_merchant(outlet))?;

        let today = self.now().date();
        let schedules: Vec<_> = self.state().schedules.values().filter(|s| s.quota == quota.id).cloned().collect();
        let due = schedules.iter().find(|s| {
            period_index(s, today).is_ok_and(|p| {
                let key = EntitlementKey { beneficiary: b.id, schedule: s.id, period_index: p };
                self.state().entitlements.get(&key).is_some_and(|e| e.status == EntitlementStatus::Open)
            })
        });
        let Some(schedule) = due else {
            let in_window = schedules.iter().any(|s| period_index(s, today).is_ok());
            return Err(if in_window || schedules.is_empty() { Error::NoOpenEntitlement } else { Error::OutOfWindow });
        };
        let answer = query_quota(self.state(), b.id, quota.id, schedule.id, self.now());
        if !answer.success {
            return Err(Error::NoOpenEntitlement);
        }
        let mut requested: BTreeMap<ItemId, Quantity> = BTreeMap::new();
        for (code, qty) in wanted {
            let item = answer.items.iter().find(|i| i.name == *code).ok_or_else(|| Error::UnknownItemCode(code.clone()))?;
            requested.insert(item.item_id, *qty);
        }
        let requested = (!requested.is_empty()).then_some(&requested);
        let voucher = self.open_voucher(b.id, merchant_id, quota.id, schedule.id, requested)?;

        let session = Session {
            id: self.state().next_session_id(),
            scenario,
            beneficiary: b.id,
            merchant: merchant_id,
            voucher: None,
            phase: Phase::AwaitRequest,
            started_at: self.now(),
            deadline: self.now() + config.session_timeout,
        };
        self.emit(EventPayload::SessionOpened(session.clone()));
        let session = Session { voucher: Some(voucher), ..session };
        self.advance_session(&session, Phase::DraftOpen, config);

        let view = voucher_view(self.state(), &self.state().vouchers[&voucher]);
        Ok(vec![to_merchant(merchant_id, AppOutbound::Draft { voucher: view }, Some(session.id))])
    }

    fn merchant_command(&mut self, config: &OrchestratorConfig, merchant: MerchantId, command: MerchantCommand) -> Result<Vec<OutboundAction>> {
        let voucher = match &command {
            MerchantCommand::Adjust { voucher, .. } | MerchantCommand::Submit { voucher } => *voucher,
        };
        let session = self.state().session_for_voucher(voucher).filter(|s| !s.is_closed()).cloned().ok_or(Error::NoActiveSession)?;
        if session.merchant != merchant {
            return Err(Error::Unauthorized);
        }
        if !matches!(session.phase, Phase::DraftOpen | Phase::AwaitMerchantAdjust) {
            return Err(Error::PhaseViolation);
        }
        match command {
            MerchantCommand::Adjust { item, qty, .. } => {
                let item_id =
                    self.state().vouchers[&voucher].details.iter().find(|d| d.name == item).map(|d| d.item_id).ok_or(Error::UnknownItemCode(item))?;
                self.update_qty(voucher, item_id, qty)?;
                self.advance_session(&session, Phase::AwaitMerchantAdjust, config);
                let view = voucher_view(self.state(), &self.state().vouchers[&voucher]);
                Ok(vec![to_merchant(merchant, AppOutbound::Draft { voucher: view }, Some(session.id))])
            }
            MerchantCommand::Submit { .. } => {
                self.advance_session(&session, Phase::AwaitBeneficiaryConfirm, config);
                let v = &self.state().vouchers[&voucher];
                let totals = compute_totals(&v.details);
                let view = voucher_view(self.state(), v);
                let b = self.state().beneficiaries[&session.beneficiary].clone();
                Ok(to_beneficiary(
                    &b,
                    OutboundText::Confirm { voucher, due: totals.total_consumer_price, refund: totals.refund_if_confirmed_now },
                    AppOutbound::ConfirmRequest { voucher: view },
                    Some(session.id),
                ))
            }
        }
    }

    /// Closes every active session whose deadline has been reached,
    /// cancelling its voucher and notifying both sides.
    pub fn expire_sessions(&mut self) -> Vec<OutboundAction> {
        let now = self.now();
        let due: Vec<Session> = self.state().sessions.values().filter(|s| !s.is_closed() && s.deadline <= now).cloned().collect();
        let mut out = Vec::new();
        for session in due {
            match session.voucher.filter(|v| self.state().vouchers.get(v).is_some_and(Voucher::is_open)) {
                Some(voucher) => {
                    self.cancel_voucher(voucher, CancelReason::TimedOut).expect("open voucher cancels");
                    out.push(to_merchant(session.merchant, AppOutbound::Cancelled { voucher, reason: CancelReason::TimedOut }, Some(session.id)));
                }
                None => self.emit(EventPayload::SessionClosed { session: session.id, outcome: Outcome::TimedOut }),
            }
            if let Some(b) = self.state().beneficiaries.get(&session.beneficiary).cloned() {
                let (text, app) = notice("SESSION_TIMEOUT");
                out.splice(out.len().saturating_sub(1)..out.len().saturating_sub(1), to_beneficiary(&b, text, app, Some(session.id)));
            }
        }
        out
    }
}

fn frame_sender(frame: &AppFrame) -> Address {
    let from = frame.body.get("from").and_then(|v| v.as_u64()).unwrap_or(0);
    match frame.kind.as_str() {
        "adjust" | "submit" => Address::Merchant(MerchantId(from)),
        _ => Address::Beneficiary(BeneficiaryId(from)),
    }
}
