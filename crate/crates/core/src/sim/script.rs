//! Scripted actor runs.
//!
//! One step per line; blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! <when> <actor> text <body>            beneficiary text message
//! <when> <actor> app <kind> [<json>]    app frame; `from` is filled in
//! <when> <user> admin GET|POST <path> [<json>]
//! <when> clock                          only moves the clock
//! expect <assertion...>
//! ```
//!
//! `<when>` is an ISO date-time (`2024-01-05T10:00`), `+<duration>`
//! relative to the previous step (`+PT2M`), or `=` for the same instant.
//! Times never go backwards; moving forward runs every charging cycle and
//! session timeout on the way. `$pin` in a body is replaced by the actor's
//! pin from the seed manifest.
//!
//! Assertions:
//!
//! ```text
//! expect voucher V1 Delivered
//! expect balance B1 6.00
//! expect entitlement B1 FOOD 0 Claimed
//! expect entitlements B1 FOOD 12
//! expect reply B1 DONE V1
//! expect leave-rate FOOD 0 rural:Benha OIL 1.0
//! expect settlement M1 13.50
//! expect sessions-closed
//! expect invariants
//! ```

use std::sync::{Arc, Mutex};

use chrono::{NaiveDate, NaiveDateTime};
use serde_json::Value;

use super::clock::CalendarDuration;
use super::seed::Manifest;
use crate::channels::AppFrame;
use crate::delivery::VoucherState;
use crate::domain::Region;
use crate::ids::{BeneficiaryId, MerchantId, OrgUserId, VoucherId};
use crate::money::Money;
use crate::orchestrator::{Address, Inbound, OutboundAction, OutboundPayload};
use crate::platform::Platform;
use crate::quota::EntitlementStatus;
use crate::service::{reports, Method, OrgService, Request};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum When {
    At(NaiveDateTime),
    After(CalendarDuration),
    Same,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Actor {
    Beneficiary(BeneficiaryId),
    Merchant(MerchantId),
    User(OrgUserId),
    Clock,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Text(String),
    App { kind: String, body: Value },
    Admin { method: Method, target: String, body: Value },
    Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Assertion {
    Voucher(VoucherId, VoucherState),
    Balance(BeneficiaryId, Money),
    Entitlement { beneficiary: BeneficiaryId, quota: String, period: u32, status: EntitlementStatus },
    EntitlementCount { beneficiary: BeneficiaryId, quota: Option<String>, count: usize },
    Reply { to: Actor, prefix: String },
    LeaveRate { quota: String, period: u32, region: Region, item: String, rate: f64 },
    Settlement(MerchantId, Money),
    SessionsClosed,
    Invariants,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Do { when: When, actor: Actor, action: Action },
    Expect(Assertion),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub steps: Vec<(usize, Step)>,
}

fn err(line: usize, message: impl Into<String>) -> ScriptError {
    ScriptError { line, message: message.into() }
}

fn parse_when(raw: &str, line: usize) -> Result<When, ScriptError> {
    if raw == "=" {
        return Ok(When::Same);
    }
    if let Some(d) = raw.strip_prefix('+') {
        return CalendarDuration::parse(d).map(When::After).map_err(|e| err(line, e.to_string()));
    }
    parse_instant(raw).map(When::At).ok_or_else(|| err(line, format!("bad time `{raw}`")))
}

/// ISO date, or date-time with or without seconds.
pub fn parse_instant(raw: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M"))
        .ok()
        .or_else(|| NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0)))
}

fn parse_actor(raw: &str, line: usize) -> Result<Actor, ScriptError> {
    if raw.eq_ignore_ascii_case("clock") {
        return Ok(Actor::Clock);
    }
    let bad = || err(line, format!("bad actor `{raw}`"));
    match raw.chars().next().map(|c| c.to_ascii_uppercase()) {
        Some('B') => raw.parse().map(Actor::Beneficiary).map_err(|_| bad()),
        Some('M') => raw.parse().map(Actor::Merchant).map_err(|_| bad()),
        Some('U') => raw.parse().map(Actor::User).map_err(|_| bad()),
        _ => Err(bad()),
    }
}

fn parse_json(raw: &str, line: usize) -> Result<Value, ScriptError> {
    if raw.trim().is_empty() {
        return Ok(Value::Null);
    }
    serde_json::from_str(raw).map_err(|e| err(line, format!("bad json: {e}")))
}

fn parse_state(raw: &str, line: usize) -> Result<VoucherState, ScriptError> {
    match raw.to_ascii_lowercase().as_str() {
        "delivered" => Ok(VoucherState::Delivered),
        "notdelivered" => Ok(VoucherState::NotDelivered),
        "cancelled" => Ok(VoucherState::Cancelled),
        _ => Err(err(line, format!("bad voucher state `{raw}`"))),
    }
}

fn parse_status(raw: &str, line: usize) -> Result<EntitlementStatus, ScriptError> {
    match raw.to_ascii_lowercase().as_str() {
        "open" => Ok(EntitlementStatus::Open),
        "claimed" => Ok(EntitlementStatus::Claimed),
        "expired" => Ok(EntitlementStatus::Expired),
        _ => Err(err(line, format!("bad entitlement status `{raw}`"))),
    }
}

fn parse_assertion(words: &[&str], rest: &str, line: usize) -> Result<Assertion, ScriptError> {
    let arg = |i: usize| words.get(i).copied().ok_or_else(|| err(line, "assertion is missing arguments"));
    let id = |i: usize| -> Result<u64, ScriptError> {
        let raw = arg(i)?;
        raw.trim_start_matches(|c: char| c.is_ascii_alphabetic()).parse().map_err(|_| err(line, format!("bad id `{raw}`")))
    };
    let money = |i: usize| arg(i)?.parse::<Money>().map_err(|e| err(line, e.to_string()));
    let number = |i: usize| arg(i)?.parse::<u32>().map_err(|_| err(line, "expected a number"));
    Ok(match arg(0)? {
        "voucher" => Assertion::Voucher(VoucherId(id(1)?), parse_state(arg(2)?, line)?),
        "balance" => Assertion::Balance(BeneficiaryId(id(1)?), money(2)?),
        "entitlement" => Assertion::Entitlement {
            beneficiary: BeneficiaryId(id(1)?),
            quota: arg(2)?.to_ascii_uppercase(),
            period: number(3)?,
            status: parse_status(arg(4)?, line)?,
        },
        "entitlements" => match words.len() {
            3 => Assertion::EntitlementCount { beneficiary: BeneficiaryId(id(1)?), quota: None, count: number(2)? as usize },
            _ => Assertion::EntitlementCount {
                beneficiary: BeneficiaryId(id(1)?),
                quota: Some(arg(2)?.to_ascii_uppercase()),
                count: number(3)? as usize,
            },
        },
        "reply" => {
            let to = parse_actor(arg(1)?, line)?;
            let prefix = rest.splitn(3, ' ').nth(2).unwrap_or("").trim().to_owned();
            Assertion::Reply { to, prefix }
        }
        "leave-rate" => Assertion::LeaveRate {
            quota: arg(1)?.to_ascii_uppercase(),
            period: number(2)?,
            region: arg(3)?.parse().map_err(|e: crate::Error| err(line, e.to_string()))?,
            item: arg(4)?.to_ascii_uppercase(),
            rate: arg(5)?.parse().map_err(|_| err(line, "bad rate"))?,
        },
        "settlement" => Assertion::Settlement(MerchantId(id(1)?), money(2)?),
        "sessions-closed" => Assertion::SessionsClosed,
        "invariants" => Assertion::Invariants,
        other => return Err(err(line, format!("unknown assertion `{other}`"))),
    })
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix("expect ") {
                let words: Vec<&str> = rest.split_whitespace().collect();
                steps.push((line, Step::Expect(parse_assertion(&words, rest, line)?)));
                continue;
            }
            let mut parts = trimmed.splitn(4, ' ');
            let when = parse_when(parts.next().unwrap_or_default(), line)?;
            let actor = parse_actor(parts.next().ok_or_else(|| err(line, "missing actor"))?, line)?;
            if actor == Actor::Clock {
                steps.push((line, Step::Do { when, actor, action: Action::Tick }));
                continue;
            }
            let channel = parts.next().ok_or_else(|| err(line, "missing channel"))?;
            let payload = parts.next().unwrap_or("").trim();
            let action = match (channel, &actor) {
                ("text", Actor::Beneficiary(_)) => Action::Text(payload.to_owned()),
                ("app", Actor::Beneficiary(_) | Actor::Merchant(_)) => {
                    let (kind, body) = payload.split_once(' ').unwrap_or((payload, ""));
                    if kind.is_empty() {
                        return Err(err(line, "missing frame kind"));
                    }
                    let body = match parse_json(body, line)? {
                        Value::Null => Value::Object(Default::default()),
                        v => v,
                    };
                    Action::App { kind: kind.to_owned(), body }
                }
                ("admin", Actor::User(_)) => {
                    let mut words = payload.splitn(3, ' ');
                    let method = match words.next().map(str::to_ascii_uppercase).as_deref() {
                        Some("GET") => Method::Get,
                        Some("POST") => Method::Post,
                        _ => return Err(err(line, "admin step needs GET or POST")),
                    };
                    let target = words.next().ok_or_else(|| err(line, "admin step needs a path"))?.to_owned();
                    Action::Admin { method, target, body: parse_json(words.next().unwrap_or(""), line)? }
                }
                (c, a) => return Err(err(line, format!("actor {a:?} cannot use channel `{c}`"))),
            };
            steps.push((line, Step::Do { when, actor, action }));
        }
        Ok(Script { steps })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssertionResult {
    pub line: usize,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlayReport {
    pub transcript: Vec<String>,
    pub assertions: Vec<AssertionResult>,
}

impl PlayReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

/// Drives a platform through scripts, recording what each actor saw.
pub struct Player {
    platform: Arc<Mutex<Platform>>,
    service: OrgService,
    manifest: Option<Manifest>,
    last_reply: std::collections::BTreeMap<Actor, String>,
}

impl Player {
    pub fn new(platform: Arc<Mutex<Platform>>, manifest: Option<Manifest>) -> Self {
        let service = OrgService::from_shared(Arc::clone(&platform));
        Player { platform, service, manifest, last_reply: Default::default() }
    }

    pub fn platform(&self) -> Arc<Mutex<Platform>> {
        Arc::clone(&self.platform)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Platform> {
        self.platform.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn play(&mut self, script: &Script) -> Result<PlayReport, ScriptError> {
        let mut report = PlayReport::default();
        for (line, step) in &script.steps {
            match step {
                Step::Do { when, actor, action } => self.perform(*line, when, actor, action, &mut report)?,
                Step::Expect(assertion) => {
                    let (passed, detail) = self.check(assertion);
                    report.assertions.push(AssertionResult { line: *line, passed, detail });
                }
            }
        }
        Ok(report)
    }

    fn perform(&mut self, line: usize, when: &When, actor: &Actor, action: &Action, report: &mut PlayReport) -> Result<(), ScriptError> {
        let now = self.lock().now();
        let at = match when {
            When::At(t) => *t,
            When::After(d) => d.after(now).ok_or_else(|| err(line, "time overflow"))?,
            When::Same => now,
        };
        if at < now {
            return Err(err(line, format!("time {at} is before the current clock {now}")));
        }
        let clock_out = self.lock().advance_clock(at).map_err(|e| err(line, e.to_string()))?;
        for (t, action) in &clock_out.outbound {
            self.record_outbound(*t, std::slice::from_ref(action), report);
        }
        let stamp = at.format("%Y-%m-%dT%H:%M:%S");
        match action {
            Action::Tick => report.transcript.push(format!("{stamp} clock {}", at)),
            Action::Text(body) => {
                let Actor::Beneficiary(b) = actor else { unreachable!("checked at parse") };
                let body = self.substitute(*b, body);
                let mobile = self.lock().state().beneficiaries.get(b).map(|x| x.mobile.clone()).unwrap_or_else(|| b.to_string());
                report.transcript.push(format!("{stamp} > {actor_label} text {shown}", actor_label = label(actor), shown = redact_text(&body)));
                let out = self.lock().handle_inbound(&Inbound::Text { mobile, body }).map_err(|e| err(line, e.to_string()))?;
                self.record_outbound(at, &out, report);
            }
            Action::App { kind, body } => {
                let mut body = body.clone();
                let from = match actor {
                    Actor::Beneficiary(b) => b.0,
                    Actor::Merchant(m) => m.0,
                    _ => unreachable!("checked at parse"),
                };
                if let Value::Object(map) = &mut body {
                    map.entry("from").or_insert(Value::from(from));
                    if let (Actor::Beneficiary(b), Some(Value::String(pin))) = (actor, map.get_mut("pin")) {
                        *pin = self.manifest_pin(*b).filter(|_| pin == "$pin").unwrap_or_else(|| pin.clone());
                    }
                }
                let frame = AppFrame { kind: kind.clone(), session: None, body };
                let shown = match crate::channels::AppInbound::from_frame(&frame) {
                    Ok(m) => m.redacted(),
                    Err(_) => crate::journal::canonical_json(&frame),
                };
                report.transcript.push(format!("{stamp} > {} app {shown}", label(actor)));
                let out = self.lock().handle_inbound(&Inbound::App(frame)).map_err(|e| err(line, e.to_string()))?;
                self.record_outbound(at, &out, report);
            }
            Action::Admin { method, target, body } => {
                let Actor::User(u) = actor else { unreachable!("checked at parse") };
                let req = Request::new(*method, target, body.clone()).as_user(*u);
                let resp = self.service.handle(&req);
                report.transcript.push(format!("{stamp} > {} admin {method:?} {target}", label(actor)));
                let summary = format!("{} {}", resp.status, resp.body_text());
                report.transcript.push(format!("{stamp} < {} admin {summary}", label(actor)));
                self.last_reply.insert(actor.clone(), summary);
            }
        }
        Ok(())
    }

    fn manifest_pin(&self, b: BeneficiaryId) -> Option<String> {
        self.manifest.as_ref()?.beneficiary(b).map(|e| e.pin.clone())
    }

    fn substitute(&self, b: BeneficiaryId, body: &str) -> String {
        match self.manifest_pin(b) {
            Some(pin) => body.replace("$pin", &pin),
            None => body.to_owned(),
        }
    }

    fn record_outbound(&mut self, at: NaiveDateTime, out: &[OutboundAction], report: &mut PlayReport) {
        let stamp = at.format("%Y-%m-%dT%H:%M:%S");
        for action in out {
            let actor = self.actor_for(&action.to);
            let shown = match &action.payload {
                OutboundPayload::Text(t) => format!("text {t}"),
                OutboundPayload::App(f) => format!("app {} {}", f.kind, crate::journal::canonical_json(&f.body)),
            };
            let who = actor.as_ref().map(label).unwrap_or_else(|| action.to.to_string());
            report.transcript.push(format!("{stamp} < {who} {shown}"));
            if let Some(actor) = actor {
                let reply = match &action.payload {
                    OutboundPayload::Text(t) => t.clone(),
                    OutboundPayload::App(f) => format!("{} {}", f.kind, crate::journal::canonical_json(&f.body)),
                };
                self.last_reply.insert(actor, reply);
            }
        }
    }

    fn actor_for(&self, to: &Address) -> Option<Actor> {
        match to {
            Address::Beneficiary(b) => Some(Actor::Beneficiary(*b)),
            Address::Merchant(m) => Some(Actor::Merchant(*m)),
            Address::Mobile(mobile) => self.lock().state().beneficiary_by_mobile(mobile).map(|b| Actor::Beneficiary(b.id)),
        }
    }

    fn check(&self, assertion: &Assertion) -> (bool, String) {
        let platform = self.lock();
        let state = platform.state();
        match assertion {
            Assertion::Voucher(v, expected) => {
                let got = state.vouchers.get(v).map(|x| x.state);
                (got == Some(*expected), format!("voucher {v}: expected {expected:?}, got {got:?}"))
            }
            Assertion::Balance(b, expected) => {
                let got = state.beneficiaries.get(b).map(|x| x.cash_balance);
                (got == Some(*expected), format!("balance {b}: expected {expected}, got {}", got.map_or("none".into(), |m| m.to_string())))
            }
            Assertion::Entitlement { beneficiary, quota, period, status } => {
                let got = state.quota_by_code(quota).and_then(|q| {
                    state
                        .entitlements
                        .values()
                        .find(|e| e.beneficiary == *beneficiary && e.period_index == *period && state.schedules[&e.schedule].quota == q.id)
                        .map(|e| e.status)
                });
                (got == Some(*status), format!("entitlement {beneficiary} {quota} {period}: expected {status:?}, got {got:?}"))
            }
            Assertion::EntitlementCount { beneficiary, quota, count } => {
                let quota_id = quota.as_ref().map(|code| state.quota_by_code(code).map(|q| q.id));
                let got = state
                    .entitlements
                    .values()
                    .filter(|e| e.beneficiary == *beneficiary)
                    .filter(|e| quota_id.is_none_or(|q| Some(state.schedules[&e.schedule].quota) == q))
                    .count();
                (got == *count, format!("entitlements of {beneficiary}: expected {count}, got {got}"))
            }
            Assertion::Reply { to, prefix } => {
                let got = self.last_reply.get(to).cloned().unwrap_or_default();
                (got.starts_with(prefix.as_str()), format!("last reply to {}: expected `{prefix}...`, got `{got}`", label(to)))
            }
            Assertion::LeaveRate { quota, period, region, item, rate } => {
                let Some(q) = state.quota_by_code(quota) else {
                    return (false, format!("unknown quota {quota}"));
                };
                let events = platform.journal().read_all().unwrap_or_default();
                let report = reports::region_distribution(&events, q.id, *period);
                let got = report.rows.iter().find(|r| r.region == *region && r.item == *item).map(|r| r.leave_rate);
                let passed = got.is_some_and(|g| (g - rate).abs() < 1e-9);
                (passed, format!("leave rate {quota}/{period} {region} {item}: expected {rate}, got {got:?}"))
            }
            Assertion::Settlement(m, expected) => {
                let events = platform.journal().read_all().unwrap_or_default();
                let got = reports::settlement(&events, *m, None).total_settlement;
                (got == *expected, format!("settlement {m}: expected {expected}, got {got}"))
            }
            Assertion::SessionsClosed => {
                let open = state.sessions.values().filter(|s| !s.is_closed()).count();
                (open == 0, format!("{open} session(s) still open"))
            }
            Assertion::Invariants => {
                let bad = state.check_invariants();
                (bad.is_empty(), if bad.is_empty() { "invariants hold".into() } else { bad.join("; ") })
            }
        }
    }
}

fn label(actor: &Actor) -> String {
    match actor {
        Actor::Beneficiary(b) => b.to_string(),
        Actor::Merchant(m) => m.to_string(),
        Actor::User(u) => u.to_string(),
        Actor::Clock => "clock".into(),
    }
}

fn redact_text(body: &str) -> String {
    match crate::channels::parse_text(body) {
        Ok(m) => m.redacted(),
        Err(_) => body.to_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_step_kind() {
        let text = r#"
# comment
2024-01-05T10:00 B1 text REQ FOOD
+PT1M M1 app adjust {"voucher":1,"item":"OIL","qty":"0.000"}
= M1 app submit {"voucher":1}
+PT1M B1 text OK $pin
2024-02-01 U1 admin POST /charging-cycles?now=2024-02-01
2024-02-02 clock
expect voucher V1 Delivered
expect balance B1 1.50
expect reply B1 DONE V1
expect leave-rate FOOD 0 urban:Cairo OIL 1.0
expect sessions-closed
"#;
        let script = Script::parse(text).unwrap();
        assert_eq!(script.steps.len(), 11);
        assert!(
            matches!(&script.steps[0].1, Step::Do { actor: Actor::Beneficiary(BeneficiaryId(1)), action: Action::Text(t), .. } if t == "REQ FOOD")
        );
        assert!(matches!(&script.steps[8].1, Step::Expect(Assertion::Reply { prefix, .. }) if prefix == "DONE V1"));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert_eq!(Script::parse("yesterday B1 text BAL").unwrap_err().line, 1);
        assert!(Script::parse("2024-01-01 M1 text BAL").is_err());
        assert!(Script::parse("2024-01-01 U1 admin PUT /orgs").is_err());
        assert!(Script::parse("expect nonsense").is_err());
    }
}
