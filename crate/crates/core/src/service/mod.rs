//! Organization-facing HTTP service: registries, quota definitions, the
//! charging trigger, the voucher monitor and the reports.
//!
//! Callers identify themselves with an `X-Org-User: U<n>` header. Request
//! and response bodies are JSON. Failures carry a machine-readable reason:
//!
//! ```text
//! 401 {"error":"UNAUTHORIZED","message":"..."}
//! 404 {"error":"UNKNOWN_SCHEDULE","message":"..."}
//! 422 {"error":"INVALID_DATE_RANGE","message":"..."}
//! ```

pub mod reports;

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use chrono::{NaiveDate, NaiveDateTime};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::delivery::VoucherState;
use crate::domain::{Action, Category, ChannelProfile, NewBeneficiary, OrgKind, Region, Role};
use crate::error::Error;
use crate::ids::{MerchantId, OrgUserId, OrganizationId, QuotaId, ScheduleId};
use crate::platform::Platform;
use crate::quota::{ItemSpec, NewQuota, Periodicity};

/// Header carrying the caller's org-user id.
pub const USER_HEADER: &str = "X-Org-User";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub method: Method,
    pub path: String,
    pub query: BTreeMap<String, String>,
    pub user: Option<OrgUserId>,
    pub body: Value,
}

impl Request {
    pub fn get(target: &str) -> Self {
        Self::new(Method::Get, target, Value::Null)
    }

    pub fn post(target: &str, body: Value) -> Self {
        Self::new(Method::Post, target, body)
    }

    /// Splits `target` into path and decoded query parameters.
    pub fn new(method: Method, target: &str, body: Value) -> Self {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        let query = form_urlencoded::parse(query.as_bytes()).into_owned().collect();
        Request { method, path: path.to_owned(), query, user: None, body }
    }

    pub fn as_user(mut self, user: OrgUserId) -> Self {
        self.user = Some(user);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Value,
}

impl Response {
    fn ok(body: impl Serialize) -> Self {
        Response { status: 200, body: serde_json::to_value(body).expect("response serializes") }
    }

    fn created(body: Value) -> Self {
        Response { status: 201, body }
    }

    fn fail(status: u16, reason: &str, message: impl Into<String>) -> Self {
        Response { status, body: json!({ "error": reason, "message": message.into() }) }
    }

    pub fn reason(&self) -> Option<&str> {
        self.body.get("error").and_then(Value::as_str)
    }

    /// Canonical JSON body, as written on the wire.
    pub fn body_text(&self) -> String {
        crate::journal::canonical_json(&self.body)
    }
}

impl From<Error> for Response {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Unauthorized | Error::UnknownOrgUser => 401,
            Error::UnknownOrganization
            | Error::UnknownBeneficiary
            | Error::UnknownMerchant
            | Error::UnknownQuota
            | Error::UnknownSchedule
            | Error::UnknownVoucher(_)
            | Error::UnknownItem(_)
            | Error::UnknownItemCode(_) => 404,
            Error::StorageFailure(_) => 503,
            _ => 422,
        };
        Response::fail(status, e.code(), e.to_string())
    }
}

type Handled = Result<Response, Response>;

fn malformed(message: impl Into<String>) -> Response {
    Response::fail(422, "MALFORMED_REQUEST", message)
}

fn parse_body<T: DeserializeOwned>(body: &Value) -> Result<T, Response> {
    serde_json::from_value(body.clone()).map_err(|e| malformed(e.to_string()))
}

fn parse_param<T: std::str::FromStr>(req: &Request, key: &str) -> Result<Option<T>, Response>
where
    T::Err: std::fmt::Display,
{
    match req.query.get(key).filter(|v| !v.is_empty()) {
        None => Ok(None),
        Some(raw) => raw.parse().map(Some).map_err(|e| malformed(format!("{key}: {e}"))),
    }
}

fn parse_instant(raw: &str) -> Result<NaiveDateTime, Response> {
    raw.parse::<NaiveDateTime>()
        .or_else(|_| raw.parse::<NaiveDate>().map(|d| d.and_hms_opt(0, 0, 0).expect("midnight")))
        .map_err(|_| malformed(format!("now: `{raw}` is not an ISO date or date-time")))
}

/// The role-matrix action an endpoint requires, or `None` for unknown routes.
pub fn required_action(method: Method, path: &str) -> Option<Action> {
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    let action = match (method, segments.as_slice()) {
        (Method::Post, ["orgs"]) => Action::ManageOrganizations,
        (Method::Post, ["org-users"]) => Action::ManageOrgUsers,
        (Method::Post, ["beneficiaries"]) => Action::ManageBeneficiaries,
        (Method::Post, ["merchants"]) => Action::ManageMerchants,
        (Method::Post, ["quotas"]) => Action::DefineQuota,
        (Method::Post, ["quotas", _, "schedules"]) => Action::EditSchedules,
        (Method::Post, ["schedules", _, "items"]) => Action::EditSchedules,
        (Method::Post, ["charging-cycles"]) => Action::RunCharging,
        (Method::Get, ["vouchers"]) => Action::ViewMonitor,
        (Method::Get, ["reports", "region-distribution" | "settlement" | "subsidy-cost"]) => Action::ViewReports,
        (Method::Get, ["quotas"]) | (Method::Get, ["quotas", _, "schedules"]) | (Method::Get, ["schedules", _, "items"]) => Action::ViewDefinitions,
        _ => return None,
    };
    Some(action)
}

#[derive(Deserialize)]
struct NewOrg {
    name: String,
    kind: OrgKind,
}

#[derive(Deserialize)]
struct NewOrgUser {
    org: OrganizationId,
    role: Role,
}

#[derive(Deserialize)]
struct NewMerchant {
    name: String,
    region: Region,
    categories: BTreeSet<Category>,
    #[serde(default = "app_capable")]
    channel_profile: ChannelProfile,
}

fn app_capable() -> ChannelProfile {
    ChannelProfile::AppCapable
}

#[derive(Deserialize)]
struct NewSchedule {
    periodicity: Periodicity,
    valid_from: NaiveDate,
    valid_to: NaiveDate,
    #[serde(default)]
    max_persons: Option<u32>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ItemRows {
    Wrapped { items: Vec<ItemSpec> },
    Bare(Vec<ItemSpec>),
}

/// One row of the live monitor feed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub voucher: crate::ids::VoucherId,
    pub state: VoucherState,
    pub beneficiary: crate::ids::BeneficiaryId,
    pub region: Region,
    pub merchant: MerchantId,
    pub quota: QuotaId,
    pub schedule: ScheduleId,
    pub period_index: u32,
    pub total_merchant_price: crate::money::Money,
    pub total_consumer_price: crate::money::Money,
    pub opened_at: NaiveDateTime,
    pub closed_at: Option<NaiveDateTime>,
}

/// Request router over a shared platform.
#[derive(Clone)]
pub struct OrgService {
    platform: Arc<Mutex<Platform>>,
}

impl OrgService {
    pub fn new(platform: Platform) -> Self {
        OrgService { platform: Arc::new(Mutex::new(platform)) }
    }

    pub fn from_shared(platform: Arc<Mutex<Platform>>) -> Self {
        OrgService { platform }
    }

    pub fn platform(&self) -> Arc<Mutex<Platform>> {
        Arc::clone(&self.platform)
    }

    pub fn handle(&self, req: &Request) -> Response {
        let mut platform = self.platform.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
        route(&mut platform, req).unwrap_or_else(|e| e)
    }

    /// Binds `addr` (port 0 picks a free one) and serves on a background
    /// thread until the handle is stopped.
    pub fn serve(&self, addr: &str) -> std::io::Result<ServiceHandle> {
        let server = Arc::new(tiny_http::Server::http(addr).map_err(std::io::Error::other)?);
        let local = server.server_addr().to_ip().ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let service = self.clone();
        let worker = Arc::clone(&server);
        let thread = std::thread::spawn(move || {
            for mut incoming in worker.incoming_requests() {
                let response = service.handle_http(&mut incoming);
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
                let reply = tiny_http::Response::from_string(response.body_text()).with_status_code(response.status).with_header(header);
                let _ = incoming.respond(reply);
            }
        });
        Ok(ServiceHandle { addr: local, server, thread: Some(thread) })
    }

    fn handle_http(&self, incoming: &mut tiny_http::Request) -> Response {
        let method = match incoming.method() {
            tiny_http::Method::Get => Method::Get,
            tiny_http::Method::Post => Method::Post,
            _ => return Response::fail(405, "METHOD_NOT_ALLOWED", "only GET and POST are served"),
        };
        let mut raw = String::new();
        if incoming.as_reader().read_to_string(&mut raw).is_err() {
            return malformed("body is not UTF-8");
        }
        let body = if raw.trim().is_empty() {
            Value::Null
        } else {
            match serde_json::from_str(&raw) {
                Ok(v) => v,
                Err(e) => return malformed(e.to_string()),
            }
        };
        let mut req = Request::new(method, incoming.url(), body);
        let user = incoming.headers().iter().find(|h| h.field.equiv(USER_HEADER)).map(|h| h.value.as_str().to_owned());
        if let Some(raw) = user {
            match raw.parse() {
                Ok(id) => req.user = Some(id),
                Err(_) => return Response::fail(401, "UNAUTHORIZED", "malformed org-user credential"),
            }
        }
        self.handle(&req)
    }
}

pub struct ServiceHandle {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    /// Blocks until the server thread exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn shutdown(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Authorizes the caller for `action`. Two bootstrap cases need no
/// credential: creating the first organization, and creating the first
/// user of an organization that has none.
fn caller(platform: &Platform, req: &Request, action: Action) -> Result<Option<crate::domain::OrgUser>, Response> {
    let state = platform.state();
    let bootstrap = match action {
        Action::ManageOrganizations => state.organizations.is_empty(),
        Action::ManageOrgUsers => req
            .body
            .get("org")
            .and_then(|v| serde_json::from_value::<OrganizationId>(v.clone()).ok())
            .is_some_and(|org| state.organizations.contains_key(&org) && !state.org_users.values().any(|u| u.org == org)),
        _ => false,
    };
    if bootstrap {
        return Ok(None);
    }
    let Some(user_id) = req.user else {
        return Err(Response::fail(401, "UNAUTHORIZED", "missing X-Org-User credential"));
    };
    let user = state.org_users.get(&user_id).ok_or_else(|| Response::fail(401, "UNAUTHORIZED", "unknown org user"))?;
    if user.role.permits(action) {
        Ok(Some(user.clone()))
    } else {
        Err(Error::Unauthorized.into())
    }
}

fn path_id<T: std::str::FromStr>(raw: &str) -> Result<T, Response>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| malformed(format!("path id: {e}")))
}

fn route(platform: &mut Platform, req: &Request) -> Handled {
    let Some(action) = required_action(req.method, &req.path) else {
        return Err(Response::fail(404, "NOT_FOUND", format!("no endpoint {:?} {}", req.method, req.path)));
    };
    let user = caller(platform, req, action)?;
    let segments: Vec<&str> = req.path.trim_matches('/').split('/').collect();
    match (req.method, segments.as_slice()) {
        (Method::Post, ["orgs"]) => {
            let new: NewOrg = parse_body(&req.body)?;
            let id = platform.execute(|tx| tx.create_organization(&new.name, new.kind))?;
            Ok(Response::created(json!({ "id": id })))
        }
        (Method::Post, ["org-users"]) => {
            let new: NewOrgUser = parse_body(&req.body)?;
            if user.as_ref().is_some_and(|u| u.org != new.org) {
                return Err(Error::Unauthorized.into());
            }
            let id = platform.execute(|tx| tx.create_org_user(new.org, new.role))?;
            Ok(Response::created(json!({ "id": id })))
        }
        (Method::Post, ["beneficiaries"]) => {
            let new: NewBeneficiary = parse_body(&req.body)?;
            let id = platform.execute(|tx| tx.register_beneficiary(new))?;
            Ok(Response::created(json!({ "id": id })))
        }
        (Method::Post, ["merchants"]) => {
            let new: NewMerchant = parse_body(&req.body)?;
            let id = platform.execute(|tx| tx.register_merchant(&new.name, new.region, new.categories, new.channel_profile))?;
            Ok(Response::created(json!({ "id": id })))
        }
        (Method::Post, ["quotas"]) => {
            let new: NewQuota = parse_body(&req.body)?;
            let uid = user.expect("authorized").id;
            let id = platform.execute(|tx| tx.define_quota(uid, new))?;
            Ok(Response::created(json!({ "id": id })))
        }
        (Method::Post, ["quotas", id, "schedules"]) => {
            let quota: QuotaId = path_id(id)?;
            let new: NewSchedule = parse_body(&req.body)?;
            let uid = user.expect("authorized").id;
            let id = platform.execute(|tx| tx.define_schedule(uid, quota, new.periodicity, new.valid_from, new.valid_to, new.max_persons))?;
            Ok(Response::created(json!({ "id": id })))
        }
        (Method::Post, ["schedules", id, "items"]) => {
            let schedule: ScheduleId = path_id(id)?;
            let rows = match parse_body::<ItemRows>(&req.body)? {
                ItemRows::Wrapped { items } | ItemRows::Bare(items) => items,
            };
            let uid = user.expect("authorized").id;
            let ids = platform.execute(|tx| tx.set_items(uid, schedule, rows))?;
            Ok(Response::created(json!({ "items": ids })))
        }
        (Method::Post, ["charging-cycles"]) => {
            let now = req.query.get("now").map(|raw| parse_instant(raw)).transpose()?;
            let (report, outbound) = platform.run_charging_cycle(now)?;
            let mut body = serde_json::to_value(&report).expect("report serializes");
            body["notifications_sent"] = json!(outbound.len());
            body["now"] = json!(platform.now());
            Ok(Response::ok(body))
        }
        (Method::Get, ["vouchers"]) => monitor(platform, req, &user.expect("authorized")),
        (Method::Get, ["reports", which]) => report(platform, req, which, &user.expect("authorized")),
        (Method::Get, ["quotas"]) => {
            let org = user.expect("authorized").org;
            let quotas: Vec<_> = platform.state().quotas.values().filter(|q| q.org == org).cloned().collect();
            Ok(Response::ok(quotas))
        }
        (Method::Get, ["quotas", id, "schedules"]) => {
            let quota: QuotaId = path_id(id)?;
            let org = user.expect("authorized").org;
            let q = platform.state().quotas.get(&quota).ok_or(Error::UnknownQuota)?;
            if q.org != org {
                return Err(Error::Unauthorized.into());
            }
            let schedules: Vec<_> = platform.state().schedules.values().filter(|s| s.quota == quota).cloned().collect();
            Ok(Response::ok(schedules))
        }
        (Method::Get, ["schedules", id, "items"]) => {
            let schedule: ScheduleId = path_id(id)?;
            let org = user.expect("authorized").org;
            let state = platform.state();
            let s = state.schedules.get(&schedule).ok_or(Error::UnknownSchedule)?;
            if state.quotas[&s.quota].org != org {
                return Err(Error::Unauthorized.into());
            }
            Ok(Response::ok(state.items_for(schedule)))
        }
        _ => Err(Response::fail(404, "NOT_FOUND", req.path.clone())),
    }
}

fn parse_state(raw: &str) -> Result<VoucherState, Response> {
    match raw.to_ascii_lowercase().as_str() {
        "notdelivered" | "not_delivered" | "open" => Ok(VoucherState::NotDelivered),
        "delivered" => Ok(VoucherState::Delivered),
        "cancelled" => Ok(VoucherState::Cancelled),
        _ => Err(malformed(format!("state: unknown voucher state `{raw}`"))),
    }
}

/// Non-cancelled vouchers of the caller's organization matching the filters.
pub fn monitor_rows(
    platform: &Platform,
    org: OrganizationId,
    state_filter: Option<VoucherState>,
    schedule: Option<ScheduleId>,
    region: Option<&Region>,
) -> Vec<MonitorRow> {
    let state = platform.state();
    state
        .vouchers
        .values()
        .filter(|v| v.state != VoucherState::Cancelled)
        .filter(|v| state.quotas.get(&v.quota).is_some_and(|q| q.org == org))
        .filter(|v| state_filter.is_none_or(|s| v.state == s))
        .filter(|v| schedule.is_none_or(|s| v.schedule == s))
        .filter_map(|v| {
            let b_region = state.beneficiaries.get(&v.beneficiary)?.region.clone();
            region.is_none_or(|r| *r == b_region).then_some(MonitorRow {
                voucher: v.id,
                state: v.state,
                beneficiary: v.beneficiary,
                region: b_region,
                merchant: v.merchant,
                quota: v.quota,
                schedule: v.schedule,
                period_index: v.period_index,
                total_merchant_price: v.total_merchant_price,
                total_consumer_price: v.total_consumer_price,
                opened_at: v.opened_at,
                closed_at: v.closed_at,
            })
        })
        .collect()
}

fn monitor(platform: &Platform, req: &Request, user: &crate::domain::OrgUser) -> Handled {
    let state_filter = req.query.get("state").filter(|s| !s.is_empty()).map(|s| parse_state(s)).transpose()?;
    if state_filter == Some(VoucherState::Cancelled) {
        return Ok(Response::ok(Vec::<MonitorRow>::new()));
    }
    let schedule: Option<ScheduleId> = parse_param(req, "schedule")?;
    let region: Option<Region> = parse_param(req, "region")?;
    let offset: usize = parse_param(req, "offset")?.unwrap_or(0);
    let limit: usize = parse_param(req, "limit")?.unwrap_or(usize::MAX);
    let rows: Vec<MonitorRow> =
        monitor_rows(platform, user.org, state_filter, schedule, region.as_ref()).into_iter().skip(offset).take(limit).collect();
    Ok(Response::ok(rows))
}

fn report(platform: &Platform, req: &Request, which: &str, user: &crate::domain::OrgUser) -> Handled {
    let events = platform.journal().read_all().map_err(|e| Response::from(Error::StorageFailure(e.to_string())))?;
    let period: Option<u32> = parse_param(req, "period")?;
    match which {
        "region-distribution" => {
            let raw = req.query.get("quota").ok_or_else(|| malformed("quota is required"))?;
            let quota = raw
                .parse::<QuotaId>()
                .ok()
                .or_else(|| platform.state().quota_by_code(&raw.to_ascii_uppercase()).map(|q| q.id))
                .ok_or(Error::UnknownQuota)?;
            let q = platform.state().quotas.get(&quota).ok_or(Error::UnknownQuota)?;
            if q.org != user.org {
                return Err(Error::Unauthorized.into());
            }
            let period = period.ok_or_else(|| malformed("period is required"))?;
            Ok(Response::ok(reports::region_distribution(&events, quota, period)))
        }
        "settlement" => {
            let merchant: MerchantId = parse_param(req, "merchant")?.ok_or_else(|| malformed("merchant is required"))?;
            if !platform.state().merchants.contains_key(&merchant) {
                return Err(Error::UnknownMerchant.into());
            }
            Ok(Response::ok(reports::settlement(&events, merchant, period)))
        }
        "subsidy-cost" => {
            let org: OrganizationId = parse_param(req, "org")?.unwrap_or(user.org);
            if !platform.state().organizations.contains_key(&org) {
                return Err(Error::UnknownOrganization.into());
            }
            if org != user.org {
                return Err(Error::Unauthorized.into());
            }
            Ok(Response::ok(reports::subsidy_cost(&events, org, period)))
        }
        _ => Err(Response::fail(404, "NOT_FOUND", req.path.clone())),
    }
}
