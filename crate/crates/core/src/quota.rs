//! Quota definitions, distribution schedules, period arithmetic and the
//! charging cycle that credits beneficiaries with entitlements.

use chrono::{Datelike, Days, Months, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::domain::{Action, Beneficiary, Category};
use crate::error::{Error, Result};
use crate::ids::{BeneficiaryId, ItemId, OrgUserId, OrganizationId, QuotaId, ScheduleId};
use crate::money::{Money, Quantity};
use crate::state::{EventPayload, State, Tx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Personal,
    Family,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quota {
    pub id: QuotaId,
    pub org: OrganizationId,
    /// Short uppercase token used on the text channel (`REQ FOOD`).
    pub code: String,
    pub name: String,
    pub basis: Basis,
    pub notify_on_charge: bool,
    pub category: Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Periodicity {
    Once,
    Daily,
    Weekly,
    Monthly,
    Yearly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaSchedule {
    pub id: ScheduleId,
    pub quota: QuotaId,
    pub periodicity: Periodicity,
    pub valid_from: NaiveDate,
    pub valid_to: NaiveDate,
    pub max_persons: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaItem {
    pub item_id: ItemId,
    pub schedule: ScheduleId,
    /// Item code, a single uppercase token (`OIL`, `SUGAR`).
    pub name: String,
    pub unit: String,
    pub qty_per_person: Quantity,
    pub unit_merchant_price: Money,
    pub unit_consumer_price: Money,
    pub unit_org_cost: Money,
}

impl QuotaItem {
    /// Subsidy carried by one unit: what the merchant charges minus what
    /// the consumer pays.
    pub fn unit_subsidy(&self) -> Money {
        self.unit_merchant_price - self.unit_consumer_price
    }
}

/// One row of a `set_items` request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub name: String,
    pub unit: String,
    pub qty_per_person: Quantity,
    pub unit_merchant_price: Money,
    pub unit_consumer_price: Money,
    pub unit_org_cost: Money,
}

impl ItemSpec {
    pub fn validate(&self) -> Result<()> {
        if !is_code(&self.name) {
            return Err(Error::validation(format!("item name `{}` must be an uppercase token", self.name)));
        }
        if self.unit.trim().is_empty() {
            return Err(Error::validation("item unit is empty"));
        }
        if self.qty_per_person.is_zero() {
            return Err(Error::validation("qty_per_person must be positive"));
        }
        if self.unit_merchant_price.is_negative() || self.unit_consumer_price.is_negative() || self.unit_org_cost.is_negative() {
            return Err(Error::validation("prices must not be negative"));
        }
        if self.unit_consumer_price > self.unit_merchant_price {
            return Err(Error::validation("consumer price exceeds merchant price"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntitlementStatus {
    Open,
    Claimed,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntitlementKey {
    pub beneficiary: BeneficiaryId,
    pub schedule: ScheduleId,
    pub period_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entitlement {
    pub beneficiary: BeneficiaryId,
    pub schedule: ScheduleId,
    pub period_index: u32,
    pub charged_at: NaiveDateTime,
    pub status: EntitlementStatus,
}

impl Entitlement {
    pub fn key(&self) -> EntitlementKey {
        EntitlementKey { beneficiary: self.beneficiary, schedule: self.schedule, period_index: self.period_index }
    }
}

/// Marker for a date outside a schedule's validity window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutOfWindow;

/// Period number of `date` within the schedule, anchored at `valid_from`.
///
/// Months and years count calendar boundaries; days and weeks count elapsed
/// days.
pub fn period_index(schedule: &QuotaSchedule, date: NaiveDate) -> Result<u32, OutOfWindow> {
    if date < schedule.valid_from || date > schedule.valid_to {
        return Err(OutOfWindow);
    }
    let from = schedule.valid_from;
    let days = (date - from).num_days();
    let index = match schedule.periodicity {
        Periodicity::Once => 0,
        Periodicity::Daily => days,
        Periodicity::Weekly => days / 7,
        Periodicity::Monthly => i64::from(date.year() - from.year()) * 12 + i64::from(date.month()) - i64::from(from.month()),
        Periodicity::Yearly => i64::from(date.year() - from.year()),
    };
    Ok(u32::try_from(index).expect("in-window period index is non-negative"))
}

/// First day of period `index`, or `None` if that period starts after the
/// window closes.
pub fn period_start(schedule: &QuotaSchedule, index: u32) -> Option<NaiveDate> {
    let from = schedule.valid_from;
    let start = if index == 0 {
        Some(from)
    } else {
        match schedule.periodicity {
            Periodicity::Once => None,
            Periodicity::Daily => from.checked_add_days(Days::new(u64::from(index))),
            Periodicity::Weekly => from.checked_add_days(Days::new(7 * u64::from(index))),
            Periodicity::Monthly => from.with_day(1).and_then(|d| d.checked_add_months(Months::new(index))),
            Periodicity::Yearly => NaiveDate::from_ymd_opt(from.year() + index as i32, 1, 1),
        }
    };
    start.filter(|d| *d <= schedule.valid_to)
}

/// Dates in `(after, until]` at which some period of the schedule begins or
/// the window closes (the day after `valid_to`).
pub fn boundaries_between(schedule: &QuotaSchedule, after: NaiveDate, until: NaiveDate) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    if until <= after {
        return out;
    }
    let first = match period_index(schedule, after) {
        Ok(p) => p + 1,
        Err(_) if after < schedule.valid_from => 0,
        Err(_) => u32::MAX,
    };
    if first != u32::MAX {
        let mut index = first;
        while let Some(start) = period_start(schedule, index) {
            if start > until {
                break;
            }
            if start > after {
                out.push(start);
            }
            index += 1;
        }
    }
    if let Some(close) = schedule.valid_to.succ_opt() {
        if close > after && close <= until {
            out.push(close);
        }
    }
    out
}

/// Number of persons a voucher is charged for. Personal quotas count one;
/// family quotas count the household, capped by the schedule. An unknown
/// beneficiary or a zero family size falls back to one.
pub fn persons_multiplier(quota: &Quota, schedule: &QuotaSchedule, beneficiary: Option<&Beneficiary>) -> u32 {
    match quota.basis {
        Basis::Personal => 1,
        Basis::Family => {
            let family = beneficiary.map(|b| b.family_size).filter(|n| *n >= 1).unwrap_or(1);
            match schedule.max_persons {
                Some(cap) => family.min(cap.max(1)),
                None => family,
            }
        }
    }
}

/// Input for [`Tx::define_quota`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewQuota {
    pub code: String,
    pub name: String,
    pub basis: Basis,
    pub notify_on_charge: bool,
    #[serde(default = "default_category")]
    pub category: Category,
}

fn default_category() -> Category {
    Category::Food
}

pub(crate) fn is_code(s: &str) -> bool {
    !s.is_empty() && s.len() <= 16 && s.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_')
}

/// A notification owed to a beneficiary for a newly charged entitlement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeNotice {
    pub beneficiary: BeneficiaryId,
    pub quota: QuotaId,
    pub quota_code: String,
    pub schedule: ScheduleId,
    pub period_index: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeReport {
    pub created: Vec<EntitlementKey>,
    pub expired: Vec<EntitlementKey>,
    pub notifications: Vec<ChargeNotice>,
    /// Schedules passed over, with the reason.
    pub skipped: Vec<(ScheduleId, String)>,
}

/// One row of a `query_quota` answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemAvailability {
    pub item_id: ItemId,
    pub name: String,
    pub unit: String,
    pub entitled_qty: Quantity,
    pub unit_merchant_price: Money,
    pub unit_consumer_price: Money,
    pub status: EntitlementStatus,
}

/// Result of [`query_quota`]: never an error, always a flag plus message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaQuery {
    pub success: bool,
    pub message: String,
    pub items: Vec<ItemAvailability>,
}

impl QuotaQuery {
    fn fail(reason: &str) -> Self {
        QuotaQuery { success: false, message: reason.to_owned(), items: Vec::new() }
    }
}

/// Available quota items for a beneficiary in the period containing `now`.
pub fn query_quota(state: &State, beneficiary: BeneficiaryId, quota: QuotaId, schedule: ScheduleId, now: NaiveDateTime) -> QuotaQuery {
    let Some(person) = state.beneficiaries.get(&beneficiary) else {
        return QuotaQuery::fail("UnknownBeneficiary");
    };
    let (Some(q), Some(s)) = (state.quotas.get(&quota), state.schedules.get(&schedule)) else {
        return QuotaQuery::fail("UnknownSchedule");
    };
    if s.quota != q.id {
        return QuotaQuery::fail("UnknownSchedule");
    }
    let Ok(period) = period_index(s, now.date()) else {
        return QuotaQuery::fail("OutOfWindow");
    };
    let key = EntitlementKey { beneficiary, schedule, period_index: period };
    let status = match state.entitlements.get(&key) {
        Some(e) if e.status == EntitlementStatus::Open => e.status,
        _ => return QuotaQuery::fail("NoOpenEntitlement"),
    };
    let persons = persons_multiplier(q, s, Some(person));
    let items = state
        .items_for(schedule)
        .iter()
        .map(|item| ItemAvailability {
            item_id: item.item_id,
            name: item.name.clone(),
            unit: item.unit.clone(),
            entitled_qty: item.qty_per_person.scale(persons),
            unit_merchant_price: item.unit_merchant_price,
            unit_consumer_price: item.unit_consumer_price,
            status,
        })
        .collect();
    QuotaQuery { success: true, message: "OK".into(), items }
}

impl Tx {
    pub fn define_quota(&mut self, user: OrgUserId, new: NewQuota) -> Result<QuotaId> {
        let caller = self.authorize(user, Action::DefineQuota)?;
        let code = new.code.to_ascii_uppercase();
        if !is_code(&code) {
            return Err(Error::validation("quota code must be 1-16 of A-Z, 0-9, _"));
        }
        if self.state().quota_by_code(&code).is_some() {
            return Err(Error::validation(format!("quota code {code} already in use")));
        }
        if new.name.trim().is_empty() {
            return Err(Error::validation("quota name is empty"));
        }
        let id = self.state().next_quota_id();
        self.emit(EventPayload::QuotaDefined(Quota {
            id,
            org: caller.org,
            code,
            name: new.name.trim().to_owned(),
            basis: new.basis,
            notify_on_charge: new.notify_on_charge,
            category: new.category,
        }));
        Ok(id)
    }

    pub fn define_schedule(
        &mut self,
        user: OrgUserId,
        quota: QuotaId,
        periodicity: Periodicity,
        valid_from: NaiveDate,
        valid_to: NaiveDate,
        max_persons: Option<u32>,
    ) -> Result<ScheduleId> {
        let caller = self.authorize(user, Action::EditSchedules)?;
        let q = self.state().quotas.get(&quota).ok_or(Error::UnknownQuota)?;
        if q.org != caller.org {
            return Err(Error::Unauthorized);
        }
        if valid_to < valid_from {
            return Err(Error::InvalidDateRange);
        }
        if max_persons == Some(0) {
            return Err(Error::validation("max_persons must be at least 1"));
        }
        let id = self.state().next_schedule_id();
        self.emit(EventPayload::ScheduleDefined(QuotaSchedule { id, quota, periodicity, valid_from, valid_to, max_persons }));
        Ok(id)
    }

    /// Replaces the schedule's item list. Refused while the current period
    /// still has open entitlements; edits take effect for later periods.
    pub fn set_items(&mut self, user: OrgUserId, schedule: ScheduleId, specs: Vec<ItemSpec>) -> Result<Vec<ItemId>> {
        let caller = self.authorize(user, Action::EditSchedules)?;
        let s = self.state().schedules.get(&schedule).ok_or(Error::UnknownSchedule)?;
        let q = &self.state().quotas[&s.quota];
        if q.org != caller.org {
            return Err(Error::Unauthorized);
        }
        for spec in &specs {
            spec.validate()?;
        }
        let mut names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("duplicate item name"));
        }
        if let Ok(current) = period_index(s, self.now().date()) {
            let locked = self.state().entitlements_for_period(schedule, current).any(|e| e.status == EntitlementStatus::Open);
            if locked {
                return Err(Error::ItemLockedForPeriod);
            }
        }
        let first = self.state().last_item_id + 1;
        let items: Vec<QuotaItem> = specs
            .into_iter()
            .enumerate()
            .map(|(n, spec)| QuotaItem {
                item_id: ItemId(first + n as u64),
                schedule,
                name: spec.name,
                unit: spec.unit,
                qty_per_person: spec.qty_per_person,
                unit_merchant_price: spec.unit_merchant_price,
                unit_consumer_price: spec.unit_consumer_price,
                unit_org_cost: spec.unit_org_cost,
            })
            .collect();
        let ids = items.iter().map(|i| i.item_id).collect();
        self.emit(EventPayload::ItemsSet { schedule, items });
        Ok(ids)
    }

    /// Charges every enrolled beneficiary for the period of each schedule
    /// that contains `now`, and expires open entitlements whose period has
    /// passed. Re-running at the same instant creates nothing.
    pub fn run_charging_cycle(&mut self) -> ChargeReport {
        let today = self.now().date();
        let mut report = ChargeReport::default();

        let stale: Vec<EntitlementKey> = self
            .state()
            .entitlements
            .values()
            .filter(|e| e.status == EntitlementStatus::Open)
            .filter(|e| {
                let s = &self.state().schedules[&e.schedule];
                period_index(s, today) != Ok(e.period_index)
            })
            .map(Entitlement::key)
            .collect();
        for key in stale {
            self.emit(EventPayload::EntitlementExpired { key });
            report.expired.push(key);
        }

        let schedules: Vec<QuotaSchedule> = self.state().schedules.values().cloned().collect();
        let beneficiaries: Vec<BeneficiaryId> = self.state().beneficiaries.keys().copied().collect();
        for schedule in schedules {
            let Ok(period) = period_index(&schedule, today) else {
                report.skipped.push((schedule.id, "OutOfWindow".into()));
                continue;
            };
            if self.state().items_for(schedule.id).is_empty() {
                report.skipped.push((schedule.id, "NoItems".into()));
                continue;
            }
            let quota = self.state().quotas[&schedule.quota].clone();
            for &beneficiary in &beneficiaries {
                let key = EntitlementKey { beneficiary, schedule: schedule.id, period_index: period };
                if self.state().entitlements.contains_key(&key) {
                    continue;
                }
                self.emit(EventPayload::EntitlementCharged(Entitlement {
                    beneficiary,
                    schedule: schedule.id,
                    period_index: period,
                    charged_at: self.now(),
                    status: EntitlementStatus::Open,
                }));
                report.created.push(key);
                if quota.notify_on_charge {
                    report.notifications.push(ChargeNotice {
                        beneficiary,
                        quota: quota.id,
                        quota_code: quota.code.clone(),
                        schedule: schedule.id,
                        period_index: period,
                    });
                }
            }
        }
        report
    }
}
