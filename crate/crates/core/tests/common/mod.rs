#![allow(dead_code)]

use std::collections::BTreeSet;

use chrono::{NaiveDate, NaiveDateTime};

use subsidy::domain::{Category, ChannelProfile, NewBeneficiary, OrgKind, Region, Role};
use subsidy::journal::MemoryJournal;
use subsidy::quota::{Basis, ItemSpec, NewQuota, Periodicity};
use subsidy::{BeneficiaryId, ItemId, MerchantId, Money, OrgUserId, Platform, Quantity, QuotaId, ScheduleId};

pub const PIN: &str = "4321";

pub fn at(s: &str) -> NaiveDateTime {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M").expect("fixture timestamp")
}

pub fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").expect("fixture date")
}

pub fn item(name: &str, qty_milli: i64, merchant: i64, consumer: i64, org: i64) -> ItemSpec {
    ItemSpec {
        name: name.into(),
        unit: "kg".into(),
        qty_per_person: Quantity::from_milli(qty_milli).unwrap(),
        unit_merchant_price: Money::from_piasters(merchant),
        unit_consumer_price: Money::from_piasters(consumer),
        unit_org_cost: Money::from_piasters(org),
    }
}

pub struct FixtureSpec {
    pub basis: Basis,
    pub family_size: u32,
    pub max_persons: Option<u32>,
    pub items: Vec<ItemSpec>,
    pub channel: ChannelProfile,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            basis: Basis::Family,
            family_size: 3,
            max_persons: Some(4),
            items: vec![item("OIL", 500, 1800, 1500, 1600), item("SUGAR", 1000, 1200, 500, 1000)],
            channel: ChannelProfile::AppCapable,
        }
    }
}

/// One organization, one admin, one app merchant, one beneficiary and one
/// monthly FOOD quota for 2024, charged on 2024-01-01.
pub struct Fixture {
    pub platform: Platform,
    pub admin: OrgUserId,
    pub merchant: MerchantId,
    pub beneficiary: BeneficiaryId,
    pub mobile: String,
    pub quota: QuotaId,
    pub schedule: ScheduleId,
    pub items: Vec<ItemId>,
}

pub fn fixture(spec: FixtureSpec) -> Fixture {
    let mut platform = Platform::new(Box::new(MemoryJournal::new())).unwrap();
    platform.set_clock(at("2024-01-01T00:00")).unwrap();
    let mobile = "01001234567".to_string();
    let (admin, merchant, beneficiary, quota, schedule, items) = platform
        .execute(|tx| {
            let org = tx.create_organization("Ministry", OrgKind::Governmental)?;
            let admin = tx.create_org_user(org, Role::Administration)?;
            let merchant =
                tx.register_merchant("Corner Grocery", Region::urban("Cairo"), BTreeSet::from([Category::Food]), ChannelProfile::AppCapable)?;
            let beneficiary = tx.register_beneficiary(NewBeneficiary {
                national_id: "29001011234567".into(),
                pin: PIN.into(),
                address: "1 Nile St".into(),
                region: Region::urban("Cairo"),
                mobile: mobile.clone(),
                family_size: spec.family_size,
                preferred_merchant: Some(merchant),
                channel_profile: spec.channel,
            })?;
            let quota = tx.define_quota(
                admin,
                NewQuota { code: "FOOD".into(), name: "Monthly food".into(), basis: spec.basis, notify_on_charge: false, category: Category::Food },
            )?;
            let schedule = tx.define_schedule(admin, quota, Periodicity::Monthly, date("2024-01-01"), date("2024-12-31"), spec.max_persons)?;
            let items = tx.set_items(admin, schedule, spec.items.clone())?;
            Ok((admin, merchant, beneficiary, quota, schedule, items))
        })
        .unwrap();
    platform.run_charging_cycle(None).unwrap();
    Fixture { platform, admin, merchant, beneficiary, mobile, quota, schedule, items }
}
