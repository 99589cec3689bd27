//! Fixture profiles for simulation runs.

use std::collections::BTreeSet;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Category, ChannelProfile, NewBeneficiary, OrgKind, Region, Role};
use crate::error::{Error, Result};
use crate::ids::{BeneficiaryId, MerchantId, OrgUserId, OrganizationId, QuotaId, ScheduleId};
use crate::money::{Money, Quantity};
use crate::platform::Platform;
use crate::quota::{Basis, ItemSpec, NewQuota, Periodicity};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Demo,
    Minimal,
    Randomized(u64),
}

impl FromStr for Profile {
    type Err = Error;

    /// `demo`, `minimal`, `randomized` (seed 0) or `randomized:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "demo" => Ok(Profile::Demo),
            "minimal" => Ok(Profile::Minimal),
            "randomized" => Ok(Profile::Randomized(0)),
            other => other
                .strip_prefix("randomized:")
                .and_then(|n| n.parse().ok())
                .map(Profile::Randomized)
                .ok_or_else(|| Error::validation(format!("unknown profile `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgEntry {
    pub id: OrganizationId,
    pub name: String,
    pub kind: OrgKind,
    pub users: Vec<(OrgUserId, Role)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerchantEntry {
    pub id: MerchantId,
    pub name: String,
    pub region: Region,
    pub channel_profile: ChannelProfile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeneficiaryEntry {
    pub id: BeneficiaryId,
    pub national_id: String,
    pub mobile: String,
    /// Clear-text pin, kept here so scripted actors can confirm.
    pub pin: String,
    pub region: Region,
    pub family_size: u32,
    pub preferred_merchant: Option<MerchantId>,
    pub channel_profile: ChannelProfile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaEntry {
    pub id: QuotaId,
    pub code: String,
    pub org: OrganizationId,
    pub schedules: Vec<ScheduleId>,
    pub items: Vec<String>,
}

/// Everything a seed created, with the ids it got.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub profile: String,
    pub organizations: Vec<OrgEntry>,
    pub merchants: Vec<MerchantEntry>,
    pub beneficiaries: Vec<BeneficiaryEntry>,
    pub quotas: Vec<QuotaEntry>,
    pub entitlements_charged: usize,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        crate::journal::canonical_json(self)
    }

    pub fn beneficiary(&self, id: BeneficiaryId) -> Option<&BeneficiaryEntry> {
        self.beneficiaries.iter().find(|b| b.id == id)
    }

    /// First user of `org` holding `role`.
    pub fn user(&self, org: OrganizationId, role: Role) -> Option<OrgUserId> {
        self.organizations.iter().find(|o| o.id == org)?.users.iter().find(|(_, r)| *r == role).map(|(id, _)| *id)
    }
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid fixture date")
}

fn item(name: &str, unit: &str, qty_milli: i64, merchant: i64, consumer: i64, org_cost: i64) -> ItemSpec {
    ItemSpec {
        name: name.into(),
        unit: unit.into(),
        qty_per_person: Quantity::from_milli(qty_milli).expect("fixture quantity"),
        unit_merchant_price: Money::from_piasters(merchant),
        unit_consumer_price: Money::from_piasters(consumer),
        unit_org_cost: Money::from_piasters(org_cost),
    }
}

struct Builder<'a> {
    platform: &'a mut Platform,
    manifest: Manifest,
}

impl Builder<'_> {
    fn org(&mut self, name: &str, kind: OrgKind, roles: &[Role]) -> Result<OrganizationId> {
        let id = self.platform.execute(|tx| tx.create_organization(name, kind))?;
        let mut users = Vec::new();
        for &role in roles {
            users.push((self.platform.execute(|tx| tx.create_org_user(id, role))?, role));
        }
        self.manifest.organizations.push(OrgEntry { id, name: name.into(), kind, users });
        Ok(id)
    }

    fn merchant(&mut self, name: &str, region: Region, categories: &[Category], profile: ChannelProfile) -> Result<MerchantId> {
        let cats: BTreeSet<Category> = categories.iter().copied().collect();
        let id = self.platform.execute(|tx| tx.register_merchant(name, region.clone(), cats, profile))?;
        self.manifest.merchants.push(MerchantEntry { id, name: name.into(), region, channel_profile: profile });
        Ok(id)
    }

    fn beneficiary(&mut self, new: NewBeneficiary) -> Result<BeneficiaryId> {
        let id = self.platform.execute(|tx| tx.register_beneficiary(new.clone()))?;
        self.manifest.beneficiaries.push(BeneficiaryEntry {
            id,
            national_id: new.national_id,
            mobile: new.mobile,
            pin: new.pin,
            region: new.region,
            family_size: new.family_size,
            preferred_merchant: new.preferred_merchant,
            channel_profile: new.channel_profile,
        });
        Ok(id)
    }

    fn quota(
        &mut self,
        user: OrgUserId,
        new: NewQuota,
        schedule: (Periodicity, NaiveDate, NaiveDate, Option<u32>),
        items: Vec<ItemSpec>,
    ) -> Result<QuotaId> {
        let code = new.code.clone();
        let names = items.iter().map(|i| i.name.clone()).collect();
        let id = self.platform.execute(|tx| tx.define_quota(user, new))?;
        let (periodicity, from, to, max_persons) = schedule;
        let sid = self.platform.execute(|tx| tx.define_schedule(user, id, periodicity, from, to, max_persons))?;
        self.platform.execute(|tx| tx.set_items(user, sid, items))?;
        let org = self.platform.state().quotas[&id].org;
        self.manifest.quotas.push(QuotaEntry { id, code, org, schedules: vec![sid], items: names });
        Ok(id)
    }

    fn charge(&mut self, at: chrono::NaiveDateTime) -> Result<()> {
        let (report, _) = self.platform.run_charging_cycle(Some(at))?;
        self.manifest.entitlements_charged += report.created.len();
        Ok(())
    }
}

fn national_id(n: u32) -> String {
    format!("2900101{n:07}")
}

fn mobile(n: u32) -> String {
    format!("0100{n:07}")
}

/// Seeds `platform`, which should be empty, and returns what was created.
pub fn seed(platform: &mut Platform, profile: Profile) -> Result<Manifest> {
    let label = match profile {
        Profile::Demo => "demo".to_owned(),
        Profile::Minimal => "minimal".to_owned(),
        Profile::Randomized(s) => format!("randomized:{s}"),
    };
    let mut b = Builder {
        platform,
        manifest: Manifest {
            profile: label,
            organizations: Vec::new(),
            merchants: Vec::new(),
            beneficiaries: Vec::new(),
            quotas: Vec::new(),
            entitlements_charged: 0,
        },
    };
    match profile {
        Profile::Demo => demo(&mut b)?,
        Profile::Minimal => minimal(&mut b)?,
        Profile::Randomized(s) => randomized(&mut b, s)?,
    }
    Ok(b.manifest)
}

/// Start of the demo year; the demo charges its first cycle here.
pub fn demo_start() -> chrono::NaiveDateTime {
    date(2024, 1, 1).and_hms_opt(0, 0, 0).expect("midnight")
}

fn demo(b: &mut Builder) -> Result<()> {
    let all = [Role::Administration, Role::Reporting, Role::QuotaDelivery, Role::BeneficiaryMgmt];
    let gov = b.org("Ministry of Supply", OrgKind::Governmental, &all)?;
    let ngo = b.org("Food Bank", OrgKind::Ngo, &[Role::Administration, Role::Reporting])?;

    let cairo = Region::urban("Cairo");
    let benha = Region::rural("Benha");
    let m1 = b.merchant("Cairo Grocery", cairo.clone(), &[Category::Food], ChannelProfile::AppCapable)?;
    let m2 = b.merchant("Benha Market", benha.clone(), &[Category::Food, Category::Clothing], ChannelProfile::AppCapable)?;
    b.merchant("Benha Kiosk", benha.clone(), &[Category::Food], ChannelProfile::TextOnly)?;

    for n in 1..=12u32 {
        let urban = n <= 6;
        b.beneficiary(NewBeneficiary {
            national_id: national_id(n),
            pin: format!("{:04}", 1000 + 111 * n),
            address: format!("{n} Nile Street"),
            region: if urban { cairo.clone() } else { benha.clone() },
            mobile: mobile(n),
            family_size: (n - 1) % 6 + 1,
            preferred_merchant: Some(if urban { m1 } else { m2 }),
            channel_profile: if n % 2 == 1 { ChannelProfile::TextOnly } else { ChannelProfile::AppCapable },
        })?;
    }

    let gov_admin = b.manifest.user(gov, Role::Administration).expect("seeded");
    b.quota(
        gov_admin,
        NewQuota { code: "FOOD".into(), name: "Monthly food ration".into(), basis: Basis::Family, notify_on_charge: true, category: Category::Food },
        (Periodicity::Monthly, date(2024, 1, 1), date(2024, 12, 31), Some(4)),
        vec![item("OIL", "kg", 500, 1800, 1500, 1600), item("SUGAR", "kg", 1000, 1200, 500, 1000)],
    )?;
    let ngo_admin = b.manifest.user(ngo, Role::Administration).expect("seeded");
    b.quota(
        ngo_admin,
        NewQuota {
            code: "BLANKET".into(),
            name: "Winter blanket".into(),
            basis: Basis::Personal,
            notify_on_charge: false,
            category: Category::Clothing,
        },
        (Periodicity::Once, date(2024, 11, 1), date(2024, 11, 30), None),
        vec![item("BLANKET", "piece", 1000, 15000, 5000, 12000)],
    )?;
    b.charge(demo_start())
}

fn minimal(b: &mut Builder) -> Result<()> {
    let org = b.org("Ministry of Supply", OrgKind::Governmental, &[Role::Administration])?;
    let region = Region::urban("Cairo");
    let m = b.merchant("Cairo Grocery", region.clone(), &[Category::Food], ChannelProfile::AppCapable)?;
    b.beneficiary(NewBeneficiary {
        national_id: national_id(1),
        pin: "1111".into(),
        address: "1 Nile Street".into(),
        region,
        mobile: mobile(1),
        family_size: 1,
        preferred_merchant: Some(m),
        channel_profile: ChannelProfile::TextOnly,
    })?;
    let admin = b.manifest.user(org, Role::Administration).expect("seeded");
    b.quota(
        admin,
        NewQuota {
            code: "FOOD".into(),
            name: "Monthly food ration".into(),
            basis: Basis::Personal,
            notify_on_charge: true,
            category: Category::Food,
        },
        (Periodicity::Monthly, date(2024, 1, 1), date(2024, 12, 31), None),
        vec![item("OIL", "kg", 500, 1800, 1500, 1600)],
    )?;
    b.charge(demo_start())
}

const PLACES: [&str; 4] = ["Cairo", "Giza", "Benha", "Minya"];
const GOODS: [&str; 6] = ["OIL", "SUGAR", "RICE", "TEA", "FLOUR", "LENTILS"];

fn randomized(b: &mut Builder, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = |rng: &mut ChaCha8Rng| {
        let name = PLACES[rng.random_range(0..PLACES.len())];
        if rng.random_bool(0.5) {
            Region::urban(name)
        } else {
            Region::rural(name)
        }
    };
    let profile = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { ChannelProfile::TextOnly } else { ChannelProfile::AppCapable };

    let org_count = rng.random_range(1..=2);
    let mut admins = Vec::new();
    for n in 0..org_count {
        let kind = if n == 0 { OrgKind::Governmental } else { OrgKind::Ngo };
        let org = b.org(&format!("Org {}", n + 1), kind, &[Role::Administration, Role::Reporting])?;
        admins.push(b.manifest.user(org, Role::Administration).expect("seeded"));
    }

    let mut merchants = Vec::new();
    for n in 0..rng.random_range(2..=4) {
        let r = region(&mut rng);
        // The first outlet always has an app so every beneficiary can be served.
        let p = if n == 0 { ChannelProfile::AppCapable } else { profile(&mut rng) };
        merchants.push(b.merchant(&format!("Outlet {}", n + 1), r, &[Category::Food], p)?);
    }

    for n in 1..=rng.random_range(5..=20u32) {
        b.beneficiary(NewBeneficiary {
            national_id: national_id(n),
            pin: format!("{:04}", rng.random_range(0..10_000)),
            address: format!("{n} Market Road"),
            region: region(&mut rng),
            mobile: mobile(n),
            family_size: rng.random_range(1..=8),
            preferred_merchant: Some(merchants[rng.random_range(0..merchants.len())]),
            channel_profile: profile(&mut rng),
        })?;
    }

    for n in 0..rng.random_range(1..=3usize) {
        let periodicity = [Periodicity::Monthly, Periodicity::Weekly, Periodicity::Yearly][rng.random_range(0..3)];
        let mut goods: Vec<&str> = GOODS.to_vec();
        let mut items = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            let name = goods.remove(rng.random_range(0..goods.len()));
            let consumer = rng.random_range(100..2000);
            let merchant = consumer + rng.random_range(0..1500);
            let org_cost = rng.random_range(consumer..=merchant);
            items.push(item(name, "kg", rng.random_range(1..=4) * 250, merchant, consumer, org_cost));
        }
        let basis = if rng.random_bool(0.5) { Basis::Family } else { Basis::Personal };
        let max_persons = rng.random_bool(0.5).then(|| rng.random_range(1..=6));
        b.quota(
            admins[n % admins.len()],
            NewQuota {
                code: format!("Q{}", n + 1),
                name: format!("Ration {}", n + 1),
                basis,
                notify_on_charge: rng.random_bool(0.5),
                category: Category::Food,
            },
            (periodicity, date(2024, 1, 1), date(2024, 12, 31), max_persons),
            items,
        )?;
    }
    b.charge(demo_start())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::journal::MemoryJournal;

    fn seeded(profile: Profile) -> (Platform, Manifest) {
        let mut p = Platform::new(Box::new(MemoryJournal::new())).unwrap();
        let m = seed(&mut p, profile).unwrap();
        (p, m)
    }

    #[test]
    fn demo_shape() {
        let (p, m) = seeded(Profile::Demo);
        assert_eq!(m.organizations.len(), 2);
        assert_eq!(m.merchants.len(), 3);
        assert_eq!(m.beneficiaries.len(), 12);
        let regions: BTreeSet<_> = m.beneficiaries.iter().map(|b| b.region.clone()).collect();
        assert_eq!(regions.len(), 2);
        assert!(m.beneficiaries.iter().any(|b| b.channel_profile == ChannelProfile::TextOnly));
        assert!(m.beneficiaries.iter().any(|b| b.channel_profile == ChannelProfile::AppCapable));
        // FOOD is charged for January; the blanket window has not opened.
        assert_eq!(m.entitlements_charged, 12);
        assert!(p.state().check_invariants().is_empty());
    }

    #[test]
    fn minimal_has_one_of_each() {
        let (_, m) = seeded(Profile::Minimal);
        assert_eq!((m.organizations.len(), m.merchants.len(), m.beneficiaries.len(), m.quotas.len()), (1, 1, 1, 1));
    }

    #[test]
    fn randomized_is_deterministic() {
        let (p1, a) = seeded(Profile::Randomized(42));
        let (p2, b) = seeded(Profile::Randomized(42));
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(p1.state().canonical_bytes(), p2.state().canonical_bytes());
        let (_, c) = seeded(Profile::Randomized(43));
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn profile_names_parse() {
        assert_eq!("demo".parse::<Profile>().unwrap(), Profile::Demo);
        assert_eq!("randomized:7".parse::<Profile>().unwrap(), Profile::Randomized(7));
        assert!("huge".parse::<Profile>().is_err());
    }
}
