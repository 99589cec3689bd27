//! Defines a family-basis quota with a person cap, runs the monthly
//! charging cycle twice and shows that the second run adds nothing.

use chrono::NaiveDate;

use subsidy::domain::{Category, ChannelProfile, NewBeneficiary, OrgKind, Region, Role};
use subsidy::journal::MemoryJournal;
use subsidy::quota::{Basis, ItemSpec, NewQuota, Periodicity};
use subsidy::{Money, Platform, Quantity};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let day = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
    let mut platform = Platform::new(Box::new(MemoryJournal::new()))?;
    platform.set_clock(day(2024, 3, 1).and_hms_opt(8, 0, 0).expect("valid time"))?;

    let (quota, schedule) = platform.execute(|tx| {
        let org = tx.create_organization("Ministry of Supply", OrgKind::Governmental)?;
        let admin = tx.create_org_user(org, Role::Administration)?;
        for (n, family) in [(1u32, 2u32), (2, 6)] {
            tx.register_beneficiary(NewBeneficiary {
                national_id: format!("2900101000000{n}"),
                pin: "2468".into(),
                address: format!("{n} Canal St"),
                region: Region::rural("Tanta"),
                mobile: format!("0100000000{n}"),
                family_size: family,
                preferred_merchant: None,
                channel_profile: ChannelProfile::TextOnly,
            })?;
        }
        let quota = tx.define_quota(
            admin,
            NewQuota { code: "RICE".into(), name: "Rice ration".into(), basis: Basis::Family, notify_on_charge: true, category: Category::Food },
        )?;
        let schedule = tx.define_schedule(admin, quota, Periodicity::Monthly, day(2024, 1, 1), day(2024, 12, 31), Some(4))?;
        tx.set_items(
            admin,
            schedule,
            vec![ItemSpec {
                name: "RICE".into(),
                unit: "kg".into(),
                qty_per_person: Quantity::from_milli(2000).expect("in range"),
                unit_merchant_price: Money::from_piasters(1400),
                unit_consumer_price: Money::from_piasters(600),
                unit_org_cost: Money::from_piasters(1250),
            }],
        )?;
        Ok((quota, schedule))
    })?;

    let (first, outbound) = platform.run_charging_cycle(None)?;
    println!("first run: {} entitlements, {} notifications", first.created.len(), outbound.len());
    for key in &first.created {
        let b = &platform.state().beneficiaries[&key.beneficiary];
        println!("  beneficiary {} (family {}) -> period {}", key.beneficiary, b.family_size, key.period_index);
    }
    for action in &outbound {
        println!("  {} <- {}", action.to, action.text().unwrap_or("(frame)"));
    }

    let (again, _) = platform.run_charging_cycle(None)?;
    println!("second run: {} entitlements", again.created.len());

    let q = &platform.state().quotas[&quota];
    let items = platform.state().items_for(schedule);
    println!("{} {} per person, household multiplier capped at 4", q.code, items[0].qty_per_person);
    Ok(())
}
