//! Opens a voucher, reduces one line before delivery and confirms with the
//! PIN. The untaken subsidy is refunded to the beneficiary's balance.

use std::collections::BTreeSet;

use chrono::NaiveDate;

use subsidy::delivery::ConfirmOutcome;
use subsidy::domain::{Category, ChannelProfile, NewBeneficiary, OrgKind, Region, Role};
use subsidy::journal::MemoryJournal;
use subsidy::quota::{Basis, ItemSpec, NewQuota, Periodicity};
use subsidy::{Money, Platform, Quantity};

fn item(name: &str, qty_milli: i64, merchant: i64, consumer: i64, org: i64) -> ItemSpec {
    ItemSpec {
        name: name.into(),
        unit: "kg".into(),
        qty_per_person: Quantity::from_milli(qty_milli).expect("in range"),
        unit_merchant_price: Money::from_piasters(merchant),
        unit_consumer_price: Money::from_piasters(consumer),
        unit_org_cost: Money::from_piasters(org),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let day = |m, d| NaiveDate::from_ymd_opt(2024, m, d).expect("valid date");
    let mut platform = Platform::new(Box::new(MemoryJournal::new()))?;
    platform.set_clock(day(1, 1).and_hms_opt(0, 0, 0).expect("midnight"))?;

    let (beneficiary, merchant, quota, schedule, items) = platform.execute(|tx| {
        let org = tx.create_organization("Ministry of Supply", OrgKind::Governmental)?;
        let admin = tx.create_org_user(org, Role::Administration)?;
        let merchant =
            tx.register_merchant("Corner Grocery", Region::urban("Cairo"), BTreeSet::from([Category::Food]), ChannelProfile::AppCapable)?;
        let beneficiary = tx.register_beneficiary(NewBeneficiary {
            national_id: "29001011234567".into(),
            pin: "4321".into(),
            address: "1 Nile St".into(),
            region: Region::urban("Cairo"),
            mobile: "01001234567".into(),
            family_size: 3,
            preferred_merchant: Some(merchant),
            channel_profile: ChannelProfile::AppCapable,
        })?;
        let quota = tx.define_quota(
            admin,
            NewQuota { code: "FOOD".into(), name: "Monthly food".into(), basis: Basis::Family, notify_on_charge: false, category: Category::Food },
        )?;
        let schedule = tx.define_schedule(admin, quota, Periodicity::Monthly, day(1, 1), day(12, 31), None)?;
        let items = tx.set_items(admin, schedule, vec![item("OIL", 500, 1800, 1500, 1600), item("SUGAR", 1000, 1200, 500, 1000)])?;
        Ok((beneficiary, merchant, quota, schedule, items))
    })?;
    platform.run_charging_cycle(None)?;

    let voucher = platform.execute(|tx| tx.open_voucher(beneficiary, merchant, quota, schedule, None))?;
    platform.execute(|tx| tx.update_qty(voucher, items[0], Quantity::from_milli(500).expect("in range")))?;

    let wrong = platform.execute(|tx| tx.confirm_delivery(voucher, "0000"))?;
    println!("wrong pin: {wrong:?}");
    let ConfirmOutcome::Delivered(receipt) = platform.execute(|tx| tx.confirm_delivery(voucher, "4321"))? else {
        return Err("the right pin was rejected".into());
    };

    println!("{:<6} {:>7} {:>7} {:>8} {:>10}", "item", "formal", "actual", "refund", "settlement");
    for line in &receipt.lines {
        println!(
            "{:<6} {:>7} {:>7} {:>8} {:>10}",
            line.name,
            line.formal_qty.to_string(),
            line.actual_qty.to_string(),
            line.refund.to_string(),
            line.settlement.to_string()
        );
    }
    println!("consumer pays {}, refund {}, merchant profit {}", receipt.consumer_due, receipt.refund, receipt.merchant_profit);
    println!("balance now {}", platform.state().beneficiaries[&beneficiary].cash_balance);
    Ok(())
}
