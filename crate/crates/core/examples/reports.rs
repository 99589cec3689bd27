//! Plays the demo scenario and prints the three organization reports,
//! computed from the journal.

use std::sync::{Arc, Mutex};

use subsidy::journal::MemoryJournal;
use subsidy::service::reports::{region_distribution, settlement, subsidy_cost};
use subsidy::sim::{seed, Player, Profile, Script};
use subsidy::{MerchantId, OrganizationId, Platform, QuotaId};

const SCRIPT: &str = include_str!("../scripts/scenario_a.txt");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut platform = Platform::new(Box::new(MemoryJournal::new()))?;
    let manifest = seed(&mut platform, Profile::Demo)?;
    let shared = Arc::new(Mutex::new(platform));
    let report = Player::new(Arc::clone(&shared), Some(manifest)).play(&Script::parse(SCRIPT)?)?;
    println!("scenario assertions passed: {}", report.passed());

    let platform = shared.lock().map_err(|_| "platform lock poisoned")?;
    let events = platform.journal().read_all()?;

    let regions = region_distribution(&events, QuotaId(1), 0);
    println!("\nleave rate by region, FOOD period 0");
    for row in &regions.rows {
        println!("  {row:?}");
    }

    let merchant = settlement(&events, MerchantId(1), None);
    println!("\nmerchant M1: settlement {} profit {}", merchant.total_settlement, merchant.total_profit);
    for row in &merchant.vouchers {
        println!("  {row:?}");
    }

    let cost = subsidy_cost(&events, OrganizationId(1), None);
    println!("\norganization 1 subsidy cost {}", cost.grand_total);
    for row in &cost.items {
        println!("  {row:?}");
    }
    Ok(())
}
