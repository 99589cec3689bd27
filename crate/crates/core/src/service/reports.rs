//! Reports computed only from the journal, so they can be rerun offline or
//! after a restart and come out byte for byte the same.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::Region;
use crate::ids::{BeneficiaryId, ItemId, MerchantId, OrganizationId, QuotaId, VoucherId};
use crate::journal::Event;
use crate::money::{Money, Quantity};
use crate::quota::Quota;
use crate::state::EventPayload;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub region: Region,
    pub item: String,
    pub total_formal: Quantity,
    pub total_actual: Quantity,
    pub total_refund_value: Money,
    /// Share of the entitled quantity left behind: `1 - actual / formal`.
    pub leave_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDistributionReport {
    pub quota: QuotaId,
    pub period: u32,
    pub rows: Vec<RegionRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementRow {
    pub voucher: VoucherId,
    pub period: u32,
    pub settlement: Money,
    pub profit: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementReport {
    pub merchant: MerchantId,
    pub period: Option<u32>,
    pub vouchers: Vec<SettlementRow>,
    pub total_settlement: Money,
    pub total_profit: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsidyCostRow {
    pub quota: QuotaId,
    pub item_id: ItemId,
    pub item: String,
    /// Subsidy paid out through merchants for goods actually handed over.
    pub subsidy_cost: Money,
    /// Unused subsidy credited to beneficiaries as cash.
    pub refund_outflow: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsidyCostReport {
    pub organization: OrganizationId,
    pub period: Option<u32>,
    pub items: Vec<SubsidyCostRow>,
    pub grand_total: Money,
}

fn ratio_left(formal: Quantity, actual: Quantity) -> f64 {
    if formal.is_zero() {
        return 0.0;
    }
    let left = 1.0 - actual.milli() as f64 / formal.milli() as f64;
    left.clamp(0.0, 1.0)
}

/// Per region and item: how much of the entitlement beneficiaries actually
/// took, for one quota and period.
pub fn region_distribution(events: &[Event], quota: QuotaId, period: u32) -> RegionDistributionReport {
    let mut regions: BTreeMap<BeneficiaryId, Region> = BTreeMap::new();
    let mut acc: BTreeMap<(Region, String), (Quantity, Quantity, Money)> = BTreeMap::new();
    for event in events {
        match &event.payload {
            EventPayload::BeneficiaryRegistered(b) => {
                regions.insert(b.id, b.region.clone());
            }
            EventPayload::DeliveryConfirmed { receipt } if receipt.quota == quota && receipt.period_index == period => {
                let Some(region) = regions.get(&receipt.beneficiary) else { continue };
                for line in &receipt.lines {
                    let entry = acc.entry((region.clone(), line.name.clone())).or_default();
                    entry.0 = entry.0 + line.formal_qty;
                    entry.1 = entry.1 + line.actual_qty;
                    entry.2 += line.refund;
                }
            }
            _ => {}
        }
    }
    let rows = acc
        .into_iter()
        .map(|((region, item), (formal, actual, refund))| RegionRow {
            region,
            item,
            total_formal: formal,
            total_actual: actual,
            total_refund_value: refund,
            leave_rate: ratio_left(formal, actual),
        })
        .collect();
    RegionDistributionReport { quota, period, rows }
}

/// What one merchant is owed in subsidy, and earned, per delivered voucher.
pub fn settlement(events: &[Event], merchant: MerchantId, period: Option<u32>) -> SettlementReport {
    let vouchers: Vec<SettlementRow> = events
        .iter()
        .filter_map(|e| match &e.payload {
            EventPayload::DeliveryConfirmed { receipt } if receipt.merchant == merchant => Some(receipt),
            _ => None,
        })
        .filter(|r| period.is_none_or(|p| r.period_index == p))
        .map(|r| SettlementRow { voucher: r.voucher, period: r.period_index, settlement: r.merchant_settlement, profit: r.merchant_profit })
        .collect();
    SettlementReport {
        merchant,
        period,
        total_settlement: vouchers.iter().map(|v| v.settlement).sum(),
        total_profit: vouchers.iter().map(|v| v.profit).sum(),
        vouchers,
    }
}

/// Everything an organization's quotas cost it: settlements to merchants
/// plus refunds to beneficiaries, per item.
pub fn subsidy_cost(events: &[Event], org: OrganizationId, period: Option<u32>) -> SubsidyCostReport {
    let mut quotas: BTreeMap<QuotaId, Quota> = BTreeMap::new();
    let mut acc: BTreeMap<(QuotaId, ItemId), (String, Money, Money)> = BTreeMap::new();
    for event in events {
        match &event.payload {
            EventPayload::QuotaDefined(q) => {
                quotas.insert(q.id, q.clone());
            }
            EventPayload::DeliveryConfirmed { receipt } => {
                if quotas.get(&receipt.quota).is_none_or(|q| q.org != org) {
                    continue;
                }
                if period.is_some_and(|p| receipt.period_index != p) {
                    continue;
                }
                for line in &receipt.lines {
                    let entry = acc.entry((receipt.quota, line.item_id)).or_insert_with(|| (line.name.clone(), Money::ZERO, Money::ZERO));
                    entry.1 += line.settlement;
                    entry.2 += line.refund;
                }
            }
            _ => {}
        }
    }
    let items: Vec<SubsidyCostRow> = acc
        .into_iter()
        .map(|((quota, item_id), (item, subsidy_cost, refund_outflow))| SubsidyCostRow { quota, item_id, item, subsidy_cost, refund_outflow })
        .collect();
    SubsidyCostReport { organization: org, period, grand_total: items.iter().map(|i| i.subsidy_cost + i.refund_outflow).sum(), items }
}
