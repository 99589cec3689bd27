//! Voucher lifecycle: opening an invoice with formal quantities, adjusting
//! actual quantities for partial delivery, pin-confirmed delivery with
//! refund crediting, and cancellation.
//!
//! Per-line arithmetic (all products round half-up to the piaster):
//!
//! ```text
//! subsidy gap    = merchant price - consumer price
//! refund         = round((formal - actual) * gap)
//! settlement     = round(formal * gap) - refund
//! consumer due   = round(actual * consumer price)
//! merchant profit= round(actual * (merchant price - org cost))
//! ```
//!
//! Settlement is taken as the remainder so that the entitled subsidy value of
//! every line splits exactly into goods delivered and cash refunded.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::domain::is_valid_consumer;
use crate::error::{Error, Result};
use crate::ids::{BeneficiaryId, ItemId, MerchantId, QuotaId, ScheduleId, VoucherId};
use crate::money::{Money, Quantity};
use crate::orchestrator::Outcome;
use crate::quota::{period_index, persons_multiplier, EntitlementKey, EntitlementStatus};
use crate::state::{EventPayload, Tx};

/// Pin failures tolerated before a voucher is cancelled.
pub const MAX_PIN_FAILURES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VoucherState {
    NotDelivered,
    Delivered,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CancelReason {
    Requested,
    Abandoned,
    TimedOut,
    PinLocked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoucherDetail {
    pub item_id: ItemId,
    pub name: String,
    pub unit: String,
    pub formal_qty: Quantity,
    pub actual_qty: Quantity,
    pub unit_merchant_price: Money,
    pub unit_consumer_price: Money,
    pub unit_org_cost: Money,
}

impl VoucherDetail {
    pub fn unit_subsidy(&self) -> Money {
        self.unit_merchant_price - self.unit_consumer_price
    }

    pub fn line_refund(&self) -> Money {
        let left = self.formal_qty.checked_sub(self.actual_qty).unwrap_or(Quantity::ZERO);
        left.times(self.unit_subsidy())
    }

    pub fn line_settlement(&self) -> Money {
        self.formal_qty.times(self.unit_subsidy()) - self.line_refund()
    }

    pub fn line_profit(&self) -> Money {
        self.actual_qty.times(self.unit_merchant_price - self.unit_org_cost)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Voucher {
    pub id: VoucherId,
    pub beneficiary: BeneficiaryId,
    pub quota: QuotaId,
    pub schedule: ScheduleId,
    pub period_index: u32,
    pub merchant: MerchantId,
    pub state: VoucherState,
    pub opened_at: NaiveDateTime,
    pub closed_at: Option<NaiveDateTime>,
    pub total_merchant_price: Money,
    pub total_consumer_price: Money,
    pub pin_failures: u32,
    pub details: Vec<VoucherDetail>,
}

impl Voucher {
    pub fn entitlement_key(&self) -> EntitlementKey {
        EntitlementKey { beneficiary: self.beneficiary, schedule: self.schedule, period_index: self.period_index }
    }

    pub fn is_open(&self) -> bool {
        self.state == VoucherState::NotDelivered
    }

    pub fn detail(&self, item: ItemId) -> Option<&VoucherDetail> {
        self.details.iter().find(|d| d.item_id == item)
    }

    /// Recomputes the stored header totals from the details.
    pub(crate) fn refresh_totals(&mut self) {
        let totals = compute_totals(&self.details);
        self.total_merchant_price = totals.total_merchant_price;
        self.total_consumer_price = totals.total_consumer_price;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub total_merchant_price: Money,
    pub total_consumer_price: Money,
    pub merchant_profit: Money,
    pub subsidy_cost: Money,
    pub refund_if_confirmed_now: Money,
}

/// Pure fold over voucher details.
pub fn compute_totals(details: &[VoucherDetail]) -> Totals {
    details.iter().fold(Totals::default(), |mut t, d| {
        t.total_merchant_price += d.actual_qty.times(d.unit_merchant_price);
        t.total_consumer_price += d.actual_qty.times(d.unit_consumer_price);
        t.merchant_profit += d.line_profit();
        t.subsidy_cost += d.line_settlement();
        t.refund_if_confirmed_now += d.line_refund();
        t
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptLine {
    pub item_id: ItemId,
    pub name: String,
    pub formal_qty: Quantity,
    pub actual_qty: Quantity,
    pub refund: Money,
    pub settlement: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub voucher: VoucherId,
    pub beneficiary: BeneficiaryId,
    pub merchant: MerchantId,
    pub quota: QuotaId,
    pub schedule: ScheduleId,
    pub period_index: u32,
    pub lines: Vec<ReceiptLine>,
    pub consumer_due: Money,
    pub refund: Money,
    pub merchant_settlement: Money,
    pub merchant_profit: Money,
}

impl DeliveryReceipt {
    pub fn for_voucher(v: &Voucher) -> Self {
        let totals = compute_totals(&v.details);
        DeliveryReceipt {
            voucher: v.id,
            beneficiary: v.beneficiary,
            merchant: v.merchant,
            quota: v.quota,
            schedule: v.schedule,
            period_index: v.period_index,
            lines: v
                .details
                .iter()
                .map(|d| ReceiptLine {
                    item_id: d.item_id,
                    name: d.name.clone(),
                    formal_qty: d.formal_qty,
                    actual_qty: d.actual_qty,
                    refund: d.line_refund(),
                    settlement: d.line_settlement(),
                })
                .collect(),
            consumer_due: totals.total_consumer_price,
            refund: totals.refund_if_confirmed_now,
            merchant_settlement: totals.subsidy_cost,
            merchant_profit: totals.merchant_profit,
        }
    }
}

/// What happened on a confirmation attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfirmOutcome {
    Delivered(DeliveryReceipt),
    PinRejected { failures: u32, cancelled: bool },
}

impl Tx {
    /// Opens an invoice in `NotDelivered` state for the beneficiary's open
    /// entitlement in the current period. Formal quantities are the
    /// per-person quantity times the household multiplier, and prices are
    /// frozen into the details. Items absent from `requested` are taken in
    /// full.
    pub fn open_voucher(
        &mut self,
        beneficiary: BeneficiaryId,
        merchant: MerchantId,
        quota: QuotaId,
        schedule: ScheduleId,
        requested: Option<&BTreeMap<ItemId, Quantity>>,
    ) -> Result<VoucherId> {
        let state = self.state();
        let person = state.beneficiaries.get(&beneficiary).ok_or(Error::UnknownBeneficiary)?;
        let outlet = state.merchants.get(&merchant).filter(|m| m.registered).ok_or(Error::UnknownMerchant)?;
        let q = state.quotas.get(&quota).ok_or(Error::UnknownQuota)?;
        let s = state.schedules.get(&schedule).filter(|s| s.quota == quota).ok_or(Error::UnknownSchedule)?;
        if !outlet.categories.contains(&q.category) {
            return Err(Error::CategoryMismatch);
        }
        let period = period_index(s, self.now().date()).map_err(|_| Error::OutOfWindow)?;
        let key = EntitlementKey { beneficiary, schedule, period_index: period };
        if state.live_voucher(&key).is_some() {
            return Err(Error::DuplicateVoucher);
        }
        match state.entitlements.get(&key) {
            Some(e) if e.status == EntitlementStatus::Open => {}
            _ => return Err(Error::NoOpenEntitlement),
        }
        let persons = persons_multiplier(q, s, Some(person));
        let items = state.items_for(schedule);
        if let Some(requested) = requested {
            if let Some(unknown) = requested.keys().find(|id| !items.iter().any(|i| i.item_id == **id)) {
                return Err(Error::UnknownItem(*unknown));
            }
        }
        let mut details = Vec::with_capacity(items.len());
        for item in items {
            let formal = item.qty_per_person.scale(persons);
            let actual = match requested.and_then(|r| r.get(&item.item_id)) {
                Some(want) if *want > formal => return Err(Error::QuantityOutOfRange),
                Some(want) => *want,
                None => formal,
            };
            details.push(VoucherDetail {
                item_id: item.item_id,
                name: item.name.clone(),
                unit: item.unit.clone(),
                formal_qty: formal,
                actual_qty: actual,
                unit_merchant_price: item.unit_merchant_price,
                unit_consumer_price: item.unit_consumer_price,
                unit_org_cost: item.unit_org_cost,
            });
        }
        let id = state.next_voucher_id();
        let mut voucher = Voucher {
            id,
            beneficiary,
            quota,
            schedule,
            period_index: period,
            merchant,
            state: VoucherState::NotDelivered,
            opened_at: self.now(),
            closed_at: None,
            total_merchant_price: Money::ZERO,
            total_consumer_price: Money::ZERO,
            pin_failures: 0,
            details,
        };
        voucher.refresh_totals();
        self.emit(EventPayload::VoucherOpened(voucher));
        Ok(id)
    }

    pub fn update_qty(&mut self, voucher: VoucherId, item: ItemId, actual: Quantity) -> Result<()> {
        let v = self.state().vouchers.get(&voucher).ok_or(Error::UnknownVoucher(voucher))?;
        if !v.is_open() {
            return Err(Error::VoucherClosed);
        }
        let detail = v.detail(item).ok_or(Error::UnknownItem(item))?;
        if actual > detail.formal_qty {
            return Err(Error::QuantityOutOfRange);
        }
        self.emit(EventPayload::QtyUpdated { voucher, item, actual });
        Ok(())
    }

    /// Confirms delivery with the beneficiary's pin. A wrong pin is recorded;
    /// the third failure cancels the voucher and reopens the entitlement.
    pub fn confirm_delivery(&mut self, voucher: VoucherId, pin: &str) -> Result<ConfirmOutcome> {
        let v = self.state().vouchers.get(&voucher).ok_or(Error::UnknownVoucher(voucher))?;
        if !v.is_open() {
            return Err(Error::VoucherClosed);
        }
        if !is_valid_consumer(self.state(), v.beneficiary, pin) {
            let failures = v.pin_failures + 1;
            self.emit(EventPayload::PinRejected { voucher, failures });
            let cancelled = failures >= MAX_PIN_FAILURES;
            if cancelled {
                self.cancel_voucher(voucher, CancelReason::PinLocked)?;
            }
            return Ok(ConfirmOutcome::PinRejected { failures, cancelled });
        }
        let receipt = DeliveryReceipt::for_voucher(v);
        let beneficiary = v.beneficiary;
        self.emit(EventPayload::DeliveryConfirmed { receipt: receipt.clone() });
        if receipt.refund > Money::ZERO {
            self.emit(EventPayload::BalanceCredited { beneficiary, amount: receipt.refund, voucher });
        }
        self.close_session_for_voucher(voucher, Outcome::Delivered);
        Ok(ConfirmOutcome::Delivered(receipt))
    }

    /// Cancels an open voucher. The entitlement becomes claimable again, or
    /// expires at once if its period is already over.
    pub fn cancel_voucher(&mut self, voucher: VoucherId, reason: CancelReason) -> Result<()> {
        let v = self.state().vouchers.get(&voucher).ok_or(Error::UnknownVoucher(voucher))?;
        if !v.is_open() {
            return Err(Error::VoucherClosed);
        }
        let key = v.entitlement_key();
        let current = period_index(&self.state().schedules[&key.schedule], self.now().date());
        self.emit(EventPayload::VoucherCancelled { voucher, reason });
        if current != Ok(key.period_index) {
            self.emit(EventPayload::EntitlementExpired { key });
        }
        self.close_session_for_voucher(voucher, reason.into());
        Ok(())
    }
}
