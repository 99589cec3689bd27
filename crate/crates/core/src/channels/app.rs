//! Typed messages carried in [`AppFrame`]s.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::frame::{AppFrame, FrameError};
use crate::delivery::{CancelReason, DeliveryReceipt, Totals, VoucherDetail};
use crate::ids::{BeneficiaryId, MerchantId, QuotaId, ScheduleId, SessionId, VoucherId};
use crate::money::{Money, Quantity};
use crate::quota::{Basis, EntitlementStatus, ItemAvailability, QuotaItem};

/// Messages sent by app clients. Beneficiary messages carry `from` as a
/// beneficiary id, merchant messages as a merchant id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum AppInbound {
    Request {
        from: BeneficiaryId,
        quota: String,
        #[serde(default)]
        merchant: Option<MerchantId>,
        /// Per-item wanted quantities by item code; unlisted items in full.
        #[serde(default)]
        items: BTreeMap<String, Quantity>,
    },
    Confirm {
        from: BeneficiaryId,
        pin: String,
    },
    Abandon {
        from: BeneficiaryId,
    },
    Balance {
        from: BeneficiaryId,
    },
    Sync {
        from: BeneficiaryId,
    },
    Adjust {
        from: MerchantId,
        voucher: VoucherId,
        item: String,
        qty: Quantity,
    },
    Submit {
        from: MerchantId,
        voucher: VoucherId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoucherView {
    pub id: VoucherId,
    pub beneficiary: BeneficiaryId,
    pub merchant: MerchantId,
    pub quota_code: String,
    pub period_index: u32,
    pub lines: Vec<VoucherDetail>,
    pub totals: Totals,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaSummary {
    pub id: QuotaId,
    pub code: String,
    pub name: String,
    pub basis: Basis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitlementView {
    pub quota_code: String,
    pub schedule: ScheduleId,
    pub period_index: u32,
    pub status: EntitlementStatus,
    pub items: Vec<ItemAvailability>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub quota_code: String,
    pub schedule: ScheduleId,
    pub items: Vec<QuotaItem>,
}

/// Everything an app needs locally to run the two-click flow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncPayload {
    pub beneficiary: BeneficiaryId,
    pub preferred_merchant: Option<MerchantId>,
    pub quotas: Vec<QuotaSummary>,
    pub entitlements: Vec<EntitlementView>,
    pub catalog: Vec<CatalogEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum AppOutbound {
    Draft { voucher: VoucherView },
    ConfirmRequest { voucher: VoucherView },
    Receipt { receipt: DeliveryReceipt },
    Cancelled { voucher: VoucherId, reason: CancelReason },
    Notice { code: String },
    Charged { quota: String, period: u32 },
    Balance { amount: Money },
    Sync { payload: SyncPayload },
}

fn to_frame<T: Serialize>(message: &T, session: Option<SessionId>) -> AppFrame {
    let value = serde_json::to_value(message).expect("app message serializes");
    let kind = value["kind"].as_str().expect("tagged").to_owned();
    AppFrame { kind, session, body: value["body"].clone() }
}

fn from_frame<T: for<'de> Deserialize<'de>>(frame: &AppFrame) -> Result<T, FrameError> {
    serde_json::from_value(json!({ "kind": frame.kind, "body": frame.body })).map_err(|e| FrameError::Malformed(e.to_string()))
}

impl AppInbound {
    pub fn to_frame(&self, session: Option<SessionId>) -> AppFrame {
        to_frame(self, session)
    }

    pub fn from_frame(frame: &AppFrame) -> Result<Self, FrameError> {
        from_frame(frame)
    }

    /// Transcript-safe rendering of the message.
    pub fn redacted(&self) -> String {
        let mut value = serde_json::to_value(self).expect("app message serializes");
        if let Some(pin) = value.pointer_mut("/body/pin") {
            *pin = json!("****");
        }
        crate::journal::canonical_json(&value)
    }
}

impl AppOutbound {
    pub fn to_frame(&self, session: Option<SessionId>) -> AppFrame {
        to_frame(self, session)
    }

    pub fn from_frame(frame: &AppFrame) -> Result<Self, FrameError> {
        from_frame(frame)
    }
}
