use crate::ids::{ItemId, VoucherId};

/// Business-level failures raised by engine commands.
///
/// Each variant has a stable machine-readable [`code`](Error::code) which is
/// what crosses every boundary: `ERR <code>` on the text channel, the
/// `reason` field of app notices and service responses.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("national id is already registered")]
    DuplicateNationalId,
    #[error("national id must be exactly 14 digits")]
    MalformedNationalId,
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unknown organization")]
    UnknownOrganization,
    #[error("unknown organization user")]
    UnknownOrgUser,
    #[error("unknown beneficiary")]
    UnknownBeneficiary,
    #[error("unknown merchant")]
    UnknownMerchant,
    #[error("unknown quota")]
    UnknownQuota,
    #[error("unknown schedule")]
    UnknownSchedule,
    #[error("unknown voucher {0}")]
    UnknownVoucher(VoucherId),
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("unknown item code {0}")]
    UnknownItemCode(String),
    #[error("caller's role does not permit this operation")]
    Unauthorized,
    #[error("valid_to precedes valid_from")]
    InvalidDateRange,
    #[error("items are locked while the current period has open entitlements")]
    ItemLockedForPeriod,
    #[error("no open entitlement for this period")]
    NoOpenEntitlement,
    #[error("date is outside the schedule window")]
    OutOfWindow,
    #[error("a live voucher already exists for this entitlement")]
    DuplicateVoucher,
    #[error("merchant does not serve this quota's category")]
    CategoryMismatch,
    #[error("voucher is no longer open")]
    VoucherClosed,
    #[error("actual quantity must lie between 0 and the formal quantity")]
    QuantityOutOfRange,
    #[error("pin rejected")]
    InvalidPin,
    #[error("no active session")]
    NoActiveSession,
    #[error("message is not legal in the session's current phase")]
    PhaseViolation,
    #[error("beneficiary already has an active session")]
    SessionActive,
    #[error("no roadmap exists for this channel combination")]
    UnsupportedCombination,
    #[error("profile is not app capable")]
    NotAppCapable,
    #[error("no merchant named and no preferred merchant on file")]
    NoMerchant,
    #[error("storage failure: {0}")]
    StorageFailure(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::DuplicateNationalId => "DUPLICATE_NATIONAL_ID",
            Error::MalformedNationalId => "MALFORMED_NATIONAL_ID",
            Error::Validation(_) => "VALIDATION",
            Error::UnknownOrganization => "UNKNOWN_ORGANIZATION",
            Error::UnknownOrgUser => "UNKNOWN_ORG_USER",
            Error::UnknownBeneficiary => "UNKNOWN_BENEFICIARY",
            Error::UnknownMerchant => "UNKNOWN_MERCHANT",
            Error::UnknownQuota => "UNKNOWN_QUOTA",
            Error::UnknownSchedule => "UNKNOWN_SCHEDULE",
            Error::UnknownVoucher(_) => "UNKNOWN_VOUCHER",
            Error::UnknownItem(_) | Error::UnknownItemCode(_) => "UNKNOWN_ITEM",
            Error::Unauthorized => "UNAUTHORIZED",
            Error::InvalidDateRange => "INVALID_DATE_RANGE",
            Error::ItemLockedForPeriod => "ITEM_LOCKED_FOR_PERIOD",
            Error::NoOpenEntitlement => "NO_OPEN_ENTITLEMENT",
            Error::OutOfWindow => "OUT_OF_WINDOW",
            Error::DuplicateVoucher => "DUPLICATE_VOUCHER",
            Error::CategoryMismatch => "CATEGORY_MISMATCH",
            Error::VoucherClosed => "VOUCHER_CLOSED",
            Error::QuantityOutOfRange => "QUANTITY_OUT_OF_RANGE",
            Error::InvalidPin => "INVALID_PIN",
            Error::NoActiveSession => "NO_ACTIVE_SESSION",
            Error::PhaseViolation => "PHASE_VIOLATION",
            Error::SessionActive => "SESSION_ACTIVE",
            Error::UnsupportedCombination => "UNSUPPORTED_COMBINATION",
            Error::NotAppCapable => "NOT_APP_CAPABLE",
            Error::NoMerchant => "NO_MERCHANT",
            Error::StorageFailure(_) => "STORAGE_FAILURE",
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
