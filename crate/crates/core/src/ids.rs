//! Typed identifiers. Each renders with a one-letter prefix (`B3`, `V17`)
//! which is also the form used on the text channel and in scripts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed {kind} id `{raw}`")]
pub struct IdParseError {
    pub kind: &'static str,
    pub raw: String,
}

macro_rules! typed_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl $name {
            pub const PREFIX: char = $prefix;
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}{}", $prefix, self.0)
            }
        }

        impl FromStr for $name {
            type Err = IdParseError;

            /// Accepts `B3`, `b3`, or a bare `3`.
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let digits = s
                    .strip_prefix($prefix)
                    .or_else(|| s.strip_prefix($prefix.to_ascii_lowercase()))
                    .unwrap_or(s);
                digits
                    .parse::<u64>()
                    .ok()
                    .filter(|_| !digits.starts_with('+'))
                    .map($name)
                    .ok_or_else(|| IdParseError { kind: stringify!($name), raw: s.to_owned() })
            }
        }
    };
}

typed_id!(
    /// A registered beneficiary (consumer).
    BeneficiaryId, 'B'
);
typed_id!(MerchantId, 'M');
typed_id!(OrganizationId, 'O');
typed_id!(OrgUserId, 'U');
typed_id!(QuotaId, 'Q');
typed_id!(
    /// Quota schedule. Rendered with `S`.
    ScheduleId, 'S'
);
typed_id!(ItemId, 'I');
typed_id!(VoucherId, 'V');
typed_id!(
    /// Orchestrator session. Rendered with `X` to keep `S` for schedules.
    SessionId, 'X'
);
