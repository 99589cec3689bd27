//! Target groups (beneficiaries, merchants, organizations) and the
//! administrative users who act for organizations.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use crate::error::{Error, Result};
use crate::ids::{BeneficiaryId, MerchantId, OrgUserId, OrganizationId};
use crate::money::Money;
use crate::state::{EventPayload, Tx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegionKind {
    Urban,
    Rural,
}

/// Urban/rural tag plus a place name; rendered and serialized `urban:Cairo`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Region {
    pub kind: RegionKind,
    pub name: String,
}

impl Region {
    pub fn urban(name: impl Into<String>) -> Self {
        Region { kind: RegionKind::Urban, name: name.into() }
    }

    pub fn rural(name: impl Into<String>) -> Self {
        Region { kind: RegionKind::Rural, name: name.into() }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            RegionKind::Urban => "urban",
            RegionKind::Rural => "rural",
        };
        write!(f, "{tag}:{}", self.name)
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (tag, name) = s.split_once(':').ok_or_else(|| Error::validation("region must be urban:<name> or rural:<name>"))?;
        let kind = match tag.to_ascii_lowercase().as_str() {
            "urban" => RegionKind::Urban,
            "rural" => RegionKind::Rural,
            _ => return Err(Error::validation("region tag must be urban or rural")),
        };
        if name.trim().is_empty() {
            return Err(Error::validation("region name is empty"));
        }
        Ok(Region { kind, name: name.trim().to_owned() })
    }
}

impl TryFrom<String> for Region {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Region> for String {
    fn from(r: Region) -> String {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelProfile {
    TextOnly,
    AppCapable,
}

/// Service categories a merchant outlet may be registered for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Food,
    Medical,
    Transport,
    Clothing,
    Fuel,
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "food" => Ok(Category::Food),
            "medical" => Ok(Category::Medical),
            "transport" => Ok(Category::Transport),
            "clothing" => Ok(Category::Clothing),
            "fuel" => Ok(Category::Fuel),
            other => Err(Error::validation(format!("unknown category `{other}`"))),
        }
    }
}

/// Salted SHA-256 of a 4-digit pin.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinHash {
    salt: String,
    digest: String,
}

impl fmt::Debug for PinHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PinHash(..)")
    }
}

impl PinHash {
    /// The salt is fixed per record: derived from the record id and national
    /// id so that journals stay reproducible.
    pub fn new(id: BeneficiaryId, national_id: &str, pin: &str) -> Self {
        let salt = hex::encode(&Sha256::digest(format!("pin-salt/{id}/{national_id}"))[..16]);
        let digest = Self::digest(&salt, pin);
        PinHash { salt, digest }
    }

    fn digest(salt: &str, pin: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(salt.as_bytes());
        hasher.update(b":");
        hasher.update(pin.as_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn matches(&self, pin: &str) -> bool {
        let candidate = Self::digest(&self.salt, pin);
        candidate.as_bytes().ct_eq(self.digest.as_bytes()).into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Beneficiary {
    pub id: BeneficiaryId,
    pub national_id: String,
    pub pin: PinHash,
    pub address: String,
    pub region: Region,
    pub mobile: String,
    pub family_size: u32,
    pub preferred_merchant: Option<MerchantId>,
    pub channel_profile: ChannelProfile,
    pub cash_balance: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merchant {
    pub id: MerchantId,
    pub name: String,
    pub region: Region,
    pub categories: BTreeSet<Category>,
    pub registered: bool,
    pub channel_profile: ChannelProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OrgKind {
    Governmental,
    Ngo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Organization {
    pub id: OrganizationId,
    pub name: String,
    pub kind: OrgKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Administration,
    Reporting,
    QuotaDelivery,
    BeneficiaryMgmt,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Administration, Role::Reporting, Role::QuotaDelivery, Role::BeneficiaryMgmt];

    /// The authorization matrix.
    pub fn permits(self, action: Action) -> bool {
        use Action::*;
        match self {
            Role::Administration => true,
            Role::Reporting => matches!(action, ViewReports | ViewMonitor | ViewDefinitions),
            Role::QuotaDelivery => matches!(action, EditSchedules | RunCharging | ViewDefinitions),
            Role::BeneficiaryMgmt => matches!(action, ManageBeneficiaries),
        }
    }
}

/// Administrative operations subject to role checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    ManageOrganizations,
    ManageOrgUsers,
    ManageMerchants,
    ManageBeneficiaries,
    DefineQuota,
    EditSchedules,
    RunCharging,
    ViewMonitor,
    ViewReports,
    ViewDefinitions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgUser {
    pub id: OrgUserId,
    pub org: OrganizationId,
    pub role: Role,
}

/// Input for [`Tx::register_beneficiary`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewBeneficiary {
    pub national_id: String,
    pub pin: String,
    pub address: String,
    pub region: Region,
    pub mobile: String,
    pub family_size: u32,
    #[serde(default)]
    pub preferred_merchant: Option<MerchantId>,
    pub channel_profile: ChannelProfile,
}

pub fn validate_national_id(national_id: &str) -> Result<()> {
    if national_id.len() == 14 && national_id.bytes().all(|b| b.is_ascii_digit()) {
        Ok(())
    } else {
        Err(Error::MalformedNationalId)
    }
}

fn validate_pin(pin: &str) -> Result<()> {
    if pin.len() == 4 && pin.bytes().all(|b| b.is_ascii_digit()) {
        Ok(())
    } else {
        Err(Error::validation("pin must be 4 digits"))
    }
}

fn validate_mobile(mobile: &str) -> Result<()> {
    let digits = mobile.strip_prefix('+').unwrap_or(mobile);
    if (8..=15).contains(&digits.len()) && digits.bytes().all(|b| b.is_ascii_digit()) {
        Ok(())
    } else {
        Err(Error::validation("mobile must be 8-15 digits with optional leading +"))
    }
}

impl Tx {
    pub fn create_organization(&mut self, name: &str, kind: OrgKind) -> Result<OrganizationId> {
        if name.trim().is_empty() {
            return Err(Error::validation("organization name is empty"));
        }
        let id = self.state().next_organization_id();
        self.emit(EventPayload::OrgCreated(Organization { id, name: name.trim().to_owned(), kind }));
        Ok(id)
    }

    pub fn create_org_user(&mut self, org: OrganizationId, role: Role) -> Result<OrgUserId> {
        if !self.state().organizations.contains_key(&org) {
            return Err(Error::UnknownOrganization);
        }
        let id = self.state().next_org_user_id();
        self.emit(EventPayload::OrgUserCreated(OrgUser { id, org, role }));
        Ok(id)
    }

    pub fn register_beneficiary(&mut self, new: NewBeneficiary) -> Result<BeneficiaryId> {
        validate_national_id(&new.national_id)?;
        if self.state().beneficiary_by_national_id(&new.national_id).is_some() {
            return Err(Error::DuplicateNationalId);
        }
        validate_pin(&new.pin)?;
        validate_mobile(&new.mobile)?;
        if self.state().beneficiary_by_mobile(&new.mobile).is_some() {
            return Err(Error::validation("mobile is already registered"));
        }
        if new.family_size < 1 {
            return Err(Error::validation("family_size must be at least 1"));
        }
        if let Some(m) = new.preferred_merchant {
            if !self.state().merchants.contains_key(&m) {
                return Err(Error::UnknownMerchant);
            }
        }
        let id = self.state().next_beneficiary_id();
        let beneficiary = Beneficiary {
            id,
            pin: PinHash::new(id, &new.national_id, &new.pin),
            national_id: new.national_id,
            address: new.address,
            region: new.region,
            mobile: new.mobile,
            family_size: new.family_size,
            preferred_merchant: new.preferred_merchant,
            channel_profile: new.channel_profile,
            cash_balance: Money::ZERO,
        };
        self.emit(EventPayload::BeneficiaryRegistered(beneficiary));
        Ok(id)
    }

    pub fn register_merchant(
        &mut self,
        name: &str,
        region: Region,
        categories: BTreeSet<Category>,
        channel_profile: ChannelProfile,
    ) -> Result<MerchantId> {
        if name.trim().is_empty() {
            return Err(Error::validation("merchant name is empty"));
        }
        if categories.is_empty() {
            return Err(Error::validation("merchant needs at least one category"));
        }
        let id = self.state().next_merchant_id();
        self.emit(EventPayload::MerchantRegistered(Merchant {
            id,
            name: name.trim().to_owned(),
            region,
            categories,
            registered: true,
            channel_profile,
        }));
        Ok(id)
    }

    /// Looks up the caller and checks the role matrix.
    pub fn authorize(&self, user: OrgUserId, action: Action) -> Result<OrgUser> {
        let user = self.state().org_users.get(&user).ok_or(Error::Unauthorized)?;
        if user.role.permits(action) {
            Ok(user.clone())
        } else {
            Err(Error::Unauthorized)
        }
    }
}

/// True iff the beneficiary exists and the pin matches. An unknown id still
/// pays for one digest comparison so the two failure modes look alike.
pub fn is_valid_consumer(state: &crate::state::State, beneficiary: BeneficiaryId, pin: &str) -> bool {
    match state.beneficiaries.get(&beneficiary) {
        Some(b) => b.pin.matches(pin),
        None => {
            let decoy = PinHash::new(beneficiary, "", "0000");
            let _ = decoy.matches(pin);
            false
        }
    }
}
