//! Plain text-message grammar for phones without an app.
//!
//! Inbound (keywords case-insensitive, tokens separated by one space):
//!
//! ```text
//! REQ <quota-code> [@<merchant-code>] [<item-code>=<qty> ...]
//! OK <pin>
//! NO
//! BAL
//! ```
//!
//! Outbound templates:
//!
//! ```text
//! CHARGED <quota> P<period>
//! CONFIRM V<voucher> PAY <due> REFUND <refund> REPLY OK <pin>
//! DONE V<voucher> <item>=<actual> ... REFUND <refund>
//! CANCELLED V<voucher>
//! BALANCE <amount>
//! ERR <code>
//! ```
//!
//! No outbound body parses as an inbound command: the two keyword sets are
//! disjoint.

use std::fmt;

use crate::ids::{MerchantId, VoucherId};
use crate::money::{Money, Quantity};
use crate::quota::is_code;

/// Maximum characters in one text part.
pub const MAX_TEXT_LEN: usize = 160;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InboundText {
    Request { quota: String, merchant: Option<MerchantId>, items: Vec<(String, Quantity)> },
    Confirm { pin: String },
    Abandon,
    Balance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    TooLong,
    NotAscii,
    EmptyToken,
    UnknownKeyword,
    MissingArgument,
    BadQuotaCode,
    BadMerchant,
    BadItem,
    BadQuantity,
    DuplicateItem,
    BadPin,
    TrailingGarbage,
}

/// Failure with the 1-based index of the offending token (0 for whole-body
/// problems).
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} at token {position}")]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
}

fn err(position: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { position, kind }
}

pub fn parse_text(body: &str) -> Result<InboundText, ParseError> {
    let body = body.trim_matches(|c: char| c.is_ascii_whitespace());
    if body.is_empty() {
        return Err(err(0, ParseErrorKind::Empty));
    }
    if !body.is_ascii() {
        return Err(err(0, ParseErrorKind::NotAscii));
    }
    if body.len() > MAX_TEXT_LEN {
        return Err(err(0, ParseErrorKind::TooLong));
    }
    let tokens: Vec<&str> = body.split(' ').collect();
    if let Some(i) = tokens.iter().position(|t| t.is_empty()) {
        return Err(err(i + 1, ParseErrorKind::EmptyToken));
    }
    let keyword = tokens[0].to_ascii_uppercase();
    let no_more = |from: usize| if tokens.len() > from { Err(err(from + 1, ParseErrorKind::TrailingGarbage)) } else { Ok(()) };
    match keyword.as_str() {
        "REQ" => parse_request(&tokens),
        "OK" => {
            let pin = tokens.get(1).ok_or(err(2, ParseErrorKind::MissingArgument))?;
            if pin.len() != 4 || !pin.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err(2, ParseErrorKind::BadPin));
            }
            no_more(2)?;
            Ok(InboundText::Confirm { pin: (*pin).to_owned() })
        }
        "NO" => no_more(1).map(|_| InboundText::Abandon),
        "BAL" => no_more(1).map(|_| InboundText::Balance),
        _ => Err(err(1, ParseErrorKind::UnknownKeyword)),
    }
}

fn parse_request(tokens: &[&str]) -> Result<InboundText, ParseError> {
    let quota = tokens.get(1).ok_or(err(2, ParseErrorKind::MissingArgument))?.to_ascii_uppercase();
    if !is_code(&quota) {
        return Err(err(2, ParseErrorKind::BadQuotaCode));
    }
    let mut next = 2;
    let mut merchant = None;
    if let Some(raw) = tokens.get(next).and_then(|t| t.strip_prefix('@')) {
        merchant = Some(raw.parse::<MerchantId>().map_err(|_| err(next + 1, ParseErrorKind::BadMerchant))?);
        next += 1;
    }
    let mut items: Vec<(String, Quantity)> = Vec::new();
    for (i, token) in tokens.iter().enumerate().skip(next) {
        let position = i + 1;
        let Some((code, qty)) = token.split_once('=') else {
            return Err(err(position, ParseErrorKind::TrailingGarbage));
        };
        let code = code.to_ascii_uppercase();
        if !is_code(&code) {
            return Err(err(position, ParseErrorKind::BadItem));
        }
        let qty: Quantity = qty.parse().map_err(|_| err(position, ParseErrorKind::BadQuantity))?;
        if items.iter().any(|(c, _)| *c == code) {
            return Err(err(position, ParseErrorKind::DuplicateItem));
        }
        items.push((code, qty));
    }
    Ok(InboundText::Request { quota, merchant, items })
}

impl fmt::Display for InboundText {
    /// Canonical rendering: uppercase keywords, three-decimal quantities.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InboundText::Request { quota, merchant, items } => {
                write!(f, "REQ {quota}")?;
                if let Some(m) = merchant {
                    write!(f, " @{m}")?;
                }
                for (code, qty) in items {
                    write!(f, " {code}={qty}")?;
                }
                Ok(())
            }
            InboundText::Confirm { pin } => write!(f, "OK {pin}"),
            InboundText::Abandon => f.write_str("NO"),
            InboundText::Balance => f.write_str("BAL"),
        }
    }
}

impl InboundText {
    /// Transcript-safe rendering: the pin never leaves the confirm step.
    pub fn redacted(&self) -> String {
        match self {
            InboundText::Confirm { .. } => "OK ****".to_owned(),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutboundText {
    Charged { quota: String, period: u32 },
    Confirm { voucher: VoucherId, due: Money, refund: Money },
    Done { voucher: VoucherId, items: Vec<(String, Quantity)>, refund: Money },
    Cancelled { voucher: VoucherId },
    Balance { amount: Money },
    Err { code: String },
}

impl fmt::Display for OutboundText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutboundText::Charged { quota, period } => write!(f, "CHARGED {quota} P{period}"),
            OutboundText::Confirm { voucher, due, refund } => {
                write!(f, "CONFIRM {voucher} PAY {due} REFUND {refund} REPLY OK <pin>")
            }
            OutboundText::Done { voucher, items, refund } => {
                write!(f, "DONE {voucher}")?;
                for (code, qty) in items {
                    write!(f, " {code}={qty}")?;
                }
                write!(f, " REFUND {refund}")
            }
            OutboundText::Cancelled { voucher } => write!(f, "CANCELLED {voucher}"),
            OutboundText::Balance { amount } => write!(f, "BALANCE {amount}"),
            OutboundText::Err { code } => write!(f, "ERR {code}"),
        }
    }
}

/// Renders an outbound message, split into labelled parts of at most
/// [`MAX_TEXT_LEN`] characters when needed.
pub fn compose_text(message: &OutboundText) -> Vec<String> {
    split_parts(&message.to_string())
}

/// Splits on spaces into `k/n `-prefixed parts. A body that fits is returned
/// unlabelled.
pub fn split_parts(body: &str) -> Vec<String> {
    if body.len() <= MAX_TEXT_LEN {
        return vec![body.to_owned()];
    }
    let words: Vec<&str> = body.split(' ').collect();
    let mut count = 2;
    loop {
        let label_room = 2 * digits(count) + 2;
        let chunks = pack(&words, MAX_TEXT_LEN - label_room);
        if chunks.len() <= count {
            let n = chunks.len();
            return chunks.into_iter().enumerate().map(|(k, c)| format!("{}/{} {}", k + 1, n, c)).collect();
        }
        count = chunks.len();
    }
}

fn digits(n: usize) -> usize {
    n.to_string().len()
}

fn pack(words: &[&str], room: usize) -> Vec<String> {
    let mut chunks: Vec<String> = Vec::new();
    let mut current = String::new();
    for word in words {
        // a single oversize word is hard-split
        let mut word = *word;
        while word.len() > room {
            if !current.is_empty() {
                chunks.push(std::mem::take(&mut current));
            }
            chunks.push(word[..room].to_owned());
            word = &word[room..];
        }
        if current.is_empty() {
            current.push_str(word);
        } else if current.len() + 1 + word.len() <= room {
            current.push(' ');
            current.push_str(word);
        } else {
            chunks.push(std::mem::replace(&mut current, word.to_owned()));
        }
    }
    if !current.is_empty() || chunks.is_empty() {
        chunks.push(current);
    }
    chunks
}

/// Joins labelled parts back into one body, in label order regardless of
/// arrival order.
pub fn reassemble(parts: &[String]) -> Option<String> {
    if parts.len() == 1 && split_label(&parts[0]).is_none() {
        return Some(parts[0].clone());
    }
    let mut labelled: Vec<(usize, &str)> = Vec::with_capacity(parts.len());
    for part in parts {
        let (k, n, rest) = split_label(part)?;
        if n != parts.len() {
            return None;
        }
        labelled.push((k, rest));
    }
    labelled.sort_by_key(|(k, _)| *k);
    if labelled.iter().enumerate().any(|(i, (k, _))| *k != i + 1) {
        return None;
    }
    Some(labelled.into_iter().map(|(_, rest)| rest).collect::<Vec<_>>().join(" "))
}

fn split_label(part: &str) -> Option<(usize, usize, &str)> {
    let (label, rest) = part.split_once(' ')?;
    let (k, n) = label.split_once('/')?;
    Some((k.parse().ok()?, n.parse().ok()?, rest))
}

/// Recognizes a rendered outbound body (after reassembly).
pub fn parse_outbound(body: &str) -> Option<OutboundText> {
    let tokens: Vec<&str> = body.split(' ').collect();
    let voucher = |i: usize| tokens.get(i).and_then(|t| t.parse::<VoucherId>().ok()).filter(|_| tokens[i].starts_with('V'));
    let money = |i: usize| tokens.get(i).and_then(|t| t.parse::<Money>().ok());
    match tokens.as_slice() {
        ["CHARGED", quota, period] => Some(OutboundText::Charged { quota: (*quota).to_owned(), period: period.strip_prefix('P')?.parse().ok()? }),
        ["CONFIRM", _, "PAY", _, "REFUND", _, "REPLY", "OK", "<pin>"] => {
            Some(OutboundText::Confirm { voucher: voucher(1)?, due: money(3)?, refund: money(5)? })
        }
        ["DONE", _, middle @ .., "REFUND", _] => {
            let items = middle
                .iter()
                .map(|t| {
                    let (code, qty) = t.split_once('=')?;
                    Some((code.to_owned(), qty.parse().ok()?))
                })
                .collect::<Option<Vec<_>>>()?;
            Some(OutboundText::Done { voucher: voucher(1)?, items, refund: money(tokens.len() - 1)? })
        }
        ["CANCELLED", _] => Some(OutboundText::Cancelled { voucher: voucher(1)? }),
        ["BALANCE", _] => Some(OutboundText::Balance { amount: money(1)? }),
        ["ERR", code] => Some(OutboundText::Err { code: (*code).to_owned() }),
        _ => None,
    }
}
