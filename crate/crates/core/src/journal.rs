//! Append-only event journal.
//!
//! On disk each event is one line: the event as a JSON object with keys in
//! sorted order, a tab, and the CRC-32 of the JSON text as eight lowercase
//! hex digits.
//!
//! ```text
//! {"at":"2024-01-01T00:00:00","kind":"OrgCreated","payload":{...},"seq":1}\t5c1b0f3a
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::state::{EventPayload, State};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: NaiveDateTime,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("corrupt journal at seq {seq}: {reason}")]
    CorruptJournal { seq: u64, reason: String },
    #[error("storage failure: {0}")]
    StorageFailure(String),
}

impl JournalError {
    fn corrupt(seq: u64, reason: impl Into<String>) -> Self {
        JournalError::CorruptJournal { seq, reason: reason.into() }
    }
}

fn canonicalize(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

/// Key-sorted JSON text of any serializable value.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("value serializes");
    canonicalize(value).to_string()
}

pub fn encode_line(event: &Event) -> String {
    let json = canonical_json(event);
    let crc = crc32fast::hash(json.as_bytes());
    format!("{json}\t{crc:08x}")
}

/// Decodes one journal line. `expected_seq` is only used for error reports.
pub fn decode_line(line: &str, expected_seq: u64) -> Result<Event, JournalError> {
    let (json, crc) = line.rsplit_once('\t').ok_or_else(|| JournalError::corrupt(expected_seq, "missing checksum"))?;
    let crc = u32::from_str_radix(crc.trim_end(), 16).map_err(|_| JournalError::corrupt(expected_seq, "malformed checksum"))?;
    if crc32fast::hash(json.as_bytes()) != crc {
        return Err(JournalError::corrupt(expected_seq, "checksum mismatch"));
    }
    serde_json::from_str(json).map_err(|e| JournalError::corrupt(expected_seq, format!("undecodable record: {e}")))
}

/// Parses a whole journal text, enforcing the checksum of every line and a
/// gapless sequence starting at 1.
pub fn parse_journal(text: &str) -> Result<Vec<Event>, JournalError> {
    parse_lines(text.lines().map(|l| Ok(l.to_owned())), 1)
}

fn parse_lines(lines: impl Iterator<Item = std::io::Result<String>>, first_seq: u64) -> Result<Vec<Event>, JournalError> {
    let mut events = Vec::new();
    let mut expected = first_seq;
    for line in lines {
        let line = line.map_err(|e| JournalError::StorageFailure(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let event = decode_line(&line, expected)?;
        if event.seq != expected {
            return Err(JournalError::corrupt(expected, format!("sequence gap: found {}", event.seq)));
        }
        events.push(event);
        expected += 1;
    }
    Ok(events)
}

fn check_gapless(events: &[Event], first_seq: u64) -> Result<(), JournalError> {
    for (offset, e) in events.iter().enumerate() {
        let expected = first_seq + offset as u64;
        if e.seq != expected {
            return Err(JournalError::corrupt(expected, format!("sequence gap: found {}", e.seq)));
        }
    }
    Ok(())
}

/// Rebuilds state from a full journal.
pub fn replay(events: &[Event]) -> Result<State, JournalError> {
    check_gapless(events, 1)?;
    let mut state = State::default();
    for e in events {
        state.apply(e.at, &e.payload);
    }
    Ok(state)
}

/// Full state as of a journal position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub as_of_seq: u64,
    pub state: State,
}

impl Snapshot {
    pub fn take(state: &State, as_of_seq: u64) -> Self {
        Snapshot { as_of_seq, state: state.clone() }
    }

    pub fn to_json(&self) -> String {
        canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, JournalError> {
        serde_json::from_str(text).map_err(|e| JournalError::corrupt(0, format!("undecodable snapshot: {e}")))
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf, JournalError> {
        let path = dir.join(format!("snapshot-{:010}.json", self.as_of_seq));
        std::fs::write(&path, self.to_json()).map_err(|e| JournalError::StorageFailure(e.to_string()))?;
        Ok(path)
    }

    /// Most recent snapshot in `dir`, if any.
    pub fn latest_in_dir(dir: &Path) -> Result<Option<Self>, JournalError> {
        let entries = match std::fs::read_dir(dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(JournalError::StorageFailure(e.to_string())),
        };
        let mut names: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("snapshot-") && n.ends_with(".json")))
            .collect();
        names.sort();
        match names.pop() {
            Some(path) => {
                let text = std::fs::read_to_string(&path).map_err(|e| JournalError::StorageFailure(e.to_string()))?;
                Self::from_json(&text).map(Some)
            }
            None => Ok(None),
        }
    }

    /// Applies the journal tail `(as_of_seq, n]` on top of the snapshot.
    pub fn load(&self, tail: &[Event]) -> Result<State, JournalError> {
        check_gapless(tail, self.as_of_seq + 1)?;
        let mut state = self.state.clone();
        for e in tail {
            state.apply(e.at, &e.payload);
        }
        Ok(state)
    }
}

/// Where committed events go. `append` must be durable when it returns.
pub trait JournalStore: Send {
    fn append(&mut self, events: &[Event]) -> Result<(), JournalError>;
    fn last_seq(&self) -> u64;
    /// Every committed event, in order.
    fn read_all(&self) -> Result<Vec<Event>, JournalError>;
}

/// In-memory journal. Keeps the encoded lines too, so tests can inspect the
/// exact bytes that would reach disk.
#[derive(Debug, Default)]
pub struct MemoryJournal {
    events: Vec<Event>,
    lines: Vec<String>,
    fail_appends: bool,
}

impl MemoryJournal {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes every subsequent append fail with `StorageFailure`.
    pub fn set_failing(&mut self, failing: bool) {
        self.fail_appends = failing;
    }

    pub fn text(&self) -> String {
        let mut out = self.lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }
}

impl JournalStore for MemoryJournal {
    fn append(&mut self, events: &[Event]) -> Result<(), JournalError> {
        if self.fail_appends {
            return Err(JournalError::StorageFailure("append refused".into()));
        }
        check_gapless(events, self.last_seq() + 1)?;
        self.lines.extend(events.iter().map(encode_line));
        self.events.extend_from_slice(events);
        Ok(())
    }

    fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    fn read_all(&self) -> Result<Vec<Event>, JournalError> {
        Ok(self.events.clone())
    }
}

/// Journal file, one line per event, fsynced on every append.
#[derive(Debug)]
pub struct FileJournal {
    path: PathBuf,
    file: File,
    last_seq: u64,
}

impl FileJournal {
    /// Opens (or creates) the file and verifies what is already there.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, JournalError> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&path)
            .map_err(|e| JournalError::StorageFailure(format!("{}: {e}", path.display())))?;
        let mut journal = FileJournal { path, file, last_seq: 0 };
        journal.last_seq = journal.read_all()?.last().map_or(0, |e| e.seq);
        Ok(journal)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl JournalStore for FileJournal {
    fn append(&mut self, events: &[Event]) -> Result<(), JournalError> {
        check_gapless(events, self.last_seq + 1)?;
        let mut buf = String::new();
        for e in events {
            buf.push_str(&encode_line(e));
            buf.push('\n');
        }
        let io = |e: std::io::Error| JournalError::StorageFailure(e.to_string());
        self.file.write_all(buf.as_bytes()).map_err(io)?;
        self.file.flush().map_err(io)?;
        self.file.sync_data().map_err(io)?;
        if let Some(last) = events.last() {
            self.last_seq = last.seq;
        }
        Ok(())
    }

    fn last_seq(&self) -> u64 {
        self.last_seq
    }

    fn read_all(&self) -> Result<Vec<Event>, JournalError> {
        let file = File::open(&self.path).map_err(|e| JournalError::StorageFailure(e.to_string()))?;
        parse_lines(BufReader::new(file).lines(), 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{OrgKind, Organization};
    use crate::ids::OrganizationId;

    fn at(h: u32) -> NaiveDateTime {
        chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    fn org_event(seq: u64) -> Event {
        Event {
            seq,
            at: at(1),
            payload: EventPayload::OrgCreated(Organization { id: OrganizationId(seq), name: format!("Org {seq}"), kind: OrgKind::Ngo }),
        }
    }

    #[test]
    fn line_format_is_sorted_json_plus_crc() {
        let line = encode_line(&org_event(1));
        let (json, crc) = line.split_once('\t').unwrap();
        assert_eq!(json, r#"{"at":"2024-01-01T01:00:00","kind":"OrgCreated","payload":{"id":1,"kind":"Ngo","name":"Org 1"},"seq":1}"#);
        assert_eq!(crc.len(), 8);
        assert_eq!(decode_line(&line, 1).unwrap(), org_event(1));
    }

    #[test]
    fn bit_flip_is_detected() {
        let line = encode_line(&org_event(1)).replace("Org 1", "Org 2");
        assert!(matches!(decode_line(&line, 1), Err(JournalError::CorruptJournal { seq: 1, .. })));
    }

    #[test]
    fn appends_are_consecutive() {
        let mut j = MemoryJournal::new();
        j.append(&[org_event(1)]).unwrap();
        j.append(&[org_event(2)]).unwrap();
        assert_eq!(j.last_seq(), 2);
        assert!(j.append(&[org_event(4)]).is_err());
    }

    #[test]
    fn empty_journal_replays_to_empty_state() {
        assert_eq!(replay(&[]).unwrap(), State::default());
        assert!(parse_journal("").unwrap().is_empty());
    }

    #[test]
    fn gap_is_reported_at_first_missing_seq() {
        let text = [encode_line(&org_event(1)), encode_line(&org_event(2)), encode_line(&org_event(4))].join("\n");
        match parse_journal(&text) {
            Err(JournalError::CorruptJournal { seq, .. }) => assert_eq!(seq, 3),
            other => panic!("expected gap, got {other:?}"),
        }
        match replay(&[org_event(1), org_event(3)]) {
            Err(JournalError::CorruptJournal { seq, .. }) => assert_eq!(seq, 2),
            other => panic!("expected gap, got {other:?}"),
        }
    }

    #[test]
    fn snapshot_plus_tail_matches_full_replay() {
        let events: Vec<Event> = (1..=5).map(org_event).collect();
        let full = replay(&events).unwrap();
        let snap = Snapshot::take(&replay(&events[..2]).unwrap(), 2);
        assert_eq!(snap.load(&events[2..]).unwrap(), full);
        let whole = Snapshot::take(&full, 5);
        assert_eq!(whole.load(&[]).unwrap(), full);
        assert!(matches!(snap.load(&events[3..]), Err(JournalError::CorruptJournal { seq: 3, .. })));
        let back = Snapshot::from_json(&snap.to_json()).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn file_journal_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.log");
        {
            let mut j = FileJournal::open(&path).unwrap();
            j.append(&[org_event(1), org_event(2)]).unwrap();
        }
        let mut j = FileJournal::open(&path).unwrap();
        assert_eq!(j.last_seq(), 2);
        j.append(&[org_event(3)]).unwrap();
        assert_eq!(j.read_all().unwrap().len(), 3);
    }

    #[test]
    fn failing_store_refuses() {
        let mut j = MemoryJournal::new();
        j.set_failing(true);
        assert!(matches!(j.append(&[org_event(1)]), Err(JournalError::StorageFailure(_))));
        assert_eq!(j.last_seq(), 0);
    }
}
