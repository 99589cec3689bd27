//! The running platform: one live [`State`], one journal, and the commit
//! discipline that keeps them in step.

use chrono::{NaiveDate, NaiveDateTime};

use crate::channels::{parse_text, AppInbound};
use crate::error::{Error, Result};
use crate::journal::{replay, Event, JournalError, JournalStore, Snapshot};
use crate::orchestrator::{Address, Inbound, OrchestratorConfig, OutboundAction, OutboundPayload};
use crate::quota::{boundaries_between, ChargeReport};
use crate::state::{Channel, EventPayload, State, Tx};

/// Clock used when nothing has set one yet.
pub fn genesis() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date").and_hms_opt(0, 0, 0).expect("valid time")
}

/// What one clock advance did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClockReport {
    pub from: Option<NaiveDateTime>,
    pub to: NaiveDateTime,
    pub cycles: Vec<(NaiveDateTime, ChargeReport)>,
    pub expired_sessions: usize,
    /// Messages produced on the way, with the instant each was sent.
    pub outbound: Vec<(NaiveDateTime, OutboundAction)>,
}

pub struct Platform {
    state: State,
    journal: Box<dyn JournalStore>,
    config: OrchestratorConfig,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform").field("last_seq", &self.journal.last_seq()).field("clock", &self.state.clock).finish()
    }
}

fn storage(e: JournalError) -> Error {
    Error::StorageFailure(e.to_string())
}

impl Platform {
    /// Starts over an empty journal.
    pub fn new(journal: Box<dyn JournalStore>) -> Result<Self, JournalError> {
        Self::recover(journal)
    }

    /// Rebuilds the state by replaying everything in `journal`.
    pub fn recover(journal: Box<dyn JournalStore>) -> Result<Self, JournalError> {
        let events = journal.read_all()?;
        let state = replay(&events)?;
        Ok(Platform { state, journal, config: OrchestratorConfig::default() })
    }

    /// Rebuilds from a snapshot plus the journal entries after it.
    pub fn recover_from_snapshot(journal: Box<dyn JournalStore>, snapshot: &Snapshot) -> Result<Self, JournalError> {
        let events = journal.read_all()?;
        let tail: Vec<Event> = events.into_iter().filter(|e| e.seq > snapshot.as_of_seq).collect();
        let state = snapshot.load(&tail)?;
        Ok(Platform { state, journal, config: OrchestratorConfig::default() })
    }

    pub fn with_config(mut self, config: OrchestratorConfig) -> Self {
        self.config = config;
        self
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn journal(&self) -> &dyn JournalStore {
        self.journal.as_ref()
    }

    pub fn journal_mut(&mut self) -> &mut dyn JournalStore {
        self.journal.as_mut()
    }

    pub fn last_seq(&self) -> u64 {
        self.journal.last_seq()
    }

    pub fn now(&self) -> NaiveDateTime {
        self.state.clock.unwrap_or_else(genesis)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::take(&self.state, self.journal.last_seq())
    }

    /// Runs a command against a working copy and commits its events. On any
    /// error, including a journal write failure, the live state is untouched.
    pub fn execute<T>(&mut self, command: impl FnOnce(&mut Tx) -> Result<T>) -> Result<T> {
        let mut tx = Tx::new(self.state.clone(), self.now());
        let out = command(&mut tx)?;
        self.commit(tx)?;
        Ok(out)
    }

    fn commit(&mut self, tx: Tx) -> Result<()> {
        let (state, pending) = tx.into_parts();
        if pending.is_empty() {
            return Ok(());
        }
        let first = self.journal.last_seq() + 1;
        let events: Vec<Event> = pending.into_iter().zip(first..).map(|((at, payload), seq)| Event { seq, at, payload }).collect();
        self.journal.append(&events).map_err(storage)?;
        self.state = state;
        Ok(())
    }

    /// Moves the clock forward to `to` without running anything due in between.
    pub fn set_clock(&mut self, to: NaiveDateTime) -> Result<()> {
        if self.state.clock.is_some_and(|c| c >= to) {
            return Ok(());
        }
        self.execute(|tx| {
            tx.set_now(to);
            tx.emit(EventPayload::ClockAdvanced { to });
            Ok(())
        })
    }

    /// Runs one charging cycle at `now`, moving the clock there first if it
    /// lies ahead. Returns the report and the charge notifications to send.
    pub fn run_charging_cycle(&mut self, now: Option<NaiveDateTime>) -> Result<(ChargeReport, Vec<OutboundAction>)> {
        let at = now.unwrap_or_else(|| self.now()).max(self.now());
        self.execute(|tx| {
            if tx.state().clock != Some(at) {
                tx.set_now(at);
                tx.emit(EventPayload::ClockAdvanced { to: at });
            }
            let mut outbound = tx.expire_sessions();
            let report = tx.run_charging_cycle();
            outbound.extend(report.notifications.iter().flat_map(|n| tx.notify(n)));
            record_outbound(tx, &outbound);
            Ok((report, outbound))
        })
    }

    /// Routes one inbound message and commits what it did together with its
    /// transcript. A rejected message commits only the transcript.
    pub fn handle_inbound(&mut self, message: &Inbound) -> Result<Vec<OutboundAction>> {
        let config = self.config;
        let mut tx = Tx::new(self.state.clone(), self.now());
        record_inbound(&mut tx, message);
        match tx.handle_inbound(&config, message) {
            Ok(outbound) => {
                record_outbound(&mut tx, &outbound);
                self.commit(tx)?;
                Ok(outbound)
            }
            Err(rejection) => {
                let mut tx = Tx::new(self.state.clone(), self.now());
                record_inbound(&mut tx, message);
                let outbound = vec![rejection.reply];
                record_outbound(&mut tx, &outbound);
                self.commit(tx)?;
                Ok(outbound)
            }
        }
    }

    /// Closes sessions whose deadline has passed at the current clock.
    pub fn expire_sessions(&mut self) -> Result<Vec<OutboundAction>> {
        self.execute(|tx| {
            let outbound = tx.expire_sessions();
            record_outbound(tx, &outbound);
            Ok(outbound)
        })
    }

    /// Advances the clock to `to`, running in time order every charging
    /// boundary and every session deadline that falls on the way.
    pub fn advance_clock(&mut self, to: NaiveDateTime) -> Result<ClockReport> {
        let from = self.state.clock;
        let mut report = ClockReport { from, to, ..ClockReport::default() };
        loop {
            let cur = self.now();
            let boundary = self
                .state
                .schedules
                .values()
                .flat_map(|s| boundaries_between(s, cur.date(), to.date()))
                .min()
                .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight"));
            let deadline = self.state.sessions.values().filter(|s| !s.is_closed()).map(|s| s.deadline).filter(|d| *d <= to).min();
            match (boundary, deadline) {
                (_, Some(d)) if boundary.is_none_or(|b| d < b) => {
                    let before = self.open_sessions();
                    self.set_clock(d)?;
                    let out = self.expire_sessions()?;
                    report.expired_sessions += before - self.open_sessions();
                    report.outbound.extend(out.into_iter().map(|a| (d, a)));
                }
                (Some(b), _) => {
                    let before = self.open_sessions();
                    let (cycle, out) = self.run_charging_cycle(Some(b))?;
                    report.expired_sessions += before - self.open_sessions();
                    report.cycles.push((b, cycle));
                    report.outbound.extend(out.into_iter().map(|a| (b, a)));
                }
                (None, _) => break,
            }
        }
        self.set_clock(to)?;
        Ok(report)
    }

    fn open_sessions(&self) -> usize {
        self.state.sessions.values().filter(|s| !s.is_closed()).count()
    }
}

fn record_inbound(tx: &mut Tx, message: &Inbound) {
    let event = match message {
        Inbound::Text { mobile, body } => EventPayload::MessageIn {
            channel: Channel::Text,
            from: mobile.clone(),
            body: parse_text(body).map(|m| m.redacted()).unwrap_or_else(|_| body.clone()),
        },
        Inbound::App(frame) => EventPayload::MessageIn {
            channel: Channel::App,
            from: frame.body.get("from").map(|v| v.to_string()).unwrap_or_default(),
            body: match AppInbound::from_frame(frame) {
                Ok(m) => m.redacted(),
                Err(_) => format!("malformed {}", frame.kind),
            },
        },
    };
    tx.emit(event);
}

fn record_outbound(tx: &mut Tx, outbound: &[OutboundAction]) {
    for action in outbound {
        let channel = match action.payload {
            OutboundPayload::Text(_) => Channel::Text,
            OutboundPayload::App(_) => Channel::App,
        };
        let to = match &action.to {
            Address::Mobile(m) => m.clone(),
            other => other.to_string(),
        };
        tx.emit(EventPayload::MessageOut { channel, to, body: action.transcript_body() });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{OrgKind, Role};
    use crate::journal::MemoryJournal;

    #[test]
    fn failed_append_leaves_state_unchanged() {
        let mut journal = MemoryJournal::new();
        journal.set_failing(true);
        let mut p = Platform::new(Box::new(journal)).unwrap();
        let before = p.state().clone();
        let err = p.execute(|tx| tx.create_organization("Relief", OrgKind::Ngo)).unwrap_err();
        assert_eq!(err.code(), "STORAGE_FAILURE");
        assert_eq!(p.state(), &before);
        assert_eq!(p.last_seq(), 0);
    }

    #[test]
    fn commands_journal_then_apply() {
        let mut p = Platform::new(Box::new(MemoryJournal::new())).unwrap();
        let org = p.execute(|tx| tx.create_organization("Relief", OrgKind::Ngo)).unwrap();
        p.execute(|tx| tx.create_org_user(org, Role::Administration)).unwrap();
        assert_eq!(p.last_seq(), 2);
        let replayed = replay(&p.journal().read_all().unwrap()).unwrap();
        assert_eq!(&replayed, p.state());
    }

    #[test]
    fn clock_never_moves_back() {
        let mut p = Platform::new(Box::new(MemoryJournal::new())).unwrap();
        let later = genesis() + chrono::Duration::days(3);
        p.advance_clock(later).unwrap();
        p.set_clock(genesis()).unwrap();
        assert_eq!(p.now(), later);
    }
}
