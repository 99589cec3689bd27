//! Simulated client-facing gateways.
//!
//! The text gateway speaks one message per line, `<mobile>|<body>`, in both
//! directions. The app gateway accepts length-prefixed frames on a local
//! stream socket; a client first sends a `hello` frame naming itself
//! (`{"beneficiary":3}` or `{"merchant":1}`) so frames addressed to it can
//! be delivered. Frames for clients that are not connected are queued and
//! flushed when they say hello.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::channels::{read_frame, write_frame, AppFrame, AppOutbound};
use crate::error::Result;
use crate::ids::{BeneficiaryId, MerchantId};
use crate::orchestrator::{Address, Inbound, OutboundAction, OutboundPayload};
use crate::platform::Platform;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("line has no `|` separator")]
    MissingSeparator,
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Splits a `<mobile>|<body>` line.
pub fn parse_text_line(line: &str) -> Result<(String, String), GatewayError> {
    let line = line.trim_end_matches(['\r', '\n']);
    let (mobile, body) = line.split_once('|').ok_or(GatewayError::MissingSeparator)?;
    Ok((mobile.trim().to_owned(), body.to_owned()))
}

pub fn format_text_line(mobile: &str, body: &str) -> String {
    format!("{mobile}|{body}")
}

type TextSink = Box<dyn Write + Send>;

/// Routes outbound actions to whichever connection owns the address.
#[derive(Clone)]
pub struct Hub {
    platform: Arc<Mutex<Platform>>,
    text: Arc<Mutex<Option<TextSink>>>,
    apps: Arc<Mutex<BTreeMap<Address, UnixStream>>>,
    queued: Arc<Mutex<BTreeMap<Address, Vec<AppFrame>>>>,
}

impl Hub {
    pub fn new(platform: Arc<Mutex<Platform>>) -> Self {
        Hub { platform, text: Arc::new(Mutex::new(None)), apps: Arc::new(Mutex::new(BTreeMap::new())), queued: Arc::new(Mutex::new(BTreeMap::new())) }
    }

    pub fn platform(&self) -> Arc<Mutex<Platform>> {
        Arc::clone(&self.platform)
    }

    /// Where outbound text lines are written.
    pub fn set_text_sink(&self, sink: impl Write + Send + 'static) {
        *self.text.lock().expect("text sink lock") = Some(Box::new(sink));
    }

    pub fn submit(&self, message: &Inbound) -> Result<Vec<OutboundAction>> {
        let outbound = self.platform.lock().expect("platform lock").handle_inbound(message)?;
        self.dispatch(&outbound);
        Ok(outbound)
    }

    pub fn dispatch(&self, outbound: &[OutboundAction]) {
        for action in outbound {
            match &action.payload {
                OutboundPayload::Text(body) => {
                    if let Some(sink) = self.text.lock().expect("text sink lock").as_mut() {
                        let _ = writeln!(sink, "{}", format_text_line(&action.to.to_string(), body));
                        let _ = sink.flush();
                    }
                }
                OutboundPayload::App(frame) => self.deliver_frame(&action.to, frame),
            }
        }
    }

    fn deliver_frame(&self, to: &Address, frame: &AppFrame) {
        let mut apps = self.apps.lock().expect("apps lock");
        if let Some(stream) = apps.get_mut(to) {
            if write_frame(stream, frame).is_ok() {
                return;
            }
            apps.remove(to);
        }
        self.queued.lock().expect("queue lock").entry(to.clone()).or_default().push(frame.clone());
    }

    fn register(&self, who: Address, stream: &UnixStream) -> io::Result<()> {
        let mut writer = stream.try_clone()?;
        let backlog = self.queued.lock().expect("queue lock").remove(&who).unwrap_or_default();
        for frame in &backlog {
            write_frame(&mut writer, frame).map_err(|e| io::Error::other(e.to_string()))?;
        }
        self.apps.lock().expect("apps lock").insert(who, writer);
        Ok(())
    }

    /// Frames waiting for a client that has not connected yet.
    pub fn queued_for(&self, who: &Address) -> Vec<AppFrame> {
        self.queued.lock().expect("queue lock").get(who).cloned().unwrap_or_default()
    }

    /// Serves text lines from `input` until end of stream, writing replies
    /// to the configured sink.
    pub fn run_text(&self, input: impl BufRead) -> Result<(), GatewayError> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_text_line(&line) {
                Ok((mobile, body)) => {
                    if let Err(e) = self.submit(&Inbound::Text { mobile: mobile.clone(), body }) {
                        self.dispatch(&[OutboundAction { to: Address::Mobile(mobile), payload: OutboundPayload::Text(format!("ERR {}", e.code())) }]);
                    }
                }
                Err(_) => {
                    if let Some(sink) = self.text.lock().expect("text sink lock").as_mut() {
                        let _ = writeln!(sink, "|ERR BAD_LINE");
                    }
                }
            }
        }
        Ok(())
    }

    /// Handles one app connection until the client hangs up or sends a
    /// frame that cannot be read, then forgets the client.
    pub fn run_app_connection(&self, stream: UnixStream) -> Result<(), GatewayError> {
        let mut who = None;
        let result = self.serve_app(&stream, &mut who);
        if let Some(who) = who {
            self.apps.lock().expect("apps lock").remove(&who);
        }
        let _ = stream.shutdown(std::net::Shutdown::Both);
        result
    }

    fn serve_app(&self, stream: &UnixStream, who: &mut Option<Address>) -> Result<(), GatewayError> {
        let mut reader = stream.try_clone()?;
        let mut writer = stream.try_clone()?;
        loop {
            let frame = match read_frame(&mut reader) {
                Ok(Some(frame)) => frame,
                Ok(None) => break,
                Err(e) => {
                    let notice = AppOutbound::Notice { code: "BAD_FRAME".into() }.to_frame(None);
                    let _ = write_frame(&mut writer, &notice);
                    return Err(io::Error::other(e.to_string()).into());
                }
            };
            if frame.kind == "hello" {
                match hello_address(&frame) {
                    Some(address) => {
                        self.register(address.clone(), stream)?;
                        *who = Some(address);
                    }
                    None => {
                        let notice = AppOutbound::Notice { code: "BAD_HELLO".into() }.to_frame(None);
                        let _ = write_frame(&mut writer, &notice);
                    }
                }
                continue;
            }
            if let Err(e) = self.submit(&Inbound::App(frame.clone())) {
                let notice = AppOutbound::Notice { code: e.code().into() }.to_frame(frame.session);
                let _ = write_frame(&mut writer, &notice);
            }
        }
        Ok(())
    }

    /// Accepts app connections on a Unix socket at `path`, one thread each.
    pub fn listen_app(&self, path: &Path) -> io::Result<JoinHandle<()>> {
        if path.exists() {
            std::fs::remove_file(path)?;
        }
        let listener = UnixListener::bind(path)?;
        let hub = self.clone();
        Ok(std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let hub = hub.clone();
                std::thread::spawn(move || {
                    let _ = hub.run_app_connection(stream);
                });
            }
        }))
    }
}

fn hello_address(frame: &AppFrame) -> Option<Address> {
    if let Some(id) = frame.body.get("beneficiary").and_then(|v| v.as_u64()) {
        return Some(Address::Beneficiary(BeneficiaryId(id)));
    }
    frame.body.get("merchant").and_then(|v| v.as_u64()).map(|id| Address::Merchant(MerchantId(id)))
}

/// The frame an app client sends to identify itself.
pub fn hello_frame(who: &Address) -> AppFrame {
    let body = match who {
        Address::Beneficiary(b) => serde_json::json!({ "beneficiary": b.0 }),
        Address::Merchant(m) => serde_json::json!({ "merchant": m.0 }),
        Address::Mobile(m) => serde_json::json!({ "mobile": m }),
    };
    AppFrame { kind: "hello".into(), session: None, body }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_lines_split_on_first_bar() {
        assert_eq!(parse_text_line("01001234567|REQ FOOD\n").unwrap(), ("01001234567".into(), "REQ FOOD".into()));
        assert_eq!(parse_text_line("0100|a|b").unwrap().1, "a|b");
        assert!(matches!(parse_text_line("REQ FOOD"), Err(GatewayError::MissingSeparator)));
        assert_eq!(format_text_line("0100", "BAL"), "0100|BAL");
    }

    #[test]
    fn hello_names_the_client() {
        let who = Address::Merchant(MerchantId(4));
        assert_eq!(hello_address(&hello_frame(&who)), Some(who));
        let who = Address::Beneficiary(BeneficiaryId(2));
        assert_eq!(hello_address(&hello_frame(&who)), Some(who));
    }
}
