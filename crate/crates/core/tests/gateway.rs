use std::io::{Cursor, Write};
use std::os::unix::net::UnixStream;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::json;

use subsidy::channels::{read_frame, write_frame, AppFrame, AppOutbound};
use subsidy::gateway::{hello_frame, Hub};
use subsidy::journal::MemoryJournal;
use subsidy::orchestrator::Address;
use subsidy::sim::{seed, Manifest, Profile};
use subsidy::{BeneficiaryId, MerchantId, Platform, VoucherId};

#[derive(Clone, Default)]
struct Sink(Arc<Mutex<Vec<u8>>>);

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl Sink {
    fn lines(&self) -> Vec<String> {
        String::from_utf8(self.0.lock().unwrap().clone()).unwrap().lines().map(str::to_owned).collect()
    }
}

fn hub() -> (Hub, Manifest) {
    let mut platform = Platform::new(Box::new(MemoryJournal::new())).unwrap();
    let manifest = seed(&mut platform, Profile::Demo).unwrap();
    (Hub::new(Arc::new(Mutex::new(platform))), manifest)
}

fn frame(kind: &str, body: serde_json::Value) -> AppFrame {
    AppFrame { kind: kind.into(), session: None, body }
}

fn next(stream: &mut UnixStream) -> AppOutbound {
    let f = read_frame(stream).unwrap().expect("a frame before end of stream");
    AppOutbound::from_frame(&f).unwrap()
}

fn eventually(check: impl Fn() -> bool) -> bool {
    for _ in 0..500 {
        if check() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    false
}

#[test]
fn text_lines_in_text_lines_out() {
    let (hub, manifest) = hub();
    let sink = Sink::default();
    hub.set_text_sink(sink.clone());
    let b1 = manifest.beneficiary(BeneficiaryId(1)).unwrap();
    let input = format!("{m}|BAL\n\nno separator here\n{m}|WHAT\n09999999|BAL\n", m = b1.mobile);
    hub.run_text(Cursor::new(input)).unwrap();
    assert_eq!(
        sink.lines(),
        vec![
            format!("{}|BALANCE 0.00", b1.mobile),
            "|ERR BAD_LINE".to_string(),
            format!("{}|ERR PARSE_ERROR", b1.mobile),
            "09999999|ERR UNKNOWN_BENEFICIARY".to_string(),
        ]
    );
}

#[test]
fn frames_for_absent_clients_wait_in_a_queue() {
    let (hub, manifest) = hub();
    let sink = Sink::default();
    hub.set_text_sink(sink.clone());
    let b1 = manifest.beneficiary(BeneficiaryId(1)).unwrap();
    hub.run_text(Cursor::new(format!("{}|REQ FOOD\n", b1.mobile))).unwrap();
    let waiting = hub.queued_for(&Address::Merchant(MerchantId(1)));
    assert_eq!(waiting.len(), 1);
    assert_eq!(waiting[0].kind, "draft");
    assert!(sink.lines().is_empty());
}

#[test]
fn app_socket_round_trip() {
    let (hub, manifest) = hub();
    let sink = Sink::default();
    hub.set_text_sink(sink.clone());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("app.sock");
    hub.listen_app(&path).unwrap();

    let connect = |who: Address| {
        let mut s = UnixStream::connect(&path).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        write_frame(&mut s, &hello_frame(&who)).unwrap();
        s
    };

    // The text beneficiary asks before the merchant has connected.
    let b1 = manifest.beneficiary(BeneficiaryId(1)).unwrap();
    hub.run_text(Cursor::new(format!("{}|REQ FOOD\n", b1.mobile))).unwrap();

    let mut m1 = connect(Address::Merchant(MerchantId(1)));
    let AppOutbound::Draft { voucher } = next(&mut m1) else { panic!("expected the queued draft") };
    assert_eq!(voucher.id, VoucherId(1));

    write_frame(&mut m1, &frame("adjust", json!({ "from": 1, "voucher": 1, "item": "OIL", "qty": "0" }))).unwrap();
    let AppOutbound::Draft { voucher } = next(&mut m1) else { panic!("expected a revised draft") };
    assert_eq!(voucher.lines[0].actual_qty.milli(), 0);
    write_frame(&mut m1, &frame("submit", json!({ "from": 9, "voucher": 1 }))).unwrap();
    // The rejection is addressed to the claimed sender, who is not connected.
    let nine = Address::Merchant(MerchantId(9));
    assert!(eventually(|| !hub.queued_for(&nine).is_empty()));
    assert_eq!(AppOutbound::from_frame(&hub.queued_for(&nine)[0]).unwrap(), AppOutbound::Notice { code: "UNKNOWN_MERCHANT".into() });
    write_frame(&mut m1, &frame("submit", json!({ "from": 1, "voucher": 1 }))).unwrap();

    // Submit is answered on the text side; wait for it to land.
    let confirm = format!("{}|CONFIRM V1 PAY 5.00 REFUND 1.50 REPLY OK <pin>", b1.mobile);
    assert!(eventually(|| sink.lines().contains(&confirm)), "{:?}", sink.lines());

    hub.run_text(Cursor::new(format!("{}|OK {}\n", b1.mobile, b1.pin))).unwrap();
    let AppOutbound::Receipt { receipt } = next(&mut m1) else { panic!("expected a receipt") };
    assert_eq!(receipt.refund.piasters(), 150);
    assert!(sink.lines().contains(&format!("{}|DONE V1 SUGAR=1.000 REFUND 1.50", b1.mobile)));

    // An app beneficiary on its own connection.
    let mut b2 = connect(Address::Beneficiary(BeneficiaryId(2)));
    write_frame(&mut b2, &frame("balance", json!({ "from": 2 }))).unwrap();
    assert_eq!(next(&mut b2), AppOutbound::Balance { amount: subsidy::Money::ZERO });

    // A malformed frame gets a notice and the connection is dropped.
    b2.write_all(&[0, 0, 0, 3, b'{', b'x', b'}']).unwrap();
    assert_eq!(next(&mut b2), AppOutbound::Notice { code: "BAD_FRAME".into() });
    assert!(read_frame(&mut b2).unwrap().is_none());
}
