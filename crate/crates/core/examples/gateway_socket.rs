//! The app gateway on a real Unix socket. A merchant connects after the
//! beneficiary's request and receives the draft that was queued for it.

use std::io::Cursor;
use std::os::unix::net::UnixStream;
use std::sync::{Arc, Mutex};

use serde_json::json;

use subsidy::channels::{read_frame, write_frame, AppFrame, AppOutbound};
use subsidy::gateway::{hello_frame, Hub};
use subsidy::journal::MemoryJournal;
use subsidy::orchestrator::Address;
use subsidy::sim::{seed, Profile};
use subsidy::{BeneficiaryId, MerchantId, Platform};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut platform = Platform::new(Box::new(MemoryJournal::new()))?;
    let manifest = seed(&mut platform, Profile::Demo)?;
    let hub = Hub::new(Arc::new(Mutex::new(platform)));
    hub.set_text_sink(std::io::stdout());

    let dir = tempfile::tempdir()?;
    let socket = dir.path().join("app.sock");
    hub.listen_app(&socket)?;

    let b1 = manifest.beneficiary(BeneficiaryId(1)).ok_or("demo has B1")?;
    hub.run_text(Cursor::new(format!("{}|REQ FOOD\n", b1.mobile)))?;

    let mut m1 = UnixStream::connect(&socket)?;
    write_frame(&mut m1, &hello_frame(&Address::Merchant(MerchantId(1))))?;
    let next = |stream: &mut UnixStream| -> Result<AppOutbound, Box<dyn std::error::Error>> {
        let frame = read_frame(stream)?.ok_or("socket closed")?;
        Ok(AppOutbound::from_frame(&frame)?)
    };
    println!("M1 received {:?}", next(&mut m1)?);

    write_frame(&mut m1, &AppFrame { kind: "submit".into(), session: None, body: json!({ "from": 1, "voucher": 1 }) })?;
    // The confirmation request goes out on the text side; give it a moment.
    std::thread::sleep(std::time::Duration::from_millis(100));
    hub.run_text(Cursor::new(format!("{}|OK {}\n", b1.mobile, b1.pin)))?;
    if let AppOutbound::Receipt { receipt } = next(&mut m1)? {
        println!("M1 receipt: settlement {} for voucher {}", receipt.merchant_settlement, receipt.voucher);
    }
    Ok(())
}
