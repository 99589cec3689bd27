//! App messages as length-prefixed JSON frames.

use serde_json::json;

use subsidy::channels::{decode_frame, encode_frame, AppFrame, AppInbound, AppOutbound};
use subsidy::{BeneficiaryId, Money};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let request = AppFrame { kind: "request".into(), session: None, body: json!({ "from": 2, "quota": "FOOD", "items": { "OIL": "0.500" } }) };
    let bytes = encode_frame(&request)?;
    let (len, payload) = bytes.split_at(4);
    println!("length prefix {:?} = {} bytes", len, u32::from_be_bytes(len.try_into()?));
    println!("payload {}", String::from_utf8_lossy(payload));

    let decoded = decode_frame(&bytes)?;
    let parsed = AppInbound::from_frame(&decoded)?;
    println!("parsed {parsed:?}");
    assert!(matches!(parsed, AppInbound::Request { from: BeneficiaryId(2), .. }));

    let balance = AppOutbound::Balance { amount: Money::from_piasters(150) };
    let back = AppOutbound::from_frame(&decode_frame(&encode_frame(&balance.to_frame(None))?)?)?;
    assert_eq!(back, balance);
    println!("outbound {back:?} survives a round trip");

    let mut torn = bytes.clone();
    torn.truncate(bytes.len() - 3);
    println!("torn frame: {}", decode_frame(&torn).unwrap_err());
    Ok(())
}
