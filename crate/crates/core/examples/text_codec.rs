//! The text-message grammar in both directions, including a long reply
//! split into numbered parts and put back together.

use subsidy::channels::{compose_text, parse_outbound, parse_text, reassemble, OutboundText, MAX_TEXT_LEN};
use subsidy::{Money, Quantity, VoucherId};

fn main() {
    for body in ["REQ FOOD", "req food @M2 oil=0.250", "OK 1111", "NO", "BAL", "REQ", "REQ FOOD OIL=0.250 OIL=1", "STOP"] {
        match parse_text(body) {
            Ok(command) => println!("{body:<26} -> {command:?}"),
            Err(e) => println!("{body:<26} -> error: {e}"),
        }
    }

    let long = OutboundText::Done {
        voucher: VoucherId(42),
        items: (1..=14).map(|n| (format!("ITEM{n:02}"), Quantity::from_milli(n * 125).expect("in range"))).collect(),
        refund: Money::from_piasters(1234),
    };
    let parts = compose_text(&long);
    println!("\n{} parts (limit {MAX_TEXT_LEN} chars):", parts.len());
    for part in &parts {
        println!("  [{:>3}] {part}", part.len());
    }
    let whole = reassemble(&parts).expect("parts reassemble");
    assert_eq!(parse_outbound(&whole), Some(long));
    println!("reassembled and parsed back to the same message");
}
