//! Plays a script given on the command line, or a year of monthly
//! charging when none is given, and prints the transcript.

use std::sync::{Arc, Mutex};

use subsidy::journal::MemoryJournal;
use subsidy::sim::{seed, Player, Profile, Script};
use subsidy::Platform;

const YEAR: &str = include_str!("../scripts/year.txt");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => YEAR.to_owned(),
    };
    let script = Script::parse(&text)?;
    let mut platform = Platform::new(Box::new(MemoryJournal::new()))?;
    let manifest = seed(&mut platform, Profile::Demo)?;
    let report = Player::new(Arc::new(Mutex::new(platform)), Some(manifest)).play(&script)?;
    for line in &report.transcript {
        println!("{line}");
    }
    for a in &report.assertions {
        println!("{} line {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.line, a.detail);
    }
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
