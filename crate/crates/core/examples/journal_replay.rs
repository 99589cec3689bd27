//! Writes a journal file, prints a few raw lines, then rebuilds the state
//! from the file alone and from a snapshot plus the tail.

use subsidy::journal::{parse_journal, replay, FileJournal, Snapshot};
use subsidy::sim::{fuzz_on, seed, Profile};
use subsidy::Platform;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("events.log");
    let snapshots = dir.path().join("snapshots");
    std::fs::create_dir(&snapshots)?;

    let mut platform = Platform::recover(Box::new(FileJournal::open(&path)?))?;
    let manifest = seed(&mut platform, Profile::Demo)?;
    platform.snapshot().write_to_dir(&snapshots)?;
    let report = fuzz_on(&mut platform, &manifest, 9, 80)?;
    println!("{} events, {} deliveries", platform.last_seq(), report.delivered);
    let live = platform.state().canonical_bytes();
    drop(platform);

    let text = std::fs::read_to_string(&path)?;
    for line in text.lines().take(3) {
        let shown: String = line.chars().take(110).collect();
        println!("  {shown}{}", if line.len() > 110 { " ..." } else { "" });
    }

    let events = parse_journal(&text)?;
    let rebuilt = replay(&events)?;
    println!("full replay matches: {}", rebuilt.canonical_bytes() == live);

    let snapshot = Snapshot::latest_in_dir(&snapshots)?.ok_or("snapshot missing")?;
    let restored = Platform::recover_from_snapshot(Box::new(FileJournal::open(&path)?), &snapshot)?;
    println!("snapshot plus tail matches: {}", restored.state().canonical_bytes() == live);

    std::fs::write(&path, text.replacen("\"seq\":3", "\"seq\":4", 1))?;
    match FileJournal::open(&path) {
        Ok(_) => println!("tampering went unnoticed"),
        Err(e) => println!("tampered file: {e}"),
    }
    Ok(())
}
