//! Bootstraps an organization over HTTP and defines a quota, as the admin
//! console would.

use std::io::Read;

use serde_json::{json, Value};

use subsidy::journal::MemoryJournal;
use subsidy::service::OrgService;
use subsidy::Platform;

fn call(agent: &ureq::Agent, base: &str, method: &str, path: &str, user: Option<&str>, body: Option<Value>) -> (u16, String) {
    let url = format!("{base}{path}");
    let mut response = if method == "GET" {
        let mut req = agent.get(&url);
        if let Some(u) = user {
            req = req.header("X-Org-User", u);
        }
        req.call()
    } else {
        let mut req = agent.post(&url).header("Content-Type", "application/json");
        if let Some(u) = user {
            req = req.header("X-Org-User", u);
        }
        req.send(body.map(|b| b.to_string()).unwrap_or_default())
    }
    .expect("server reachable");
    let mut text = String::new();
    response.body_mut().as_reader().read_to_string(&mut text).expect("utf-8 body");
    println!("{method} {path} -> {} {text}", response.status().as_u16());
    (response.status().as_u16(), text)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let service = OrgService::new(Platform::new(Box::new(MemoryJournal::new()))?);
    let handle = service.serve("127.0.0.1:0")?;
    let base = handle.base_url();
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let admin = Some("U1");

    call(&agent, &base, "POST", "/orgs", None, Some(json!({ "name": "Ministry", "kind": "Governmental" })));
    call(&agent, &base, "POST", "/org-users", None, Some(json!({ "org": 1, "role": "Administration" })));
    call(&agent, &base, "POST", "/org-users", admin, Some(json!({ "org": 1, "role": "Reporting" })));
    call(&agent, &base, "POST", "/merchants", admin, Some(json!({ "name": "Grocery", "region": "urban:Cairo", "categories": ["food"] })));
    call(
        &agent,
        &base,
        "POST",
        "/beneficiaries",
        admin,
        Some(json!({
            "national_id": "29001011234567", "pin": "1111", "address": "1 Nile St", "region": "urban:Cairo",
            "mobile": "01001234567", "family_size": 3, "preferred_merchant": 1, "channel_profile": "TextOnly"
        })),
    );
    call(
        &agent,
        &base,
        "POST",
        "/quotas",
        admin,
        Some(json!({ "code": "FOOD", "name": "Monthly food", "basis": "Family", "notify_on_charge": true })),
    );
    call(
        &agent,
        &base,
        "POST",
        "/quotas/1/schedules",
        admin,
        Some(json!({ "periodicity": "Monthly", "valid_from": "2024-01-01", "valid_to": "2024-12-31", "max_persons": 4 })),
    );
    call(
        &agent,
        &base,
        "POST",
        "/schedules/1/items",
        admin,
        Some(
            json!([{ "name": "OIL", "unit": "kg", "qty_per_person": "0.5", "unit_merchant_price": 1800, "unit_consumer_price": 1500, "unit_org_cost": 1600 }]),
        ),
    );
    call(&agent, &base, "POST", "/charging-cycles?now=2024-01-01", admin, None);
    call(&agent, &base, "POST", "/charging-cycles?now=2024-01-01", admin, None);
    // The reporting user may read definitions but not change them.
    call(&agent, &base, "GET", "/quotas", Some("U2"), None);
    call(&agent, &base, "POST", "/quotas", Some("U2"), Some(json!({ "code": "X", "name": "X", "basis": "Personal" })));
    call(&agent, &base, "GET", "/nowhere", admin, None);
    handle.stop();
    Ok(())
}
