//! Starts the review server on a free port and drives a small two-assessor
//! session over HTTP: judge, adjudicate, export, compute agreement.
//!
//! ```bash
//! cargo run -p negrefine --example review_session
//! ```

use std::net::SocketAddr;
use std::sync::Arc;

use negrefine::analytics::AnnotationItem;
use negrefine::review::{serve, KappaSummary, SessionStore};
use serde_json::{json, Value};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Arc::new(SessionStore::open(dir.path())?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let (bound, addr) = tokio::sync::oneshot::channel();
    let server = tokio::spawn(serve(
        store,
        SocketAddr::from(([127, 0, 0, 1], 0)),
        None,
        move |a| bound.send(a).unwrap(),
        async move {
            stopped.await.ok();
        },
    ));
    let base = format!("http://{}/api/sessions", addr.await?);
    let http = reqwest::Client::new();

    let items: Vec<AnnotationItem> = (0..6)
        .map(|i| AnnotationItem {
            pair_id: format!("q{i}::n{i}"),
            query: format!("query {i}"),
            negative_text: format!("candidate passage {i}"),
            llm_label: i < 3,
        })
        .collect();
    let created: Value = http
        .post(&base)
        .json(&json!({"session_id": "demo", "judge": "demo-judge", "items": items}))
        .send()
        .await?
        .json()
        .await?;
    println!("created {created}");

    // A says the first three are relevant; B also flags the fourth
    for (who, relevant) in [("A", 3), ("B", 4)] {
        loop {
            let r = http.get(format!("{base}/demo/next?assessor={who}")).send().await?;
            if r.status() == reqwest::StatusCode::NO_CONTENT {
                break;
            }
            let item: Value = r.json().await?;
            let pair = item["pair_id"].as_str().unwrap().to_string();
            let i: usize = pair[1..pair.find("::").unwrap()].parse()?;
            http.post(format!("{base}/demo/judgments"))
                .json(&json!({"pair_id": pair, "assessor": who, "label": i < relevant}))
                .send()
                .await?
                .error_for_status()?;
        }
    }

    let open: Value = http.get(format!("{base}/demo/disagreements")).send().await?.json().await?;
    println!("disagreements: {open}");
    let blocked = http.get(format!("{base}/demo/export")).send().await?.status();
    println!("export before adjudication: {blocked}");
    for d in open.as_array().unwrap() {
        http.post(format!("{base}/demo/adjudications"))
            .json(&json!({"pair_id": d["pair_id"], "label": false}))
            .send()
            .await?
            .error_for_status()?;
    }

    let export: Value = http.get(format!("{base}/demo/export")).send().await?.json().await?;
    println!("export: {export}");
    let kappa: KappaSummary = http.get(format!("{base}/demo/kappa")).send().await?.json().await?;
    println!("judge vs humans kappa {:.3}, A vs B kappa {:.3} over {} pairs", kappa.kappa, kappa.kappa_a_b, kappa.n);

    stop.send(()).ok();
    server.await??;
    Ok(())
}
