//! Talks to an OpenAI-compatible chat-completions server.
//!
//! Point it at a running vLLM or SGLang endpoint:
//!
//! ```bash
//! NEGREFINE_ENDPOINT=http://localhost:8000/v1/chat/completions \
//! NEGREFINE_MODEL=Qwen/Qwen3-32B \
//!     cargo run -p negrefine --example http_backend
//! ```
//!
//! Without `NEGREFINE_ENDPOINT` it starts a tiny local stand-in that fails
//! the first request with a 503, so the retry path is visible too.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::post;
use axum::Json;
use negrefine::gateway::{BackendConfig, Gateway, HttpBackend, RetryPolicy};
use negrefine::model::{Document, TrainingInstance};
use negrefine::stage1::{run_stage1, Normalization};
use serde_json::{json, Value};

async fn local_stand_in() -> std::io::Result<String> {
    let hits = Arc::new(AtomicUsize::new(0));
    let app = axum::Router::new().route(
        "/v1/chat/completions",
        post(move |Json(body): Json<Value>| {
            let hits = hits.clone();
            async move {
                if hits.fetch_add(1, Ordering::SeqCst) == 0 {
                    return (StatusCode::SERVICE_UNAVAILABLE, "warming up").into_response();
                }
                let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
                let answer = if prompt.contains("1942") { "June 22, 1942" } else { "NO_ANSWER" };
                Json(json!({"choices": [{"message": {"content": answer}}]})).into_response()
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0))).await?;
    let url = format!("http://{}/v1/chat/completions", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, app).await });
    Ok(url)
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let url = match std::env::var("NEGREFINE_ENDPOINT") {
        Ok(url) => url,
        Err(_) => local_stand_in().await?,
    };
    let mut backend = HttpBackend::new(&url, Duration::from_secs(120))?;
    if let Ok(token) = std::env::var("NEGREFINE_API_TOKEN") {
        backend = backend.with_auth("Authorization", &token)?;
    }
    let config = BackendConfig {
        model_name: std::env::var("NEGREFINE_MODEL").unwrap_or_else(|_| "Qwen/Qwen3-32B".into()),
        retry: RetryPolicy { max_retries: 3, backoff: vec![Duration::from_millis(200)] },
        ..BackendConfig::default()
    };
    let gateway = Gateway::new(Arc::new(backend), config)?;

    let instance = TrainingInstance::new(
        "pledge",
        "when was the united states pledge of allegiance adopted",
        vec![Document::new("pos", "Congress officially recognized the Pledge on June 22, 1942.")],
        vec![Document::new("neg", "Bellamy was a Baptist minister and a Christian socialist.")],
    )?;
    let out = run_stage1(&instance, &gateway, Normalization::default()).await?;
    for (id, s) in out.snippets.entries() {
        println!("[{id}] {}: {}", s.doc_id, s.display_text());
    }
    println!("{} requests sent to {url}", gateway.requests_sent());
    Ok(())
}
