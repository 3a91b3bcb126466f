//! Serves a small catalog over HTTP and queries it.
//!
//! With no arguments this binds an ephemeral port, makes a few requests and
//! exits. Pass `listen` to keep serving on 127.0.0.1:8080 until Ctrl-C.

use std::sync::{Arc, RwLock};

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

use phantomforge::catalog::Catalog;
use phantomforge::config::PipelineConfig;
use phantomforge::server::{router, serve};
use phantomforge::synth::{SynthConfig, SyntheticCohort};
use phantomforge::taxonomy::Taxonomy;

fn build_catalog() -> Result<Catalog, Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("phantomforge-http");
    if root.exists() {
        std::fs::remove_dir_all(&root)?;
    }
    let tax = Taxonomy::bundled();
    let cohort = SyntheticCohort::generate(&SynthConfig::clean(20, 1), &tax)?;
    let mut cat = Catalog::init(&root, PipelineConfig::default(), tax)?;
    for p in &cohort.patients {
        for sid in &p.scans {
            cat.ingest_scan(sid, &cohort.render(sid)?, p, None)?;
        }
    }
    cat.run_qc(None, 0)?;
    Ok(cat)
}

async fn request(addr: std::net::SocketAddr, method: &str, path: &str, body: &str) -> std::io::Result<String> {
    let mut s = TcpStream::connect(addr).await?;
    let msg = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\
         Content-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    );
    s.write_all(msg.as_bytes()).await?;
    let mut out = String::new();
    s.read_to_string(&mut out).await?;
    let status = out.lines().next().unwrap_or_default().to_string();
    let payload = out.split("\r\n\r\n").nth(1).unwrap_or_default();
    let short: String = payload.chars().take(160).collect();
    Ok(format!("{status}\n    {short}"))
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cat = build_catalog()?;
    if std::env::args().nth(1).as_deref() == Some("listen") {
        serve(cat, "127.0.0.1:8080".parse()?, None).await?;
        return Ok(());
    }

    let first = cat.pending_reviews()[0].scan_id.clone();
    let app = router(Arc::new(RwLock::new(cat)), None);
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move { axum::serve(listener, app).await });

    let review = r#"{"verdict":"approved","rating":5,"reviewer":"dr.http"}"#;
    let calls = [
        ("GET", "/api/reviews/pending".to_string(), ""),
        ("POST", format!("/api/reviews/{first}"), review),
        ("POST", format!("/api/reviews/{first}"), review),
        ("GET", format!("/api/phantoms/{first}"), ""),
        ("GET", "/api/phantoms?sex=F&age_min=200".to_string(), ""),
        ("GET", "/api/qc/funnel".to_string(), ""),
        ("GET", "/api/stats/demographics".to_string(), ""),
    ];
    for (method, path, body) in calls {
        println!("{method} {path}\n  {}", request(addr, method, &path, body).await?);
    }
    Ok(())
}
