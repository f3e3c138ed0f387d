//! Start the registration service on localhost with an untrained toy model
//! and query it over plain HTTP.
//!
//! `cargo run --example serve_demo [port]`
//!
//! Pass `--stay` to keep the server running after the demo requests.

use std::net::SocketAddr;
use std::time::Duration;

use condreg::condnet::{build_variant, Conditioning, ModelConfig};
use condreg::datagen::{generate_pairs, Split, SynthSpec};
use condreg_service::{serve, AppState, StoredPair};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

async fn request(addr: SocketAddr, method: &str, path: &str, body: &str) -> std::io::Result<String> {
    let mut stream = TcpStream::connect(addr).await?;
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes()).await?;
    let mut resp = String::new();
    stream.read_to_string(&mut resp).await?;
    Ok(resp)
}

fn status_and_body(resp: &str) -> (&str, &str) {
    let status = resp.lines().next().unwrap_or("");
    let body = resp.split_once("\r\n\r\n").map_or("", |(_, b)| b);
    (status, body)
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let port: u16 = args.iter().skip(1).find(|a| !a.starts_with('-')).map_or(Ok(8787), |p| p.parse())?;
    let stay = args.iter().any(|a| a == "--stay");

    let model = build_variant(ModelConfig { levels: 2, blocks_per_level: 1, conv_filters: 8, ..ModelConfig::variant(Conditioning::CirDm, 2) })?;
    let pairs = generate_pairs(2, 100, &SynthSpec::with_shape(&[32, 32]))?
        .into_iter()
        .map(|record| StoredPair { record, split: Some(Split::Test) })
        .collect();
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let server = tokio::spawn(serve(AppState::new(model, "toy", pairs), addr));
    tokio::time::sleep(Duration::from_millis(200)).await;

    let r = request(addr, "GET", "/v1/health", "").await?;
    let (s, b) = status_and_body(&r);
    println!("GET /v1/health -> {s}\n  {b}");

    let r = request(addr, "GET", "/v1/pairs", "").await?;
    let (s, b) = status_and_body(&r);
    println!("GET /v1/pairs -> {s}\n  {b}");

    let r = request(addr, "POST", "/v1/register", r#"{"pair_id": "pair_000100", "lambda": 2.0, "outputs": ["metrics"]}"#).await?;
    let (s, b) = status_and_body(&r);
    let v: serde_json::Value = serde_json::from_str(b).unwrap_or_default();
    println!("POST /v1/register -> {s}\n  std_jac {} dsc {} inference_s {}", v["std_jac"], v["dsc"], v["inference_s"]);

    let r = request(addr, "POST", "/v1/register", r#"{"pair_id": "pair_000100", "lambda": 12.0}"#).await?;
    let (s, b) = status_and_body(&r);
    println!("POST /v1/register (lambda 12) -> {s}\n  {b}");

    if stay {
        println!("serving on http://{addr} (Ctrl-C to stop)");
        server.await??;
    }
    Ok(())
}
