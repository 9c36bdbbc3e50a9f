//! Serve the triage API over the bundled fixtures.
//!
//! `cargo run --example serve_api`, then for instance
//! `curl -XPOST localhost:8080/sessions -d '{"nscr":"synthetic-v20-s7.csv","preset":"sknn15-sc20"}'`.

use portdrift::service::http::{serve, ServeOptions, DEFAULT_PORT, PORT_ENV};

#[tokio::main]
async fn main() -> portdrift::Result<()> {
    env_logger::init();
    let port = std::env::var(PORT_ENV).ok().and_then(|p| p.parse().ok()).unwrap_or(DEFAULT_PORT);
    let opts = ServeOptions {
        port,
        data_dir: concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures").into(),
        ..ServeOptions::default()
    };
    serve(opts).await
}
