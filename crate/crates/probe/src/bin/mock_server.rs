//! Serves a fixture over HTTP until interrupted.
//!
//! Usage: textlabel-mock [--port P] [--fixture FILE.json] [--echo]

use std::net::SocketAddr;

use textlabel_probe::{MockFixture, MockServer};

fn usage() -> ! {
    eprintln!("usage: textlabel-mock [--port P] [--fixture FILE.json] [--echo]");
    std::process::exit(2);
}

#[tokio::main]
async fn main() {
    let mut port = 0u16;
    let mut fixture = MockFixture::default();
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--port" => port = args.next().and_then(|p| p.parse().ok()).unwrap_or_else(|| usage()),
            "--fixture" => {
                let path = args.next().unwrap_or_else(|| usage());
                let text = std::fs::read_to_string(&path).unwrap_or_else(|e| {
                    eprintln!("{path}: {e}");
                    std::process::exit(4);
                });
                fixture = serde_json::from_str(&text).unwrap_or_else(|e| {
                    eprintln!("{path}: {e}");
                    std::process::exit(2);
                });
            }
            "--echo" => fixture.echo_unknown = true,
            _ => usage(),
        }
    }
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let server = MockServer::bind(fixture, addr).await.unwrap_or_else(|e| {
        eprintln!("bind {addr}: {e}");
        std::process::exit(4);
    });
    println!("{}", server.base_url());
    let _ = tokio::signal::ctrl_c().await;
}
