//! Starts the HTTP API on an in-memory store. Set MOOC_TOKEN first, e.g.
//!
//! ```text
//! MOOC_TOKEN=secret cargo run --example service
//! curl -H 'Authorization: Bearer secret' localhost:8080/courses
//! ```
use mooc_analytics::service::{self, ApiConfig};

fn main() {
    let cfg = match ApiConfig::from_env() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    if let Err(e) = rt.block_on(service::serve(cfg)) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
