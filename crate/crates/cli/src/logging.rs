use tracing_subscriber::EnvFilter;

pub const LOG_ENV: &str = "CHRONOFORGE_LOG";

/// JSON-lines logs on stderr; verbosity from `CHRONOFORGE_LOG` (default
/// `info`), using `tracing` filter syntax.
pub fn init() {
    let filter = EnvFilter::try_from_env(LOG_ENV).unwrap_or_else(|_| EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_current_span(false)
        .try_init();
}
