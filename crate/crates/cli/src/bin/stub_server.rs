//! Reference stub server for the `/generate` wire protocol; serves canned
//! completions for integration tests and offline pipeline runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use kaft_core::modelio::{stub, MockTable};

#[derive(Parser)]
#[command(name = "kaft-stub-server", version, about = "Stub generation server for tests")]
struct Cli {
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1:8601")]
    bind: String,

    /// Completion table (JSON: {"mode": "exact"|"substring", "entries": {...}}).
    #[arg(long)]
    table: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let table = match cli.table {
        Some(path) => match MockTable::from_path(&path) {
            Ok(table) => Some(table),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => None,
    };
    let listener = match tokio::net::TcpListener::bind(&cli.bind).await {
        Ok(listener) => listener,
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", cli.bind);
            return ExitCode::from(2);
        }
    };
    eprintln!("kaft-stub-server listening on {}", cli.bind);
    if let Err(e) = stub::serve(listener, table).await {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
