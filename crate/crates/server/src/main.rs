use std::future::Future;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use t2i_audit_server::{bind, ServiceConfig, StartupError};
use tracing_subscriber::EnvFilter;

/// Serve the audit platform's REST API.
#[derive(Debug, Parser)]
#[command(name = "t2i-audit", version)]
struct Cli {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the offline mock provider instead of the configured one.
    #[arg(long)]
    mock: bool,
    /// Overrides the port of `listen_address`.
    #[arg(long)]
    port: Option<u16>,
}

/// Installs the handlers right away, so a signal that arrives just after the
/// address is announced still triggers a graceful shutdown.
#[cfg(unix)]
fn shutdown_signal() -> std::io::Result<impl Future<Output = ()>> {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = signal(SignalKind::terminate())?;
    let mut int = signal(SignalKind::interrupt())?;
    Ok(async move {
        tokio::select! {
            _ = term.recv() => {}
            _ = int.recv() => {}
        }
        tracing::info!("shutdown requested");
    })
}

#[cfg(not(unix))]
fn shutdown_signal() -> std::io::Result<impl Future<Output = ()>> {
    Ok(async {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutdown requested");
    })
}

async fn run(cli: Cli) -> Result<(), StartupError> {
    let mut config = match &cli.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    if cli.mock {
        config.mock_mode = true;
    }
    if let Some(port) = cli.port {
        config.set_port(port);
    }
    let bound = bind(config).await?;
    let shutdown = shutdown_signal()
        .map_err(|e| StartupError::Runtime(format!("cannot install signal handlers: {e}")))?;
    let addr = bound.local_addr();
    tracing::info!(%addr, "serving");
    println!("listening on {addr}");
    let _ = std::io::stdout().flush();
    bound.run(shutdown).await
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
    {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
