use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use bazaar_core::assets::ScoreWeights;
use bazaar_core::RewardFunding;
use bazaar_service::{serve, ServiceConfig};
use clap::Parser;

/// Credit-backed task marketplace over HTTP/JSON.
#[derive(Parser)]
#[command(name = "bazaar")]
struct Args {
    /// Directory holding the event log and snapshots. In-memory if omitted.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Who funds reuse rewards: the invoker (fee) or the platform (mint).
    #[arg(long, default_value = "fee")]
    mode: RewardFunding,
    /// w_succ,w_lat,w_freq,w_acc[,latency_scale_ms]
    #[arg(long, default_value = "0.4,0.2,0.2,0.2,1000")]
    score_weights: ScoreWeights,
    /// Write a snapshot every N events (0 disables).
    #[arg(long, default_value_t = 1000)]
    snapshot_every: u64,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let config = ServiceConfig {
        data_dir: args.data_dir,
        bind: args.bind,
        funding: args.mode,
        weights: args.score_weights,
        snapshot_every: args.snapshot_every,
    };
    match serve(config).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
