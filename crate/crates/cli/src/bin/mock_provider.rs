//! Serves the deterministic mock backend over stdio or TCP.

use std::io::{self, BufReader};
use std::net::TcpListener;

use anyhow::{anyhow, Context, Result};
use clap::Parser;
use stereobias::provider::{server, MockProvider};

#[derive(Parser, Debug)]
#[command(name = "stereobias-mock-provider", version, about = "Deterministic mock model backend")]
struct Args {
    /// Seed for the hash-derived probabilities.
    #[arg(long, env = "STEREO_EVAL_SEED", default_value_t = 0)]
    seed: u64,

    /// Backend flavour: full, encoder, decoder, encoder_decoder or encoder_decoder_nsp.
    #[arg(long, default_value = "full")]
    kind: String,

    /// Listen on this TCP address instead of speaking over stdio.
    #[arg(long)]
    listen: Option<String>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let make = {
        let (kind, seed) = (args.kind.clone(), args.seed);
        MockProvider::from_name(&kind, seed)
            .ok_or_else(|| anyhow!("unknown mock kind `{kind}` (expected one of {})", MockProvider::NAMES.join(", ")))?;
        move || MockProvider::from_name(&kind, seed).expect("kind checked above")
    };

    match args.listen {
        Some(addr) => {
            let listener = TcpListener::bind(&addr).with_context(|| format!("cannot listen on {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            server::serve_tcp(listener, make)?;
        }
        None => server::serve(make(), BufReader::new(io::stdin().lock()), io::stdout().lock())?,
    }
    Ok(())
}
