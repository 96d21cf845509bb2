use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shapcmi_core::client::RetryPolicy;
use shapcmi_core::error::Error;
use shapcmi_core::ident::SecretKey;
use shapcmi_core::orchestrator::{emit_report, run_centralized, run_experiment, ExperimentConfig};
use shapcmi_core::server::{serve, ServerConfig};

/// Feature valuation for vertically partitioned data via PSI-counted
/// permutations and locally reconstructed Shapley-CMI values.
#[derive(Parser)]
#[command(name = "shapcmi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment on one machine: split the dataset among
    /// simulated parties, run coordinator and clients, and compare the
    /// protocol's valuations against the centralized computation.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "id-col")]
        id_col: String,
        #[arg(long = "label-col")]
        label_col: String,
        #[arg(long, default_value_t = 3)]
        parties: usize,
        #[arg(long, default_value_t = 5)]
        bins: usize,
        #[arg(long, default_value_t = 20)]
        permutations: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Key file (raw bytes or 32+ hex chars); falls back to SHAPCMI_KEY.
        #[arg(long = "key-file")]
        key_file: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        /// Coordinator port; 0 picks an ephemeral port.
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
    /// Centralized valuation only, no protocol: bin the table and compute
    /// permutation-averaged Shapley-CMI directly.
    Oracle {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "id-col")]
        id_col: String,
        #[arg(long = "label-col")]
        label_col: String,
        #[arg(long, default_value_t = 5)]
        bins: usize,
        #[arg(long, default_value_t = 20)]
        permutations: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run only the PSI coordinator service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        /// JSON config file; environment variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "snapshot-dir")]
        snapshot_dir: Option<PathBuf>,
        #[arg(long = "idle-timeout")]
        idle_timeout_secs: Option<u64>,
        #[arg(long = "max-body-bytes")]
        max_body_bytes: Option<usize>,
        #[arg(long)]
        token: Option<String>,
    },
}

const EXIT_TOLERANCE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PROTOCOL: u8 = 3;

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Ingestion { .. } => EXIT_CONFIG,
        _ => EXIT_PROTOCOL,
    }
}

fn load_key(key_file: Option<&PathBuf>) -> Result<SecretKey, Error> {
    match key_file {
        Some(path) => SecretKey::from_file(path),
        None => SecretKey::from_env("SHAPCMI_KEY"),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "shapcmi_core=info".into()),
        )
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run {
            dataset,
            id_col,
            label_col,
            parties,
            bins,
            permutations,
            seed,
            key_file,
            out,
            tolerance,
            port,
        } => {
            let config = ExperimentConfig {
                dataset,
                id_column: id_col,
                label_column: label_col,
                party_count: parties,
                bin_count: bins,
                permutation_count: permutations,
                rng_seed: seed,
                key: load_key(key_file.as_ref())?,
                output_dir: out,
                tolerance,
                port,
                retry: RetryPolicy::default(),
            };
            let (table, report) = run_experiment(&config)?;
            let (json_path, text_path) = emit_report(&table, &report, &config.output_dir)?;
            print!("{}", std::fs::read_to_string(&text_path)?);
            eprintln!("wrote {} and {}", json_path.display(), text_path.display());
            if table.within_tolerance() {
                Ok(0)
            } else {
                eprintln!(
                    "tolerance breach: max abs difference {:.3e} > {:.1e}",
                    table.max_abs_difference, table.tolerance
                );
                Ok(EXIT_TOLERANCE)
            }
        }
        Command::Oracle {
            dataset,
            id_col,
            label_col,
            bins,
            permutations,
            seed,
            out,
        } => {
            let report = run_centralized(&dataset, &id_col, &label_col, bins, permutations, seed)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Input(format!("serializing report: {e}")))?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    let path = dir.join("valuation.json");
                    std::fs::write(&path, &json)?;
                    eprintln!("wrote {}", path.display());
                }
                None => println!("{json}"),
            }
            for est in &report.estimates {
                println!(
                    "{:<12} {:>18.12}  share {:>10.6}",
                    est.feature_label, est.value, report.normalized_shares[&est.feature_label]
                );
            }
            Ok(0)
        }
        Command::Serve {
            listen,
            config,
            snapshot_dir,
            idle_timeout_secs,
            max_body_bytes,
            token,
        } => {
            let mut server_config = ServerConfig::load(config.as_deref())?;
            if let Some(listen) = listen {
                server_config.listen_addr = listen;
            }
            if let Some(dir) = snapshot_dir {
                server_config.snapshot_dir = Some(dir);
            }
            if let Some(t) = idle_timeout_secs {
                server_config.idle_timeout_secs = t;
            }
            if let Some(m) = max_body_bytes {
                server_config.max_body_bytes = m;
            }
            if let Some(t) = token {
                server_config.shared_token = Some(t);
            }
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| Error::Config(format!("tokio runtime: {e}")))?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(&server_config.listen_addr)
                    .await
                    .map_err(|e| {
                        Error::Config(format!("cannot bind {}: {e}", server_config.listen_addr))
                    })?;
                serve(server_config, listener, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })?;
            Ok(0)
        }
    }
}
