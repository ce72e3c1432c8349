use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use geowine_core::EmbeddingKind;
use geowine_service::{api, run_eval, Config, EvalConfig, ProviderMode, Services};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "geowine", version, about = "Geolocation-based image retrieval service")]
struct Cli {
    /// TOML configuration file (overrides GEOWINE_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Fixture,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Run the top-k evaluation over a sample manifest.
    Eval {
        /// CSV with columns image_ref,lat,lng,qid,group.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "fixture")]
        provider: ProviderArg,
        #[arg(long, default_value_t = 1.0)]
        radius_km: f64,
        #[arg(long, default_value_t = 25.0)]
        threshold_km: f64,
        /// Report path; the table and audit log are written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Additional k values (1, 5 and 10 are always reported).
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        /// Embedding kind used for ranking.
        #[arg(long, default_value = "geolocation")]
        kind: EmbeddingKind,
    },
}

fn load_config(path: Option<PathBuf>) -> Result<Config, geowine_service::ServiceError> {
    let var = |k: &str| std::env::var(k).ok();
    match path {
        Some(p) => {
            let mut cfg = Config::from_file(p)?;
            cfg.apply_vars(var)?;
            Ok(cfg)
        }
        None => Config::from_vars(var),
    }
}

async fn serve(cfg: Config, bind: Option<String>) -> Result<(), String> {
    let bind = bind.unwrap_or_else(|| cfg.bind.clone());
    let services = Services::from_config(cfg).map_err(|e| e.to_string())?;
    let app = api::router(Arc::new(services));
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| format!("cannot bind {bind}: {e}"))?;
    tracing::info!("listening on http://{bind}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let mut cfg = match load_config(cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Serve { bind } => serve(cfg, bind).await,
        Command::Eval {
            manifest,
            provider,
            radius_km,
            threshold_km,
            out,
            k,
            kind,
        } => {
            cfg.provider = match provider {
                ProviderArg::Fixture => ProviderMode::Fixture,
                ProviderArg::External => ProviderMode::ExternalInference,
            };
            let eval = EvalConfig {
                manifest,
                radius_km,
                threshold_km,
                extra_ks: k,
                kind,
            };
            async {
                let services = Services::from_config(cfg).map_err(|e| e.to_string())?;
                let run = run_eval(&services, &eval).await.map_err(|e| e.to_string())?;
                let written = run.write(&out).map_err(|e| e.to_string())?;
                print!("{}", run.report.render_table());
                for p in written {
                    eprintln!("wrote {}", p.display());
                }
                Ok(())
            }
            .await
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
