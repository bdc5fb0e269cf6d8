mod bench;
mod fail;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anonproxy_core::transform::{anonymize_instruction, render_png, synthesize_virtual_ui};
use anonproxy_core::{OcrToken, SessionConfig, SessionState};
use anonproxy_eval::{render_table, run_scenario, MetricsReport, RunOptions, Scenario};
use anonproxy_service::{AppConfig, AppState};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fail::{read, read_text, write, Exit, Failure};

#[derive(Parser)]
#[command(name = "anonproxy", version, about = "Trusted-side anonymization proxy for mobile GUI agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Anonymize an instruction, a UI dump, OCR tokens or a screenshot.
    Anonymize(AnonymizeArgs),
    /// Replay scenario files and report leakage and consistency metrics.
    Run(RunArgs),
    /// Serve the session protocol over HTTP.
    Serve(ServeArgs),
    /// Time detection and transformation over a scenario corpus.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, env = anonproxy_service::config::ENV_CONFIG)]
    config: Option<PathBuf>,
    /// JSON session configuration; replaces the `[session]` table.
    #[arg(long)]
    session_config: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("input").required(true).multiple(true).args(["instruction", "xml", "ocr"])))]
struct AnonymizeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Text file holding the task instruction.
    #[arg(long)]
    instruction: Option<PathBuf>,
    /// UI hierarchy dump.
    #[arg(long)]
    xml: Option<PathBuf>,
    /// JSON array of OCR tokens `{text, bbox: [l, t, r, b]}`.
    #[arg(long)]
    ocr: Option<PathBuf>,
    /// PNG screenshot to mask; needs `--png-out`.
    #[arg(long, requires = "png_out")]
    screenshot: Option<PathBuf>,
    /// Masked PNG destination.
    #[arg(long)]
    png_out: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Scenario file; repeatable.
    #[arg(long, required = true)]
    scenario: Vec<PathBuf>,
    /// Detect exactly the planted values instead of the scenario's detector.
    #[arg(long)]
    oracle_detector: bool,
    /// JSON report destination.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    bind: Option<SocketAddr>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory searched recursively for scenario files.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<AppConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => AppConfig::load(p)?,
            None => AppConfig::default(),
        };
        cfg = cfg.with_env()?;
        if let Some(p) = &self.session_config {
            cfg.session = serde_json::from_str::<SessionConfig>(&read_text(p)?)
                .map_err(|e| Failure::new("invalid-config", format!("{}: {e}", p.display())))?;
            cfg.validate()?;
        }
        Ok(cfg)
    }

    fn given(&self) -> bool {
        self.config.is_some() || self.session_config.is_some()
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn anonymize(args: &AnonymizeArgs) -> Result<Exit, Failure> {
    let cfg = args.config.load()?;
    let adapter = cfg.build_adapter()?;
    let mut session = SessionState::new("cli", cfg.session.clone()).map_err(|e| Failure::from(&e))?;
    let masked = match &args.instruction {
        Some(p) => {
            let text = read_text(p)?;
            let text = text.strip_suffix('\n').unwrap_or(&text);
            Some(anonymize_instruction(&mut session, text, adapter.as_ref()).map_err(|e| Failure::from(&e))?)
        }
        None => None,
    };
    if args.xml.is_none() && args.ocr.is_none() {
        if args.screenshot.is_some() {
            return Err(Failure::new("malformed-input", "--screenshot needs --xml or --ocr"));
        }
        return emit(args.out.as_deref(), &format!("{}\n", masked.unwrap_or_default())).map(|_| Exit::Ok);
    }
    let xml = match &args.xml {
        Some(p) => read_text(p)?,
        None => "<hierarchy />".to_string(),
    };
    let ocr: Vec<OcrToken> = match &args.ocr {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| Failure::new("malformed-input", format!("{}: {e}", p.display())))?,
        None => Vec::new(),
    };
    let ui = synthesize_virtual_ui(&mut session, &xml, &ocr, adapter.as_ref()).map_err(|e| Failure::from(&e))?;
    if let (Some(shot), Some(dest)) = (&args.screenshot, &args.png_out) {
        let png = render_png(&read(shot)?, &ui.mask_plan).map_err(|e| Failure::from(&e))?;
        write(dest, &png)?;
    }
    let mut doc = json!({ "virtual_ui": ui });
    if let Some(m) = masked {
        doc["masked_instruction"] = json!(m);
    }
    emit(args.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&doc).expect("serializes")))?;
    Ok(Exit::Ok)
}

fn run(args: &RunArgs) -> Result<Exit, Failure> {
    let config = if args.config.given() { Some(args.config.load()?.session) } else { None };
    let options = RunOptions { oracle_detector: args.oracle_detector, config };
    let mut reports = Vec::new();
    for path in &args.scenario {
        let scenario = Scenario::load(path).map_err(|e| match &e {
            anonproxy_eval::ScenarioError::Io(io) => Failure::new("io-error", format!("{}: {io}", path.display())),
            _ => Failure::new("scenario-invalid", format!("{}: {e}", path.display())),
        })?;
        let start = Instant::now();
        let transcript = run_scenario(&scenario, &options).map_err(|e| {
            let at = e.step.map_or_else(String::new, |s| format!(" at step {s}"));
            Failure::new(e.code.clone(), format!("{}{at}: {}", scenario.name, e.message))
        })?;
        let wall = start.elapsed().as_millis() as u64;
        reports.push(MetricsReport::from_transcript(&scenario, &transcript, wall));
    }
    if let Some(p) = &args.report {
        let mut text = serde_json::to_string_pretty(&reports).expect("serializes");
        text.push('\n');
        write(p, text.as_bytes())?;
    }
    print!("{}", render_table(&reports));
    Ok(if reports.iter().all(MetricsReport::clean) { Exit::Ok } else { Exit::Findings })
}

fn serve(args: &ServeArgs) -> Result<Exit, Failure> {
    let mut cfg = args.config.load()?;
    if let Some(bind) = args.bind {
        cfg.service.bind = bind;
        cfg.validate()?;
    }
    let mut state = AppState::from_config(&cfg)?;
    let sink: Box<dyn Write + Send> = match &cfg.service.log {
        Some(p) => Box::new(
            std::fs::OpenOptions::new().create(true).append(true).open(p).map_err(|e| Failure::io(p, e))?,
        ),
        None => Box::new(std::io::stderr()),
    };
    state = state.with_log(sink);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new("internal-error", e.to_string()))?;
    runtime
        .block_on(anonproxy_service::serve(
            cfg.service.bind,
            Arc::new(state),
            |addr| {
                println!("listening on http://{addr}");
                let _ = std::io::stdout().flush();
            },
            async {
                let _ = tokio::signal::ctrl_c().await;
            },
        ))
        .map_err(|e| Failure::new("bind-failure", format!("{}: {e}", cfg.service.bind)))?;
    Ok(Exit::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Input } else { Exit::Ok } as u8);
        }
    };
    let result = match &cli.command {
        Command::Anonymize(a) => anonymize(a),
        Command::Run(a) => run(a),
        Command::Serve(a) => serve(a),
        Command::Bench(a) => bench::bench(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit() as u8)
        }
    }
}
