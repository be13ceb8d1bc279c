use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use metaturing::domain::{BRule, TournamentConfig};
use metaturing::eventlog::{replay_log, LogError, Replay};
use metaturing::peer_grade::PeerGradeParams;
use metaturing::scoring::{evaluate_classic_turing, evaluate_inverted_watt, evaluate_meta, CLASSIC_THRESHOLD};
use metaturing::sim::{run_tournament_sim, summarize, SimConfig};
use metaturing::tournament::TournamentReport;
use metaturing::winograd::{score_answer_sheet, validate_bank, AnswerSheet, Bank};
use metaturing_service::{ServeConfig, Server};

#[derive(Parser)]
#[command(name = "metaturing", version, about = "Run, replay and score meta-Turing tournaments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a tournament. LOG receives replication 0; pass --results
    /// for the scored outcome of every replication.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// JSON lines, one replication per line.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Run a live tournament until every session is closed or voided.
    Serve {
        /// Address for newline-delimited frames over TCP.
        #[arg(long)]
        listen: String,
        /// Address for the same frames over WebSocket.
        #[arg(long)]
        ws_listen: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rescore a log under another rule.
    Score {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum)]
        rules: Rules,
        #[arg(long, value_enum)]
        b_rule: Option<BRuleArg>,
    },
    /// Verify a log and recompute its reports.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Winograd schema banks and answer sheets.
    Wsc {
        #[command(subcommand)]
        command: WscCommand,
    },
    /// Full tournament report from a log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
}

#[derive(Subcommand)]
enum WscCommand {
    Validate {
        #[arg(long)]
        bank: PathBuf,
    },
    /// Score answer sheets: one JSON sheet per line.
    Score {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        answers: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Rules {
    Strict,
    Relaxed,
    Classic,
    Inverted,
}

#[derive(Clone, Copy, ValueEnum)]
enum BRuleArg {
    Accuracy,
    Prohibition,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Json,
    Text,
}

/// Exit 1: the input was read but is not valid. Exit 2: it could not be
/// read, or the log is corrupt or incomplete.
enum Failure {
    Invalid(anyhow::Error),
    Io(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn io(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Io(e.into())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(io)
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(io)?;
    println!("{text}");
    Ok(())
}

fn load_log(path: &Path) -> Result<Replay, Failure> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display())).map_err(io)?;
    replay_log(&bytes).map_err(|e| match e {
        LogError::Scoring(_) => invalid(e),
        other => io(anyhow::Error::new(other).context(format!("replaying {}", path.display()))),
    })
}

fn simulate(config: &Path, seed: Option<u64>, out: &Path, results: Option<&Path>) -> Outcome {
    let mut config = SimConfig::from_json(&read(config)?).map_err(invalid)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    let runs = run_tournament_sim(&config).map_err(invalid)?;
    fs::write(out, &runs[0].0).with_context(|| format!("writing {}", out.display())).map_err(io)?;
    if let Some(path) = results {
        let file = File::create(path).with_context(|| format!("writing {}", path.display())).map_err(io)?;
        let mut w = BufWriter::new(file);
        for (_, result) in &runs {
            let line = serde_json::to_string(result).map_err(io)?;
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    let results: Vec<_> = runs.into_iter().map(|(_, r)| r).collect();
    print_json(&summarize(&results))
}

fn serve(listen: &str, ws_listen: Option<&str>, config: &Path, out: &Path) -> Outcome {
    let config = ServeConfig::from_json(&read(config)?).map_err(invalid)?;
    let tcp = TcpListener::bind(listen).with_context(|| format!("binding {listen}")).map_err(io)?;
    let ws = ws_listen
        .map(|a| TcpListener::bind(a).with_context(|| format!("binding {a}")))
        .transpose()
        .map_err(io)?;
    let log = File::create(out).with_context(|| format!("creating {}", out.display())).map_err(io)?;
    let server = Server::start(&config, Box::new(log), tcp, ws).map_err(invalid)?;
    eprintln!("listening on {} (tcp)", server.tcp_addr());
    if let Some(a) = server.ws_addr() {
        eprintln!("listening on {a} (websocket)");
    }
    let reports = server.wait().map_err(io)?;
    print_json(&reports)
}

fn score(log: &Path, rules: Rules, b_rule: Option<BRuleArg>) -> Outcome {
    let replay = load_log(log)?;
    let mut config = replay.config.clone();
    match rules {
        Rules::Strict => config = config.with_thresholds_of(&TournamentConfig::strict(config.format)),
        Rules::Relaxed => config = config.with_thresholds_of(&TournamentConfig::relaxed(config.format)),
        Rules::Classic | Rules::Inverted => {}
    }
    if let Some(b) = b_rule {
        config.b_rule = match b {
            BRuleArg::Accuracy => BRule::Accuracy,
            BRuleArg::Prohibition => BRule::Prohibition,
        };
    }
    let m = &replay.matrix;
    match rules {
        Rules::Strict | Rules::Relaxed => print_json(&evaluate_meta(m, &config).map_err(invalid)?),
        Rules::Classic => print_json(&evaluate_classic_turing(m, CLASSIC_THRESHOLD).map_err(invalid)?),
        Rules::Inverted => print_json(&evaluate_inverted_watt(m, &config, config.chance_band).map_err(invalid)?),
    }
}

#[derive(Serialize)]
struct ReplaySummary<'a> {
    log_hash: &'a str,
    sessions: usize,
    closed: usize,
    voided: usize,
    reports: &'a [metaturing::scoring::PassReport],
}

fn replay(log: &Path) -> Outcome {
    let r = load_log(log)?;
    let count = |p: metaturing::session::Phase| r.sessions.values().filter(|s| s.phase == p).count();
    print_json(&ReplaySummary {
        log_hash: &r.log_hash,
        sessions: r.sessions.len(),
        closed: count(metaturing::session::Phase::Closed),
        voided: count(metaturing::session::Phase::Voided),
        reports: &r.reports,
    })
}

fn load_bank(path: &Path) -> Result<Bank, Failure> {
    Bank::from_jsonl(&read(path)?).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))
}

fn wsc(command: &WscCommand) -> Outcome {
    match command {
        WscCommand::Validate { bank } => {
            let report = validate_bank(&load_bank(bank)?);
            print_json(&report)?;
            if report.is_valid() {
                Ok(())
            } else {
                Err(invalid(anyhow!("bank has {} violation(s)", report.violations().count())))
            }
        }
        WscCommand::Score { bank, answers } => {
            let bank = load_bank(bank)?;
            let mut scores = Vec::new();
            for (i, line) in read(answers)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let sheet: AnswerSheet =
                    serde_json::from_str(line).map_err(|e| invalid(anyhow!("answers line {}: {e}", i + 1)))?;
                let score = score_answer_sheet(&sheet, &bank).map_err(|e| invalid(anyhow!("answers line {}: {e}", i + 1)))?;
                scores.push(serde_json::json!({ "respondent_id": sheet.respondent_id, "score": score }));
            }
            print_json(&scores)
        }
    }
}

fn report(log: &Path, format: OutputFormat) -> Outcome {
    let replay = load_log(log)?;
    let report = TournamentReport::build(&replay, &replay.config, &PeerGradeParams::default()).map_err(invalid)?;
    match format {
        OutputFormat::Json => print_json(&report),
        OutputFormat::Text => {
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Simulate { config, seed, out, results } => simulate(&config, seed, &out, results.as_deref()),
        Command::Serve { listen, ws_listen, config, out } => serve(&listen, ws_listen.as_deref(), &config, &out),
        Command::Score { log, rules, b_rule } => score(&log, rules, b_rule),
        Command::Replay { log } => replay(&log),
        Command::Wsc { command } => wsc(&command),
        Command::Report { log, format } => report(&log, format),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
