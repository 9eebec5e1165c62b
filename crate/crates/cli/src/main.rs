//! Command-line front end: honest-run suites, attack campaigns, small-L
//! oracle cross-checks and exploit demos over the KSP and SOVNOKP
//! protocol simulators.
//!
//! Exit status is 0 only when the run's success criteria hold (every trial
//! sound); usage errors exit nonzero with the usage text. Reports and
//! transcript files are byte-identical for identical (subcommand, flags,
//! seed); timing goes to stderr only.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use tagcrack_core::harness::oracle::MAX_ORACLE_BITLEN;
use tagcrack_core::{
    run_attack, run_demo, run_honest, run_oracle, write_report, BVariant, Campaign, DemoKind,
    HarnessConfig, Protocol, ReportKind, MAX_BITLEN, MIN_BITLEN,
};

#[derive(Parser)]
#[command(
    name = "tagcrack",
    version,
    about = "Cryptanalysis workbench for the KSP and SOVNOKP ultralightweight RFID protocols"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run fully delivered mutual-authentication sessions and verify
    /// synchronization
    Simulate {
        #[arg(value_enum)]
        protocol: ProtocolArg,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run the two-session secret-disclosure attack and score it against
    /// ground truth
    Attack {
        #[arg(value_enum)]
        protocol: ProtocolArg,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Compare attack candidate sets against an exhaustive brute force at a
    /// small word length
    Oracle {
        #[arg(value_enum)]
        protocol: ProtocolArg,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Demonstrate post-disclosure exploits
    Demo {
        #[arg(value_enum)]
        kind: DemoArg,
        #[arg(value_enum)]
        protocol: ProtocolArg,
        #[command(flatten)]
        opts: RunOpts,
    },
}

impl Command {
    fn opts(&self) -> &RunOpts {
        match self {
            Command::Simulate { opts, .. }
            | Command::Attack { opts, .. }
            | Command::Oracle { opts, .. }
            | Command::Demo { opts, .. } => opts,
        }
    }

    fn protocol(&self) -> Protocol {
        match self {
            Command::Simulate { protocol, .. }
            | Command::Attack { protocol, .. }
            | Command::Oracle { protocol, .. }
            | Command::Demo { protocol, .. } => (*protocol).into(),
        }
    }

    fn default_trials(&self) -> u32 {
        match self {
            Command::Simulate { .. } => 1000,
            Command::Attack { .. } => 200,
            Command::Oracle { .. } => 50,
            Command::Demo { .. } => 50,
        }
    }

    fn default_bitlen(&self) -> u16 {
        match self {
            Command::Oracle { .. } => 8,
            _ => 96,
        }
    }
}

#[derive(Args)]
struct RunOpts {
    /// Number of trials (defaults: simulate 1000, attack 200, oracle 50,
    /// demo 50)
    #[arg(long)]
    trials: Option<u32>,

    /// Campaign seed; identical seeds give byte-identical reports
    #[arg(long, env = "TAGCRACK_SEED", default_value_t = 0)]
    seed: u64,

    /// Word length in bits, 4 to 512 (default 96; oracle defaults to 8 and
    /// caps at 12)
    #[arg(long, env = "TAGCRACK_BITLEN")]
    bitlen: Option<u16>,

    /// Which word masks the key inside SOVNOKP's B message
    #[arg(long, value_enum, default_value_t = BVariantArg::XorR)]
    sov_b_variant: BVariantArg,

    /// Write the structured JSON report here
    #[arg(long)]
    report: Option<PathBuf>,

    /// Write a transcript log here (trial 0 for simulate/attack, the first
    /// counterexample for oracle)
    #[arg(long)]
    transcripts: Option<PathBuf>,

    /// Print one line per trial
    #[arg(long)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Ksp,
    Sovnokp,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Protocol {
        match p {
            ProtocolArg::Ksp => Protocol::Ksp,
            ProtocolArg::Sovnokp => Protocol::Sovnokp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BVariantArg {
    XorR,
    XorQ,
}

impl From<BVariantArg> for BVariant {
    fn from(v: BVariantArg) -> BVariant {
        match v {
            BVariantArg::XorR => BVariant::XorR,
            BVariantArg::XorQ => BVariant::XorQ,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoArg {
    ImpersonateTag,
    ImpersonateReader,
    Desync,
}

impl From<DemoArg> for DemoKind {
    fn from(d: DemoArg) -> DemoKind {
        match d {
            DemoArg::ImpersonateTag => DemoKind::ImpersonateTag,
            DemoArg::ImpersonateReader => DemoKind::ImpersonateReader,
            DemoArg::Desync => DemoKind::Desync,
        }
    }
}

fn usage_error(message: String) -> ! {
    Cli::command()
        .error(ErrorKind::ValueValidation, message)
        .exit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let opts = cli.command.opts();
    let bitlen = opts.bitlen.unwrap_or_else(|| cli.command.default_bitlen());
    if !(MIN_BITLEN..=MAX_BITLEN).contains(&bitlen) {
        usage_error(format!(
            "--bitlen {bitlen} is outside the supported range [{MIN_BITLEN}, {MAX_BITLEN}]"
        ));
    }
    if matches!(cli.command, Command::Oracle { .. }) && bitlen > MAX_ORACLE_BITLEN {
        usage_error(format!(
            "oracle runs enumerate all secrets exhaustively and support --bitlen up to {MAX_ORACLE_BITLEN} (got {bitlen})"
        ));
    }
    let trials = opts.trials.unwrap_or_else(|| cli.command.default_trials());
    if trials == 0 {
        usage_error("--trials must be at least 1".to_string());
    }

    let mut cfg = HarnessConfig::new(cli.command.protocol());
    cfg.trials = trials;
    cfg.seed = opts.seed;
    cfg.bitlen = bitlen;
    cfg.b_variant = opts.sov_b_variant.into();

    let started = Instant::now();
    let campaign = match &cli.command {
        Command::Simulate { .. } => run_honest(&cfg),
        Command::Attack { .. } => run_attack(&cfg),
        Command::Oracle { .. } => run_oracle(&cfg),
        Command::Demo { kind, .. } => run_demo((*kind).into(), &cfg),
    };
    let elapsed = started.elapsed();

    match emit(&cli.command, &campaign) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    }
    eprintln!(
        "timing: {} trials in {:.2?} (mean {:.2?}/trial)",
        campaign.summary.trials, elapsed, campaign.summary.mean_trial_runtime
    );

    if campaign.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn emit(command: &Command, campaign: &Campaign) -> anyhow::Result<()> {
    let opts = command.opts();
    print_summary(command, campaign);
    if opts.verbose {
        for t in &campaign.trials {
            let mut line = format!("trial {:>4}: success={}", t.trial, t.success);
            if let Some(unique) = t.unique {
                line.push_str(&format!(" unique={unique}"));
            }
            if !t.phase_candidates.is_empty() {
                line.push_str(&format!(" candidates={:?}", t.phase_candidates));
            }
            if let Some(p) = t.prediction_ok {
                line.push_str(&format!(" prediction={p}"));
            }
            if let Some(n) = t.negative_rejected {
                line.push_str(&format!(" negative_rejected={n}"));
            }
            if let Some(note) = &t.note {
                line.push_str(&format!(" note={note:?}"));
            }
            println!("{line}");
        }
    }

    if let Some(path) = &opts.report {
        write_report(campaign, path)
            .with_context(|| format!("writing report to {}", path.display()))?;
        println!("report written to {}", path.display());
    }

    match (&campaign.sample_transcript, &opts.transcripts) {
        (Some(transcript), Some(path)) => {
            transcript
                .export_to_path(path)
                .with_context(|| format!("writing transcript log to {}", path.display()))?;
            println!("transcript written to {}", path.display());
        }
        (Some(transcript), None) if campaign.kind == ReportKind::Oracle => {
            // An oracle counterexample is always dumped somewhere.
            let path = PathBuf::from("oracle-counterexample.log");
            transcript
                .export_to_path(&path)
                .with_context(|| format!("writing counterexample to {}", path.display()))?;
            println!("counterexample transcript written to {}", path.display());
        }
        (None, Some(_)) => {
            eprintln!("note: this run produced no transcript to write");
        }
        _ => {}
    }
    Ok(())
}

fn rate(label: &str, value: f64, out: &mut String) {
    out.push_str(&format!("{label:<18} {value:.4}\n"));
}

fn print_summary(command: &Command, campaign: &Campaign) {
    let s = &campaign.summary;
    let kind = match campaign.kind {
        ReportKind::Simulate => "simulate",
        ReportKind::Attack => "attack",
        ReportKind::Oracle => "oracle",
        ReportKind::Demo => "demo",
    };
    let mut out = String::new();
    match command {
        Command::Demo { kind: demo, .. } => {
            let demo: DemoKind = (*demo).into();
            out.push_str(&format!(
                "tagcrack {kind} {} {}: trials={} bitlen={} seed={}\n",
                demo.name(),
                s.protocol,
                s.trials,
                s.bitlen,
                s.seed
            ));
        }
        _ => {
            out.push_str(&format!(
                "tagcrack {kind} {}: trials={} bitlen={} seed={}\n",
                s.protocol, s.trials, s.bitlen, s.seed
            ));
        }
    }
    rate("success rate", s.success_rate, &mut out);
    if let Some(v) = s.mutual_auth_rate {
        rate("mutual auth rate", v, &mut out);
    }
    if let Some(v) = s.sync_rate {
        rate("sync rate", v, &mut out);
    }
    if let Some(v) = s.uniqueness_rate {
        rate("uniqueness rate", v, &mut out);
    }
    if let Some(v) = s.prediction_rate {
        rate("prediction rate", v, &mut out);
    }
    if let (Some(mean), Some(max)) = (s.mean_final_candidates, s.max_final_candidates) {
        out.push_str(&format!(
            "{:<18} mean {mean:.2}, max {max}\n",
            "final candidates"
        ));
    }
    if let Some(sessions) = s.sessions {
        out.push_str(&format!("{:<18} {sessions}\n", "sessions"));
    }
    out.push_str(&format!(
        "{:<18} {}\n",
        "verdict",
        if campaign.passed { "PASS" } else { "FAIL" }
    ));
    print!("{out}");
}
