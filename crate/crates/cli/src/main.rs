mod args;
mod commands;
mod report;

use std::collections::BTreeMap;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, Format};
use commands::{Failure, Outcome};
use report::{InputDigest, RunReport, SCHEMA_VERSION};

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("TDC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("TDC_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot size thread pool: {e}")))
}

fn run(cli: &Cli, digest: &mut InputDigest) -> Result<Outcome, Failure> {
    configure_threads()?;
    match &cli.command {
        Command::Transform(a) => commands::transform(a, digest),
        Command::VerifyTdc(a) => commands::verify_tdc(a),
        Command::Schedule(a) => commands::schedule(a),
        Command::Cycles(a) => commands::cycles(a),
        Command::Resources(a) => commands::resources(a, digest),
        Command::Plan(a) => commands::plan(a, digest),
        Command::Infer(a) => commands::infer_cmd(a, digest),
        Command::SweepBitwidth(a) => commands::sweep(a, digest),
    }
}

fn emit(cli: &Cli, report: &RunReport) -> Result<(), Failure> {
    let text = match cli.format {
        Format::Json => report.to_json(),
        Format::Text => match (&cli.command, report.sections.get("sweep")) {
            (Command::SweepBitwidth(_), Some(sweep)) => sweep_csv(sweep),
            _ => report.to_text(),
        },
    };
    match &cli.report {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sweep_csv(sweep: &serde_json::Value) -> String {
    let mut out = String::from("bits,psnr_db\n");
    for p in sweep["points"].as_array().into_iter().flatten() {
        let psnr = p["psnr_db"].as_f64().map_or("inf".to_string(), |v| v.to_string());
        out.push_str(&format!("{},{psnr}\n", p["bits"]));
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let command: Vec<String> = std::env::args().skip(1).collect();
    let mut digest = InputDigest::new(&command);
    let outcome = match run(&cli, &mut digest) {
        Ok(o) => o,
        Err(f) => {
            eprintln!("error: {}", f.message());
            return ExitCode::from(f.exit_code() as u8);
        }
    };
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        command,
        inputs_digest: digest.finish(),
        sections: outcome
            .sections
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect::<BTreeMap<_, _>>(),
    };
    if let Err(f) = emit(&cli, &report) {
        eprintln!("error: {}", f.message());
        return ExitCode::from(f.exit_code() as u8);
    }
    match outcome.failure {
        Some(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code() as u8)
        }
        None => ExitCode::SUCCESS,
    }
}
