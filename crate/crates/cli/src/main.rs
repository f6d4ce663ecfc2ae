mod args;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use log::info;

use args::{Cli, Command, RunArgs};
use ckptbench_core::bench::{
    emit_report, preset, run_experiment, run_worker, Launcher, ReportFormat, RunReport, WorkerEnv, WorkloadSelector,
    DEFAULT_SEED,
};
use ckptbench_core::ckpt::{latest_version, verify_version};
use ckptbench_core::layout::{plan_layout, total_object_bytes, total_padded_bytes, AggregationStrategy};
use ckptbench_core::units::format_bytes;
use ckptbench_core::workload::{generate_from_profile, generate_synthetic, load_profile};
use ckptbench_core::{Error, Result, RunConfig};

const VERIFY_FAILED: i32 = 2;
const USAGE: u8 = 1;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match WorkerEnv::from_env() {
        Ok(Some(env)) => run_worker(&env).map(|()| 0),
        Ok(None) => match Cli::try_parse() {
            Ok(cli) => run(cli),
            Err(e) => {
                let _ = e.print();
                return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
            }
        },
        Err(e) => Err(e),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("ckptbench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synthetic { total_size, chunk_size, ranks, run } => {
            let workload = WorkloadSelector::Synthetic { total_bytes_per_rank: total_size, chunk_bytes: chunk_size };
            run_configs(&run, run.config(workload, ranks))
        }
        Command::Llm { profile, scale, run } => {
            let ranks = load_profile(&profile)?.num_ranks;
            run_configs(&run, run.config(WorkloadSelector::Profile { profile, scale }, ranks))
        }
        Command::Verify { dir, version } => verify(&dir, version),
        Command::Report { inputs, format, out } => report(&inputs, format, out.as_deref()),
        Command::Plan { profile, scale, total_size, chunk_size, ranks, strategy, fragment_size, alignment, buffered, json } => {
            let workload = match profile {
                Some(p) => {
                    let mut profile = load_profile(&p)?;
                    if scale != 1.0 {
                        profile = profile.scaled(scale)?;
                    }
                    generate_from_profile(&profile, DEFAULT_SEED)?
                }
                None => generate_synthetic(total_size, chunk_size, ranks, DEFAULT_SEED)?,
            };
            let strategy = match (strategy, fragment_size) {
                (AggregationStrategy::FixedChunkFragmentation { .. }, Some(chunk_bytes)) => {
                    AggregationStrategy::FixedChunkFragmentation { chunk_bytes }
                }
                (s, _) => s,
            };
            let plan = plan_layout(&workload, strategy, alignment, !buffered)?;
            if json {
                println!("{}", plan.to_json()?);
            } else {
                println!("workload        {} ({})", workload.name, workload.provenance);
                println!("ranks           {}", workload.num_ranks);
                println!("objects         {}", workload.objects.len());
                println!("strategy        {}", plan.strategy);
                println!("files           {}", plan.file_count);
                println!("object bytes    {} ({})", total_object_bytes(&plan), format_bytes(total_object_bytes(&plan) as f64));
                println!("stored bytes    {} ({})", total_padded_bytes(&plan), format_bytes(total_padded_bytes(&plan) as f64));
                if plan.strategy == AggregationStrategy::SingleSharedFile {
                    println!("rank offsets    {:?}", plan.rank_base_offsets);
                }
            }
            Ok(0)
        }
    }
}

fn run_configs(args: &RunArgs, base: RunConfig) -> Result<i32> {
    let configs = match &args.preset {
        Some(name) => preset(name, &base)?,
        None => vec![base],
    };
    let launcher = Launcher::current_exe()?;
    let ext = match args.format {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
    };
    let mut code = 0;
    for (i, config) in configs.iter().enumerate() {
        info!("run {} of {}: {}", i + 1, configs.len(), config.to_json()?);
        let report = run_experiment(config, &launcher)?;
        eprintln!("{}", summary_line(&report));
        if !report.verification.passed {
            code = VERIFY_FAILED;
        }
        match (&args.preset, &args.out) {
            (Some(name), out) => {
                let dir = out.clone().unwrap_or_else(|| PathBuf::from("ckptbench-reports"));
                let file = format!(
                    "{name}-{i:02}-{}-{}-{}r.{ext}",
                    config.strategy.slug(),
                    if config.direct { "direct" } else { "buffered" },
                    config.num_ranks
                );
                emit_report(&report, args.format, &dir.join(file))?;
            }
            (None, Some(path)) => emit_report(&report, args.format, path)?,
            (None, None) => {
                let text = match args.format {
                    ReportFormat::Json => report.to_json()?,
                    ReportFormat::Csv => report.to_csv()?,
                };
                std::io::stdout().write_all(text.as_bytes()).map_err(|e| Error::io("writing report", e))?;
            }
        }
    }
    Ok(code)
}

fn summary_line(r: &RunReport) -> String {
    let c = &r.config;
    let read = r
        .aggregate
        .read_throughput_bytes_per_s
        .map(|s| format!("{}/s", format_bytes(s.median)))
        .unwrap_or_else(|| "-".into());
    let verify = match (&r.verification.performed, r.verification.passed) {
        (false, _) => "not verified".to_string(),
        (true, true) => format!("{} objects verified", r.verification.objects_checked),
        (true, false) => format!("{} of {} objects FAILED", r.verification.objects_failed, r.verification.objects_checked),
    };
    format!(
        "{} {} {} {} {} {}r: write {}/s, read {read}, {verify}",
        r.workload.name,
        c.strategy,
        c.backend,
        if c.direct { "direct" } else { "buffered" },
        c.emulation,
        c.num_ranks,
        format_bytes(r.aggregate.write_throughput_bytes_per_s.median),
    )
}

fn verify(dir: &Path, version: Option<u64>) -> Result<i32> {
    let version = match version {
        Some(v) => v,
        None => latest_version(dir)?.ok_or_else(|| Error::MissingFile(dir.join("ckpt-<n>")))?,
    };
    let report = verify_version(dir, version)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.usable {
        eprintln!(
            "ckpt-{version}: unusable, {}",
            report.problem.as_deref().unwrap_or("no committed manifest")
        );
        return Ok(VERIFY_FAILED);
    }
    eprintln!("ckpt-{version}: {} objects checked, {} failed", report.objects_checked, report.objects_failed);
    Ok(if report.passed() { 0 } else { VERIFY_FAILED })
}

fn report(inputs: &[PathBuf], format: Option<ReportFormat>, out: Option<&Path>) -> Result<i32> {
    let reports = inputs.iter().map(|p| RunReport::load(p)).collect::<Result<Vec<_>>>()?;
    let mut text = String::new();
    match format {
        Some(ReportFormat::Csv) => {
            for (i, r) in reports.iter().enumerate() {
                let csv = r.to_csv()?;
                let body = if i == 0 { &csv[..] } else { csv.split_once('\n').map_or("", |(_, rest)| rest) };
                text.push_str(body);
            }
        }
        Some(ReportFormat::Json) => {
            let all: Vec<_> = reports.iter().map(serde_json::to_value).collect::<std::result::Result<_, _>>()?;
            text = serde_json::to_string_pretty(&all)?;
            text.push('\n');
        }
        None => {
            for (path, r) in inputs.iter().zip(&reports) {
                text.push_str(&format!("{}: {}\n", path.display(), summary_line(r)));
            }
        }
    }
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::path(path, e))?,
        None => print!("{text}"),
    }
    Ok(0)
}
