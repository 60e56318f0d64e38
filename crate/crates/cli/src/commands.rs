use std::fmt::Display;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tracing::{info, warn};

use qframe::embed::{load_embedding_file, ProviderEndpoint, MAGIC};
use qframe::eval::{run_synthetic_benchmark, run_validation, BenchConfig, Policy, ValidationOptions};
use qframe::model::{parse_budget, SelectionConfig, TierCounts, DEFAULT_CANDIDATES};
use qframe::mra::{solve_budget, BudgetStrategy};
use qframe::pipeline::{run_embed, run_select, EmbedRequest, ExitClass, PipelineError, SelectRequest};
use qframe::video::{open_video, Manifest};

use crate::config::FileConfig;
use crate::{BenchArgs, EmbedArgs, InspectArgs, ProviderFlags, SelectArgs, SelectionFlags, ValidateArgs};

/// A failed command: message for stderr plus the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(class: ExitClass, message: impl Display) -> Self {
        Self {
            code: class.code() as u8,
            message: message.to_string(),
        }
    }

    fn config(message: impl Display) -> Self {
        Self::new(ExitClass::Config, message)
    }

    fn io(path: &Path, err: impl Display) -> Self {
        Self::new(ExitClass::Io, format!("{}: {err}", path.display()))
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self::new(e.exit_class(), e)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Failure::io(path, e))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

/// Selection settings from flags, then the config file, then defaults.
/// Without explicit tiers the budget picks them: the preset for 8,
/// otherwise one high frame plus as many low frames as fit.
pub fn selection_config(flags: &SelectionFlags, file: &FileConfig) -> Result<SelectionConfig, Failure> {
    let defaults = SelectionConfig::default();
    let budget = match flags.budget.as_deref().or(file.budget.as_deref()) {
        Some(s) => parse_budget(s).map_err(Failure::config)?,
        None => defaults.budget,
    };
    let tiers = match (flags.tiers, &file.tiers) {
        (Some(t), _) => t,
        (None, Some(s)) => s.parse::<TierCounts>().map_err(Failure::config)?,
        (None, None) => solve_budget(budget, BudgetStrategy::Preset)
            .or_else(|_| solve_budget(budget, BudgetStrategy::MaxCoverage))
            .map_err(Failure::config)?,
    };
    let base_resolution = match (flags.base_resolution, &file.base_resolution) {
        (Some(r), _) => Some(r),
        (None, Some(s)) => Some(s.parse().map_err(Failure::config)?),
        (None, None) => None,
    };
    Ok(SelectionConfig {
        candidates: flags.candidates.or(file.candidates).unwrap_or(defaults.candidates),
        tiers,
        budget,
        temperature: flags.tau.or(file.tau).unwrap_or(defaults.temperature),
        seed: flags.seed.or(file.seed).unwrap_or(defaults.seed),
        base_resolution,
        deterministic: flags.deterministic || file.deterministic.unwrap_or(false),
    })
}

fn endpoint(flags: &ProviderFlags, file: &FileConfig) -> Option<ProviderEndpoint> {
    let url = flags.endpoint.clone().or_else(|| file.endpoint.clone())?;
    let mut ep = ProviderEndpoint::new(url);
    ep.model_hint = file.model_hint.clone();
    if let Some(v) = file.timeout_ms {
        ep.timeout_ms = v;
    }
    if let Some(v) = file.max_batch {
        ep.max_batch = v;
    }
    if let Some(v) = file.max_in_flight {
        ep.max_in_flight = v;
    }
    if let Some(v) = file.max_retries {
        ep.retry.max_retries = v;
    }
    Some(ep)
}

fn cache_dir(flags: &ProviderFlags, file: &FileConfig) -> Option<PathBuf> {
    if flags.no_cache {
        return None;
    }
    flags
        .cache_dir
        .clone()
        .or_else(|| std::env::var_os("QFRAME_CACHE_DIR").map(PathBuf::from))
        .or_else(|| file.cache_dir.clone())
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache").join("qframe")))
}

pub fn select(args: &SelectArgs) -> Result<(), Failure> {
    let file = FileConfig::load_optional(args.config.as_deref()).map_err(Failure::config)?;
    let config = selection_config(&args.selection, &file)?;
    let req = SelectRequest {
        video: args.video.clone(),
        query: args.query.clone(),
        config,
        frame_embeddings: args.embeddings.clone(),
        query_embedding: args.query_embedding.clone(),
        endpoint: endpoint(&args.provider, &file),
        cache_dir: cache_dir(&args.provider, &file),
        out_dir: args.out.clone(),
    };
    let outcome = run_select(&req)?;
    for w in &outcome.manifest.warnings {
        warn!("{w}");
    }
    info!(
        selections = outcome.manifest.selections.len(),
        tiers = %outcome.manifest.realized_tiers,
        cost = %outcome.manifest.realized_token_cost,
        "selection written"
    );
    println!("{}", outcome.manifest_path.display());
    Ok(())
}

pub fn embed(args: &EmbedArgs) -> Result<(), Failure> {
    let file = FileConfig::load_optional(args.config.as_deref()).map_err(Failure::config)?;
    let Some(ep) = endpoint(&args.provider, &file) else {
        return Err(Failure::config("embed needs --endpoint or QFRAME_ENDPOINT"));
    };
    let req = EmbedRequest {
        video: args.video.clone(),
        candidates: args.candidates.or(file.candidates).unwrap_or(DEFAULT_CANDIDATES),
        endpoint: ep,
        cache_dir: cache_dir(&args.provider, &file),
        out: args.out.clone(),
    };
    let outcome = run_embed(&req)?;
    info!(rows = outcome.rows, dim = outcome.dim, cache_hit = outcome.cache_hit, "embeddings written");
    println!("{}", outcome.path.display());
    Ok(())
}

#[derive(Serialize)]
struct ValidateReport<'a> {
    config: ValidateEcho<'a>,
    pass: bool,
    records: &'a [qframe::eval::ReportRecord],
}

#[derive(Serialize)]
struct ValidateEcho<'a> {
    trials: u64,
    seed: u64,
    pi: Option<&'a [f64]>,
    k: Option<usize>,
    broken_sampler: bool,
}

pub fn validate(args: &ValidateArgs) -> Result<(), Failure> {
    let file = FileConfig::load_optional(args.config.as_deref()).map_err(Failure::config)?;
    let defaults = ValidationOptions::default();
    let opts = ValidationOptions {
        trials: args.trials.or(file.trials).unwrap_or(defaults.trials),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        custom: args.pi.clone().zip(args.k),
        broken_sampler: args.broken_sampler,
    };
    let records = run_validation(&opts).map_err(Failure::config)?;
    let pass = records.iter().all(|r| r.pass);
    for r in &records {
        println!(
            "{:<4} {:<40} statistic={:<12.6} threshold={:.6}",
            if r.pass { "ok" } else { "FAIL" },
            r.test,
            r.statistic,
            r.threshold
        );
    }
    if let Some(path) = &args.report {
        let report = ValidateReport {
            config: ValidateEcho {
                trials: opts.trials,
                seed: opts.seed,
                pi: opts.custom.as_ref().map(|(p, _)| p.as_slice()),
                k: opts.custom.as_ref().map(|(_, k)| *k),
                broken_sampler: opts.broken_sampler,
            },
            pass,
            records: &records,
        };
        write_json(path, &report)?;
    }
    if pass {
        Ok(())
    } else {
        let failed = records.iter().filter(|r| !r.pass).count();
        Err(Failure::new(ExitClass::Statistical, format!("{failed} check(s) failed")))
    }
}

pub fn bench(args: &BenchArgs) -> Result<(), Failure> {
    let file = FileConfig::load_optional(args.config.as_deref()).map_err(Failure::config)?;
    let d = BenchConfig::default();
    let policies = if !args.policy.is_empty() {
        args.policy.clone()
    } else if let Some(names) = &file.policy {
        names
            .iter()
            .map(|n| n.parse::<Policy>())
            .collect::<Result<_, _>>()
            .map_err(Failure::config)?
    } else {
        d.policies.clone()
    };
    let tiers = match (args.tiers, &file.tiers) {
        (Some(t), _) => t,
        (None, Some(s)) => s.parse().map_err(Failure::config)?,
        (None, None) => d.tiers,
    };
    let cfg = BenchConfig {
        candidates: args.candidates.or(file.candidates).unwrap_or(d.candidates),
        planted_len: args.planted.or(file.planted).unwrap_or(d.planted_len),
        score_gap: args.gap.or(file.gap).unwrap_or(d.score_gap),
        noise_sigma: args.noise_sigma.or(file.noise_sigma).unwrap_or(d.noise_sigma),
        tiers,
        temperature: args.tau.or(file.tau).unwrap_or(d.temperature),
        trials: args.trials.or(file.trials.map(|t| t as usize)).unwrap_or(d.trials),
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
        policies,
    };
    let report = run_synthetic_benchmark(&cfg).map_err(Failure::config)?;

    println!(
        "{:<8} {:>10} {:>8} {:>12} {:>12} {:>12}",
        "policy",
        format!("recall@{}", report.k),
        "se",
        "vs uniform",
        "scoring ms",
        "sampling ms"
    );
    for s in &report.summaries {
        let diff = report
            .comparison(s.policy)
            .map_or("-".to_string(), |c| format!("{:+.4}", c.mean_diff));
        println!(
            "{:<8} {:>10.4} {:>8.4} {:>12} {:>12.3} {:>12.3}",
            s.policy.as_str(),
            s.mean_recall,
            s.std_error,
            diff,
            s.scoring_ms,
            s.sampling_ms
        );
    }
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Inspection {
    Qfeb {
        rows: usize,
        dim: usize,
    },
    Manifest {
        video: String,
        query: String,
        selections: usize,
        realized_tiers: TierCounts,
        realized_token_cost: String,
        warnings: Vec<String>,
    },
    Video {
        #[serde(flatten)]
        meta: qframe::model::VideoMeta,
        warnings: Vec<String>,
    },
}

pub fn inspect(args: &InspectArgs) -> Result<(), Failure> {
    let path = &args.path;
    let mut head = [0u8; 4];
    let is_qfeb = std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map(|()| head == MAGIC)
        .unwrap_or(false);
    let out = if is_qfeb {
        let m = load_embedding_file(path).map_err(PipelineError::from)?;
        Inspection::Qfeb {
            rows: m.rows(),
            dim: m.dim(),
        }
    } else if path.extension().is_some_and(|e| e == "json") {
        let m = Manifest::load(path).map_err(PipelineError::from)?;
        Inspection::Manifest {
            video: m.video.path,
            query: m.query,
            selections: m.selections.len(),
            realized_tiers: m.realized_tiers,
            realized_token_cost: m.realized_token_cost,
            warnings: m.warnings,
        }
    } else {
        let source = open_video(path).map_err(PipelineError::from)?;
        Inspection::Video {
            meta: source.meta().clone(),
            warnings: source.warnings().to_vec(),
        }
    };
    print_json(&out);
    Ok(())
}
