use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use habitat::discovery::{DagDocument, NotearsConfig, WeightedDag};
use habitat::explain::Explanation;
use habitat::http::UreqTransport;
use habitat::inference::{AteOptions, CausalEstimate};
use habitat::pipeline::{
    self, export_dataset, import_dataset, FailureKind, OccurrenceArtifact, Pipeline, PipelineConfig, PipelineError,
    SamplesArtifact, SpeciesInput, Stage,
};
use habitat::sampling::SamplingParams;
use habitat::synth::{run_benchmark, SyntheticSpec};

/// Species image or name to habitat drivers: occurrences, pseudo-absences,
/// bioclimatic features, a climate DAG, adjusted effects and explanations.
#[derive(Parser)]
#[command(name = "habitat", version)]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve the species name, through the identifier for an image.
    Identify(StageArgs),
    /// Match the taxon and page its occurrence records from GBIF.
    Fetch(StageArgs),
    /// Draw pseudo-absences around the presences.
    Sample(StageArgs),
    /// Extract BIO1..BIO19 at each sample point into dataset.csv.
    Extract(StageArgs),
    /// Learn the climate DAG with NOTEARS.
    Discover(StageArgs),
    /// Estimate adjusted effects of the top climate variables on presence.
    Infer(StageArgs),
    /// Render rule-based and LLM explanations of the effects.
    Explain(StageArgs),
    /// Run every stage and write report.json and report.md.
    Run(StageArgs),
    /// Structure and effect recovery on synthetic SEMs with known truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct StageArgs {
    /// JSON pipeline configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Serve GBIF responses from the cache only.
    #[arg(long)]
    offline: bool,
    #[arg(long, conflicts_with = "image")]
    species: Option<String>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    climate_dir: Option<PathBuf>,
    #[arg(long)]
    land_mask: Option<PathBuf>,
    /// Scale columns to unit variance before structure learning.
    #[arg(long)]
    standardize: bool,
    /// Skip LLM explanations.
    #[arg(long)]
    no_llm: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON synthetic benchmark spec.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// NOTEARS L1 penalty.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 200_000)]
    n_mc: usize,
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    /// Write machine-readable results here.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl StageArgs {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = PipelineConfig::from_file(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.offline {
            cfg.offline = true;
        }
        if let Some(s) = &self.species {
            cfg.species_name = Some(s.clone());
            cfg.image_path = None;
        }
        if let Some(p) = &self.image {
            cfg.image_path = Some(absolute(p));
            cfg.species_name = None;
        }
        if let Some(p) = &self.cache_dir {
            cfg.cache_dir = absolute(p);
        }
        if let Some(p) = &self.climate_dir {
            cfg.climate_dir = absolute(p);
        }
        if let Some(p) = &self.land_mask {
            cfg.land_mask_path = absolute(p);
        }
        if self.standardize {
            cfg.notears.center_only = false;
        }
        if self.no_llm {
            cfg.llm.enabled = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn read_artifact<T: DeserializeOwned>(dir: &Path, name: &str, producer: &str) -> Result<T, PipelineError> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| {
        PipelineError::Config(format!("{}: {e}; run `habitat {producer}` first", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn write_artifact<T: Serialize>(dir: &Path, name: &str, value: &T, stage: Stage) -> Result<PathBuf, PipelineError> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
    habitat::http::write_atomic(&path, text.as_bytes()).map_err(|e| PipelineError::stage(stage, FailureKind::Io, e))?;
    Ok(path)
}

fn dataset_rows(dir: &Path) -> Result<Vec<habitat::climate::ExtractedSample>, PipelineError> {
    let path = dir.join("dataset.csv");
    import_dataset(&path).map_err(|e| PipelineError::Config(format!("{}: {e}; run `habitat extract` first", path.display())))
}

fn run_stage(command: &Command, args: &StageArgs) -> Result<(), PipelineError> {
    let cfg = args.load()?;
    let runner = Pipeline::new(cfg.clone());
    let dir = runner.run_dir();
    if let Command::Run(_) = command {
        let out = runner.run()?;
        println!("{}", out.run_dir.join("report.json").display());
        return Ok(());
    }
    fs::create_dir_all(&dir).map_err(|e| PipelineError::stage(Stage::Identify, FailureKind::Io, e))?;
    let written = match command {
        Command::Identify(_) => {
            let species = pipeline::identify_stage(&cfg, None)?;
            write_artifact(&dir, "identification.json", &species, Stage::Identify)?
        }
        Command::Fetch(_) => {
            let species: SpeciesInput = read_artifact(&dir, "identification.json", "identify")?;
            let client = pipeline::gbif_client(&cfg, Arc::new(UreqTransport));
            let occ = pipeline::fetch_stage(&client, &species.input_name, cfg.max_records)?;
            write_artifact(&dir, "occurrences.json", &occ, Stage::Fetch)?
        }
        Command::Sample(_) => {
            let occ: OccurrenceArtifact = read_artifact(&dir, "occurrences.json", "fetch")?;
            let mask = pipeline::load_land_mask(&cfg.land_mask_path)?;
            let params = SamplingParams {
                ratio: cfg.ratio,
                exclusion_km: cfg.exclusion_km,
                buffer_deg: cfg.buffer_deg,
                seed: cfg.seed,
            };
            let samples = pipeline::sample_stage(&occ.records, &mask, &params)?;
            write_artifact(&dir, "samples.json", &samples, Stage::Sample)?
        }
        Command::Extract(_) => {
            let samples: SamplesArtifact = read_artifact(&dir, "samples.json", "sample")?;
            let stack = pipeline::load_climate(&cfg.climate_dir, &cfg.climate_pattern)?;
            let extracted = pipeline::extract_stage(&samples, &stack);
            let path = dir.join("dataset.csv");
            export_dataset(&extracted.rows, &path).map_err(|e| PipelineError::stage(Stage::Extract, FailureKind::Io, e))?;
            path
        }
        Command::Discover(_) => {
            let fit = pipeline::discover_stage(&dataset_rows(&dir)?, &cfg.notears)?;
            habitat::http::write_atomic(&dir.join("dag.dot"), fit.dag.to_dot().as_bytes())
                .map_err(|e| PipelineError::stage(Stage::Discover, FailureKind::Io, e))?;
            write_artifact(&dir, "dag.json", &fit.dag.to_document(), Stage::Discover)?
        }
        Command::Infer(_) => {
            let doc: DagDocument = read_artifact(&dir, "dag.json", "discover")?;
            let dag = WeightedDag::from_document(&doc).map_err(|e| PipelineError::Config(e.to_string()))?;
            let opts = AteOptions { n_strata: cfg.n_strata, bootstrap: cfg.bootstrap, seed: cfg.seed };
            let effects = pipeline::infer_stage(&dataset_rows(&dir)?, &dag, cfg.k_treatments, &opts)?;
            write_artifact(&dir, "effects.json", &effects, Stage::Infer)?
        }
        Command::Explain(_) => {
            let effects: Vec<CausalEstimate> = read_artifact(&dir, "effects.json", "infer")?;
            let occ: OccurrenceArtifact = read_artifact(&dir, "occurrences.json", "fetch")?;
            let name = occ.taxon.canonical_name.unwrap_or(occ.taxon.matched_name);
            let llm = pipeline::llm_client_from_env(&cfg.llm);
            let explanations: Vec<Explanation> = pipeline::explain_stage(&effects, &name, llm.as_ref())?;
            for x in &explanations {
                println!("{}", x.llm_text.as_deref().unwrap_or(&x.rule_text));
            }
            write_artifact(&dir, "explanations.json", &explanations, Stage::Explain)?
        }
        Command::Run(_) | Command::Synth(_) => unreachable!(),
    };
    eprintln!("wrote {}", written.display());
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<(), PipelineError> {
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", args.spec.display())))?;
    let spec: SyntheticSpec =
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", args.spec.display())))?;
    spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut notears = NotearsConfig::default();
    if let Some(l) = args.lambda {
        notears.lambda1 = l;
    }
    notears.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let opts = AteOptions { bootstrap: args.bootstrap, ..AteOptions::default() };
    let summary = run_benchmark(&spec, args.trials, &notears, &opts, args.n_mc)
        .map_err(|e| PipelineError::stage(Stage::Discover, FailureKind::Numerical, e))?;

    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:+.4}"));
    println!("{:>6} {:>6} {:>4} {:>10} {:>10} {:>10} {:>8}", "seed", "edges", "shd", "treatment", "oracle", "estimate", "covered");
    for t in &summary.trials {
        println!(
            "{:>6} {:>6} {:>4} {:>10} {:>10} {:>10} {:>8}",
            t.seed,
            t.n_true_edges,
            t.shd,
            t.treatment.as_deref().unwrap_or("-"),
            fmt(t.oracle_ate),
            fmt(t.estimated_ate),
            t.covered.map_or("-", |c| if c { "yes" } else { "no" }),
        );
    }
    println!(
        "mean SHD {:.2}; SHD <= 2 in {:.0}% of trials; mean |ATE error| {}; coverage {}",
        summary.mean_shd,
        100.0 * summary.frac_shd_le_2,
        summary.mean_abs_ate_error.map_or("-".into(), |e| format!("{e:.4}")),
        summary.coverage.map_or("-".into(), |c| format!("{:.0}%", 100.0 * c)),
    );
    if let Some(out) = &args.out {
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        habitat::http::write_atomic(out, text.as_bytes())
            .map_err(|e| PipelineError::stage(Stage::Report, FailureKind::Io, e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Identify(a)
        | Command::Fetch(a)
        | Command::Sample(a)
        | Command::Extract(a)
        | Command::Discover(a)
        | Command::Infer(a)
        | Command::Explain(a)
        | Command::Run(a) => run_stage(&cli.command, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
