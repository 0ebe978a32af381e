//! `demorph`: command-line driver for the demorphing laboratory.
//!
//! Exit status: 0 on success, 1 for usage and validation errors, 2 for
//! failures while doing the work.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use demorph_core::biometric::{
    leakage_audit, read_embedding_file, write_embedding_file, Embedding, EmbeddingFile, EmbeddingProvider,
    FileProvider, ToyProvider, DEFAULT_LEAKAGE_PERCENTS,
};
use demorph_core::config::{load_config, ExperimentConfig, TOY_PROVIDER_NAME};
use demorph_core::demorpher::{self, DemorphCheckpoint, LossVariant};
use demorph_core::evaluation::{
    comparison_grid, evaluate_with, Demorpher, EvalOptions, GroundTruthStub, ReplicationStub, TrainedDemorpher,
};
use demorph_core::latentcodec::{self, CodecCheckpoint};
use demorph_core::protocol::{self, Manifest, PairPlan, Registry, Scenario, Side, REGISTRY_FILE};
use demorph_core::{checkpoint, Error, Image, Result};

#[derive(Debug, Parser)]
#[command(name = "demorph", version, about = "Reference-free face demorphing laboratory")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Experiment config file (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic face corpus with landmarks.
    GenToyfaces(GenArgs),
    /// Split identities by scenario and sample morph pairs.
    Split(SplitArgs),
    /// Build train and test morph datasets from a pair plan.
    Morph(MorphArgs),
    /// Train the latent codec on a face corpus.
    TrainCodec(TrainCodecArgs),
    /// Train the demorpher on a morph manifest.
    Train(TrainArgs),
    /// Split one morph image into two faces.
    Demorph(DemorphArgs),
    /// Evaluate a demorpher on a morph manifest.
    Evaluate(EvaluateArgs),
    /// Write an embedding file for the images of a manifest or corpus.
    Embed(EmbedArgs),
    /// Identity-leakage audit between two embedding files.
    Audit(AuditArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    scenario: Option<u8>,
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus directory or its registry file.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    train_count: usize,
    #[arg(long, default_value_t = 200)]
    test_count: usize,
    /// Pair plan to write.
    #[arg(long, default_value = "pairs.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MorphArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainCodecArgs {
    /// Corpus directory or its registry file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Restrict training to the train identities of this pair plan.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    factor: Option<usize>,
    #[arg(long)]
    latent_channels: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    codec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    swap_prob: Option<f64>,
    #[arg(long)]
    loss_variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DemorphArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    codec: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    codec: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// `toy` or an embedding file.
    #[arg(long)]
    provider: Option<String>,
    /// Comma-separated FMR targets.
    #[arg(long, value_delimiter = ',')]
    fmr: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comparison grid PNG (morph, truths, outputs).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Separation bound; default is the impostor 95th percentile.
    #[arg(long)]
    theta: Option<f64>,
    /// Restoration bound; default is the threshold at 1% FMR.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Evaluate a reference stub instead of a checkpoint.
    #[arg(long, value_parser = ["ground-truth", "replication"])]
    stub: Option<String>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// A manifest (`.jsonl`) or a corpus directory / registry file.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long)]
    train_emb: PathBuf,
    #[arg(long)]
    test_emb: PathBuf,
    #[arg(long, value_delimiter = ',')]
    percents: Option<Vec<f64>>,
}

fn version() -> String {
    format!(
        "{} (checkpoint format {}, {})",
        env!("CARGO_PKG_VERSION"),
        checkpoint::FORMAT_VERSION,
        protocol::GENERATOR_VERSION
    )
}

fn parse_args() -> std::result::Result<Cli, clap::Error> {
    let matches = Cli::command().version(version()).try_get_matches()?;
    Cli::from_arg_matches(&matches)
}

fn main() -> ExitCode {
    let cli = match parse_args() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::validation("threads", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::GenToyfaces(a) => gen_toyfaces(&cfg, a),
        Command::Split(a) => split(&cfg, a),
        Command::Morph(a) => morph(&cfg, a),
        Command::TrainCodec(a) => train_codec(&cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Demorph(a) => demorph(&cfg, a),
        Command::Evaluate(a) => evaluate(&cfg, a),
        Command::Embed(a) => embed(a),
        Command::Audit(a) => audit(a),
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(v).map_err(|e| Error::Format(e.to_string()))?);
    Ok(())
}

fn registry_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(REGISTRY_FILE)
    } else {
        p.to_path_buf()
    }
}

fn gen_toyfaces(cfg: &ExperimentConfig, a: GenArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| cfg.paths.data.clone());
    let reg = protocol::gen_toy_faces(a.count, a.res, a.seed.unwrap_or(cfg.seed), &out)?;
    print_json(&serde_json::json!({
        "registry": out.join(REGISTRY_FILE),
        "identities": reg.identities.len(),
        "resolution": reg.resolution,
    }))
}

fn split(cfg: &ExperimentConfig, a: SplitArgs) -> Result<()> {
    let scenario = match a.scenario {
        Some(k) => Scenario::try_from(k)?,
        None => cfg.scenario,
    };
    let seed = a.seed.unwrap_or(cfg.seed);
    let reg_path = registry_path(a.registry.as_deref().unwrap_or(&cfg.paths.data));
    let reg = Registry::load(&reg_path)?;
    let split = protocol::make_scenario_split(&reg.ids(), scenario, seed)?;
    let train = protocol::sample_pairs(&split, Side::Train, a.train_count, seed)?;
    let test = protocol::sample_pairs(&split, Side::Test, a.test_count, seed)?;
    let registry = std::path::absolute(&reg_path).map_err(|e| Error::io(&reg_path, e))?;
    let plan = PairPlan {
        registry,
        split,
        train,
        test,
    };
    plan.save(&a.out)?;
    print_json(&serde_json::json!({
        "plan": a.out,
        "scenario": u8::from(scenario),
        "train_pairs": plan.train.len(),
        "test_pairs": plan.test.len(),
    }))
}

fn morph(cfg: &ExperimentConfig, a: MorphArgs) -> Result<()> {
    let plan = PairPlan::load(&a.pairs)?;
    let reg = Registry::load(&plan.registry)?;
    let out = a.out.unwrap_or_else(|| cfg.paths.morphs.clone());
    let seed = a.seed.unwrap_or(cfg.seed);
    let mut written = Vec::new();
    for (side, pairs) in [(Side::Train, &plan.train), (Side::Test, &plan.test)] {
        let m = protocol::build_morph_dataset(&reg, pairs, a.alpha, plan.split.scenario, side, &out, seed)?;
        written.push(serde_json::json!({
            "manifest": out.join(format!("{side}.jsonl")),
            "morphs": m.records.len(),
        }));
    }
    print_json(&written)
}

fn train_codec(cfg: &ExperimentConfig, a: TrainCodecArgs) -> Result<()> {
    let mut codec_cfg = cfg.codec.clone();
    if let Some(f) = a.factor {
        codec_cfg.downscale_factor = f;
    }
    if let Some(c) = a.latent_channels {
        codec_cfg.latent_channels = c;
    }
    if let Some(e) = a.epochs {
        codec_cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        codec_cfg.learning_rate = lr;
    }
    codec_cfg.seed = a.seed.unwrap_or(codec_cfg.seed);
    codec_cfg.validate()?;
    let reg = Registry::load(&registry_path(a.data.as_deref().unwrap_or(&cfg.paths.data)))?;
    let ids: Vec<String> = match &a.plan {
        Some(p) => PairPlan::load(p)?.split.ids(Side::Train).to_vec(),
        None => reg.ids(),
    };
    let images: Vec<Image> = ids
        .iter()
        .map(|id| reg.load_face(id).map(|(img, _)| img))
        .collect::<Result<_>>()?;
    let out = a.out.unwrap_or_else(|| cfg.paths.codec.clone());
    let ckpt = latentcodec::train_codec_with(&images, &codec_cfg, |e| {
        let _ = print_json(e);
    })?;
    ckpt.save(&out)?;
    print_json(&serde_json::json!({
        "checkpoint": out,
        "latent_shape": ckpt.latent_shape(),
        "weights": ckpt.weights_hash(),
    }))
}

fn train(cfg: &ExperimentConfig, a: TrainArgs) -> Result<()> {
    let mut dcfg = cfg.demorpher.clone();
    if let Some(v) = a.epochs {
        dcfg.epochs = v;
    }
    if let Some(v) = a.lr {
        dcfg.learning_rate = v;
    }
    if let Some(v) = a.lambda1 {
        dcfg.lambda1 = v;
    }
    if let Some(v) = a.lambda2 {
        dcfg.lambda2 = v;
    }
    if let Some(v) = a.swap_prob {
        dcfg.swap_prob = v;
    }
    if let Some(v) = &a.loss_variant {
        dcfg.loss_variant = v.parse::<LossVariant>()?;
    }
    dcfg.seed = a.seed.unwrap_or(dcfg.seed);
    dcfg.validate()?;
    let manifest_path = a.manifest.unwrap_or_else(|| cfg.paths.morphs.join("train.jsonl"));
    let manifest = Manifest::load(&manifest_path)?;
    manifest.validate()?;
    let codec = CodecCheckpoint::load(&a.codec.unwrap_or_else(|| cfg.paths.codec.clone()))?;
    let out = a.out.unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let ckpt = demorpher::train_with(&manifest, &codec, &dcfg, |t| println!("{}", t.to_json_line()))?;
    ckpt.save(&out)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn load_models(cfg: &ExperimentConfig, codec: Option<PathBuf>, ckpt: Option<PathBuf>) -> Result<(CodecCheckpoint, DemorphCheckpoint)> {
    let codec = CodecCheckpoint::load(&codec.unwrap_or_else(|| cfg.paths.codec.clone()))?;
    let ckpt = DemorphCheckpoint::load(&ckpt.unwrap_or_else(|| cfg.paths.checkpoint.clone()))?;
    Ok((codec, ckpt))
}

fn demorph(cfg: &ExperimentConfig, a: DemorphArgs) -> Result<()> {
    let (codec, ckpt) = load_models(cfg, a.codec, a.ckpt)?;
    let x = Image::load_png(&a.input)?;
    let (o1, o2) = demorpher::demorph(&x, &codec, &ckpt)?;
    let stem = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "morph".into());
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let p1 = a.out_dir.join(format!("{stem}_out1.png"));
    let p2 = a.out_dir.join(format!("{stem}_out2.png"));
    o1.save_png(&p1)?;
    o2.save_png(&p2)?;
    print_json(&serde_json::json!({ "outputs": [p1, p2] }))
}

fn provider_from(name: &str) -> Result<Box<dyn EmbeddingProvider>> {
    if name == TOY_PROVIDER_NAME {
        Ok(Box::new(ToyProvider))
    } else {
        Ok(Box::new(FileProvider::load(Path::new(name))?))
    }
}

fn evaluate(cfg: &ExperimentConfig, a: EvaluateArgs) -> Result<()> {
    let manifest_path = a.manifest.unwrap_or_else(|| cfg.paths.morphs.join("test.jsonl"));
    let manifest = Manifest::load(&manifest_path)?;
    let provider = provider_from(a.provider.as_deref().unwrap_or(&cfg.provider))?;
    let opts = EvalOptions {
        fmr_targets: a.fmr.unwrap_or_else(|| cfg.fmr_targets.clone()),
        theta: a.theta,
        epsilon: a.epsilon,
        ..EvalOptions::default()
    };
    let models;
    let trained;
    let demorpher: &dyn Demorpher = match a.stub.as_deref() {
        Some("ground-truth") => &GroundTruthStub,
        Some(_) => &ReplicationStub,
        None => {
            models = load_models(cfg, a.codec, a.ckpt)?;
            trained = TrainedDemorpher {
                codec: &models.0,
                ckpt: &models.1,
            };
            &trained
        }
    };
    let (report, kept) = evaluate_with(&manifest, demorpher, provider.as_ref(), &opts)?;
    let out = a.out.unwrap_or_else(|| cfg.paths.reports.join("report.json"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    report.save(&out)?;
    if let Some(grid) = &a.grid {
        comparison_grid(&kept)?.save_png(grid)?;
    }
    print_json(&report.aggregates)
}

fn embed(a: EmbedArgs) -> Result<()> {
    let provider = ToyProvider;
    let mut paths: Vec<PathBuf> = Vec::new();
    if a.images.extension().is_some_and(|e| e == "jsonl") {
        let m = Manifest::load(&a.images)?;
        for r in &m.records {
            for p in [&r.morph_path, &r.image_a, &r.image_b] {
                paths.push(m.resolve(p));
            }
        }
    } else {
        let reg = Registry::load(&registry_path(&a.images))?;
        for id in reg.ids() {
            for p in &reg.get(&id).expect("listed id").images {
                paths.push(reg.resolve(p));
            }
        }
    }
    paths.sort();
    paths.dedup();
    let records = paths
        .iter()
        .map(|p| Ok((p.clone(), provider.embed(&Image::load_png(p)?, Some(p))?.vector().to_vec())))
        .collect::<Result<Vec<_>>>()?;
    let dim = records.first().map_or(0, |(_, v)| v.len());
    let file = EmbeddingFile {
        provider_id: provider.id().to_string(),
        dim,
        records,
    };
    write_embedding_file(&a.out, &file)?;
    print_json(&serde_json::json!({ "embeddings": file.records.len(), "out": a.out }))
}

fn audit(a: AuditArgs) -> Result<()> {
    let load = |p: &Path| -> Result<Vec<Embedding>> {
        let f = read_embedding_file(p)?;
        f.records
            .into_iter()
            .map(|(_, v)| Embedding::new(v, f.provider_id.clone()))
            .collect()
    };
    let percents = a.percents.unwrap_or_else(|| DEFAULT_LEAKAGE_PERCENTS.to_vec());
    let rows = leakage_audit(&load(&a.train_emb)?, &load(&a.test_emb)?, &percents)?;
    print_json(&rows)
}

