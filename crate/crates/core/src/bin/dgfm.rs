use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dgfm::format::save_tensor;
use dgfm::motion::{write_bvh, SkeletonDef};
use dgfm::pipeline::{
    evaluate_dirs, export_features, generate, ingest, train, AudioEmbeddings, Checkpoint, EvalInputs,
    GenerationRequest, Manifest, TrainConfig,
};
use dgfm::{Error, Result};

#[derive(Parser)]
#[command(name = "dgfm", version, about = "Text- and music-conditioned dance generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset manifest and write normalization statistics.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the statistics (default: `norm.dgfm` next to the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path. The per-step loss log goes to `<out>.log.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint at `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Generate a dance for a music track.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        genre: String,
        #[arg(long)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Per-frame audio embeddings covering the whole track.
        #[arg(long, conflicts_with = "stub_embeddings")]
        embeddings: Option<PathBuf>,
        /// Use deterministic stub audio embeddings from this seed.
        #[arg(long)]
        stub_embeddings: Option<u64>,
        /// Also write `<out>.bvh`.
        #[arg(long)]
        bvh: bool,
    },
    /// Score generated motions against reference motions.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Directory holding `<stem>.wav` for each generated motion.
        #[arg(long)]
        audio: PathBuf,
        /// CSV report; a text report is written next to it as `.txt`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        skeleton: Option<PathBuf>,
    },
    /// Write the STFT feature map of a WAV file.
    Features {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn skeleton(path: Option<&Path>) -> Result<SkeletonDef> {
    match path {
        Some(p) => SkeletonDef::load(p),
        None => Ok(SkeletonDef::default_52()),
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { manifest, out } => {
            let data = ingest(&Manifest::load(&manifest)?)?;
            let out = out.unwrap_or_else(|| manifest.with_file_name("norm.dgfm"));
            data.save_norm(&out)?;
            println!(
                "{} records ({} train), {} genres; statistics written to {}",
                data.samples.len(),
                data.train().count(),
                data.genres.len(),
                out.display()
            );
        }
        Command::Train { config, out, resume } => {
            let cfg = TrainConfig::load(&config)?;
            let skel = skeleton(cfg.skeleton.as_deref())?;
            let data = ingest(&Manifest::load(&cfg.manifest)?)?;
            let ck = if resume { Some(Checkpoint::load(&out)?) } else { None };
            let s = train(&cfg, &data, &skel, &out, &with_suffix(&out, ".log.csv"), ck.as_ref())?;
            println!(
                "{} steps, {} epochs; last loss {:.6} (L_S {:.6})",
                s.steps, s.epochs, s.last.total, s.last.sample
            );
        }
        Command::Generate {
            ckpt,
            audio,
            genre,
            seconds,
            seed,
            out,
            embeddings,
            stub_embeddings,
            bvh,
        } => {
            let embeddings = match (embeddings, stub_embeddings) {
                (Some(p), _) => AudioEmbeddings::File(p),
                (None, Some(s)) => AudioEmbeddings::Stub(s),
                (None, None) => {
                    return Err(Error::Provider(
                        "no audio embeddings: pass --embeddings FILE or --stub-embeddings SEED".into(),
                    ))
                }
            };
            let ck = Checkpoint::load(&ckpt)?;
            let req = GenerationRequest {
                audio,
                genre,
                seconds,
                seed,
                embeddings,
            };
            let motion = generate(&req, &ck)?;
            save_tensor(&out, motion.frames())?;
            if bvh {
                dgfm::format::write_atomic(
                    &out.with_extension("bvh"),
                    write_bvh(&motion, &ck.skeleton)?.as_bytes(),
                )?;
            }
            println!("{} frames written to {}", motion.len(), out.display());
        }
        Command::Evaluate {
            generated,
            reference,
            audio,
            out,
            skeleton: skel_path,
        } => {
            let skel = skeleton(skel_path.as_deref())?;
            let report = evaluate_dirs(
                &EvalInputs {
                    generated,
                    reference,
                    audio,
                },
                &skel,
            )?;
            dgfm::format::write_atomic(&out, report.to_csv().as_bytes())?;
            dgfm::format::write_atomic(&out.with_extension("txt"), report.to_text().as_bytes())?;
            print!("{}", report.to_text());
        }
        Command::Features { audio, out } => {
            let n = export_features(&audio, &out)?;
            println!("{n} frames written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
