mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qean::features::{
    load_stream, render_kv, save_stream, synth_pair, write_atomic, StreamKind, StreamMeta,
};
use qean::metrics::{
    beat_align, diversity, dynamic_features, fid, geometric_features, motion_beats, music_beats,
    FeatureSet, BEAT_ALIGN_ALPHA, FID_EPS,
};
use qean::model::{autoregressive_generate, ModelWeights};
use qean::training::{loss_trace_csv, train, Dataset};
use qean::verify::{run_suite_with, Fault, Suite};
use qean::{Error, Matrix64 as Matrix};

use config::{RunConfig, SEED_ENV};

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_METRIC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "qean",
    version,
    about = "Quaternion rotary attention for music-conditioned motion prediction"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run invariant checks.
    Verify {
        #[arg(long, default_value = "all", value_parser = Suite::NAMES)]
        suite: String,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write a synthetic beat-locked audio/motion pair.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        beat_period: usize,
        #[arg(long, default_value_t = qean::features::DEFAULT_FPS)]
        fps: usize,
    },
    /// Train a model on every stream pair under a data directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Extra `key=value` overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Autoregressively generate motion from a checkpoint.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        music: PathBuf,
        #[arg(long)]
        seed_motion: PathBuf,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare generated motion against a reference set.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long, default_value = "fid_k,fid_g,div_k,div_g,beat_align")]
        metrics: String,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) => EXIT_USAGE,
            Error::TooFewItems(_) | Error::EmptyMotionBeats | Error::EmptyMusicBeats => EXIT_METRIC,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Verify {
            suite,
            inject_fault,
        } => cmd_verify(&suite, inject_fault.as_deref()),
        Cmd::Synth {
            out,
            seconds,
            seed,
            beat_period,
            fps,
        } => cmd_synth(&out, seconds, seed, beat_period, fps),
        Cmd::Train {
            config,
            data,
            out,
            steps,
            seed,
            overrides,
        } => cmd_train(config.as_deref(), &data, &out, steps, seed, &overrides),
        Cmd::Generate {
            ckpt,
            music,
            seed_motion,
            frames,
            out,
        } => cmd_generate(&ckpt, &music, &seed_motion, frames, &out),
        Cmd::Eval {
            reference,
            gen,
            metrics,
            out,
        } => cmd_eval(&reference, &gen, &metrics, &out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_verify(suite: &str, fault: Option<&str>) -> CmdResult {
    let suite =
        Suite::parse(suite).ok_or_else(|| Failure::usage(format!("unknown suite {suite}")))?;
    let fault = match fault {
        None => None,
        Some(f) => {
            Some(Fault::parse(f).ok_or_else(|| Failure::usage(format!("unknown fault {f}")))?)
        }
    };
    let results = run_suite_with(suite, fault, |r| println!("{r}"));
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}::{}", r.module, r.name))
        .collect();
    println!(
        "{}/{} checks passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY,
            message: format!("failed: {}", failed.join(", ")),
        })
    }
}

fn ensure_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure {
        code: EXIT_RUNTIME,
        message: format!("{}: {e}", dir.display()),
    })
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn echo_config(dir: &Path, name: &str, doc: &str) -> CmdResult {
    Ok(write_atomic(&dir.join(name), doc.as_bytes())?)
}

fn cmd_synth(out: &Path, seconds: f64, seed: u64, beat_period: usize, fps: usize) -> CmdResult {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Failure::usage(format!(
            "--seconds must be positive, got {seconds}"
        )));
    }
    let (audio, motion) = synth_pair(seed, seconds, fps, beat_period)?;
    ensure_dir(out)?;
    let mut audio_meta = StreamMeta::for_matrix(StreamKind::Audio, &audio);
    audio_meta.fps = fps;
    let mut motion_meta = StreamMeta::for_matrix(StreamKind::Motion, &motion);
    motion_meta.fps = fps;
    save_stream(&out.join("audio.csv"), &audio, &audio_meta)?;
    save_stream(&out.join("motion.csv"), &motion, &motion_meta)?;
    let doc = render_kv(&[
        ("seconds", seconds.to_string()),
        ("seed", seed.to_string()),
        ("beat_period", beat_period.to_string()),
        ("fps", fps.to_string()),
    ]);
    echo_config(out, "synth.conf", &doc)?;
    println!("wrote {} frames to {}", motion.rows(), out.display());
    Ok(())
}

/// Directories holding an `audio.csv`/`motion.csv` pair: `dir` itself and
/// its immediate subdirectories, sorted by path.
fn pair_dirs(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let has_pair = |d: &Path| d.join("audio.csv").is_file() && d.join("motion.csv").is_file();
    let mut out = Vec::new();
    if has_pair(dir) {
        out.push(dir.to_path_buf());
    }
    let entries =
        fs::read_dir(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    out.extend(subdirs.into_iter().filter(|d| has_pair(d)));
    Ok(out)
}

fn load_kind(path: &Path, kind: StreamKind) -> Result<Matrix, Failure> {
    let (m, meta) = load_stream(path)?;
    if meta.kind != kind {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!(
                "{}: expected a {} stream, found {}",
                path.display(),
                kind.as_str(),
                meta.kind.as_str()
            ),
        });
    }
    Ok(m)
}

fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    steps: Option<usize>,
    seed: Option<u64>,
    overrides: &[String],
) -> CmdResult {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p).map_err(Failure::usage)?,
        None => RunConfig::desk(),
    };
    if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.set("rng_seed", &s).map_err(Failure::usage)?;
    }
    if let Some(s) = steps {
        cfg.train.total_steps = s;
    }
    if let Some(s) = seed {
        cfg.train.rng_seed = s;
    }
    let mut kv = BTreeMap::new();
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got {o}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    cfg.apply(&kv).map_err(Failure::usage)?;
    cfg.validate().map_err(Failure::usage)?;
    if !data.is_dir() {
        return Err(Failure::usage(format!(
            "data directory {} does not exist",
            data.display()
        )));
    }
    let dirs = pair_dirs(data)?;
    if dirs.is_empty() {
        return Err(Failure::usage(format!(
            "no audio.csv/motion.csv pairs under {}",
            data.display()
        )));
    }
    let mut dataset = Dataset::new();
    for d in &dirs {
        dataset.push(
            load_kind(&d.join("audio.csv"), StreamKind::Audio)?,
            load_kind(&d.join("motion.csv"), StreamKind::Motion)?,
        )?;
    }
    let weights = ModelWeights::init(&cfg.model, cfg.train.rng_seed)?;
    let every = (cfg.train.total_steps / 20).max(1);
    let outcome = train(weights, &dataset, &cfg.train, |r| {
        if r.step % every == 0 || r.step + 1 == cfg.train.total_steps {
            eprintln!("step {:>6}  lr {:.1e}  loss {:.6e}", r.step, r.lr, r.loss);
        }
    })?;
    let dir = parent_dir(out);
    ensure_dir(&dir)?;
    outcome.weights.save(out)?;
    write_atomic(
        &dir.join("loss.csv"),
        loss_trace_csv(&outcome.trace).as_bytes(),
    )?;
    echo_config(&dir, "train.conf", &cfg.render())?;
    println!(
        "trained {} steps on {} pairs; checkpoint {}",
        cfg.train.total_steps,
        dirs.len(),
        out.display()
    );
    Ok(())
}

fn cmd_generate(
    ckpt: &Path,
    music: &Path,
    seed_motion: &Path,
    frames: usize,
    out: &Path,
) -> CmdResult {
    let weights = ModelWeights::load(ckpt)?;
    let cfg = weights.config().clone();
    let audio = load_kind(music, StreamKind::Audio)?;
    let seed = load_kind(seed_motion, StreamKind::Motion)?;
    if seed.rows() < cfg.seed_motion_frames {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!(
                "seed motion has {} frames, model needs {}",
                seed.rows(),
                cfg.seed_motion_frames
            ),
        });
    }
    let seed = seed.slice_rows(0, cfg.seed_motion_frames)?;
    let motion = autoregressive_generate(&weights, &seed, &audio, frames)?;
    let dir = parent_dir(out);
    ensure_dir(&dir)?;
    let mut meta = StreamMeta::for_matrix(StreamKind::Motion, &motion);
    meta.fps = cfg.fps;
    save_stream(out, &motion, &meta)?;
    let doc = render_kv(&[
        ("ckpt", ckpt.display().to_string()),
        ("music", music.display().to_string()),
        ("seed_motion", seed_motion.display().to_string()),
        ("frames", frames.to_string()),
    ]);
    echo_config(&dir, "generate.conf", &doc)?;
    println!("wrote {} frames to {}", motion.rows(), out.display());
    Ok(())
}

/// Motion streams directly in `dir` or one level below, sorted by path.
fn motion_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::usage(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut found = Vec::new();
    let mut scan = |d: &Path| -> Result<Vec<PathBuf>, Failure> {
        let entries =
            fs::read_dir(d).map_err(|e| Failure::usage(format!("{}: {e}", d.display())))?;
        let mut subdirs = Vec::new();
        for e in entries.filter_map(|e| e.ok()) {
            let p = e.path();
            if p.is_dir() {
                subdirs.push(p);
            } else if p.extension().is_some_and(|x| x == "csv")
                && qean::features::load_meta(&p).is_ok_and(|m| m.kind == StreamKind::Motion)
            {
                found.push(p);
            }
        }
        Ok(subdirs)
    };
    let subdirs = scan(dir)?;
    for s in subdirs {
        scan(&s)?;
    }
    found.sort();
    Ok(found)
}

/// Audio paired with a motion stream: same directory, `motion` replaced by
/// `audio` in the file name.
fn paired_audio(motion: &Path) -> Option<PathBuf> {
    let name = motion.file_name()?.to_str()?;
    name.contains("motion")
        .then(|| motion.with_file_name(name.replacen("motion", "audio", 1)))
}

fn feature_set(
    motions: &[Matrix],
    f: fn(&Matrix) -> qean::Result<Vec<f64>>,
) -> Result<FeatureSet, Failure> {
    let rows = motions.iter().map(f).collect::<qean::Result<Vec<_>>>()?;
    if rows.len() < 2 {
        return Err(Error::TooFewItems(rows.len()).into());
    }
    Ok(FeatureSet::from_vectors(&rows)?)
}

fn cmd_eval(reference: &Path, gen: &Path, metrics: &str, out: &Path) -> CmdResult {
    const KNOWN: [&str; 5] = ["fid_k", "fid_g", "div_k", "div_g", "beat_align"];
    let mut wanted: Vec<&str> = Vec::new();
    for m in metrics.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let expanded: &[&str] = match m {
            "fid" => &["fid_k", "fid_g"],
            "div" | "diversity" => &["div_k", "div_g"],
            _ => std::slice::from_ref(&m),
        };
        wanted.extend(
            expanded
                .iter()
                .copied()
                .filter(|e| !wanted.contains(e))
                .collect::<Vec<_>>(),
        );
    }
    if let Some(bad) = wanted.iter().find(|m| !KNOWN.contains(m)) {
        return Err(Failure::usage(format!(
            "unknown metric {bad}; known: {}",
            KNOWN.join(",")
        )));
    }
    let load_all = |files: &[PathBuf]| -> Result<Vec<Matrix>, Failure> {
        files
            .iter()
            .map(|p| load_kind(p, StreamKind::Motion))
            .collect()
    };
    let gen_files = motion_files(gen)?;
    let gen_motion = load_all(&gen_files)?;
    let needs_ref = wanted.iter().any(|m| m.starts_with("fid"));
    let ref_motion = if needs_ref {
        load_all(&motion_files(reference)?)?
    } else {
        Vec::new()
    };

    let mut report: Vec<(&str, String)> = vec![("gen_sequences", gen_motion.len().to_string())];
    for m in &wanted {
        let value = match *m {
            "fid_k" => fid(
                &feature_set(&ref_motion, dynamic_features)?,
                &feature_set(&gen_motion, dynamic_features)?,
                FID_EPS,
            )?,
            "fid_g" => fid(
                &feature_set(&ref_motion, geometric_features)?,
                &feature_set(&gen_motion, geometric_features)?,
                FID_EPS,
            )?,
            "div_k" => diversity(&feature_set(&gen_motion, dynamic_features)?)?,
            "div_g" => diversity(&feature_set(&gen_motion, geometric_features)?)?,
            "beat_align" => {
                if gen_motion.is_empty() {
                    return Err(Error::TooFewItems(0).into());
                }
                let mut total = 0.0;
                for (path, motion) in gen_files.iter().zip(&gen_motion) {
                    let audio_path =
                        paired_audio(path)
                            .filter(|p| p.is_file())
                            .ok_or_else(|| Failure {
                                code: EXIT_METRIC,
                                message: format!("no paired audio for {}", path.display()),
                            })?;
                    let audio = load_kind(&audio_path, StreamKind::Audio)?;
                    let fps = qean::features::load_meta(path)?.fps;
                    total += beat_align(
                        &motion_beats(motion, fps)?,
                        &music_beats(&audio, fps)?,
                        BEAT_ALIGN_ALPHA,
                    )?;
                }
                total / gen_motion.len() as f64
            }
            _ => unreachable!(),
        };
        report.push((m, format!("{value:.10e}")));
    }
    let dir = parent_dir(out);
    ensure_dir(&dir)?;
    let doc = render_kv(&report);
    write_atomic(out, doc.as_bytes())?;
    let echo = render_kv(&[
        ("ref", reference.display().to_string()),
        ("gen", gen.display().to_string()),
        ("metrics", wanted.join(",")),
    ]);
    echo_config(&dir, "eval.conf", &echo)?;
    print!("{doc}");
    Ok(())
}
