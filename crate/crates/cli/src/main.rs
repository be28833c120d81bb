use std::path::{Path, PathBuf};
use std::process::ExitCode;

use braintools::encoding::{logspace, FoldScheme, RidgeConfig};
use braintools::lowlevel::default_residual_alphas;
use braintools::pairing::PairingConfig;
use braintools::permute::{block_permute, DEFAULT_BLOCK_LEN};
use braintools::semphon::Metric;
use braintools::stats::WilcoxonMode;
use braintools::synth::{generate, write_dataset, SynthSpec};
use braintools::tensorio::{load_tensor, save_tensor, Split, StoryEntry, DEFAULT_TR_S};
use braintools_cli::analysis::{
    fit_paired, impact_rows, load_ceiling, load_rois, residualize_paired, write_impact_csv,
    FitSummary,
};
use braintools_cli::config::PipelineConfig;
use braintools_cli::error::{CliError, Result};
use braintools_cli::paired::append_story;
use braintools_cli::pipeline::{ceiling_from_files, run_pipeline, RunOptions, Stage, RUN_JSON};
use braintools_cli::reports::{
    compare_tables, read_alignment_table, semphon_from_index, tree_digest, SignificanceReport,
};
use braintools_cli::util::{read_json, write_json};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "braintools", version, about = "Brain-model alignment toolkit")]
struct Cli {
    /// Run the full pipeline from this config (same as `run --config`).
    #[arg(long, global = false)]
    config: Option<PathBuf>,
    /// Rerun every stage.
    #[arg(long)]
    force: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline stages from a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        force: bool,
        /// Comma-separated subset of stages.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
    },
    /// Align one story's features to its fMRI run and add it to a paired directory.
    Pair {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        fmri: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TR_S)]
        tr: f64,
        #[arg(long, default_value_t = 16.0)]
        window: f64,
        #[arg(long, default_value_t = 0.1)]
        stride: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        delays: Vec<usize>,
        #[arg(long)]
        story: Option<String>,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long, default_value = "participant")]
        participant: String,
        /// Low-level feature as `name=path`; repeatable.
        #[arg(long, value_parser = parse_named_path)]
        lowlevel: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noise ceiling from repeated runs of one story.
    Ceiling {
        #[arg(long, num_args = 2.., required = true)]
        repeats: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.4)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Fit encoding models for a paired directory and score ROI alignment.
    Fit {
        #[arg(long)]
        paired: PathBuf,
        /// `lo..hi:n` (log-spaced) or a comma list.
        #[arg(long, default_value = "1e0..1e4:10")]
        alphas: String,
        /// `story` or `blocks:K`.
        #[arg(long, default_value = "story")]
        folds: String,
        #[arg(long)]
        no_standardize: bool,
        #[arg(long)]
        nc: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 0.4)]
        threshold: f64,
        /// ROI file glob; repeatable.
        #[arg(long)]
        roi: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove a low-level feature from every layer of a paired directory.
    Residualize {
        #[arg(long)]
        paired: PathBuf,
        #[arg(long)]
        feature: String,
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Impact table from an original and a residual fit.
    Impact {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        residual: PathBuf,
        #[arg(long)]
        feature: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wilcoxon signed-rank tests between two alignment tables.
    Stats {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "auto", value_parser = parse_mode)]
        mode: WilcoxonMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Semantic-phonetic preference per layer.
    Semphon {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value = "cosine", value_parser = parse_metric)]
        metric: Metric,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset, ROI masks and a pipeline config.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Block-permute the rows of an fMRI tensor.
    Permute {
        #[arg(long)]
        fmri: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BLOCK_LEN)]
        block: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// SHA-256 of a report directory, ignoring the run record.
    Digest {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    parse_enum(s)
}

fn parse_mode(s: &str) -> std::result::Result<WilcoxonMode, String> {
    parse_enum(s)
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    parse_enum(s)
}

fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected name=path")?;
    Ok((name.to_string(), PathBuf::from(path)))
}

fn parse_alphas(s: &str) -> Result<Vec<f64>> {
    let bad = || CliError::Config(format!("bad alpha grid {s:?}"));
    if let Some((range, n)) = s.split_once(':') {
        let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        return Ok(logspace(lo, hi, n));
    }
    s.split(',')
        .map(|a| a.trim().parse().map_err(|_| bad()))
        .collect()
}

fn parse_folds(s: &str) -> Result<FoldScheme> {
    match s.split_once(':') {
        None if s == "story" => Ok(FoldScheme::LeaveOneStoryOut),
        Some(("blocks", k)) => k
            .parse()
            .map(FoldScheme::Blocks)
            .map_err(|_| CliError::Config(format!("bad fold count in {s:?}"))),
        _ => Err(CliError::Config(format!("unknown fold scheme {s:?}"))),
    }
}

fn glob_files(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in patterns {
        let paths =
            glob::glob(p).map_err(|e| CliError::Config(format!("bad roi pattern {p:?}: {e}")))?;
        for f in paths {
            files.push(f.map_err(|e| CliError::Io {
                path: e.path().to_path_buf(),
                source: e.into(),
            })?);
        }
    }
    files.sort();
    files.dedup();
    Ok(files)
}

fn write_config_template(out: &Path, seed: u64) -> Result<()> {
    let template = serde_json::json!({
        "manifests": ["manifest.json"],
        "rois": ["rois/*.json"],
        "output_dir": "report",
        "seed": seed,
    });
    write_json(&out.join("config.json"), &template)
}

fn run_config(config: &Path, force: bool, stages: &[String]) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let stages = stages
        .iter()
        .map(|s| s.parse())
        .collect::<Result<Vec<Stage>>>()?;
    let rec = run_pipeline(cfg, &RunOptions { force, stages })?;
    let ran: Vec<&str> = rec
        .stages
        .iter()
        .filter(|s| s.ran)
        .map(|s| s.stage.name())
        .collect();
    log::info!("finished; ran {ran:?}; config {}", &rec.config_hash[..12]);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let command = match (cli.command, cli.config) {
        (Some(c), None) => c,
        (None, Some(config)) => return run_config(&config, cli.force, &[]),
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "--config cannot be combined with a subcommand".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Config(
                "give --config or a subcommand (see --help)".into(),
            ))
        }
    };
    match command {
        Command::Run {
            config,
            force,
            stages,
        } => run_config(&config, force, &stages),
        Command::Pair {
            features,
            fmri,
            tr,
            window,
            stride,
            delays,
            story,
            split,
            participant,
            lowlevel,
            out,
        } => {
            let cfg = PairingConfig {
                window_len_s: window,
                stride_s: stride,
                tr_s: tr,
                fir_delays_trs: delays,
                ..PairingConfig::default()
            };
            cfg.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let story = story.unwrap_or_else(|| {
                fmri.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "story".into())
            });
            let entry = StoryEntry {
                story_id: story,
                features,
                fmri,
                split,
                lowlevel: lowlevel.into_iter().collect(),
            };
            let index = append_story(&participant, &entry, &cfg, &out)?;
            log::info!(
                "{}: {} stories paired",
                index.participant_id,
                index.stories.len()
            );
            Ok(())
        }
        Command::Ceiling {
            repeats,
            threshold,
            out,
            mask_out,
        } => {
            let mask_out = mask_out.unwrap_or_else(|| out.with_file_name("mask.npy"));
            let kept = ceiling_from_files(&repeats, threshold, &out, &mask_out)?;
            log::info!("{kept} voxels above threshold {threshold}");
            Ok(())
        }
        Command::Fit {
            paired,
            alphas,
            folds,
            no_standardize,
            nc,
            mask,
            threshold,
            roi,
            out,
        } => {
            let ridge = RidgeConfig {
                alpha_grid: parse_alphas(&alphas)?,
                folds: parse_folds(&folds)?,
                standardize: !no_standardize,
                ..RidgeConfig::default()
            };
            ridge
                .validate()
                .map_err(|e| CliError::Config(format!("ridge: {e}")))?;
            let nc = load_ceiling(&nc, mask.as_deref(), threshold, "fit")?;
            let rois = load_rois(&glob_files(&roi)?, "fit")?;
            std::fs::create_dir_all(&out).map_err(|e| CliError::Io {
                path: out.clone(),
                source: e,
            })?;
            let s = fit_paired(&paired, &nc, &rois, &ridge, &out, "fit")?;
            for (roi, score) in &s.mean_over_layers {
                log::info!("{roi}: B = {:.4} over {} voxels", score.b, score.n_voxels);
            }
            Ok(())
        }
        Command::Residualize {
            paired,
            feature,
            alphas,
            out,
        } => {
            let alphas = match alphas {
                Some(a) => parse_alphas(&a)?,
                None => default_residual_alphas(),
            };
            residualize_paired(&paired, &feature, &alphas, &out, "residualize").map(|_| ())
        }
        Command::Impact {
            original,
            residual,
            feature,
            out,
        } => {
            let o = FitSummary::load(&original, "impact", "fit")?;
            let r = FitSummary::load(&residual, "impact", "fit")?;
            write_impact_csv(&out, &impact_rows(&o, &r, &feature))
        }
        Command::Stats { a, b, mode, out } => {
            let ta = read_alignment_table(&a)?;
            let tb = read_alignment_table(&b)?;
            let tests = compare_tables(
                "a_vs_b",
                &a.to_string_lossy(),
                &ta,
                &b.to_string_lossy(),
                &tb,
                mode,
            )?;
            write_json(&out, &SignificanceReport { tests })
        }
        Command::Semphon { index, metric, out } => semphon_from_index(&index, metric, &out),
        Command::Synth { spec, seed, out } => {
            let mut spec: SynthSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let ds = generate(&spec).map_err(|e| CliError::Config(e.to_string()))?;
            let manifest = write_dataset(&ds, &out).map_err(|source| CliError::Core {
                stage: "synth",
                source,
            })?;
            write_config_template(&out, spec.seed)?;
            log::info!("wrote {}", manifest.display());
            Ok(())
        }
        Command::Permute {
            fmri,
            block,
            seed,
            out,
        } => {
            let core = |source| CliError::Core {
                stage: "permute",
                source,
            };
            let y = load_tensor(&fmri).map_err(core)?;
            save_tensor(&out, &block_permute(&y, block, seed).map_err(core)?).map_err(core)
        }
        Command::Digest { dir } => {
            println!("{}", tree_digest(&dir, &[RUN_JSON])?);
            Ok(())
        }
    }
}

/// `braintools <stage> --config <path> [--force]`: one pipeline stage.
#[derive(Parser)]
#[command(name = "braintools")]
struct StageCli {
    stage: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    force: bool,
}

fn parse_and_dispatch() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let is_stage = args.get(1).is_some_and(|a| a.parse::<Stage>().is_ok());
    if is_stage
        && args
            .iter()
            .skip(2)
            .any(|a| a == "--config" || a.starts_with("--config="))
    {
        let s = StageCli::parse_from(&args);
        return run_config(&s.config, s.force, &[s.stage]);
    }
    dispatch(Cli::parse_from(&args))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = std::env::var("BRAINTOOLS_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("cannot size thread pool: {e}");
        }
    }
    match parse_and_dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
