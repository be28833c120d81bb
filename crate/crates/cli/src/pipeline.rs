//! The staged pipeline driven by a JSON config.
//!
//! ```text
//! <output_dir>/
//!   paired/<participant>/                 pair
//!   ceiling/<participant>/                ceiling: nc.npy, mask.npy, ceiling.json
//!   fit/<participant>/                    fit: encoding result directory
//!   alignment.csv                         participant,roi,label,B,n_voxels
//!   residual/<participant>/<feature>/     residualize: paired directory
//!   impact/<participant>/<feature>/       impact: residual fit
//!   impact/<participant>/impact.csv
//!   alignment_residual_<feature>.csv
//!   impact.csv                            roi,feature,layer,B_o,B_r,R over participants
//!   significance.json                     stats
//!   semphon/preference.csv                semphon
//!   run.json                              config hash, seed, timings
//! ```
//!
//! A stage that finished writes `.done/<stage>` holding the config hash and
//! is skipped on the next run unless the hash changed, `--force` is given or
//! an earlier stage ran again.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use braintools::ceiling::estimate_noise_ceiling_matrices;
use braintools::tensorio::{load_tensor, save_mask, save_vector, DatasetManifest, Matrix};
use serde::Serialize;

use crate::analysis::{
    fit_paired, impact_rows, load_ceiling, load_rois, residualize_paired, write_impact_csv,
    FitSummary, ImpactRow, ALIGNMENT_HEADER, IMPACT_HEADER, MEAN_LAYER,
};
use crate::config::PipelineConfig;
use crate::error::{CliError, Result, StageContext};
use crate::paired::{create_dir, pair_manifest, PairedIndex, INDEX};
use crate::reports::{
    compare_tables, read_alignment_table, semphon_from_index, SignificanceReport,
};
use crate::util::{fmt_opt, read_csv, write_csv, write_json};

pub const RUN_JSON: &str = "run.json";
pub const DONE_DIR: &str = ".done";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pair,
    Ceiling,
    Fit,
    Residualize,
    Impact,
    Stats,
    Semphon,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Pair,
        Stage::Ceiling,
        Stage::Fit,
        Stage::Residualize,
        Stage::Impact,
        Stage::Stats,
        Stage::Semphon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pair => "pair",
            Stage::Ceiling => "ceiling",
            Stage::Fit => "fit",
            Stage::Residualize => "residualize",
            Stage::Impact => "impact",
            Stage::Stats => "stats",
            Stage::Semphon => "semphon",
        }
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown stage {s:?}")))
    }
}

/// Output locations below `output_dir`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn paired(&self, p: &str) -> PathBuf {
        self.root.join("paired").join(p)
    }
    pub fn ceiling(&self, p: &str) -> PathBuf {
        self.root.join("ceiling").join(p)
    }
    pub fn fit(&self, p: &str) -> PathBuf {
        self.root.join("fit").join(p)
    }
    pub fn residual(&self, p: &str, feature: &str) -> PathBuf {
        self.root.join("residual").join(p).join(feature)
    }
    pub fn impact(&self, p: &str, feature: &str) -> PathBuf {
        self.root.join("impact").join(p).join(feature)
    }
    pub fn alignment(&self) -> PathBuf {
        self.root.join("alignment.csv")
    }
    pub fn residual_alignment(&self, feature: &str) -> PathBuf {
        self.root.join(format!("alignment_residual_{feature}.csv"))
    }
    fn done(&self, stage: Stage) -> PathBuf {
        self.root.join(DONE_DIR).join(stage.name())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub ran: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    /// Stages to consider; all when empty.
    pub stages: Vec<Stage>,
}

struct Ctx {
    cfg: PipelineConfig,
    manifests: Vec<DatasetManifest>,
    layout: Layout,
}

impl Ctx {
    fn participants(&self) -> impl Iterator<Item = &str> {
        self.manifests.iter().map(|m| m.participant_id.as_str())
    }

    /// Low-level features to residualize for one participant.
    fn features(&self, p: &str, stage: &'static str) -> Result<Vec<String>> {
        let dir = self.layout.paired(p);
        if !dir.join(INDEX).exists() {
            return Err(CliError::missing(stage, "pair", &dir.join(INDEX)));
        }
        let index = PairedIndex::load(&dir)?;
        Ok(match &self.cfg.lowlevel {
            Some(list) => list.clone(),
            None => index.lowlevel,
        })
    }

    fn all_features(&self, stage: &'static str) -> Result<Vec<String>> {
        let mut all = Vec::new();
        for p in self.participants() {
            for f in self.features(p, stage)? {
                if !all.contains(&f) {
                    all.push(f);
                }
            }
        }
        Ok(all)
    }
}

/// Runs the configured pipeline and returns the run record.
pub fn run_pipeline(cfg: PipelineConfig, opts: &RunOptions) -> Result<RunRecord> {
    let manifests = cfg.manifests()?;
    let layout = Layout {
        root: cfg.output_dir.clone(),
    };
    create_dir(&layout.root)?;
    create_dir(&layout.root.join(DONE_DIR))?;
    let hash = cfg.hash();
    let seed = cfg.seed;
    let ctx = Ctx {
        cfg,
        manifests,
        layout,
    };

    let mut records = Vec::new();
    let mut upstream_ran = false;
    for stage in Stage::ALL {
        if !opts.stages.is_empty() && !opts.stages.contains(&stage) {
            continue;
        }
        let marker = ctx.layout.done(stage);
        let current = std::fs::read_to_string(&marker).is_ok_and(|h| h.trim() == hash);
        if current && !opts.force && !upstream_ran {
            log::info!("stage {}: up to date", stage.name());
            records.push(StageRecord {
                stage,
                ran: false,
                seconds: 0.0,
            });
            continue;
        }
        log::info!("stage {}: running", stage.name());
        let _ = std::fs::remove_file(&marker);
        let t = Instant::now();
        match stage {
            Stage::Pair => stage_pair(&ctx)?,
            Stage::Ceiling => stage_ceiling(&ctx)?,
            Stage::Fit => stage_fit(&ctx)?,
            Stage::Residualize => stage_residualize(&ctx)?,
            Stage::Impact => stage_impact(&ctx)?,
            Stage::Stats => stage_stats(&ctx)?,
            Stage::Semphon => stage_semphon(&ctx)?,
        }
        std::fs::write(&marker, format!("{hash}\n")).map_err(|e| CliError::io(&marker, e))?;
        upstream_ran = true;
        records.push(StageRecord {
            stage,
            ran: true,
            seconds: t.elapsed().as_secs_f64(),
        });
    }
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        seed,
        stages: records,
    };
    write_json(&ctx.layout.root.join(RUN_JSON), &record)?;
    Ok(record)
}

fn stage_pair(ctx: &Ctx) -> Result<()> {
    for m in &ctx.manifests {
        m.require_test()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let index = pair_manifest(m, &ctx.cfg.pairing, &ctx.layout.paired(&m.participant_id))?;
        log::info!(
            "{}: paired {} stories, layers {:?}",
            m.participant_id,
            index.stories.len(),
            index.layers
        );
    }
    Ok(())
}

/// Ceiling from repeat files; writes `nc.npy`, `mask.npy` and returns the
/// kept-voxel count.
pub fn ceiling_from_files(
    repeats: &[PathBuf],
    threshold: f64,
    nc_out: &Path,
    mask_out: &Path,
) -> Result<usize> {
    const STAGE: &str = "ceiling";
    let mats: Vec<Matrix> = repeats
        .iter()
        .map(|p| load_tensor(p).stage(STAGE))
        .collect::<Result<_>>()?;
    let refs: Vec<&Matrix> = mats.iter().collect();
    let map = estimate_noise_ceiling_matrices(&refs, threshold).stage(STAGE)?;
    save_vector(nc_out, &map.nc).stage(STAGE)?;
    save_mask(mask_out, &map.keep_mask).stage(STAGE)?;
    Ok(map.n_kept())
}

#[derive(Debug, Serialize)]
struct CeilingRecord {
    participant_id: String,
    n_repeats: usize,
    threshold: f64,
    n_voxels: usize,
    n_kept: usize,
    mean_nc: f64,
}

fn stage_ceiling(ctx: &Ctx) -> Result<()> {
    for m in &ctx.manifests {
        if m.repeats.len() < 2 {
            return Err(CliError::Config(format!(
                "participant {:?} lists {} repeat runs; the ceiling needs at least 2",
                m.participant_id,
                m.repeats.len()
            )));
        }
        let dir = ctx.layout.ceiling(&m.participant_id);
        create_dir(&dir)?;
        let (nc_p, mask_p) = (dir.join("nc.npy"), dir.join("mask.npy"));
        let n_kept = ceiling_from_files(&m.repeats, ctx.cfg.ceiling_threshold, &nc_p, &mask_p)?;
        let nc = braintools::tensorio::load_vector(&nc_p).stage("ceiling")?;
        log::info!(
            "{}: {n_kept} of {} voxels above ceiling threshold {}",
            m.participant_id,
            nc.len(),
            ctx.cfg.ceiling_threshold
        );
        write_json(
            &dir.join("ceiling.json"),
            &CeilingRecord {
                participant_id: m.participant_id.clone(),
                n_repeats: m.repeats.len(),
                threshold: ctx.cfg.ceiling_threshold,
                n_voxels: nc.len(),
                n_kept,
                mean_nc: nc.iter().sum::<f64>() / nc.len() as f64,
            },
        )?;
    }
    Ok(())
}

fn fit_dir(
    ctx: &Ctx,
    p: &str,
    paired: &Path,
    out: &Path,
    stage: &'static str,
) -> Result<FitSummary> {
    if !paired.join(INDEX).exists() {
        return Err(CliError::missing(stage, "pair", &paired.join(INDEX)));
    }
    let cdir = ctx.layout.ceiling(p);
    let nc = load_ceiling(
        &cdir.join("nc.npy"),
        Some(&cdir.join("mask.npy")),
        ctx.cfg.ceiling_threshold,
        stage,
    )?;
    let rois = load_rois(&ctx.cfg.roi_files(p)?, stage)?;
    if rois.is_empty() {
        log::warn!("{p}: no ROI files match; alignment tables will be empty");
    }
    create_dir(out)?;
    fit_paired(paired, &nc, &rois, &ctx.cfg.ridge, out, stage)
}

/// Concatenates per-participant `alignment.csv` files under a `participant`
/// column.
fn write_participant_alignment(
    ctx: &Ctx,
    dir_of: impl Fn(&str) -> PathBuf,
    out: &Path,
    stage: &'static str,
) -> Result<()> {
    let mut rows = Vec::new();
    for p in ctx.participants() {
        let src = dir_of(p).join("alignment.csv");
        if !src.exists() {
            return Err(CliError::missing(stage, "fit", &src));
        }
        let (_, recs) = read_csv(&src)?;
        for r in recs {
            let mut row = vec![p.to_string()];
            row.extend(r);
            rows.push(row);
        }
    }
    let mut header = vec!["participant"];
    header.extend(ALIGNMENT_HEADER);
    write_csv(out, &header, &rows)
}

fn stage_fit(ctx: &Ctx) -> Result<()> {
    for p in ctx.participants() {
        let s = fit_dir(ctx, p, &ctx.layout.paired(p), &ctx.layout.fit(p), "fit")?;
        for (roi, score) in &s.mean_over_layers {
            log::info!(
                "{p}: {roi} B = {:.3} over {} voxels",
                score.b,
                score.n_voxels
            );
        }
    }
    write_participant_alignment(ctx, |p| ctx.layout.fit(p), &ctx.layout.alignment(), "fit")
}

fn stage_residualize(ctx: &Ctx) -> Result<()> {
    for p in ctx.participants() {
        for f in ctx.features(p, "residualize")? {
            residualize_paired(
                &ctx.layout.paired(p),
                &f,
                &ctx.cfg.residual_alphas,
                &ctx.layout.residual(p, &f),
                "residualize",
            )?;
        }
    }
    Ok(())
}

fn stage_impact(ctx: &Ctx) -> Result<()> {
    const STAGE: &str = "impact";
    let mut all: BTreeMap<(String, String, String), Vec<ImpactRow>> = BTreeMap::new();
    let features = ctx.all_features(STAGE)?;
    for p in ctx.participants() {
        let original = FitSummary::load(&ctx.layout.fit(p), STAGE, "fit")?;
        let mut rows = Vec::new();
        for f in ctx.features(p, STAGE)? {
            let rdir = ctx.layout.residual(p, &f);
            if !rdir.join(INDEX).exists() {
                return Err(CliError::missing(STAGE, "residualize", &rdir.join(INDEX)));
            }
            let residual = fit_dir(ctx, p, &rdir, &ctx.layout.impact(p, &f), STAGE)?;
            for row in impact_rows(&original, &residual, &f) {
                if row.layer == MEAN_LAYER {
                    log::info!("{p}: {} {f} R = {}", row.roi, fmt_opt(row.r));
                }
                all.entry((row.roi.clone(), row.feature.clone(), row.layer.clone()))
                    .or_default()
                    .push(row.clone());
                rows.push(row);
            }
        }
        write_impact_csv(
            &ctx.layout.root.join("impact").join(p).join("impact.csv"),
            &rows,
        )?;
    }
    for f in &features {
        write_participant_alignment(
            ctx,
            |p| ctx.layout.impact(p, f),
            &ctx.layout.residual_alignment(f),
            STAGE,
        )?;
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let rows: Vec<Vec<String>> = all
        .into_iter()
        .map(|((roi, feature, layer), rs)| {
            let r: Vec<f64> = rs.iter().filter_map(|x| x.r).collect();
            vec![
                roi,
                feature,
                layer,
                avg(&rs.iter().map(|x| x.b_o).collect::<Vec<_>>()).to_string(),
                avg(&rs.iter().map(|x| x.b_r).collect::<Vec<_>>()).to_string(),
                fmt_opt((!r.is_empty()).then(|| avg(&r))),
            ]
        })
        .collect();
    write_csv(&ctx.layout.root.join("impact.csv"), &IMPACT_HEADER, &rows)
}

fn stage_stats(ctx: &Ctx) -> Result<()> {
    const STAGE: &str = "stats";
    let this = ctx.layout.alignment();
    if !this.exists() {
        return Err(CliError::missing(STAGE, "fit", &this));
    }
    let original = read_alignment_table(&this)?;
    let mode = ctx.cfg.wilcoxon_mode;
    let mut tests = Vec::new();
    if let Some(base) = &ctx.cfg.baseline_alignment {
        let baseline = read_alignment_table(base)?;
        tests.extend(compare_tables(
            "run_vs_baseline",
            &ctx.cfg.model_id,
            &original,
            "baseline",
            &baseline,
            mode,
        )?);
    }
    for f in ctx.all_features(STAGE)? {
        let p = ctx.layout.residual_alignment(&f);
        if !p.exists() {
            return Err(CliError::missing(STAGE, "impact", &p));
        }
        let residual = read_alignment_table(&p)?;
        tests.extend(compare_tables(
            &format!("original_vs_residual_{f}"),
            "original",
            &original,
            &format!("residual_{f}"),
            &residual,
            mode,
        )?);
    }
    write_json(
        &ctx.layout.root.join("significance.json"),
        &SignificanceReport { tests },
    )
}

fn stage_semphon(ctx: &Ctx) -> Result<()> {
    let Some(s) = &ctx.cfg.semphon else {
        log::info!("stage semphon: no triple index configured; nothing to do");
        return Ok(());
    };
    let dir = ctx.layout.root.join("semphon");
    create_dir(&dir)?;
    semphon_from_index(&s.index, s.metric, &dir.join("preference.csv"))
}
