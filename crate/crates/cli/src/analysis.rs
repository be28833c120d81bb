//! Encoding fits, residualization and impact tables over paired directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use braintools::ceiling::NoiseCeilingMap;
use braintools::encoding::{fit_and_evaluate, normalized_alignment, RidgeConfig, Standardizer};
use braintools::lowlevel::{low_level_impact, residualize};
use braintools::pairing::fir_expand;
use braintools::tensorio::{
    load_mask, load_vector, save_tensor, save_vector, vstack, Matrix, RoiMask, Split,
};
use braintools::Error;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result, StageContext};
use crate::paired::{
    create_dir, layer_path, lowlevel_path, stack_stories, y_path, PairedIndex, PairedStory,
};
use crate::util::{fmt_opt, read_json, write_csv, write_json};

pub const TRAIN_SPLITS: [Split; 2] = [Split::Train, Split::Val];
pub const TEST_SPLITS: [Split; 1] = [Split::Test];
pub const ENCODING_JSON: &str = "encoding.json";
pub const ALIGNMENT_HEADER: [&str; 4] = ["roi", "label", "B", "n_voxels"];
pub const IMPACT_HEADER: [&str; 6] = ["roi", "feature", "layer", "B_o", "B_r", "R"];
pub const MEAN_LAYER: &str = "mean";

/// An ROI mask and the name it is reported under (its file stem).
#[derive(Debug, Clone)]
pub struct NamedRoi {
    pub name: String,
    pub mask: RoiMask,
}

pub fn load_rois(files: &[PathBuf], stage: &'static str) -> Result<Vec<NamedRoi>> {
    files
        .iter()
        .map(|p| {
            Ok(NamedRoi {
                name: p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                mask: RoiMask::load(p).stage(stage)?,
            })
        })
        .collect()
}

/// Ceiling map from saved ceilings and an optional saved keep mask.
pub fn load_ceiling(
    nc_path: &Path,
    mask_path: Option<&Path>,
    threshold: f64,
    stage: &'static str,
) -> Result<NoiseCeilingMap> {
    if !nc_path.exists() {
        return Err(CliError::missing(stage, "ceiling", nc_path));
    }
    let mut map =
        NoiseCeilingMap::new(load_vector(nc_path).stage(stage)?, threshold).stage(stage)?;
    if let Some(mp) = mask_path {
        let mask = load_mask(mp).stage(stage)?;
        if mask.len() != map.nc.len() {
            return Err(CliError::Core {
                stage,
                source: Error::Input(format!(
                    "mask has {} entries for {} ceilings",
                    mask.len(),
                    map.nc.len()
                )),
            });
        }
        map.keep_mask = mask;
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiScore {
    pub label: String,
    #[serde(rename = "B")]
    pub b: f64,
    pub n_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub mean_rho: f64,
    pub median_alpha: f64,
    pub rois: BTreeMap<String, RoiScore>,
}

/// Contents of `encoding.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub participant_id: String,
    pub layers: Vec<String>,
    pub fir_delays_trs: Vec<usize>,
    pub ridge: RidgeConfig,
    pub prescaled: bool,
    pub n_train_trs: usize,
    pub n_test_trs: usize,
    pub n_voxels: usize,
    pub n_kept_voxels: usize,
    pub per_layer: BTreeMap<String, LayerSummary>,
    /// Per-ROI alignment averaged over layers.
    pub mean_over_layers: BTreeMap<String, RoiScore>,
}

impl FitSummary {
    pub fn load(dir: &Path, stage: &'static str, prereq: &str) -> Result<Self> {
        let p = dir.join(ENCODING_JSON);
        if !p.exists() {
            return Err(CliError::missing(stage, prereq, &p));
        }
        read_json(&p)
    }
}

fn fir_by_story(x: &Matrix, lengths: &[usize], delays: &[usize]) -> braintools::Result<Matrix> {
    let mut parts = Vec::with_capacity(lengths.len());
    let mut start = 0;
    for &len in lengths {
        parts.push(fir_expand(&x.rows(start, len).into_owned(), delays)?);
        start += len;
    }
    vstack(&parts.iter().collect::<Vec<_>>())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn split_stories<'a>(
    index: &'a PairedIndex,
    stage: &'static str,
) -> Result<(Vec<&'a PairedStory>, Vec<&'a PairedStory>)> {
    let train: Vec<&PairedStory> = index.stories_in(&TRAIN_SPLITS).collect();
    let test: Vec<&PairedStory> = index.stories_in(&TEST_SPLITS).collect();
    if train.is_empty() || test.is_empty() {
        return Err(CliError::Core {
            stage,
            source: Error::Input(format!(
                "participant {:?} needs training and test stories ({} and {} found)",
                index.participant_id,
                train.len(),
                test.len()
            )),
        });
    }
    Ok((train, test))
}

fn alignment_rows(scores: &BTreeMap<String, RoiScore>) -> Vec<Vec<String>> {
    scores
        .iter()
        .map(|(roi, s)| {
            vec![
                roi.clone(),
                s.label.clone(),
                s.b.to_string(),
                s.n_voxels.to_string(),
            ]
        })
        .collect()
}

/// Fits one encoding model per layer of a paired directory, scores it on
/// the test stories and writes a result directory:
///
/// ```text
/// encoding.json      summary, per-layer and layer-averaged ROI alignment
/// rho.npy            n_layers × n_voxels held-out correlations
/// alignment.csv      roi,label,B,n_voxels (averaged over layers)
/// voxels.csv         per-voxel ceiling, mask and correlations
/// layers/<layer>/{rho.npy, alpha.npy, alignment.csv}
/// ```
pub fn fit_paired(
    paired: &Path,
    nc: &NoiseCeilingMap,
    rois: &[NamedRoi],
    ridge: &RidgeConfig,
    out: &Path,
    stage: &'static str,
) -> Result<FitSummary> {
    let index_path = paired.join(crate::paired::INDEX);
    if !index_path.exists() {
        return Err(CliError::missing(stage, "pair", &index_path));
    }
    let index = PairedIndex::load(paired)?;
    let (train, test) = split_stories(&index, stage)?;
    let y_train = stack_stories(&train, |s| y_path(paired, s), stage)?;
    let y_test = stack_stories(&test, |s| y_path(paired, s), stage)?;
    let n_voxels = y_train.data.ncols();
    if nc.nc.len() != n_voxels {
        return Err(CliError::Core {
            stage,
            source: Error::Input(format!(
                "{} noise ceilings for {n_voxels} voxels",
                nc.nc.len()
            )),
        });
    }
    nc.require_kept().stage(stage)?;
    for r in rois {
        r.mask.validate_for(n_voxels).stage(stage)?;
    }
    create_dir(&out.join("layers"))?;
    let fit_cfg = RidgeConfig {
        standardize: false,
        ..ridge.clone()
    };

    let mut per_layer = BTreeMap::new();
    let mut rho_rows = Vec::new();
    for layer in &index.layers {
        let x_train = stack_stories(&train, |s| layer_path(paired, s, layer), stage)?;
        let x_test = stack_stories(&test, |s| layer_path(paired, s, layer), stage)?;
        let scaler = Standardizer::fit(&x_train.data, ridge.standardize && !index.prescaled);
        let xs_train = scaler.apply(&x_train.data).stage(stage)?;
        let xs_test = scaler.apply(&x_test.data).stage(stage)?;
        let d_train =
            fir_by_story(&xs_train, &x_train.lengths, &index.fir_delays_trs).stage(stage)?;
        let d_test = fir_by_story(&xs_test, &x_test.lengths, &index.fir_delays_trs).stage(stage)?;
        log::info!(
            "{}: fitting layer {layer} ({} train TRs, {} features, {n_voxels} voxels)",
            index.participant_id,
            d_train.nrows(),
            d_train.ncols()
        );
        let res = fit_and_evaluate(
            &d_train,
            &y_train.data,
            &y_train.lengths,
            &d_test,
            &y_test.data,
            &fit_cfg,
        )
        .stage(stage)?;

        let mut scores = BTreeMap::new();
        for r in rois {
            match normalized_alignment(&res.rho, nc, &r.mask) {
                Ok(a) => {
                    scores.insert(
                        r.name.clone(),
                        RoiScore {
                            label: r.mask.label.clone(),
                            b: a.b,
                            n_voxels: a.voxels.len(),
                        },
                    );
                }
                Err(Error::Roi(msg)) => log::warn!("{msg}; not reported"),
                Err(e) => return Err(CliError::Core { stage, source: e }),
            }
        }
        let ldir = out.join("layers").join(layer);
        create_dir(&ldir)?;
        save_vector(ldir.join("rho.npy"), &res.rho).stage(stage)?;
        save_vector(ldir.join("alpha.npy"), &res.model.alpha_per_voxel).stage(stage)?;
        write_csv(
            &ldir.join("alignment.csv"),
            &ALIGNMENT_HEADER,
            &alignment_rows(&scores),
        )?;
        per_layer.insert(
            layer.clone(),
            LayerSummary {
                mean_rho: mean(&res.rho),
                median_alpha: median(&res.model.alpha_per_voxel),
                rois: scores,
            },
        );
        rho_rows.push(res.rho);
    }

    let mut mean_over_layers = BTreeMap::new();
    for r in rois {
        let bs: Vec<&RoiScore> = per_layer
            .values()
            .filter_map(|l| l.rois.get(&r.name))
            .collect();
        if bs.len() == index.layers.len() && !bs.is_empty() {
            mean_over_layers.insert(
                r.name.clone(),
                RoiScore {
                    label: r.mask.label.clone(),
                    b: mean(&bs.iter().map(|s| s.b).collect::<Vec<_>>()),
                    n_voxels: bs[0].n_voxels,
                },
            );
        }
    }

    let rho = Matrix::from_fn(rho_rows.len(), n_voxels, |l, v| rho_rows[l][v]);
    save_tensor(out.join("rho.npy"), &rho).stage(stage)?;
    write_csv(
        &out.join("alignment.csv"),
        &ALIGNMENT_HEADER,
        &alignment_rows(&mean_over_layers),
    )?;
    let mut header: Vec<String> = ["voxel", "nc", "keep", "rho_mean"]
        .map(String::from)
        .to_vec();
    header.extend(index.layers.iter().map(|l| format!("rho_{l}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let voxel_rows: Vec<Vec<String>> = (0..n_voxels)
        .map(|v| {
            let layer_rho: Vec<f64> = rho_rows.iter().map(|r| r[v]).collect();
            let mut row = vec![
                v.to_string(),
                nc.nc[v].to_string(),
                u8::from(nc.keep_mask[v]).to_string(),
                fmt_opt((!layer_rho.is_empty()).then(|| mean(&layer_rho))),
            ];
            row.extend(layer_rho.iter().map(|x| x.to_string()));
            row
        })
        .collect();
    write_csv(&out.join("voxels.csv"), &header_refs, &voxel_rows)?;

    let summary = FitSummary {
        participant_id: index.participant_id.clone(),
        layers: index.layers.clone(),
        fir_delays_trs: index.fir_delays_trs.clone(),
        ridge: ridge.clone(),
        prescaled: index.prescaled,
        n_train_trs: y_train.data.nrows(),
        n_test_trs: y_test.data.nrows(),
        n_voxels,
        n_kept_voxels: nc.n_kept(),
        per_layer,
        mean_over_layers,
    };
    write_json(&out.join(ENCODING_JSON), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualLayer {
    /// Penalty per representation column; absent when only the mean was
    /// removed.
    pub alphas: Option<Vec<f64>>,
    pub train_norm_ratio: f64,
}

/// Removes `feature` from every layer of a paired directory and writes a new
/// paired directory holding the residuals. Representations are z-scored with
/// training statistics first and the residuals are stored prescaled, so a
/// later fit does not inflate whatever small remnant of the feature is left.
pub fn residualize_paired(
    paired: &Path,
    feature: &str,
    alphas: &[f64],
    out: &Path,
    stage: &'static str,
) -> Result<BTreeMap<String, ResidualLayer>> {
    let index_path = paired.join(crate::paired::INDEX);
    if !index_path.exists() {
        return Err(CliError::missing(stage, "pair", &index_path));
    }
    let index = PairedIndex::load(paired)?;
    if !index.lowlevel.iter().any(|f| f == feature) {
        return Err(CliError::Config(format!(
            "low-level feature {feature:?} not paired for participant {:?} (have {:?})",
            index.participant_id, index.lowlevel
        )));
    }
    let (train, test) = split_stories(&index, stage)?;
    create_dir(out)?;
    let low_train = stack_stories(&train, |s| lowlevel_path(paired, s, feature), stage)?;
    let low_test = stack_stories(&test, |s| lowlevel_path(paired, s, feature), stage)?;

    let mut report = BTreeMap::new();
    for layer in &index.layers {
        let reps_train = stack_stories(&train, |s| layer_path(paired, s, layer), stage)?;
        let reps_test = stack_stories(&test, |s| layer_path(paired, s, layer), stage)?;
        let scaler = Standardizer::fit(&reps_train.data, true);
        let rs_train = scaler.apply(&reps_train.data).stage(stage)?;
        let rs_test = scaler.apply(&reps_test.data).stage(stage)?;
        let res = residualize(&rs_train, &rs_test, &low_train.data, &low_test.data, alphas)
            .stage(stage)?;
        let ratio = res.train.norm() / rs_train.norm().max(f64::MIN_POSITIVE);
        log::info!(
            "{}: removed {feature} from layer {layer}; residual keeps {:.1}% of the training norm",
            index.participant_id,
            100.0 * ratio
        );
        for (stories, data) in [(&train, &res.train), (&test, &res.test)] {
            let mut start = 0;
            for s in stories.iter() {
                let dir = out.join(&s.story_id).join("features");
                create_dir(&dir)?;
                save_tensor(
                    layer_path(out, &s.story_id, layer),
                    &data.rows(start, s.n_trs).into_owned(),
                )
                .stage(stage)?;
                start += s.n_trs;
            }
        }
        report.insert(
            layer.clone(),
            ResidualLayer {
                alphas: res.alphas,
                train_norm_ratio: ratio,
            },
        );
    }
    for s in train.iter().chain(&test) {
        let src = y_path(paired, &s.story_id);
        let dst = y_path(out, &s.story_id);
        std::fs::copy(&src, &dst).map_err(|e| CliError::io(&dst, e))?;
    }
    let mut stories: Vec<PairedStory> = train.iter().chain(&test).map(|s| (*s).clone()).collect();
    stories.sort_by_key(|s| index.stories.iter().position(|o| o.story_id == s.story_id));
    PairedIndex {
        participant_id: index.participant_id.clone(),
        tr_s: index.tr_s,
        fir_delays_trs: index.fir_delays_trs.clone(),
        prescaled: true,
        layers: index.layers.clone(),
        lowlevel: vec![],
        stories,
    }
    .save(out)?;
    write_json(&out.join("residualize.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactRow {
    pub roi: String,
    pub feature: String,
    pub layer: String,
    pub b_o: f64,
    pub b_r: f64,
    pub r: Option<f64>,
}

impl ImpactRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.roi.clone(),
            self.feature.clone(),
            self.layer.clone(),
            self.b_o.to_string(),
            self.b_r.to_string(),
            fmt_opt(self.r),
        ]
    }
}

/// Per-layer impact rows for every ROI scored in both fits, followed by a
/// `mean` row per ROI: mean `B_o` and `B_r` over layers and the mean of the
/// per-layer `R` values that exist.
pub fn impact_rows(original: &FitSummary, residual: &FitSummary, feature: &str) -> Vec<ImpactRow> {
    let mut rows = Vec::new();
    let mut by_roi: BTreeMap<String, Vec<ImpactRow>> = BTreeMap::new();
    for layer in &original.layers {
        let (Some(o), Some(r)) = (original.per_layer.get(layer), residual.per_layer.get(layer))
        else {
            continue;
        };
        for (roi, so) in &o.rois {
            if let Some(sr) = r.rois.get(roi) {
                let row = ImpactRow {
                    roi: roi.clone(),
                    feature: feature.to_string(),
                    layer: layer.clone(),
                    b_o: so.b,
                    b_r: sr.b,
                    r: low_level_impact(so.b, sr.b),
                };
                by_roi.entry(roi.clone()).or_default().push(row.clone());
                rows.push(row);
            }
        }
    }
    for (roi, rs) in by_roi {
        let rvals: Vec<f64> = rs.iter().filter_map(|r| r.r).collect();
        rows.push(ImpactRow {
            roi,
            feature: feature.to_string(),
            layer: MEAN_LAYER.into(),
            b_o: mean(&rs.iter().map(|r| r.b_o).collect::<Vec<_>>()),
            b_r: mean(&rs.iter().map(|r| r.b_r).collect::<Vec<_>>()),
            r: (!rvals.is_empty()).then(|| mean(&rvals)),
        });
    }
    rows
}

pub fn write_impact_csv(path: &Path, rows: &[ImpactRow]) -> Result<()> {
    let records: Vec<Vec<String>> = rows.iter().map(ImpactRow::record).collect();
    write_csv(path, &IMPACT_HEADER, &records)
}
