//! Stimulus-to-TR alignment: sliding-window times, Lanczos downsampling to
//! the fMRI rate, and FIR delay expansion into a design matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{FeatureSeries, FmriRun, Matrix, DEFAULT_TR_S};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingConfig {
    pub window_len_s: f64,
    pub stride_s: f64,
    pub tr_s: f64,
    pub lanczos_lobes: usize,
    pub fir_delays_trs: Vec<usize>,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            window_len_s: 16.0,
            stride_s: 0.1,
            tr_s: DEFAULT_TR_S,
            lanczos_lobes: 3,
            fir_delays_trs: vec![1, 2, 3, 4, 5],
        }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_len_s > 0.0 && self.stride_s > 0.0 && self.tr_s > 0.0) {
            return Err(Error::input("window, stride and TR must be positive"));
        }
        if self.stride_s > self.window_len_s {
            return Err(Error::input(format!(
                "stride {} s exceeds window {} s",
                self.stride_s, self.window_len_s
            )));
        }
        if self.lanczos_lobes == 0 {
            return Err(Error::input("lanczos lobes must be at least 1"));
        }
        check_delays(&self.fir_delays_trs)
    }

    /// Anti-aliasing cutoff: the Nyquist frequency of the TR grid.
    pub fn cutoff_hz(&self) -> f64 {
        1.0 / (2.0 * self.tr_s)
    }
}

fn check_delays(delays: &[usize]) -> Result<()> {
    if delays.is_empty() {
        return Err(Error::input("FIR delay list is empty"));
    }
    if delays[0] == 0 || delays.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input(format!(
            "FIR delays must be positive and strictly increasing, got {delays:?}"
        )));
    }
    Ok(())
}

/// TR-aligned design matrix and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    /// `n_trs × (n_dims · n_delays)`, blocks ordered by increasing delay.
    pub x: Matrix,
    pub y: Matrix,
    pub tr_times_s: Vec<f64>,
    /// Downsampled features before delay expansion.
    pub features_tr: Matrix,
}

/// Right edges of the sliding analysis windows `[t - T, t]`.
pub fn window_times(audio_duration_s: f64, cfg: &PairingConfig) -> Result<Vec<f64>> {
    let (t, w) = (cfg.window_len_s, cfg.stride_s);
    if audio_duration_s < t {
        return Err(Error::input(format!(
            "audio of {audio_duration_s} s is shorter than the {t} s window"
        )));
    }
    // tolerate representation error in (d - T) / W
    let n = ((audio_duration_s - t) / w * (1.0 + 1e-12) + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| t + k as f64 * w).collect())
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Lanczos kernel with `a` lobes, zero outside `|x| < a`.
pub fn lanczos_kernel(x: f64, a: usize) -> f64 {
    let a = a as f64;
    if x.abs() >= a {
        0.0
    } else {
        sinc(x) * sinc(x / a)
    }
}

/// Resamples `series` at `target_times_s` with a Lanczos low-pass kernel
/// scaled to the TR Nyquist frequency. Kernel weights are renormalized per
/// target, so truncated kernels at the edges still preserve constants.
pub fn lanczos_downsample(
    series: &FeatureSeries,
    target_times_s: &[f64],
    cfg: &PairingConfig,
) -> Result<Matrix> {
    let a = cfg.lanczos_lobes;
    let f_cut = cfg.cutoff_hz();
    let radius = a as f64 / f_cut;
    let n = series.n_samples();
    let dims = series.n_dims();
    let rate = series.sample_rate_hz;

    let rows: Vec<Vec<f64>> = target_times_s
        .par_iter()
        .map(|&tau| {
            let lo = ((tau - radius - series.t0_s) * rate).ceil().max(0.0);
            let hi = ((tau + radius - series.t0_s) * rate).floor();
            let mut acc = vec![0.0; dims];
            let mut wsum = 0.0;
            if hi >= 0.0 && lo < n as f64 {
                let (lo, hi) = (lo as usize, (hi as usize).min(n - 1));
                for i in lo..=hi {
                    let w = lanczos_kernel(f_cut * (series.sample_time(i) - tau), a);
                    if w != 0.0 {
                        wsum += w;
                        for (d, acc) in acc.iter_mut().enumerate() {
                            *acc += w * series.data[(i, d)];
                        }
                    }
                }
            }
            if wsum.abs() < 1e-12 {
                return Err(Error::Coverage {
                    target_s: tau,
                    radius_s: radius,
                });
            }
            acc.iter_mut().for_each(|v| *v /= wsum);
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    Ok(Matrix::from_fn(target_times_s.len(), dims, |r, c| {
        rows[r][c]
    }))
}

/// Stacks delayed copies of `x_tr`: block `d` holds `x_tr` shifted down by
/// `delays[d]` rows with zeros in the first `delays[d]` rows.
pub fn fir_expand(x_tr: &Matrix, delays: &[usize]) -> Result<Matrix> {
    check_delays(delays)?;
    let (n, dims) = x_tr.shape();
    let max = *delays.last().unwrap();
    if max >= n {
        return Err(Error::input(format!(
            "largest delay {max} needs more than {n} TRs"
        )));
    }
    let mut out = Matrix::zeros(n, dims * delays.len());
    for (b, &d) in delays.iter().enumerate() {
        out.view_mut((d, b * dims), (n - d, dims))
            .copy_from(&x_tr.view((0, 0), (n - d, dims)));
    }
    Ok(out)
}

/// TR centers `(j + 0.5) · tr`.
pub fn tr_centers(n_trs: usize, tr_s: f64) -> Vec<f64> {
    (0..n_trs).map(|j| (j as f64 + 0.5) * tr_s).collect()
}

fn check_tr(run: &FmriRun, cfg: &PairingConfig) -> Result<()> {
    if (run.tr_s - cfg.tr_s).abs() > 1e-9 {
        return Err(Error::input(format!(
            "run TR {} s differs from configured TR {} s",
            run.tr_s, cfg.tr_s
        )));
    }
    Ok(())
}

pub fn build_paired(
    series: &FeatureSeries,
    run: &FmriRun,
    cfg: &PairingConfig,
) -> Result<PairedDataset> {
    cfg.validate()?;
    check_tr(run, cfg)?;
    let n_trs = run.n_trs();
    let needed = n_trs as f64 * cfg.tr_s - cfg.tr_s;
    if series.end_time() < needed {
        return Err(Error::input(format!(
            "features end at {:.3} s but the run needs {:.3} s",
            series.end_time(),
            needed
        )));
    }
    let tr_times_s = tr_centers(n_trs, cfg.tr_s);
    let features_tr = lanczos_downsample(series, &tr_times_s, cfg)?;
    paired_from_tr_features(features_tr, run, cfg)
}

/// Pairs features that already have one row per TR.
pub fn paired_from_tr_features(
    features_tr: Matrix,
    run: &FmriRun,
    cfg: &PairingConfig,
) -> Result<PairedDataset> {
    check_tr(run, cfg)?;
    if features_tr.nrows() != run.n_trs() {
        return Err(Error::input(format!(
            "{} feature rows for {} TRs",
            features_tr.nrows(),
            run.n_trs()
        )));
    }
    let x = fir_expand(&features_tr, &cfg.fir_delays_trs)?;
    Ok(PairedDataset {
        x,
        y: run.data.clone(),
        tr_times_s: tr_centers(run.n_trs(), cfg.tr_s),
        features_tr,
    })
}
