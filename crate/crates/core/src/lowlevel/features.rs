use std::collections::HashMap;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{load_tensor, FeatureSeries, Matrix};

pub const POWER_BANDS: usize = 448;
pub const POWER_LOW_HZ: f64 = 25.0;
pub const POWER_BAND_HZ: f64 = 33.5;
pub const MIN_AUDIO_RATE_HZ: f64 = 30_000.0;
pub const DIPHONE_COUNT: usize = 858;
pub const ARTICULATION_DIMS: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowLevelKind {
    PowerSpectrum,
    Diphone,
    Triphone,
    Articulation,
    Custom,
}

impl LowLevelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LowLevelKind::PowerSpectrum => "power_spectrum",
            LowLevelKind::Diphone => "diphone",
            LowLevelKind::Triphone => "triphone",
            LowLevelKind::Articulation => "articulation",
            LowLevelKind::Custom => "custom",
        }
    }

    /// Parses a feature name; unknown names are `Custom`.
    pub fn from_name(name: &str) -> Self {
        match name {
            "power_spectrum" => LowLevelKind::PowerSpectrum,
            "diphone" => LowLevelKind::Diphone,
            "triphone" => LowLevelKind::Triphone,
            "articulation" => LowLevelKind::Articulation,
            _ => LowLevelKind::Custom,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowLevelFeature {
    pub kind: LowLevelKind,
    pub series: FeatureSeries,
}

fn is_binary(m: &Matrix) -> bool {
    m.iter().all(|&v| v == 0.0 || v == 1.0)
}

impl LowLevelFeature {
    pub fn new(kind: LowLevelKind, series: FeatureSeries) -> Result<Self> {
        let dims = series.n_dims();
        let need = |n: usize| -> Result<()> {
            if dims != n {
                return Err(Error::input(format!(
                    "{} features need {n} dimensions, got {dims}",
                    kind.as_str()
                )));
            }
            Ok(())
        };
        match kind {
            LowLevelKind::PowerSpectrum => {
                need(POWER_BANDS)?;
                if series.data.iter().any(|&v| v < 0.0) {
                    return Err(Error::input("power spectrum has negative entries"));
                }
            }
            LowLevelKind::Diphone => need(DIPHONE_COUNT)?,
            LowLevelKind::Articulation => need(ARTICULATION_DIMS)?,
            LowLevelKind::Triphone | LowLevelKind::Custom => {}
        }
        if matches!(kind, LowLevelKind::Diphone | LowLevelKind::Triphone)
            && !is_binary(&series.data)
        {
            return Err(Error::input(format!(
                "{} features must be 0/1",
                kind.as_str()
            )));
        }
        Ok(Self { kind, series })
    }
}

/// Band powers per TR-length segment: 448 contiguous 33.5 Hz bands from
/// 25 Hz, summing the Hann-windowed magnitude-squared spectrum over the FFT
/// bins whose centre frequency falls in each band. A trailing partial
/// segment is zero-padded.
pub fn power_spectrum_features(
    audio: &[f64],
    sample_rate_hz: f64,
    tr_s: f64,
) -> Result<LowLevelFeature> {
    if sample_rate_hz < MIN_AUDIO_RATE_HZ {
        return Err(Error::input(format!(
            "audio at {sample_rate_hz} Hz cannot resolve bands up to 15 kHz (need >= {MIN_AUDIO_RATE_HZ} Hz)"
        )));
    }
    if tr_s.is_nan() || tr_s <= 0.0 {
        return Err(Error::input("TR must be positive"));
    }
    if audio.is_empty() {
        return Err(Error::input("empty waveform"));
    }
    let seg = (tr_s * sample_rate_hz).round() as usize;
    let n_seg = audio.len().div_ceil(seg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg);
    let hann: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
        .collect();
    let band_of = |k: usize| -> Option<usize> {
        let f = k as f64 * sample_rate_hz / seg as f64;
        let b = ((f - POWER_LOW_HZ) / POWER_BAND_HZ).floor();
        (f >= POWER_LOW_HZ && b < POWER_BANDS as f64).then_some(b as usize)
    };

    let mut out = Matrix::zeros(n_seg, POWER_BANDS);
    let mut buf = vec![Complex::new(0.0, 0.0); seg];
    for s in 0..n_seg {
        for (i, c) in buf.iter_mut().enumerate() {
            let x = audio.get(s * seg + i).copied().unwrap_or(0.0);
            *c = Complex::new(x * hann[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().enumerate().take(seg / 2 + 1) {
            if let Some(b) = band_of(k) {
                out[(s, b)] += c.norm_sqr() / seg as f64;
            }
        }
    }
    let series = FeatureSeries::new(out, 1.0 / tr_s, tr_s / 2.0, "power_spectrum")?;
    LowLevelFeature::new(LowLevelKind::PowerSpectrum, series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneInterval {
    pub phone: String,
    pub start: f64,
    pub end: f64,
}

pub fn load_phone_alignments(path: impl AsRef<Path>) -> Result<Vec<PhoneInterval>> {
    crate::tensorio::read_json(path.as_ref())
}

/// Column assignment for phone n-grams.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneVocabulary {
    ngrams: Vec<Vec<String>>,
    index: HashMap<Vec<String>, usize>,
    /// Unknown n-grams map to one extra trailing column.
    pub oov: bool,
}

impl PhoneVocabulary {
    pub fn from_list(ngrams: Vec<Vec<String>>, oov: bool) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, g) in ngrams.iter().enumerate() {
            if index.insert(g.clone(), i).is_some() {
                return Err(Error::input(format!(
                    "duplicate n-gram {g:?} in vocabulary"
                )));
            }
        }
        Ok(Self { ngrams, index, oov })
    }

    /// Observed n-grams in first-occurrence order.
    pub fn from_alignments(alignments: &[PhoneInterval], order: usize) -> Result<Self> {
        let mut seen = Vec::new();
        let mut index = HashMap::new();
        for w in dedup(alignments)?.windows(order) {
            let g: Vec<String> = w.iter().map(|p| p.phone.clone()).collect();
            if !index.contains_key(&g) {
                index.insert(g.clone(), seen.len());
                seen.push(g);
            }
        }
        Ok(Self {
            ngrams: seen,
            index,
            oov: false,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.ngrams.len() + usize::from(self.oov)
    }

    pub fn ngrams(&self) -> &[Vec<String>] {
        &self.ngrams
    }

    fn column(&self, g: &[String]) -> Option<usize> {
        self.index.get(g).copied().or(if self.oov {
            Some(self.ngrams.len())
        } else {
            None
        })
    }
}

fn dedup(alignments: &[PhoneInterval]) -> Result<Vec<&PhoneInterval>> {
    if let Some(w) = alignments.windows(2).find(|w| w[1].start < w[0].start) {
        return Err(Error::input(format!(
            "phone alignments not sorted: {:?} at {} follows {:?} at {}",
            w[1].phone, w[1].start, w[0].phone, w[0].start
        )));
    }
    let mut out: Vec<&PhoneInterval> = Vec::with_capacity(alignments.len());
    for p in alignments {
        if p.end.is_nan() || p.end < p.start {
            return Err(Error::input(format!(
                "phone {:?} ends before it starts",
                p.phone
            )));
        }
        if out
            .iter()
            .rev()
            .take_while(|q| q.start == p.start)
            .any(|q| *q == p)
        {
            continue;
        }
        out.push(p);
    }
    Ok(out)
}

/// Binary presence of phone n-grams per TR segment `[j·tr, (j+1)·tr)`. An
/// n-gram spans from its first phone's start to its last phone's end and is
/// present in every segment that span overlaps.
pub fn phone_onehot_features(
    alignments: &[PhoneInterval],
    order: usize,
    vocabulary: &PhoneVocabulary,
    tr_s: f64,
    n_segments: Option<usize>,
) -> Result<LowLevelFeature> {
    if !(2..=3).contains(&order) {
        return Err(Error::input(format!(
            "n-gram order must be 2 or 3, got {order}"
        )));
    }
    if tr_s.is_nan() || tr_s <= 0.0 {
        return Err(Error::input("TR must be positive"));
    }
    let phones = dedup(alignments)?;
    let max_end = phones.iter().map(|p| p.end).fold(0.0, f64::max);
    let n_rows = n_segments.unwrap_or_else(|| ((max_end / tr_s).ceil() as usize).max(1));
    let cols = vocabulary.n_columns();
    if cols == 0 {
        return Err(Error::input("empty phone vocabulary"));
    }
    let mut out = Matrix::zeros(n_rows, cols);
    for w in phones.windows(order) {
        let g: Vec<String> = w.iter().map(|p| p.phone.clone()).collect();
        let col = vocabulary
            .column(&g)
            .ok_or_else(|| Error::input(format!("n-gram {g:?} not in vocabulary")))?;
        let (start, end) = (w[0].start, w[order - 1].end);
        let first = (start / tr_s).floor().max(0.0) as usize;
        for j in first..n_rows {
            let (lo, hi) = (j as f64 * tr_s, (j + 1) as f64 * tr_s);
            if lo >= end {
                break;
            }
            if start < hi && end > lo {
                out[(j, col)] = 1.0;
            }
        }
    }
    let kind = match order {
        2 if cols == DIPHONE_COUNT => LowLevelKind::Diphone,
        3 => LowLevelKind::Triphone,
        _ => LowLevelKind::Custom,
    };
    let name = if order == 2 { "diphone" } else { "triphone" };
    let series = FeatureSeries::new(out, 1.0 / tr_s, tr_s / 2.0, name)?;
    LowLevelFeature::new(kind, series)
}

/// Loads precomputed TR-aligned articulation features (22 columns).
pub fn load_articulation(path: impl AsRef<Path>, tr_s: f64) -> Result<LowLevelFeature> {
    let data = load_tensor(path)?;
    let series = FeatureSeries::new(data, 1.0 / tr_s, tr_s / 2.0, "articulation")?;
    LowLevelFeature::new(LowLevelKind::Articulation, series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ph(p: &str, s: f64, e: f64) -> PhoneInterval {
        PhoneInterval {
            phone: p.into(),
            start: s,
            end: e,
        }
    }

    fn sv(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn band_layout_reaches_15khz() {
        let top = POWER_LOW_HZ + POWER_BANDS as f64 * POWER_BAND_HZ;
        assert!((top - 15_033.0).abs() < 1e-9);
    }

    #[test]
    fn low_rate_audio_rejected() {
        assert!(matches!(
            power_spectrum_features(&[0.0; 1000], 16_000.0, 2.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn silence_is_zero() {
        let f = power_spectrum_features(&vec![0.0; 32_000 * 4], 32_000.0, 2.0).unwrap();
        assert_eq!(f.series.n_samples(), 2);
        assert_eq!(f.series.n_dims(), POWER_BANDS);
        assert!(f.series.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diphones_in_one_segment() {
        let al = [ph("d", 0.1, 0.3), ph("a", 0.3, 0.6), ph("i", 0.6, 0.9)];
        let vocab = PhoneVocabulary::from_list(
            vec![
                sv(&["d", "a"]),
                sv(&["a", "i"]),
                sv(&["i", "d"]),
                sv(&["a", "d"]),
            ],
            false,
        )
        .unwrap();
        let f = phone_onehot_features(&al, 2, &vocab, 2.0, Some(2)).unwrap();
        assert_eq!(f.kind, LowLevelKind::Custom);
        assert_eq!(
            f.series.data.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 1.0, 0.0, 0.0]
        );
        assert!(f.series.data.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ngram_spanning_segments() {
        let al = [ph("a", 1.5, 1.9), ph("b", 1.9, 2.5)];
        let vocab = PhoneVocabulary::from_alignments(&al, 2).unwrap();
        let f = phone_onehot_features(&al, 2, &vocab, 2.0, None).unwrap();
        assert_eq!(f.series.n_samples(), 2);
        assert_eq!(f.series.data[(0, 0)], 1.0);
        assert_eq!(f.series.data[(1, 0)], 1.0);
    }

    #[test]
    fn unsorted_and_duplicates() {
        let bad = [ph("a", 1.0, 1.2), ph("b", 0.5, 0.9)];
        let vocab = PhoneVocabulary::from_list(vec![sv(&["a", "b"])], true).unwrap();
        assert!(matches!(
            phone_onehot_features(&bad, 2, &vocab, 2.0, None),
            Err(Error::Input(_))
        ));
        let dup = [ph("a", 0.0, 0.2), ph("a", 0.0, 0.2), ph("b", 0.2, 0.4)];
        let v = PhoneVocabulary::from_alignments(&dup, 2).unwrap();
        assert_eq!(v.ngrams(), &[sv(&["a", "b"])]);
    }

    #[test]
    fn oov_column() {
        let al = [ph("x", 0.0, 0.1), ph("y", 0.1, 0.2), ph("z", 0.2, 0.3)];
        let closed = PhoneVocabulary::from_list(vec![sv(&["x", "y"])], false).unwrap();
        assert!(phone_onehot_features(&al, 2, &closed, 2.0, None).is_err());
        let open = PhoneVocabulary::from_list(vec![sv(&["x", "y"])], true).unwrap();
        let f = phone_onehot_features(&al, 2, &open, 2.0, None).unwrap();
        assert_eq!(
            f.series.data.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn triphones() {
        let al = [
            ph("s", 0.0, 0.1),
            ph("t", 0.1, 0.2),
            ph("o", 0.2, 2.3),
            ph("p", 2.3, 2.4),
        ];
        let vocab = PhoneVocabulary::from_alignments(&al, 3).unwrap();
        let f = phone_onehot_features(&al, 3, &vocab, 2.0, None).unwrap();
        assert_eq!(f.kind, LowLevelKind::Triphone);
        assert_eq!(f.series.n_dims(), 2);
        assert_eq!(
            f.series.data.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 1.0]
        );
        assert_eq!(
            f.series.data.row(1).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn kind_invariants() {
        let s = |d: usize| FeatureSeries::new(Matrix::zeros(3, d), 0.5, 1.0, "x").unwrap();
        assert!(LowLevelFeature::new(LowLevelKind::Articulation, s(22)).is_ok());
        assert!(LowLevelFeature::new(LowLevelKind::Articulation, s(21)).is_err());
        assert!(LowLevelFeature::new(LowLevelKind::Diphone, s(858)).is_ok());
        assert!(LowLevelFeature::new(LowLevelKind::PowerSpectrum, s(447)).is_err());
        let mut neg = s(448);
        neg.data[(0, 0)] = -1.0;
        assert!(LowLevelFeature::new(LowLevelKind::PowerSpectrum, neg).is_err());
    }
}
