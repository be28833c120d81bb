//! Semantic-phonetic preference of word representations.
//!
//! For each word, compare its distance to a semantic neighbour (e.g. a
//! synonym) with its distance to a phonetic neighbour (e.g. a homophone).
//! `d = mean(dist(word, semantic) − dist(word, phonetic))`; negative `d`
//! means semantic neighbours sit closer than phonetic ones.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WordTriple {
    pub word: String,
    pub layer: usize,
    pub word_vec: Vec<f64>,
    pub semantic_vec: Vec<f64>,
    pub phonetic_vec: Vec<f64>,
}

impl WordTriple {
    fn validate(&self) -> Result<()> {
        let n = self.word_vec.len();
        if n == 0 || self.semantic_vec.len() != n || self.phonetic_vec.len() != n {
            return Err(Error::input(format!(
                "triple for {:?} has mismatched dimensions",
                self.word
            )));
        }
        if self
            .word_vec
            .iter()
            .chain(&self.semantic_vec)
            .chain(&self.phonetic_vec)
            .any(|v| !v.is_finite())
        {
            return Err(Error::input(format!(
                "triple for {:?} has non-finite values",
                self.word
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `1 − u·v / (‖u‖‖v‖)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::input("vectors differ in length"));
    }
    let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::input("cosine distance of a zero vector"));
    }
    Ok((1.0 - dot(u, v) / (nu * nv)).clamp(0.0, 2.0))
}

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::input("vectors differ in length"));
    }
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

impl Metric {
    pub fn distance(self, u: &[f64], v: &[f64]) -> Result<f64> {
        match self {
            Metric::Cosine => cosine_distance(u, v),
            Metric::Euclidean => euclidean_distance(u, v),
        }
    }
}

pub fn preference_d_with(triples: &[WordTriple], metric: Metric) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::input("no word triples"));
    }
    let mut acc = 0.0;
    for t in triples {
        t.validate()?;
        acc += metric.distance(&t.word_vec, &t.semantic_vec)?
            - metric.distance(&t.word_vec, &t.phonetic_vec)?;
    }
    Ok(acc / triples.len() as f64)
}

pub fn preference_d(triples: &[WordTriple]) -> Result<f64> {
    preference_d_with(triples, Metric::Cosine)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerPreference {
    pub layer: usize,
    pub d: f64,
    pub n_triples: usize,
}

/// `d` for each layer present, in layer order.
pub fn preference_by_layer(triples: &[WordTriple], metric: Metric) -> Result<Vec<LayerPreference>> {
    if triples.is_empty() {
        return Err(Error::input("no word triples"));
    }
    let mut by_layer: BTreeMap<usize, Vec<WordTriple>> = BTreeMap::new();
    for t in triples {
        by_layer.entry(t.layer).or_default().push(t.clone());
    }
    by_layer
        .into_iter()
        .map(|(layer, ts)| {
            Ok(LayerPreference {
                layer,
                d: preference_d_with(&ts, metric)?,
                n_triples: ts.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(w: &[f64], s: &[f64], p: &[f64], layer: usize) -> WordTriple {
        WordTriple {
            word: "w".into(),
            layer,
            word_vec: w.to_vec(),
            semantic_vec: s.to_vec(),
            phonetic_vec: p.to_vec(),
        }
    }

    #[test]
    fn cosine_reference_points() {
        assert!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap().abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, -2.0], &[-1.0, 2.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn single_triple() {
        // cos(word, sem) = 0.5, cos(word, phon) = 0.7
        let w = [1.0, 0.0];
        let s = [0.5, (0.75f64).sqrt()];
        let p = [0.7, (1.0 - 0.49f64).sqrt()];
        let d = preference_d(&[triple(&w, &s, &p, 0)]).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
    }

    #[test]
    fn identical_neighbours() {
        let t = triple(&[1.0, 2.0, 3.0], &[0.3, -1.0, 2.0], &[0.3, -1.0, 2.0], 0);
        assert_eq!(preference_d(&[t]).unwrap(), 0.0);
    }

    #[test]
    fn empty_and_mismatched() {
        assert!(preference_d(&[]).is_err());
        assert!(preference_d(&[triple(&[1.0], &[1.0, 2.0], &[1.0], 0)]).is_err());
    }

    #[test]
    fn per_layer_grouping() {
        let a = triple(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 2);
        let b = triple(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], 0);
        let out = preference_by_layer(&[a.clone(), b, a], Metric::Cosine).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].layer, out[0].n_triples), (0, 1));
        assert!((out[0].d - 1.0).abs() < 1e-15);
        assert_eq!((out[1].layer, out[1].n_triples), (2, 2));
        assert!((out[1].d + 1.0).abs() < 1e-15);
    }
}
