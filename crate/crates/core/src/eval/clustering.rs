//! Cluster quality of sentence embeddings under sexagenary labels.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{CycleIndex, GregorianYear};
use crate::error::{Error, Result};
use crate::model::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringMetrics {
    /// Mean silhouette with cosine distance; points alone in their class score 0.
    pub silhouette: f64,
    /// Mean cosine over same-class pairs, if any.
    pub intra_mean: Option<f64>,
    /// Mean cosine over cross-class pairs.
    pub inter_mean: Option<f64>,
}

fn unit_rows(embeddings: &[(Vec<f64>, CycleIndex)]) -> Result<Vec<Vec<f64>>> {
    embeddings
        .iter()
        .map(|(v, _)| {
            let n = norm(v);
            if n == 0.0 {
                return Err(Error::ZeroVector);
            }
            Ok(v.iter().map(|x| x / n).collect())
        })
        .collect()
}

pub fn clustering_metrics(embeddings: &[(Vec<f64>, CycleIndex)]) -> Result<ClusteringMetrics> {
    let mut members: BTreeMap<CycleIndex, Vec<usize>> = BTreeMap::new();
    for (i, (_, k)) in embeddings.iter().enumerate() {
        members.entry(*k).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::DegeneratePartition);
    }
    if let Some(d) = embeddings.first().map(|e| e.0.len()) {
        if embeddings.iter().any(|e| e.0.len() != d) {
            return Err(Error::DimensionMismatch("embeddings differ in length".into()));
        }
    }
    let units = unit_rows(embeddings)?;
    let cos = |i: usize, j: usize| dot(&units[i], &units[j]).clamp(-1.0, 1.0);

    let scores: Vec<f64> = (0..embeddings.len())
        .into_par_iter()
        .map(|i| {
            let own = embeddings[i].1;
            if members[&own].len() < 2 {
                return 0.0;
            }
            let mut a = 0.0;
            let mut b = f64::INFINITY;
            for (&k, idx) in &members {
                let others = idx.iter().filter(|&&j| j != i);
                let (sum, n) = others.fold((0.0, 0usize), |(s, n), &j| (s + 1.0 - cos(i, j), n + 1));
                let mean = sum / n as f64;
                if k == own {
                    a = mean;
                } else {
                    b = b.min(mean);
                }
            }
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    let silhouette = scores.iter().sum::<f64>() / scores.len() as f64;

    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            if embeddings[i].1 == embeddings[j].1 {
                intra += cos(i, j);
                ni += 1;
            } else {
                inter += cos(i, j);
                nx += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    Ok(ClusteringMetrics {
        silhouette,
        intra_mean: mean(intra, ni),
        inter_mean: mean(inter, nx),
    })
}

/// CSV rows `year,class,e0,…,e{d-1}` for plotting with external tools.
pub fn write_embedding_csv<W: Write>(
    rows: &[(GregorianYear, CycleIndex, Vec<f64>)],
    mut w: W,
) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.2.len());
    let cols: Vec<String> = (0..d).map(|j| format!("e{j}")).collect();
    if cols.is_empty() {
        writeln!(w, "year,class")?;
    } else {
        writeln!(w, "year,class,{}", cols.join(","))?;
    }
    for (y, k, v) in rows {
        if v.len() != d {
            return Err(Error::DimensionMismatch("embeddings differ in length".into()));
        }
        write!(w, "{},{}", y.value(), k.value())?;
        for x in v {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
