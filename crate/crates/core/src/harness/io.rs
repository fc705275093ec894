//! Output formats: trajectory JSONL, ensemble summary CSV and velocity
//! snapshots.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{Spin, UnitVector, Vec3};
use crate::pdmp::{Checkpoint, EnsembleSummary, Estimate};
use crate::stokes::SingularitySet;

/// One JSONL line: `{"t":…, "xi":[x0,y0,z0,x1,…], "sigma":[±1,…]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub t: f64,
    pub xi: Vec<f64>,
    pub sigma: Vec<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl CheckpointRecord {
    pub fn new(c: &Checkpoint, config_hash: Option<&str>) -> Self {
        CheckpointRecord {
            t: c.t,
            xi: c.orientations.iter().flat_map(|o| o.to_array()).collect(),
            sigma: c.spins.iter().map(|s| s.value() as i8).collect(),
            config_hash: config_hash.map(str::to_owned),
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        if self.xi.len() != 3 * self.sigma.len() {
            return Err(crate::Error::SizeMismatch("xi must hold three entries per spin".into()));
        }
        let orientations = self
            .xi
            .chunks_exact(3)
            .map(|c| UnitVector::try_new(Vec3::new(c[0], c[1], c[2])))
            .collect::<Result<_>>()?;
        let spins = self
            .sigma
            .iter()
            .map(|&s| match s {
                1 => Ok(Spin::Up),
                -1 => Ok(Spin::Down),
                other => Err(crate::Error::Parameter(format!("spin must be ±1, got {other}"))),
            })
            .collect::<Result<_>>()?;
        Ok(Checkpoint { t: self.t, orientations, spins })
    }
}

pub fn write_trajectory_jsonl<W: Write>(mut w: W, checkpoints: &[Checkpoint], config_hash: Option<&str>) -> Result<()> {
    for c in checkpoints {
        serde_json::to_writer(&mut w, &CheckpointRecord::new(c, config_hash))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_jsonl<R: BufRead>(r: R) -> Result<Vec<Checkpoint>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CheckpointRecord = serde_json::from_str(&line)?;
        out.push(rec.to_checkpoint()?);
    }
    Ok(out)
}

/// Row of the ensemble summary CSV. `index` is a particle index or a pair
/// written `i-j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub t: f64,
    pub statistic: String,
    pub index: String,
    pub value: f64,
    pub stderr: f64,
    pub config_hash: String,
}

pub fn summary_rows(summary: &EnsembleSummary, config_hash: &str) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    let mut push = |t: f64, statistic: &str, index: String, e: Estimate| {
        rows.push(SummaryRow { t, statistic: statistic.into(), index, value: e.mean, stderr: e.stderr, config_hash: config_hash.into() });
    };
    for s in &summary.slices {
        for (i, e) in s.spin_mean.iter().enumerate() {
            push(s.t, "spin_mean", i.to_string(), *e);
        }
        for (i, e) in s.p_up.iter().enumerate() {
            push(s.t, "p_up", i.to_string(), *e);
        }
        for (i, e) in s.orientation_e3.iter().enumerate() {
            push(s.t, "xi_e3", i.to_string(), *e);
        }
        for (&(i, j), e) in summary.pairs.iter().zip(&s.pair_product) {
            push(s.t, "pair_product", format!("{i}-{j}"), *e);
        }
        for (&(i, j), e) in summary.pairs.iter().zip(&s.covariance) {
            push(s.t, "covariance", format!("{i}-{j}"), *e);
        }
        for (i, d) in s.discrepancy.iter().enumerate() {
            push(s.t, "discrepancy", i.to_string(), Estimate { mean: *d, stderr: f64::NAN });
        }
    }
    rows
}

pub fn write_csv_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocitySample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub ux: f64,
    pub uy: f64,
    pub uz: f64,
}

/// Regular `n³` grid of probe points spanning [lo, hi].
pub fn probe_grid(lo: &Vec3, hi: &Vec3, n: usize) -> Vec<Vec3> {
    let coord = |a: usize, k: usize| {
        if n == 1 {
            (lo[a] + hi[a]) / 2.0
        } else {
            lo[a] + (hi[a] - lo[a]) * k as f64 / (n - 1) as f64
        }
    };
    let mut pts = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                pts.push(Vec3::new(coord(0, i), coord(1, j), coord(2, k)));
            }
        }
    }
    pts
}

pub fn velocity_snapshot(set: &SingularitySet, probes: &[Vec3]) -> Vec<VelocitySample> {
    use rayon::prelude::*;
    probes
        .par_iter()
        .map(|p| {
            let u = set.velocity(p);
            VelocitySample { x: p.x, y: p.y, z: p.z, ux: u.x, uy: u.y, uz: u.z }
        })
        .collect()
}
