//! Two-class 2-D datasets in the unit square.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, RngStream, Split};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Gaussian clusters around (0.25, 0.25) and (0.75, 0.75).
    Blobs,
    /// Two interleaved half circles.
    Moons,
}

/// `n` points with labels assigned round-robin, clamped to `[0, 1]^2`.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64, split: Split) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config(format!("synthetic dataset needs n >= 2, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be finite and non-negative, got {noise}")));
    }
    let label = match split {
        Split::Train => "synthetic/train",
        Split::Test => "synthetic/test",
    };
    let mut rng = RngStream::new(seed, label).into_rng();
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let (cx, cy) = match kind {
            SyntheticKind::Blobs => {
                let c = if y == 0 { 0.25 } else { 0.75 };
                (c, c)
            }
            SyntheticKind::Moons => {
                let t = rng.random::<f64>() * PI;
                // Raw moons span x in [-1, 2] and y in [-0.5, 1]; map both into [0.1, 0.9].
                let (x, yv) = if y == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
                (0.1 + 0.8 * (x + 1.0) / 3.0, 0.1 + 0.8 * (yv + 0.5) / 1.5)
            }
        };
        let nx: f64 = StandardNormal.sample(&mut rng);
        let ny: f64 = StandardNormal.sample(&mut rng);
        data.push((cx + noise * nx).clamp(0.0, 1.0));
        data.push((cy + noise * ny).clamp(0.0, 1.0));
        labels.push(y);
    }
    let inputs = Tensor::new(vec![n, 2], data)?;
    let name = match kind {
        SyntheticKind::Blobs => "blobs",
        SyntheticKind::Moons => "moons",
    };
    Dataset::new(inputs, labels, vec![2], 2, split, format!("{name}(n={n}, noise={noise}, seed={seed})"))
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    x1: f64,
    x2: f64,
    label: usize,
}

/// Writes `x1,x2,label` rows.
pub fn write_synthetic_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if ds.features() != 2 {
        return Err(Error::Shape(format!("CSV export needs 2-D inputs, got {}", ds.features())));
    }
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for i in 0..ds.len() {
        let x = ds.input(i);
        w.serialize(CsvRow { x1: x[0], x2: x[1], label: ds.labels()[i] })?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

pub fn read_synthetic_csv(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for row in r.deserialize() {
        let row: CsvRow = row?;
        data.extend([row.x1, row.x2]);
        labels.push(row.label);
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Config("empty synthetic CSV".into()));
    }
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(
        Tensor::new(vec![n, 2], data)?,
        labels,
        vec![2],
        classes,
        split,
        format!("csv:{}", path.as_ref().display()),
    )
}
