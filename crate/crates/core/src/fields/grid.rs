//! Sampled realizations on a regular grid and their on-disk format.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::Rectangle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Gaussian,
    SubGaussian,
    Harmonisable,
    Concatenated,
}

impl FieldKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FieldKind::Gaussian => "gaussian",
            FieldKind::SubGaussian => "sub_gaussian",
            FieldKind::Harmonisable => "harmonisable",
            FieldKind::Concatenated => "concatenated",
        }
    }
}

/// Everything needed to reproduce a grid or its conditional Gaussian law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: FieldKind,
    pub seed: u64,
    pub stream: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// The positive stable mixing variable of a sub-Gaussian draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_prime: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    /// Frequencies, one row of length N per (k, ℓ) pair, k major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omegas: Option<Vec<Vec<f64>>>,
    /// Free-form model parameters (variance, length scale, measure...).
    #[serde(default)]
    pub params: serde_json::Value,
}

impl Provenance {
    pub fn new(kind: FieldKind, seed: u64, stream: u64) -> Self {
        Provenance {
            kind,
            seed,
            stream,
            alpha: None,
            mixing: None,
            truncation: None,
            n_prime: None,
            gammas: None,
            omegas: None,
            params: serde_json::Value::Null,
        }
    }
}

/// A field sampled at the nodes t_i = k·T_i/(n_i − 1), stored row-major
/// (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    rectangle: Rectangle,
    resolution: Vec<usize>,
    values: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dimensions: Vec<usize>,
    rectangle: Vec<f64>,
    kind: FieldKind,
    seed: u64,
    provenance: Provenance,
}

/// Checks a resolution against a rectangle: one count per axis, each ≥ 2.
pub fn check_resolution(rectangle: &Rectangle, resolution: &[usize]) -> Result<()> {
    if resolution.len() != rectangle.dim() {
        return Err(domain!(
            "resolution has {} axes, rectangle has {}",
            resolution.len(),
            rectangle.dim()
        ));
    }
    if resolution.iter().any(|&n| n < 2) {
        return Err(domain!("every axis needs at least 2 grid points, got {resolution:?}"));
    }
    Ok(())
}

impl FieldGrid {
    pub fn new(
        rectangle: Rectangle,
        resolution: Vec<usize>,
        values: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        check_resolution(&rectangle, &resolution)?;
        let n: usize = resolution.iter().product();
        if values.len() != n {
            return Err(domain!("{} values for a grid of {n} nodes", values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite field value at node {i}")));
        }
        Ok(FieldGrid { rectangle, resolution, values, provenance })
    }

    pub fn rectangle(&self) -> &Rectangle {
        &self.rectangle
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    /// Node spacing per axis.
    pub fn spacing(&self) -> Vec<f64> {
        spacing(&self.rectangle, &self.resolution)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Writes the header line and the little-endian payload.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            dimensions: self.resolution.clone(),
            rectangle: self.rectangle.sides().to_vec(),
            kind: self.provenance.kind,
            seed: self.provenance.seed,
            provenance: self.provenance.clone(),
        };
        let line = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Format("missing header line".into()));
        }
        let header: Header =
            serde_json::from_slice(&line).map_err(|e| Error::Format(format!("header: {e}")))?;
        let rectangle = Rectangle::new(header.rectangle).map_err(|e| Error::Format(e.to_string()))?;
        let n: usize = header.dimensions.iter().product();
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != n * 8 {
            return Err(Error::Format(format!(
                "payload has {} bytes, header promises {n} values",
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        FieldGrid::new(rectangle, header.dimensions, values, header.provenance)
    }
}

pub(crate) fn spacing(rectangle: &Rectangle, resolution: &[usize]) -> Vec<f64> {
    rectangle.sides().iter().zip(resolution).map(|(t, &n)| t / (n - 1) as f64).collect()
}
