//! Spiral coordinates of a year and their sinusoidal temporal encoding.
//!
//! A year sits on an Archimedean spiral: the angle is fixed by its cycle
//! index (6° per term) and the radius grows by `beta` per completed cycle,
//! so years sharing a term share an angle but not a radius.
//!
//! Within a cycle the radius advances by `beta / 60` per year, with Guihai
//! (index 0) counted as the sixtieth and last step of its cycle. Far enough
//! before the anchor the linear radius would reach zero, so once it falls to
//! `alpha / 2` the spiral continues as `r0² / (r0 − beta·(u − u0))`, which
//! joins smoothly, stays positive, and keeps increasing with the year.

use serde::{Deserialize, Serialize};

use crate::calendar::{epoch_index, to_cycle_index, GregorianYear};
use crate::error::{Error, Result};

pub const DEGREES_PER_TERM: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    /// Add the encoding to every row of the input embedding.
    AllPositions,
    /// Add the encoding only to tokens that overlap a year mention.
    MentionPositions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub alpha: f64,
    pub beta: f64,
    pub dim: usize,
    pub wavelength_base: f64,
    pub injection: InjectionMode,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            dim: 64,
            wavelength_base: 10_000.0,
            injection: InjectionMode::AllPositions,
        }
    }
}

impl EncodingConfig {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidEncoding(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidEncoding(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.dim < 2 || self.dim % 2 != 0 {
            return Err(Error::InvalidEncoding(format!(
                "dim must be even and >= 2, got {}",
                self.dim
            )));
        }
        if !(self.wavelength_base > 0.0 && self.wavelength_base.is_finite()) {
            return Err(Error::InvalidEncoding(format!(
                "wavelength_base must be > 0, got {}",
                self.wavelength_base
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarTemporalCoordinate {
    pub theta_degrees: f64,
    pub radius: f64,
    pub epoch: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianTemporalCoordinate {
    pub x: f64,
    pub y: f64,
}

/// Interleaved sine/cosine features: entry `2j` is a sine and `2j + 1` the
/// cosine of the same argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalEncodingVector {
    pub values: Vec<f64>,
}

impl TemporalEncodingVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn to_polar(year: GregorianYear, cfg: &EncodingConfig) -> Result<PolarTemporalCoordinate> {
    cfg.validate()?;
    let idx = to_cycle_index(year).value();
    let epoch = epoch_index(year);
    let step = if idx == 0 { 60.0 } else { idx as f64 };
    Ok(PolarTemporalCoordinate {
        theta_degrees: DEGREES_PER_TERM * idx as f64,
        radius: spiral_radius(epoch as f64 + step / 60.0, cfg.alpha, cfg.beta),
        epoch,
    })
}

/// Radius at `u` cycles past the anchor.
fn spiral_radius(u: f64, alpha: f64, beta: f64) -> f64 {
    let linear = alpha + beta * u;
    let r0 = 0.5 * alpha;
    if beta == 0.0 || linear >= r0 {
        return linear;
    }
    let u0 = (r0 - alpha) / beta;
    r0 * r0 / (r0 - beta * (u - u0))
}

pub fn to_cartesian(p: &PolarTemporalCoordinate) -> CartesianTemporalCoordinate {
    let (sin, cos) = p.theta_degrees.to_radians().sin_cos();
    CartesianTemporalCoordinate {
        x: p.radius * cos,
        y: p.radius * sin,
    }
}

/// Interleaved `sin(s / base^(2j/d))`, `cos(s / base^(2j/d))` for `j < d/2`.
pub fn sinusoid(s: f64, dim: usize, base: f64) -> Vec<f64> {
    let mut values = vec![0.0; dim];
    for j in 0..dim / 2 {
        let wavelength = base.powf((2 * j) as f64 / dim as f64);
        let (sin, cos) = (s / wavelength).sin_cos();
        values[2 * j] = sin;
        values[2 * j + 1] = cos;
    }
    values
}

pub fn temporal_encoding(s: f64, cfg: &EncodingConfig) -> Result<TemporalEncodingVector> {
    cfg.validate()?;
    Ok(TemporalEncodingVector {
        values: sinusoid(s, cfg.dim, cfg.wavelength_base),
    })
}

/// `(TE(x), TE(y))` for the Cartesian position of `year` on the spiral.
pub fn encode_year(
    year: GregorianYear,
    cfg: &EncodingConfig,
) -> Result<(TemporalEncodingVector, TemporalEncodingVector)> {
    let c = to_cartesian(&to_polar(year, cfg)?);
    Ok((temporal_encoding(c.x, cfg)?, temporal_encoding(c.y, cfg)?))
}
