//! Effective antenna gain patterns.
//!
//! Three patterns are supported: the 3GPP-style directional sector pattern
//! (normalized so its spherical average is one), a half-space isotropic
//! pattern, and a plain isotropic element. All public gain functions return
//! linear power gains; dBi only appears in [`unnormalized_gain_dbi`].

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::wrap_to_pi;

/// Relative change allowed between a quadrature estimate and the one at twice
/// the resolution.
pub const QUADRATURE_RTOL: f64 = 1e-3;

/// Uniform product grid over azimuth `[0, 2π)` and elevation `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureGrid {
    pub azimuth_nodes: usize,
    pub elevation_nodes: usize,
}

impl QuadratureGrid {
    pub const MIN: QuadratureGrid = QuadratureGrid {
        azimuth_nodes: 360,
        elevation_nodes: 180,
    };

    pub const DEFAULT: QuadratureGrid = QuadratureGrid {
        azimuth_nodes: 720,
        elevation_nodes: 360,
    };

    pub fn doubled(self) -> QuadratureGrid {
        QuadratureGrid {
            azimuth_nodes: self.azimuth_nodes * 2,
            elevation_nodes: self.elevation_nodes * 2,
        }
    }
}

/// Spherical average `(1/4π) ∬ f(φ, θ) sin θ dθ dφ`.
///
/// Azimuth uses the midpoint rule; each elevation band is weighted by the
/// exact integral of `sin θ` over the band, so constants integrate exactly.
pub fn spherical_average<F>(grid: QuadratureGrid, f: F) -> f64
where
    F: Fn(f64, f64) -> f64,
{
    let d_az = TAU / grid.azimuth_nodes as f64;
    let d_el = PI / grid.elevation_nodes as f64;
    let mut total = 0.0;
    for j in 0..grid.elevation_nodes {
        let lo = j as f64 * d_el;
        let hi = lo + d_el;
        let weight = lo.cos() - hi.cos();
        let el = lo + d_el / 2.0;
        let mut row = 0.0;
        for i in 0..grid.azimuth_nodes {
            row += f((i as f64 + 0.5) * d_az, el);
        }
        total += weight * row;
    }
    total * d_az / (4.0 * PI)
}

/// Spherical average at `grid`, checked against twice the resolution.
pub fn converged_spherical_average<F>(grid: QuadratureGrid, f: F) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    if grid.azimuth_nodes < QuadratureGrid::MIN.azimuth_nodes
        || grid.elevation_nodes < QuadratureGrid::MIN.elevation_nodes
    {
        return Err(Error::param(
            "quadrature_resolution",
            format!(
                "need at least {}x{} nodes",
                QuadratureGrid::MIN.azimuth_nodes,
                QuadratureGrid::MIN.elevation_nodes
            ),
        ));
    }
    let coarse = spherical_average(grid, &f);
    let fine = spherical_average(grid.doubled(), &f);
    let rel = ((fine - coarse) / fine).abs();
    if !coarse.is_finite() || !(rel < QUADRATURE_RTOL) {
        return Err(Error::Numerical(format!(
            "spherical quadrature did not converge: {coarse} vs {fine} at double resolution"
        )));
    }
    Ok(coarse)
}

/// Raw parameters of the directional sector pattern, angles in radians and
/// levels in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorPattern {
    pub max_gain_dbi: f64,
    pub beamwidth_az: f64,
    pub beamwidth_el: f64,
    pub sidelobe_h: f64,
    pub sidelobe_v: f64,
    pub downtilt: f64,
}

impl Default for SectorPattern {
    fn default() -> Self {
        SectorPattern {
            max_gain_dbi: 14.0,
            beamwidth_az: 65f64.to_radians(),
            beamwidth_el: 65f64.to_radians(),
            sidelobe_h: 20.0,
            sidelobe_v: 20.0,
            downtilt: 100f64.to_radians(),
        }
    }
}

impl SectorPattern {
    fn validate(&self) -> Result<()> {
        let checks = [
            ("beamwidth_az", self.beamwidth_az),
            ("beamwidth_el", self.beamwidth_el),
            ("sidelobe_h", self.sidelobe_h),
            ("sidelobe_v", self.sidelobe_v),
        ];
        for (field, value) in checks {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::param(field, format!("must be > 0, got {value}")));
            }
        }
        if !self.max_gain_dbi.is_finite() || !self.downtilt.is_finite() {
            return Err(Error::param("pattern", "gain and tilt must be finite"));
        }
        Ok(())
    }
}

/// Directional pattern together with its normalization factor `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    #[serde(flatten)]
    pub sector: SectorPattern,
    normalization: f64,
}

impl PatternParams {
    /// Validates `sector` and computes `η` on the default grid.
    pub fn new(sector: SectorPattern) -> Result<Self> {
        Self::with_grid(sector, QuadratureGrid::DEFAULT)
    }

    pub fn with_grid(sector: SectorPattern, grid: QuadratureGrid) -> Result<Self> {
        sector.validate()?;
        let normalization = normalization_factor(&sector, grid)?;
        Ok(PatternParams {
            sector,
            normalization,
        })
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }
}

/// Sector pattern gain in dBi before normalization.
pub fn unnormalized_gain_dbi(
    rotation: f64,
    azimuth: f64,
    elevation: f64,
    params: &SectorPattern,
) -> f64 {
    let offset = wrap_to_pi(azimuth - rotation);
    let horizontal = -(12.0 * (offset / params.beamwidth_az).powi(2)).min(params.sidelobe_h);
    let vertical = -(12.0 * ((elevation - params.downtilt) / params.beamwidth_el).powi(2))
        .min(params.sidelobe_v);
    params.max_gain_dbi - (-(horizontal + vertical)).min(params.sidelobe_h)
}

/// `η`: spherical average of the linear-scale sector pattern.
pub fn normalization_factor(params: &SectorPattern, grid: QuadratureGrid) -> Result<f64> {
    converged_spherical_average(grid, |az, el| {
        db_to_linear(unnormalized_gain_dbi(0.0, az, el, params))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternKind {
    Directional3gpp(PatternParams),
    HalfSpaceIsotropic,
    Isotropic,
}

impl PatternKind {
    pub fn directional(sector: SectorPattern) -> Result<Self> {
        PatternParams::new(sector).map(PatternKind::Directional3gpp)
    }
}

/// Linear effective gain of a surface rotated to `rotation` toward an arrival
/// direction `(azimuth, elevation)`.
pub fn effective_gain(kind: &PatternKind, rotation: f64, azimuth: f64, elevation: f64) -> f64 {
    match kind {
        PatternKind::Directional3gpp(p) => {
            db_to_linear(unnormalized_gain_dbi(rotation, azimuth, elevation, &p.sector))
                / p.normalization
        }
        PatternKind::HalfSpaceIsotropic => {
            if (azimuth - rotation).cos() > 0.0 {
                2.0
            } else {
                0.0
            }
        }
        PatternKind::Isotropic => 1.0,
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}
