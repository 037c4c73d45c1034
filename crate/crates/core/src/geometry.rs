//! Coordinate frames, arrival angles and rotation-vector feasibility.
//!
//! Every AP carries a local frame whose origin is the centre of its circular
//! track and whose axes are parallel to the global frame. Surface rotation
//! angles are azimuths in that local frame, so arrival azimuths measured at the
//! AP reference point can be compared with them directly.

use std::f64::consts::{PI, TAU};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when comparing an angular gap against the minimum separation.
///
/// Region boundaries are built from half-sums of angles, so a gap that is `δ`
/// in exact arithmetic may come out one or two ulps short.
pub const SEPARATION_TOL: f64 = 1e-12;

/// Static description of the access-point deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayout {
    /// Ground coordinates `(x, y)` of each AP reference point, in meters.
    pub ap_positions: Vec<[f64; 2]>,
    pub ap_height: f64,
    pub track_radius: f64,
    pub surfaces_per_ap: usize,
    pub antennas_h: usize,
    pub antennas_v: usize,
    /// Minimum azimuth gap between neighbouring surfaces, radians.
    pub min_separation: f64,
}

impl NetworkLayout {
    pub fn new(
        ap_positions: Vec<[f64; 2]>,
        ap_height: f64,
        track_radius: f64,
        surfaces_per_ap: usize,
        antennas_h: usize,
        antennas_v: usize,
        min_separation: f64,
    ) -> Result<Self> {
        let layout = NetworkLayout {
            ap_positions,
            ap_height,
            track_radius,
            surfaces_per_ap,
            antennas_h,
            antennas_v,
            min_separation,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidLayout(msg));
        if self.ap_positions.is_empty() {
            return fail("at least one AP is required".into());
        }
        if self
            .ap_positions
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return fail("AP positions must be finite".into());
        }
        if !(self.ap_height > 0.0) {
            return fail(format!("ap_height must be > 0, got {}", self.ap_height));
        }
        if !(self.track_radius > 0.0) {
            return fail(format!(
                "track_radius must be > 0, got {}",
                self.track_radius
            ));
        }
        if self.surfaces_per_ap == 0 || self.antennas_h == 0 || self.antennas_v == 0 {
            return fail("surface and antenna counts must be >= 1".into());
        }
        if !(self.min_separation > 0.0) {
            return fail(format!(
                "min_separation must be > 0, got {}",
                self.min_separation
            ));
        }
        if self.surfaces_per_ap as f64 * self.min_separation >= TAU {
            return fail(format!(
                "{} surfaces with separation {} rad cannot fit on the track",
                self.surfaces_per_ap, self.min_separation
            ));
        }
        Ok(())
    }

    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    /// Antennas per surface, `N = N_h * N_v`.
    pub fn antennas_per_surface(&self) -> usize {
        self.antennas_h * self.antennas_v
    }

    /// Length of one AP's channel vector, `N * B`.
    pub fn antennas_per_ap(&self) -> usize {
        self.antennas_per_surface() * self.surfaces_per_ap
    }

    pub fn total_antennas(&self) -> usize {
        self.antennas_per_ap() * self.num_aps()
    }

    /// Dimension of the collective rotation vector, `B * M`.
    pub fn rotation_dim(&self) -> usize {
        self.surfaces_per_ap * self.num_aps()
    }
}

/// Collective rotation vector, stored AP-major: entry `m * B + b` is the
/// rotation of surface `b` at AP `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationVector {
    surfaces_per_ap: usize,
    angles: Vec<f64>,
}

impl RotationVector {
    pub fn new(surfaces_per_ap: usize, angles: Vec<f64>) -> Result<Self> {
        if surfaces_per_ap == 0 || angles.is_empty() || angles.len() % surfaces_per_ap != 0 {
            return Err(Error::DimensionMismatch {
                expected: surfaces_per_ap.max(1),
                actual: angles.len(),
            });
        }
        Ok(RotationVector {
            surfaces_per_ap,
            angles,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let b = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != b) {
            return Err(Error::DimensionMismatch {
                expected: b,
                actual: rows.iter().map(Vec::len).find(|&l| l != b).unwrap_or(0),
            });
        }
        Self::new(b, rows.concat())
    }

    /// Reduces every angle into `[0, 2π)` and sorts each AP's angles ascending.
    pub fn canonicalized(surfaces_per_ap: usize, mut angles: Vec<f64>) -> Result<Self> {
        for a in angles.iter_mut() {
            *a = wrap_to_tau(*a);
        }
        if surfaces_per_ap > 0 {
            for row in angles.chunks_mut(surfaces_per_ap) {
                row.sort_by(f64::total_cmp);
            }
        }
        Self::new(surfaces_per_ap, angles)
    }

    pub fn surfaces_per_ap(&self) -> usize {
        self.surfaces_per_ap
    }

    pub fn num_aps(&self) -> usize {
        self.angles.len() / self.surfaces_per_ap
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.angles
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.angles
    }

    pub fn row(&self, ap: usize) -> &[f64] {
        let b = self.surfaces_per_ap;
        &self.angles[ap * b..(ap + 1) * b]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.angles.chunks(self.surfaces_per_ap)
    }
}

/// First violated rotation constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintViolation {
    OutOfRange { ap: usize, surface: usize, angle: f64 },
    NotAscending { ap: usize, surface: usize },
    AdjacentGap { ap: usize, surface: usize, gap: f64 },
    WrapAroundGap { ap: usize, gap: f64 },
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintViolation::OutOfRange { ap, surface, angle } => write!(
                f,
                "AP {ap} surface {surface}: angle {angle} outside [0, 2pi)"
            ),
            ConstraintViolation::NotAscending { ap, surface } => write!(
                f,
                "AP {ap}: surfaces {surface} and {} not in ascending order",
                surface + 1
            ),
            ConstraintViolation::AdjacentGap { ap, surface, gap } => write!(
                f,
                "AP {ap}: gap {gap} between surfaces {surface} and {} below minimum",
                surface + 1
            ),
            ConstraintViolation::WrapAroundGap { ap, gap } => {
                write!(f, "AP {ap}: wrap-around gap {gap} below minimum")
            }
        }
    }
}

/// Checks ordering, adjacent separation and wrap-around separation for every
/// AP. Returns the first violation found, scanning APs in order.
pub fn validate_rotations(
    candidate: &RotationVector,
    min_separation: f64,
) -> Result<(), ConstraintViolation> {
    let delta = min_separation - SEPARATION_TOL;
    for (ap, row) in candidate.rows().enumerate() {
        for (surface, &angle) in row.iter().enumerate() {
            if !(0.0..TAU).contains(&angle) {
                return Err(ConstraintViolation::OutOfRange { ap, surface, angle });
            }
        }
        for (surface, pair) in row.windows(2).enumerate() {
            let gap = pair[1] - pair[0];
            if gap <= 0.0 {
                return Err(ConstraintViolation::NotAscending { ap, surface });
            }
            if gap < delta {
                return Err(ConstraintViolation::AdjacentGap { ap, surface, gap });
            }
        }
        let gap = row[0] + TAU - row[row.len() - 1];
        if gap < delta {
            return Err(ConstraintViolation::WrapAroundGap { ap, gap });
        }
    }
    Ok(())
}

pub fn is_feasible(candidate: &RotationVector, min_separation: f64) -> bool {
    validate_rotations(candidate, min_separation).is_ok()
}

/// Per-surface closed intervals `[lo, hi]`, aligned with a [`RotationVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleRegions {
    surfaces_per_ap: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl FeasibleRegions {
    pub fn from_bounds(surfaces_per_ap: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::param(
                format!("regions[{i}]"),
                format!("lower bound {} exceeds upper bound {}", lower[i], upper[i]),
            ));
        }
        Ok(FeasibleRegions {
            surfaces_per_ap,
            lower,
            upper,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn surfaces_per_ap(&self) -> usize {
        self.surfaces_per_ap
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn interval(&self, index: usize) -> (f64, f64) {
        (self.lower[index], self.upper[index])
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&x, (&lo, &hi))| lo <= x && x <= hi)
    }

    /// Clamps each coordinate into its interval.
    pub fn project(&self, point: &mut [f64]) {
        for (x, (&lo, &hi)) in point.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(lo, hi);
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

/// Continuous box around a feasible anchor in which every point is feasible.
///
/// Interval `b` of AP `m` runs from the midpoint with the previous surface
/// (plus `δ/2`) to the midpoint with the next one (minus `δ/2`). The virtual
/// neighbours `-φ_1` and `4π - φ_B` close the circle, which pins the first and
/// last intervals to `[δ/2, 2π - δ/2]`.
///
/// That closure only contains the anchor when `φ_1 ≥ δ/2` and
/// `φ_B ≤ 2π - δ/2`. For an AP whose anchor sits closer to the `0 / 2π` seam
/// the circular neighbours `φ_B - 2π` and `φ_1 + 2π` are used instead; those
/// intervals may leave `[0, 2π)`, and a point drawn from them becomes feasible
/// once wrapped and re-sorted with [`RotationVector::canonicalized`].
pub fn feasible_regions(anchor: &RotationVector, min_separation: f64) -> Result<FeasibleRegions> {
    validate_rotations(anchor, min_separation).map_err(Error::Infeasible)?;
    let delta = min_separation;
    let b_count = anchor.surfaces_per_ap();
    let mut lower = Vec::with_capacity(anchor.as_slice().len());
    let mut upper = Vec::with_capacity(anchor.as_slice().len());
    for row in anchor.rows() {
        let (first, last) = (row[0], row[b_count - 1]);
        let mirrored = first >= delta / 2.0 && last <= TAU - delta / 2.0;
        let (before, after) = if mirrored {
            (-first, 2.0 * TAU - last)
        } else {
            (last - TAU, first + TAU)
        };
        for b in 0..b_count {
            let here = row[b];
            let prev = if b == 0 { before } else { row[b - 1] };
            let next = if b + 1 == b_count { after } else { row[b + 1] };
            // For B = 1 this is [δ/2, 2π - δ/2] (or its circular shift), never
            // wider than 2π - δ.
            lower.push((prev + here + delta) / 2.0);
            upper.push((next + here - delta) / 2.0);
        }
    }
    FeasibleRegions::from_bounds(b_count, lower, upper)
}

/// Draws uniformly sorted angles per AP until the separation constraints hold.
pub fn sample_feasible<R: Rng + ?Sized>(
    num_aps: usize,
    surfaces_per_ap: usize,
    min_separation: f64,
    rng: &mut R,
) -> RotationVector {
    let mut angles = Vec::with_capacity(num_aps * surfaces_per_ap);
    for _ in 0..num_aps {
        loop {
            let mut row: Vec<f64> = (0..surfaces_per_ap)
                .map(|_| rng.random::<f64>() * TAU)
                .collect();
            row.sort_by(f64::total_cmp);
            let candidate = RotationVector {
                surfaces_per_ap,
                angles: row,
            };
            if is_feasible(&candidate, min_separation) {
                angles.extend(candidate.angles);
                break;
            }
        }
    }
    RotationVector {
        surfaces_per_ap,
        angles,
    }
}

/// Arrival geometry of a ground user as seen from an AP reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalAngles {
    /// Azimuth in `[0, 2π)`.
    pub azimuth: f64,
    /// Elevation in `(π/2, π]`, measured from the zenith.
    pub elevation: f64,
    pub distance: f64,
}

pub fn arrival_angles(ap_index: usize, user: [f64; 2], layout: &NetworkLayout) -> ArrivalAngles {
    arrival_angles_from(layout.ap_positions[ap_index], layout.ap_height, user)
}

pub fn arrival_angles_from(ap: [f64; 2], height: f64, user: [f64; 2]) -> ArrivalAngles {
    let dx = user[0] - ap[0];
    let dy = user[1] - ap[1];
    let horizontal = dx.hypot(dy);
    if horizontal == 0.0 {
        return ArrivalAngles {
            azimuth: 0.0,
            elevation: PI,
            distance: height,
        };
    }
    ArrivalAngles {
        azimuth: wrap_to_tau(dy.atan2(dx)),
        elevation: (height / horizontal).atan() + PI / 2.0,
        distance: horizontal.hypot(height),
    }
}

/// Center of a surface in its AP's local frame.
pub fn surface_center(rotation: f64, track_radius: f64) -> [f64; 3] {
    [
        track_radius * rotation.cos(),
        track_radius * rotation.sin(),
        0.0,
    ]
}

/// Maps an angle into `[0, 2π)`.
pub fn wrap_to_tau(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Maps an angle difference into `(-π, π]`.
pub fn wrap_to_pi(angle: f64) -> f64 {
    let r = wrap_to_tau(angle);
    if r > PI {
        r - TAU
    } else {
        r
    }
}
