//! Line-of-sight channel synthesis for rotatable surfaces.
//!
//! Element spacing is fixed at half a wavelength and the path loss is free
//! space, `ν = ν₀ / d²`. Per surface, the steering vector is the Kronecker
//! product of the horizontal and vertical factors with the horizontal index
//! outer and the vertical index inner.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DMatrixView};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::antenna::{effective_gain, PatternKind};
use crate::error::{Error, Result};
use crate::geometry::{arrival_angles, ArrivalAngles, NetworkLayout, RotationVector};

/// Carrier and link-budget parameters, all linear SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub wavelength: f64,
    /// Transmit power per user, watts.
    pub tx_power: f64,
    /// Noise power per antenna, watts.
    pub noise_power: f64,
    /// Power gain at the 1 m reference distance.
    pub ref_gain: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            wavelength: 0.125,
            tx_power: 1e-3,
            noise_power: 1e-11,
            ref_gain: 1e-4,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("wavelength", self.wavelength),
            ("tx_power", self.tx_power),
            ("noise_power", self.noise_power),
            ("ref_gain", self.ref_gain),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(field, format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything needed to turn user positions into channels: AP layout, element
/// pattern, and the radius of the surface-center phase term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub layout: NetworkLayout,
    pub pattern: PatternKind,
    /// Equal to the track radius for rotatable surfaces; zero for arrays
    /// centered on the AP reference point.
    pub phase_radius: f64,
}

impl Deployment {
    pub fn new(layout: NetworkLayout, pattern: PatternKind) -> Self {
        let phase_radius = layout.track_radius;
        Deployment {
            layout,
            pattern,
            phase_radius,
        }
    }
}

/// Response of one surface toward one arrival direction.
pub fn array_response(
    rotation: f64,
    angles: &ArrivalAngles,
    kind: &PatternKind,
    antennas_h: usize,
    antennas_v: usize,
    radius: f64,
    wavelength: f64,
) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); antennas_h * antennas_v];
    write_array_response(
        &mut out,
        rotation,
        angles,
        kind,
        antennas_h,
        antennas_v,
        radius,
        wavelength,
        Complex64::new(1.0, 0.0),
    );
    out
}

#[allow(clippy::too_many_arguments)]
fn write_array_response(
    out: &mut [Complex64],
    rotation: f64,
    angles: &ArrivalAngles,
    kind: &PatternKind,
    antennas_h: usize,
    antennas_v: usize,
    radius: f64,
    wavelength: f64,
    scale: Complex64,
) {
    let gain = effective_gain(kind, rotation, angles.azimuth, angles.elevation);
    if gain == 0.0 {
        out.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
        return;
    }
    let offset = rotation - angles.azimuth;
    let sin_el = angles.elevation.sin();
    let center_phase = TAU * radius / wavelength * offset.cos() * sin_el;
    let lead = scale * Complex64::from_polar(gain.sqrt(), center_phase);
    let h_step = PI * offset.sin() * sin_el;
    let v_step = PI * angles.elevation.cos();
    let h_mid = (antennas_h as f64 + 1.0) / 2.0;
    let v_mid = (antennas_v as f64 + 1.0) / 2.0;
    for nh in 0..antennas_h {
        let ph = (h_mid - (nh + 1) as f64) * h_step;
        for nv in 0..antennas_v {
            let pv = (v_mid - (nv + 1) as f64) * v_step;
            out[nh * antennas_v + nv] = lead * Complex64::from_polar(1.0, ph + pv);
        }
    }
}

/// Channel from one user to one AP, surfaces stacked in rotation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ApChannel {
    pub entries: Vec<Complex64>,
}

impl ApChannel {
    pub fn norm_sqr(&self) -> f64 {
        self.entries.iter().map(Complex64::norm_sqr).sum()
    }
}

pub fn ap_channel(
    ap_index: usize,
    user: [f64; 2],
    rotations: &[f64],
    deployment: &Deployment,
    radio: &RadioParams,
) -> ApChannel {
    let mut entries = vec![Complex64::new(0.0, 0.0); deployment.layout.antennas_per_ap()];
    write_ap_channel(&mut entries, ap_index, user, rotations, deployment, radio);
    ApChannel { entries }
}

fn write_ap_channel(
    out: &mut [Complex64],
    ap_index: usize,
    user: [f64; 2],
    rotations: &[f64],
    deployment: &Deployment,
    radio: &RadioParams,
) {
    let layout = &deployment.layout;
    let angles = arrival_angles(ap_index, user, layout);
    let d = angles.distance;
    let scale = Complex64::from_polar(radio.ref_gain.sqrt() / d, -TAU * d / radio.wavelength);
    let n = layout.antennas_per_surface();
    for (block, &rotation) in out.chunks_mut(n).zip(rotations) {
        write_array_response(
            block,
            rotation,
            &angles,
            &deployment.pattern,
            layout.antennas_h,
            layout.antennas_v,
            deployment.phase_radius,
            radio.wavelength,
            scale,
        );
    }
}

/// Collective channels of one realization: column `k` is user `k`'s stacked
/// channel, rows grouped by AP in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    per_ap: usize,
    matrix: DMatrix<Complex64>,
}

impl ChannelSet {
    pub fn from_matrix(per_ap: usize, matrix: DMatrix<Complex64>) -> Result<Self> {
        if per_ap == 0 || matrix.nrows() % per_ap != 0 {
            return Err(Error::DimensionMismatch {
                expected: per_ap,
                actual: matrix.nrows(),
            });
        }
        Ok(ChannelSet { per_ap, matrix })
    }

    pub fn num_users(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn num_aps(&self) -> usize {
        self.matrix.nrows() / self.per_ap
    }

    pub fn antennas_per_ap(&self) -> usize {
        self.per_ap
    }

    pub fn total_antennas(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn user(&self, k: usize) -> Vec<Complex64> {
        self.matrix.column(k).iter().copied().collect()
    }

    /// Rows of AP `m` for every user.
    pub fn ap_block(&self, m: usize) -> DMatrixView<'_, Complex64> {
        self.matrix
            .view((m * self.per_ap, 0), (self.per_ap, self.matrix.ncols()))
    }

    pub fn ap_user(&self, m: usize, k: usize) -> Vec<Complex64> {
        self.matrix
            .view((m * self.per_ap, k), (self.per_ap, 1))
            .iter()
            .copied()
            .collect()
    }
}

pub fn collective_channels(
    users: &[[f64; 2]],
    rotations: &RotationVector,
    deployment: &Deployment,
    radio: &RadioParams,
) -> ChannelSet {
    let layout = &deployment.layout;
    let per_ap = layout.antennas_per_ap();
    let mut matrix = DMatrix::zeros(layout.total_antennas(), users.len());
    for (k, &user) in users.iter().enumerate() {
        let mut column = matrix.column_mut(k);
        let column = column.as_mut_slice();
        for m in 0..layout.num_aps() {
            write_ap_channel(
                &mut column[m * per_ap..(m + 1) * per_ap],
                m,
                user,
                rotations.row(m),
                deployment,
                radio,
            );
        }
    }
    ChannelSet { per_ap, matrix }
}
