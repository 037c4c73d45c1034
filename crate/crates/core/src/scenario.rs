//! User drops and the Monte-Carlo sum-rate objective.
//!
//! Users fall in two concentric regions: a disk of radius `R_A` and the
//! annulus out to `R_B`, each with its own uniform density. A
//! [`RealizationSet`] freezes `Υ` independent drops so that the objective is a
//! deterministic function of the rotation vector.
//!
//! Realization `υ` is drawn from a ChaCha20 stream seeded with the master seed
//! and stream id `υ`, so every drop is reproducible on its own and the set does
//! not depend on build or evaluation order. Output is stable for
//! `rand_chacha` 0.9 and `rand_distr` 0.5.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{collective_channels, Deployment, RadioParams};
use crate::error::{Error, Result};
use crate::geometry::{validate_rotations, RotationVector};
use crate::receiver::{sum_rate_realization, CombiningMode};

/// Two-region concentric user density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserDistribution {
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Users per square meter inside the inner disk.
    pub density_inner: f64,
    /// Users per square meter in the annulus.
    pub density_outer: f64,
    pub center: [f64; 2],
}

impl UserDistribution {
    pub fn new(
        inner_radius: f64,
        outer_radius: f64,
        density_inner: f64,
        density_outer: f64,
        center: [f64; 2],
    ) -> Result<Self> {
        let d = UserDistribution {
            inner_radius,
            outer_radius,
            density_inner,
            density_outer,
            center,
        };
        d.validate()?;
        Ok(d)
    }

    /// Solves for the two densities given the mean user count and the ratio
    /// `μ_A / μ_B`.
    pub fn from_mean_and_ratio(
        inner_radius: f64,
        outer_radius: f64,
        mean_users: f64,
        density_ratio: f64,
        center: [f64; 2],
    ) -> Result<Self> {
        if !(density_ratio > 0.0) || !density_ratio.is_finite() {
            return Err(Error::param(
                "density_ratio",
                format!("must be a positive finite number, got {density_ratio}"),
            ));
        }
        if !(mean_users >= 0.0) || !mean_users.is_finite() {
            return Err(Error::param(
                "mean_users",
                format!("must be >= 0, got {mean_users}"),
            ));
        }
        let a2 = inner_radius * inner_radius;
        let b2 = outer_radius * outer_radius;
        let density_outer = mean_users / (PI * (density_ratio * a2 + b2 - a2));
        Self::new(
            inner_radius,
            outer_radius,
            density_ratio * density_outer,
            density_outer,
            center,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_radius > 0.0 && self.inner_radius < self.outer_radius)
            || !self.outer_radius.is_finite()
        {
            return Err(Error::param(
                "users",
                format!(
                    "need 0 < inner_radius < outer_radius, got {} and {}",
                    self.inner_radius, self.outer_radius
                ),
            ));
        }
        if !(self.density_inner >= 0.0 && self.density_outer >= 0.0) {
            return Err(Error::param("users", "densities must be >= 0"));
        }
        Ok(())
    }

    pub fn mean_inner(&self) -> f64 {
        self.density_inner * PI * self.inner_radius.powi(2)
    }

    pub fn mean_outer(&self) -> f64 {
        self.density_outer * PI * (self.outer_radius.powi(2) - self.inner_radius.powi(2))
    }

    /// `K̄`, the expected number of users per drop.
    pub fn mean_count(&self) -> f64 {
        self.mean_inner() + self.mean_outer()
    }
}

/// How many users a drop contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountModel {
    /// Independent Poisson counts per region.
    #[default]
    Poisson,
    /// Exactly `round(K̄)` users, each in the inner disk with probability
    /// equal to its share of `K̄`.
    Fixed,
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite Poisson mean");
    dist.sample(rng) as usize
}

fn disk_point<R: Rng + ?Sized>(center: [f64; 2], radius: f64, rng: &mut R) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let a = TAU * rng.random::<f64>();
    [center[0] + r * a.cos(), center[1] + r * a.sin()]
}

fn annulus_point<R: Rng + ?Sized>(center: [f64; 2], inner: f64, outer: f64, rng: &mut R) -> [f64; 2] {
    let (a2, b2) = (inner * inner, outer * outer);
    let r = (a2 + rng.random::<f64>() * (b2 - a2)).sqrt();
    let a = TAU * rng.random::<f64>();
    [center[0] + r * a.cos(), center[1] + r * a.sin()]
}

/// One drop of users; inner-region users come first.
pub fn sample_users<R: Rng + ?Sized>(
    dist: &UserDistribution,
    counts: CountModel,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    let (n_inner, n_outer) = match counts {
        CountModel::Poisson => (
            poisson_count(dist.mean_inner(), rng),
            poisson_count(dist.mean_outer(), rng),
        ),
        CountModel::Fixed => {
            let total = dist.mean_count().round() as usize;
            let p_inner = if dist.mean_count() > 0.0 {
                dist.mean_inner() / dist.mean_count()
            } else {
                0.0
            };
            let inner = (0..total).filter(|_| rng.random::<f64>() < p_inner).count();
            (inner, total - inner)
        }
    };
    let mut users = Vec::with_capacity(n_inner + n_outer);
    for _ in 0..n_inner {
        users.push(disk_point(dist.center, dist.inner_radius, rng));
    }
    for _ in 0..n_outer {
        users.push(annulus_point(
            dist.center,
            dist.inner_radius,
            dist.outer_radius,
            rng,
        ));
    }
    users
}

/// RNG for realization `index` under `seed`.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Frozen set of user drops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationSet {
    seed: u64,
    realizations: Vec<Vec<[f64; 2]>>,
}

impl RealizationSet {
    pub fn from_drops(seed: u64, realizations: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        if realizations.is_empty() {
            return Err(Error::param("realizations", "need at least one realization"));
        }
        Ok(RealizationSet { seed, realizations })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    pub fn drops(&self) -> &[Vec<[f64; 2]>] {
        &self.realizations
    }
}

pub fn build_realizations(
    dist: &UserDistribution,
    counts: CountModel,
    count: usize,
    seed: u64,
) -> Result<RealizationSet> {
    if count == 0 {
        return Err(Error::param("realizations", "need at least one realization"));
    }
    dist.validate()?;
    let realizations = (0..count as u64)
        .into_par_iter()
        .map(|i| sample_users(dist, counts, &mut realization_rng(seed, i)))
        .collect();
    Ok(RealizationSet { seed, realizations })
}

/// Sum-rate of every realization at `rotations`, in realization order.
pub fn realization_rates(
    rotations: &RotationVector,
    reals: &RealizationSet,
    deployment: &Deployment,
    radio: &RadioParams,
    mode: CombiningMode,
) -> Result<Vec<f64>> {
    let layout = &deployment.layout;
    if rotations.surfaces_per_ap() != layout.surfaces_per_ap || rotations.num_aps() != layout.num_aps() {
        return Err(Error::DimensionMismatch {
            expected: layout.rotation_dim(),
            actual: rotations.as_slice().len(),
        });
    }
    validate_rotations(rotations, layout.min_separation).map_err(Error::Infeasible)?;
    reals
        .drops()
        .par_iter()
        .map(|users| {
            let channels = collective_channels(users, rotations, deployment, radio);
            sum_rate_realization(&channels, mode, radio)
        })
        .collect()
}

/// Sample-average sum-rate over the frozen realization set, in bps/Hz.
pub fn objective(
    rotations: &RotationVector,
    reals: &RealizationSet,
    deployment: &Deployment,
    radio: &RadioParams,
    mode: CombiningMode,
) -> Result<f64> {
    let rates = realization_rates(rotations, reals, deployment, radio, mode)?;
    // sequential sum in realization order keeps the result schedule-independent
    let total: f64 = rates.iter().sum();
    Ok(total / reals.len() as f64)
}
