//! Experiment configuration, orchestration and result files.
//!
//! Configs are TOML. Every dimensional value is a string carrying its unit,
//! for example `ap_height = "10 m"` or `noise_power = "-80 dBm"`; anything
//! left out takes the default deployment. The exact schema is in the README.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::antenna::{PatternParams, SectorPattern};
use crate::bayesopt::{optimize, BoConfig, TraceEntry};
use crate::benchmarks::{build_scheme, RotationSpec, Scheme, SchemeKind};
use crate::channel::{Deployment, RadioParams};
use crate::error::{Error, Result};
use crate::geometry::{
    is_feasible, surface_center, validate_rotations, NetworkLayout, RotationVector,
};
use crate::receiver::CombiningMode;
use crate::scenario::{build_realizations, realization_rates, CountModel, RealizationSet, UserDistribution};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dimension {
    Length,
    Angle,
    Power,
    /// Power ratio; `dB` or a bare linear number.
    Ratio,
    /// Level already in decibels; `dB` or `dBi`.
    Level,
}

fn split_quantity(s: &str) -> Option<(f64, &str)> {
    let s = s.trim();
    (1..=s.len())
        .rev()
        .filter(|&i| s.is_char_boundary(i))
        .find_map(|i| s[..i].trim().parse::<f64>().ok().map(|v| (v, s[i..].trim())))
}

/// Converts `"<number> <unit>"` into SI units (radians, meters, watts, linear
/// ratios) or decibels for [`Dimension::Level`].
fn parse_quantity(field: &str, text: &str, dim: Dimension) -> Result<f64> {
    let bad = |reason: String| Error::config(field, reason);
    let (value, unit) = split_quantity(text).ok_or_else(|| bad(format!("cannot read a number from '{text}'")))?;
    if !value.is_finite() {
        return Err(bad(format!("'{text}' is not finite")));
    }
    let out = match (dim, unit) {
        (Dimension::Length, "m") => value,
        (Dimension::Length, "cm") => value * 1e-2,
        (Dimension::Length, "mm") => value * 1e-3,
        (Dimension::Length, "km") => value * 1e3,
        (Dimension::Angle, "rad") => value,
        (Dimension::Angle, "deg") => value.to_radians(),
        (Dimension::Power, "W") => value,
        (Dimension::Power, "mW") => value * 1e-3,
        (Dimension::Power, "dBW") => 10f64.powf(value / 10.0),
        (Dimension::Power, "dBm") => 10f64.powf(value / 10.0) * 1e-3,
        (Dimension::Ratio, "dB") => 10f64.powf(value / 10.0),
        (Dimension::Ratio, "") => value,
        (Dimension::Level, "dB" | "dBi") => value,
        _ => {
            let allowed = match dim {
                Dimension::Length => "m, cm, mm, km",
                Dimension::Angle => "rad, deg",
                Dimension::Power => "W, mW, dBW, dBm",
                Dimension::Ratio => "dB or no unit",
                Dimension::Level => "dB, dBi",
            };
            return Err(bad(format!("unit '{unit}' in '{text}' is not one of {allowed}")));
        }
    };
    Ok(out)
}

fn fmt_quantity(value: f64, unit: &str) -> String {
    if unit.is_empty() {
        format!("{value:?}")
    } else {
        format!("{value:?} {unit}")
    }
}

/// Parameter swept across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DensityRatio,
    MeanUsers,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::DensityRatio => "density_ratio",
            SweepAxis::MeanUsers => "mean_users",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<SchemeKind>,
    pub modes: Vec<CombiningMode>,
}

impl Sweep {
    /// Parses `axis=v1,v2,...` as given on the command line.
    pub fn parse_spec(spec: &str, schemes: Vec<SchemeKind>, modes: Vec<CombiningMode>) -> Result<Sweep> {
        let (axis, list) = spec
            .split_once('=')
            .ok_or_else(|| Error::config("sweep", format!("expected axis=v1,v2,... got '{spec}'")))?;
        let axis = match axis.trim() {
            "density_ratio" => SweepAxis::DensityRatio,
            "mean_users" => SweepAxis::MeanUsers,
            other => {
                return Err(Error::config(
                    "sweep",
                    format!("unknown axis '{other}', expected density_ratio or mean_users"),
                ))
            }
        };
        let values = list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config("sweep", format!("bad value '{v}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sweep {
            axis,
            values,
            schemes,
            modes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserConfig {
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub mean_users: f64,
    /// `μ_A / μ_B`
    pub density_ratio: f64,
    pub center: [f64; 2],
}

impl Default for UserConfig {
    fn default() -> Self {
        UserConfig {
            inner_radius: 20.0,
            outer_radius: 40.0,
            mean_users: 30.0,
            density_ratio: 5.0,
            center: [0.0, 0.0],
        }
    }
}

impl UserConfig {
    pub fn distribution(&self) -> Result<UserDistribution> {
        UserDistribution::from_mean_and_ratio(
            self.inner_radius,
            self.outer_radius,
            self.mean_users,
            self.density_ratio,
            self.center,
        )
    }
}

/// Fully resolved experiment description, SI units throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scheme: SchemeKind,
    pub mode: CombiningMode,
    pub realizations: usize,
    pub count_model: CountModel,
    /// Draw a fresh realization set for every objective evaluation instead of
    /// freezing one.
    pub resample_each_evaluation: bool,
    pub layout: NetworkLayout,
    pub radio: RadioParams,
    pub pattern: SectorPattern,
    pub users: UserConfig,
    pub bo: BoConfig,
    pub sweep: Option<Sweep>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        parse_config("").expect("defaults are valid")
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scheme: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    realizations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    count_model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    resample_each_evaluation: Option<bool>,
    #[serde(default)]
    layout: RawLayout,
    #[serde(default)]
    radio: RawRadio,
    #[serde(default)]
    pattern: RawPattern,
    #[serde(default)]
    users: RawUsers,
    #[serde(default)]
    bo: BoConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<RawSweep>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    #[serde(skip_serializing_if = "Option::is_none")]
    ap_positions: Option<Vec<[String; 2]>>,
    /// Places APs on the inner-region boundary at these azimuths.
    #[serde(skip_serializing_if = "Option::is_none")]
    ap_azimuths: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ap_height: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    track_radius: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    surfaces_per_ap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    antennas_h: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    antennas_v: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_separation: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRadio {
    #[serde(skip_serializing_if = "Option::is_none")]
    wavelength: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tx_power: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_power: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ref_gain: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPattern {
    #[serde(skip_serializing_if = "Option::is_none")]
    max_gain: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beamwidth_az: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beamwidth_el: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sidelobe_h: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sidelobe_v: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    downtilt: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUsers {
    #[serde(skip_serializing_if = "Option::is_none")]
    inner_radius: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    outer_radius: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_users: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    density_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    center: Option<[String; 2]>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(skip_serializing_if = "Option::is_none")]
    density_ratio: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_users: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    schemes: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    modes: Option<Vec<String>>,
}

fn opt_quantity(field: &str, value: &Option<String>, dim: Dimension, default: f64) -> Result<f64> {
    match value {
        Some(text) => parse_quantity(field, text, dim),
        None => Ok(default),
    }
}

fn parse_scheme(field: &str, s: &str) -> Result<SchemeKind> {
    s.parse().map_err(|e: Error| Error::config(field, e.to_string()))
}

fn parse_mode(field: &str, s: &str) -> Result<CombiningMode> {
    s.parse().map_err(|e: Error| Error::config(field, e.to_string()))
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig> {
    let du = UserConfig::default();
    let u = &raw.users;
    let users = UserConfig {
        inner_radius: opt_quantity("users.inner_radius", &u.inner_radius, Dimension::Length, du.inner_radius)?,
        outer_radius: opt_quantity("users.outer_radius", &u.outer_radius, Dimension::Length, du.outer_radius)?,
        mean_users: u.mean_users.unwrap_or(du.mean_users),
        density_ratio: u.density_ratio.unwrap_or(du.density_ratio),
        center: match &u.center {
            Some([x, y]) => [
                parse_quantity("users.center[0]", x, Dimension::Length)?,
                parse_quantity("users.center[1]", y, Dimension::Length)?,
            ],
            None => du.center,
        },
    };

    let dr = RadioParams::default();
    let r = &raw.radio;
    let radio = RadioParams {
        wavelength: opt_quantity("radio.wavelength", &r.wavelength, Dimension::Length, dr.wavelength)?,
        tx_power: opt_quantity("radio.tx_power", &r.tx_power, Dimension::Power, dr.tx_power)?,
        noise_power: opt_quantity("radio.noise_power", &r.noise_power, Dimension::Power, dr.noise_power)?,
        ref_gain: opt_quantity("radio.ref_gain", &r.ref_gain, Dimension::Ratio, dr.ref_gain)?,
    };

    let dp = SectorPattern::default();
    let p = &raw.pattern;
    let pattern = SectorPattern {
        max_gain_dbi: opt_quantity("pattern.max_gain", &p.max_gain, Dimension::Level, dp.max_gain_dbi)?,
        beamwidth_az: opt_quantity("pattern.beamwidth_az", &p.beamwidth_az, Dimension::Angle, dp.beamwidth_az)?,
        beamwidth_el: opt_quantity("pattern.beamwidth_el", &p.beamwidth_el, Dimension::Angle, dp.beamwidth_el)?,
        sidelobe_h: opt_quantity("pattern.sidelobe_h", &p.sidelobe_h, Dimension::Level, dp.sidelobe_h)?,
        sidelobe_v: opt_quantity("pattern.sidelobe_v", &p.sidelobe_v, Dimension::Level, dp.sidelobe_v)?,
        downtilt: opt_quantity("pattern.downtilt", &p.downtilt, Dimension::Angle, dp.downtilt)?,
    };

    let l = &raw.layout;
    let track_radius = opt_quantity("layout.track_radius", &l.track_radius, Dimension::Length, 1.0)?;
    let ap_positions = match (&l.ap_positions, &l.ap_azimuths) {
        (Some(_), Some(_)) => {
            return Err(Error::config("layout", "give ap_positions or ap_azimuths, not both"))
        }
        (Some(list), None) => list
            .iter()
            .enumerate()
            .map(|(i, [x, y])| {
                Ok([
                    parse_quantity(&format!("layout.ap_positions[{i}][0]"), x, Dimension::Length)?,
                    parse_quantity(&format!("layout.ap_positions[{i}][1]"), y, Dimension::Length)?,
                ])
            })
            .collect::<Result<Vec<_>>>()?,
        (None, Some(list)) => list
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let a = parse_quantity(&format!("layout.ap_azimuths[{i}]"), a, Dimension::Angle)?;
                Ok([
                    users.center[0] + users.inner_radius * a.cos(),
                    users.center[1] + users.inner_radius * a.sin(),
                ])
            })
            .collect::<Result<Vec<_>>>()?,
        // azimuths 0, π/2 and π on the inner boundary, written out exactly
        (None, None) => {
            let ([cx, cy], r) = (users.center, users.inner_radius);
            vec![[cx + r, cy], [cx, cy + r], [cx - r, cy]]
        }
    };
    let layout = NetworkLayout {
        ap_positions,
        ap_height: opt_quantity("layout.ap_height", &l.ap_height, Dimension::Length, 10.0)?,
        track_radius,
        surfaces_per_ap: l.surfaces_per_ap.unwrap_or(6),
        antennas_h: l.antennas_h.unwrap_or(2),
        antennas_v: l.antennas_v.unwrap_or(1),
        min_separation: opt_quantity(
            "layout.min_separation",
            &l.min_separation,
            Dimension::Angle,
            radio.wavelength / (2.0 * track_radius),
        )?,
    };

    let scheme = match &raw.scheme {
        Some(s) => parse_scheme("scheme", s)?,
        None => SchemeKind::CellFree6dmaDirectional,
    };
    let mode = match &raw.mode {
        Some(s) => parse_mode("mode", s)?,
        None => CombiningMode::Cmmse,
    };
    let count_model = match raw.count_model.as_deref() {
        None | Some("poisson") => CountModel::Poisson,
        Some("fixed") => CountModel::Fixed,
        Some(other) => {
            return Err(Error::config(
                "count_model",
                format!("expected poisson or fixed, got '{other}'"),
            ))
        }
    };

    let sweep = match raw.sweep {
        None => None,
        Some(s) => {
            let (axis, values) = match (s.density_ratio, s.mean_users) {
                (Some(v), None) => (SweepAxis::DensityRatio, v),
                (None, Some(v)) => (SweepAxis::MeanUsers, v),
                (None, None) => return Err(Error::config("sweep", "needs density_ratio or mean_users")),
                (Some(_), Some(_)) => {
                    return Err(Error::config("sweep", "only one of density_ratio, mean_users"))
                }
            };
            let schemes = match s.schemes {
                Some(list) => list
                    .iter()
                    .enumerate()
                    .map(|(i, k)| parse_scheme(&format!("sweep.schemes[{i}]"), k))
                    .collect::<Result<Vec<_>>>()?,
                None => vec![scheme],
            };
            let modes = match s.modes {
                Some(list) => list
                    .iter()
                    .enumerate()
                    .map(|(i, m)| parse_mode(&format!("sweep.modes[{i}]"), m))
                    .collect::<Result<Vec<_>>>()?,
                None => vec![mode],
            };
            Some(Sweep {
                axis,
                values,
                schemes,
                modes,
            })
        }
    };

    let config = ExperimentConfig {
        seed: raw.seed.unwrap_or(0),
        scheme,
        mode,
        realizations: raw.realizations.unwrap_or(100),
        count_model,
        resample_each_evaluation: raw.resample_each_evaluation.unwrap_or(false),
        layout,
        radio,
        pattern,
        users,
        bo: raw.bo,
        sweep,
    };
    config.validate()?;
    Ok(config)
}

fn with_field(field: &str, err: Error) -> Error {
    match err {
        Error::InvalidParameter { field: f, reason } => Error::config(format!("{field}.{f}"), reason),
        Error::InvalidLayout(reason) => Error::config(field, reason),
        other => Error::config(field, other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate().map_err(|e| with_field("layout", e))?;
        self.radio.validate().map_err(|e| with_field("radio", e))?;
        self.users.distribution().map_err(|e| with_field("users", e))?;
        self.bo.validate().map_err(|e| with_field("bo", e))?;
        PatternParams::new(self.pattern).map_err(|e| with_field("pattern", e))?;
        if self.realizations == 0 {
            return Err(Error::config("realizations", "must be >= 1"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed", "must fit in a signed 64-bit integer"));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() || s.schemes.is_empty() || s.modes.is_empty() {
                return Err(Error::config("sweep", "values, schemes and modes must be non-empty"));
            }
            if let Some(v) = s.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::config(
                    format!("sweep.{}", s.axis.as_str()),
                    format!("values must be positive, got {v}"),
                ));
            }
        }
        Ok(())
    }

    /// TOML form of the resolved config in rad, m and W. Reloading it gives an
    /// identical config.
    pub fn to_toml(&self) -> Result<String> {
        let m = |v: f64| fmt_quantity(v, "m");
        let rad = |v: f64| fmt_quantity(v, "rad");
        let w = |v: f64| fmt_quantity(v, "W");
        let raw = RawConfig {
            seed: Some(self.seed),
            scheme: Some(self.scheme.as_str().into()),
            mode: Some(self.mode.as_str().into()),
            realizations: Some(self.realizations),
            count_model: Some(
                match self.count_model {
                    CountModel::Poisson => "poisson",
                    CountModel::Fixed => "fixed",
                }
                .into(),
            ),
            resample_each_evaluation: Some(self.resample_each_evaluation),
            layout: RawLayout {
                ap_positions: Some(self.layout.ap_positions.iter().map(|p| [m(p[0]), m(p[1])]).collect()),
                ap_azimuths: None,
                ap_height: Some(m(self.layout.ap_height)),
                track_radius: Some(m(self.layout.track_radius)),
                surfaces_per_ap: Some(self.layout.surfaces_per_ap),
                antennas_h: Some(self.layout.antennas_h),
                antennas_v: Some(self.layout.antennas_v),
                min_separation: Some(rad(self.layout.min_separation)),
            },
            radio: RawRadio {
                wavelength: Some(m(self.radio.wavelength)),
                tx_power: Some(w(self.radio.tx_power)),
                noise_power: Some(w(self.radio.noise_power)),
                ref_gain: Some(fmt_quantity(self.radio.ref_gain, "")),
            },
            pattern: RawPattern {
                max_gain: Some(fmt_quantity(self.pattern.max_gain_dbi, "dBi")),
                beamwidth_az: Some(rad(self.pattern.beamwidth_az)),
                beamwidth_el: Some(rad(self.pattern.beamwidth_el)),
                sidelobe_h: Some(fmt_quantity(self.pattern.sidelobe_h, "dB")),
                sidelobe_v: Some(fmt_quantity(self.pattern.sidelobe_v, "dB")),
                downtilt: Some(rad(self.pattern.downtilt)),
            },
            users: RawUsers {
                inner_radius: Some(m(self.users.inner_radius)),
                outer_radius: Some(m(self.users.outer_radius)),
                mean_users: Some(self.users.mean_users),
                density_ratio: Some(self.users.density_ratio),
                center: Some([m(self.users.center[0]), m(self.users.center[1])]),
            },
            bo: self.bo.clone(),
            sweep: self.sweep.as_ref().map(|s| RawSweep {
                density_ratio: (s.axis == SweepAxis::DensityRatio).then(|| s.values.clone()),
                mean_users: (s.axis == SweepAxis::MeanUsers).then(|| s.values.clone()),
                schemes: Some(s.schemes.iter().map(|k| k.as_str().into()).collect()),
                modes: Some(s.modes.iter().map(|k| k.as_str().into()).collect()),
            }),
        };
        toml::to_string(&raw).map_err(|e| Error::Serialize(e.to_string()))
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    resolve(raw)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Mixes `index` into `master`; result fits in 63 bits so it survives TOML.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(master ^ 0x5DEE_CE66_D1CE_5EED);
    rng.set_stream(index);
    rng.next_u64() >> 1
}

/// Seeds actually used by one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub run: u64,
    pub realizations: u64,
    pub optimizer: u64,
}

impl RunSeeds {
    pub fn from_run_seed(run: u64) -> Self {
        RunSeeds {
            run,
            realizations: derive_seed(run, 0),
            optimizer: derive_seed(run, 1),
        }
    }
}

/// Position of a run inside a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub index: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    /// Standalone config; rerunning it reproduces `value` exactly.
    pub config: ExperimentConfig,
    pub seeds: RunSeeds,
    pub sweep_point: Option<SweepPoint>,
    /// Scheme as built, for provenance.
    pub scheme: Scheme,
    pub rotation: RotationVector,
    pub optimized: bool,
    pub value: f64,
    pub trace: Vec<TraceEntry>,
    pub per_realization_rates: Vec<f64>,
    pub duration_secs: f64,
}

fn scheme_for(config: &ExperimentConfig) -> Result<Scheme> {
    let params = PatternParams::new(config.pattern)?;
    build_scheme(config.scheme, &config.layout, &params)
}

fn realizations_for(config: &ExperimentConfig, seed: u64) -> Result<RealizationSet> {
    build_realizations(
        &config.users.distribution()?,
        config.count_model,
        config.realizations,
        seed,
    )
}

fn mean_rate(rates: &[f64]) -> f64 {
    rates.iter().sum::<f64>() / rates.len() as f64
}

/// One end-to-end run: realizations, scheme, optimization (or a single
/// evaluation for fixed schemes), final rates.
pub fn run_single(config: &ExperimentConfig) -> Result<RunRecord> {
    run_at(config, None)
}

fn run_at(config: &ExperimentConfig, sweep_point: Option<SweepPoint>) -> Result<RunRecord> {
    let start = Instant::now();
    config.validate()?;
    let seeds = RunSeeds::from_run_seed(config.seed);
    let reals = realizations_for(config, seeds.realizations)?;
    let scheme = scheme_for(config)?;
    let dep: &Deployment = &scheme.deployment;
    let mode = config.mode;
    let radio = config.radio;

    let (rotation, trace, optimized) = match &scheme.rotations {
        RotationSpec::Fixed(rot) => {
            let rates = realization_rates(rot, &reals, dep, &radio, mode)?;
            let entry = TraceEntry {
                iteration: 0,
                rotation: rot.as_slice().to_vec(),
                value: mean_rate(&rates),
                ei: None,
            };
            (rot.clone(), vec![entry], false)
        }
        RotationSpec::Optimizable => {
            let mut evaluation = 0u64;
            let objective = |phi: &RotationVector| -> Result<f64> {
                evaluation += 1;
                let rates = if config.resample_each_evaluation {
                    let fresh = realizations_for(config, derive_seed(seeds.realizations, evaluation))?;
                    realization_rates(phi, &fresh, dep, &radio, mode)?
                } else {
                    realization_rates(phi, &reals, dep, &radio, mode)?
                };
                Ok(mean_rate(&rates))
            };
            let out = optimize(objective, &dep.layout, &config.bo, seeds.optimizer)?;
            (out.best, out.trace, true)
        }
    };

    let per_realization_rates = realization_rates(&rotation, &reals, dep, &radio, mode)?;
    let value = mean_rate(&per_realization_rates);
    Ok(RunRecord {
        version: VERSION.to_string(),
        config: config.clone(),
        seeds,
        sweep_point,
        scheme,
        rotation,
        optimized,
        value,
        trace,
        per_realization_rates,
        duration_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_value: Option<f64>,
    pub scheme: SchemeKind,
    pub mode: CombiningMode,
    pub avg_sum_rate_bpshz: f64,
    pub seed: u64,
}

impl SummaryRow {
    pub fn from_record(r: &RunRecord) -> Self {
        SummaryRow {
            sweep_value: r.sweep_point.map(|p| p.value),
            scheme: r.config.scheme,
            mode: r.config.mode,
            avg_sum_rate_bpshz: r.value,
            seed: r.config.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<SweepFailure>,
    pub summary: Vec<SummaryRow>,
}

/// Config of sweep point `index`: the swept parameter replaced, the sweep
/// removed and the seed derived from the master seed and the point index.
/// All schemes and modes at one point therefore share a realization set.
pub fn sweep_point_config(config: &ExperimentConfig, sweep: &Sweep, index: usize) -> ExperimentConfig {
    let mut c = config.clone();
    c.sweep = None;
    c.seed = derive_seed(config.seed, index as u64);
    match sweep.axis {
        SweepAxis::DensityRatio => c.users.density_ratio = sweep.values[index],
        SweepAxis::MeanUsers => c.users.mean_users = sweep.values[index],
    }
    c
}

/// Runs every (value, scheme, mode) combination. Failed runs are reported in
/// `failures` and the rest still complete. Without a sweep this is one run.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let Some(sweep) = &config.sweep else {
        let record = run_single(config)?;
        let summary = vec![SummaryRow::from_record(&record)];
        return Ok(SweepOutcome {
            records: vec![record],
            failures: vec![],
            summary,
        });
    };
    let mut jobs = Vec::new();
    for index in 0..sweep.values.len() {
        let base = sweep_point_config(config, sweep, index);
        for &scheme in &sweep.schemes {
            for &mode in &sweep.modes {
                let mut c = base.clone();
                c.scheme = scheme;
                c.mode = mode;
                let point = SweepPoint {
                    axis: sweep.axis,
                    value: sweep.values[index],
                    index,
                    master_seed: config.seed,
                };
                jobs.push((c, point));
            }
        }
    }
    let results: Vec<_> = jobs
        .into_par_iter()
        .map(|(c, point)| {
            let label = format!(
                "{}={} {} {}",
                point.axis.as_str(),
                point.value,
                c.scheme,
                c.mode.as_str()
            );
            run_at(&c, Some(point)).map_err(|e| SweepFailure {
                label,
                error: e.to_string(),
            })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    let summary = records.iter().map(SummaryRow::from_record).collect();
    Ok(SweepOutcome {
        records,
        failures,
        summary,
    })
}

/// One row of the rotation diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationRow {
    pub ap: usize,
    pub surface: usize,
    pub ap_position: [f64; 2],
    pub angle: f64,
    /// Unit vector along the surface boresight.
    pub boresight: [f64; 2],
    pub surface_center: [f64; 3],
}

pub fn rotation_rows(record: &RunRecord) -> Vec<RotationRow> {
    let layout = &record.scheme.deployment.layout;
    let mut rows = Vec::new();
    for (m, row) in record.rotation.rows().enumerate() {
        let p = layout.ap_positions[m];
        for (b, &angle) in row.iter().enumerate() {
            let c = surface_center(angle, record.scheme.deployment.phase_radius);
            rows.push(RotationRow {
                ap: m,
                surface: b,
                ap_position: p,
                angle,
                boresight: [angle.cos(), angle.sin()],
                surface_center: [p[0] + c[0], p[1] + c[1], layout.ap_height + c[2]],
            });
        }
    }
    rows
}

/// Which files [`emit_results`] writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputFormats {
    pub summary: bool,
    pub rotations: bool,
    pub traces: bool,
    pub records: bool,
}

impl Default for OutputFormats {
    fn default() -> Self {
        OutputFormats {
            summary: true,
            rotations: true,
            traces: true,
            records: true,
        }
    }
}

pub const SUMMARY_HEADER: &str = "sweep_value,scheme,mode,avg_sum_rate_bpshz,seed";

pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in records {
        let row = SummaryRow::from_record(r);
        let sweep = row.sweep_value.map(|v| format!("{v:?}")).unwrap_or_default();
        out.push_str(&format!(
            "{sweep},{},{},{:?},{}\n",
            row.scheme,
            row.mode.as_str(),
            row.avg_sum_rate_bpshz,
            row.seed
        ));
    }
    out
}

fn run_label(index: usize, r: &RunRecord) -> String {
    format!("run{index:03}_{}_{}", r.config.scheme, r.config.mode.as_str())
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents).map_err(|e| Error::io(path, e))
}

fn json_lines<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| Error::Serialize(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes result files under `dir` and returns their paths.
///
/// Per run `runNNN_<scheme>_<mode>` there is a `.record.json`, a
/// `.config.toml`, a `.rotations.jsonl` with one line per surface and a
/// `.trace.jsonl` with one line per evaluation. `summary.csv` covers all runs.
pub fn emit_results(records: &[RunRecord], dir: impl AsRef<Path>, formats: OutputFormats) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if records.is_empty() {
        return Err(Error::config("records", "nothing to emit"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if formats.summary {
        let path = dir.join("summary.csv");
        write_file(&path, summary_csv(records).as_bytes())?;
        written.push(path);
    }
    for (i, r) in records.iter().enumerate() {
        let label = run_label(i, r);
        let mut files: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
        if formats.records {
            let json = serde_json::to_vec_pretty(r).map_err(|e| Error::Serialize(e.to_string()))?;
            files.insert("record.json", json);
            files.insert("config.toml", r.config.to_toml()?.into_bytes());
        }
        if formats.rotations {
            files.insert("rotations.jsonl", json_lines(&rotation_rows(r))?.into_bytes());
        }
        if formats.traces {
            files.insert("trace.jsonl", json_lines(&r.trace)?.into_bytes());
        }
        for (suffix, bytes) in files {
            let path = dir.join(format!("{label}.{suffix}"));
            write_file(&path, &bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOracle {
    pub best: RotationVector,
    pub value: f64,
    pub evaluated: usize,
    pub grid: usize,
}

/// Upper bound on grid points visited by [`oracle_grid`].
pub const ORACLE_MAX_POINTS: usize = 2_000_000;

/// Exhaustive search over rotations on the `grid`-point angle lattice
/// `i·2π/grid`, keeping feasible sorted tuples only. Meant for tiny instances.
pub fn oracle_grid(config: &ExperimentConfig, grid: usize) -> Result<GridOracle> {
    config.validate()?;
    if grid < 2 {
        return Err(Error::config("grid", "must be >= 2"));
    }
    let scheme = scheme_for(config)?;
    let dep = &scheme.deployment;
    let layout = &dep.layout;
    let b = layout.surfaces_per_ap;
    let delta = layout.min_separation;
    let angles: Vec<f64> = (0..grid).map(|i| i as f64 * TAU / grid as f64).collect();

    let m = layout.num_aps();
    let combos = (0..b).try_fold(1usize, |acc, k| acc.checked_mul(grid - k).map(|v| v / (k + 1)));
    let bound = combos.and_then(|c| (0..m).try_fold(1usize, |acc, _| acc.checked_mul(c)));
    if b > grid || !matches!(bound, Some(t) if t <= ORACLE_MAX_POINTS) {
        return Err(Error::config(
            "grid",
            format!("search space exceeds {ORACLE_MAX_POINTS} points; use a smaller grid or instance"),
        ));
    }

    // feasible sorted index tuples for one AP
    let mut per_ap: Vec<Vec<f64>> = Vec::new();
    let mut idx: Vec<usize> = (0..b).collect();
    {
        loop {
            let row: Vec<f64> = idx.iter().map(|&i| angles[i]).collect();
            if is_feasible(&RotationVector::new(b, row.clone())?, delta) {
                per_ap.push(row);
            }
            // next combination in lexicographic order
            let mut k = b;
            while k > 0 && idx[k - 1] == grid - b + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for j in k..b {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    if per_ap.is_empty() {
        return Err(Error::config("grid", "no feasible rotation on this grid"));
    }
    let total = (0..m).try_fold(1usize, |acc, _| acc.checked_mul(per_ap.len()));
    match total {
        Some(t) if t <= ORACLE_MAX_POINTS => {}
        _ => {
            return Err(Error::config(
                "grid",
                format!("search space exceeds {ORACLE_MAX_POINTS} points; use a smaller grid or instance"),
            ))
        }
    }
    let total = total.expect("checked above");
    let reals = realizations_for(config, RunSeeds::from_run_seed(config.seed).realizations)?;
    let values: Vec<(f64, Vec<f64>)> = (0..total)
        .into_par_iter()
        .map(|mut flat| {
            let mut v = Vec::with_capacity(m * b);
            for _ in 0..m {
                v.extend_from_slice(&per_ap[flat % per_ap.len()]);
                flat /= per_ap.len();
            }
            let rot = RotationVector::new(b, v.clone()).expect("row length matches");
            let rates = realization_rates(&rot, &reals, dep, &config.radio, config.mode)?;
            Ok((mean_rate(&rates), v))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, (v, _)) in values.iter().enumerate() {
        if *v > values[best].0 {
            best = i;
        }
    }
    let (value, angles) = values[best].clone();
    let best = RotationVector::new(b, angles)?;
    validate_rotations(&best, delta).map_err(Error::Infeasible)?;
    Ok(GridOracle {
        best,
        value,
        evaluated: total,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn empty_config_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.layout.min_separation, 0.0625);
        assert_eq!(c.layout.num_aps(), 3);
        assert_eq!(c.layout.ap_positions, vec![[20.0, 0.0], [0.0, 20.0], [-20.0, 0.0]]);
        assert_eq!((c.layout.surfaces_per_ap, c.layout.antennas_h, c.layout.antennas_v), (6, 2, 1));
        assert_eq!(c.radio, RadioParams::default());
        assert_eq!(c.pattern, SectorPattern::default());
        assert_eq!(c.realizations, 100);
        assert_eq!(c.bo.iterations, 100);
        assert_eq!(c.bo.init_samples_for(18), 36);
        assert_eq!(c.users.mean_users, 30.0);
        assert_eq!(c.scheme, SchemeKind::CellFree6dmaDirectional);
        assert_eq!(c.mode, CombiningMode::Cmmse);
    }

    #[test]
    fn units_convert() {
        let c = parse_config(
            r#"
            [radio]
            noise_power = "-80 dBm"
            tx_power = "1 mW"
            ref_gain = "-40 dB"
            wavelength = "12.5 cm"
            [pattern]
            beamwidth_az = "65 deg"
            "#,
        )
        .unwrap();
        assert!((c.radio.noise_power - 1e-11).abs() < 1e-24);
        assert!((c.radio.tx_power - 1e-3).abs() < 1e-18);
        assert!((c.radio.ref_gain - 1e-4).abs() < 1e-18);
        assert!((c.radio.wavelength - 0.125).abs() < 1e-15);
        assert!((c.pattern.beamwidth_az - 65f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn density_solution() {
        let c = parse_config("[users]\ndensity_ratio = 5\nmean_users = 30").unwrap();
        let d = c.users.distribution().unwrap();
        let mu_b = 30.0 / (PI * (5.0 * 400.0 + 1200.0));
        assert!((d.density_outer - mu_b).abs() < 1e-15);
        assert!((d.density_inner - 5.0 * mu_b).abs() < 1e-15);
    }

    #[test]
    fn malformed_unit_names_field() {
        let err = parse_config("[layout]\nap_height = \"10 furlongs\"").unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "layout.ap_height"),
            other => panic!("unexpected {other}"),
        }
        let err = parse_config("[radio]\nnoise_power = \"-80 dB\"").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "radio.noise_power"));
        let err = parse_config("[radio]\nnoise_power = \"abc\"").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "radio.noise_power"));
    }

    #[test]
    fn syntax_and_unknown_fields_rejected() {
        assert!(matches!(parse_config("seed = = 3"), Err(Error::ConfigParse(_))));
        assert!(matches!(parse_config("[layout]\nbogus = 1"), Err(Error::ConfigParse(_))));
        assert!(parse_config("realizations = 0").is_err());
        assert!(parse_config("[sweep]\nmean_users = []").is_err());
        assert!(parse_config("scheme = \"nope\"").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = parse_config(
            r#"
            seed = 42
            mode = "lmmse"
            [radio]
            noise_power = "-80 dBm"
            ref_gain = "-40 dB"
            [pattern]
            beamwidth_az = "65 deg"
            [bo]
            iterations = 7
            init_samples = 4
            [sweep]
            density_ratio = [1.0, 5.0]
            schemes = ["cellfree_6dma_directional", "cellfree_isotropic_ula"]
            "#,
        )
        .unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
        assert_eq!(parse_config(&ExperimentConfig::default().to_toml().unwrap()).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn ap_azimuths_place_on_inner_boundary() {
        let c = parse_config("[layout]\nap_azimuths = [\"90 deg\"]\n[users]\ninner_radius = \"10 m\"").unwrap();
        assert_eq!(c.layout.num_aps(), 1);
        assert!((c.layout.ap_positions[0][1] - 10.0).abs() < 1e-12);
        assert!(parse_config("[layout]\nap_azimuths = [\"0 deg\"]\nap_positions = [[\"1 m\", \"0 m\"]]").is_err());
    }

    #[test]
    fn sweep_spec_parsing() {
        let s = Sweep::parse_spec("density_ratio=1,2,5", vec![SchemeKind::Centralized6dma], vec![CombiningMode::Cmmse]).unwrap();
        assert_eq!(s.axis, SweepAxis::DensityRatio);
        assert_eq!(s.values, vec![1.0, 2.0, 5.0]);
        assert!(Sweep::parse_spec("users=1", vec![], vec![]).is_err());
        assert!(Sweep::parse_spec("mean_users=1,x", vec![], vec![]).is_err());
    }

    #[test]
    fn derived_seeds_fit_toml() {
        for i in 0..100 {
            assert!(derive_seed(u64::MAX, i) <= i64::MAX as u64);
        }
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn quantity_split() {
        assert_eq!(split_quantity("1e-11 W"), Some((1e-11, "W")));
        assert_eq!(split_quantity("1e-11W"), Some((1e-11, "W")));
        assert_eq!(split_quantity("-80dBm"), Some((-80.0, "dBm")));
        assert_eq!(split_quantity("0.5"), Some((0.5, "")));
        assert_eq!(split_quantity("m"), None);
    }
}
