//! Reference deployments compared against the rotatable cell-free network.
//!
//! Every scheme is built from the same base layout and keeps its total
//! antenna count `M·N·B`.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::antenna::{PatternKind, PatternParams};
use crate::channel::Deployment;
use crate::error::{Error, Result};
use crate::geometry::{NetworkLayout, RotationVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "cellfree_6dma_directional")]
    CellFree6dmaDirectional,
    #[serde(rename = "cellfree_6dma_halfspace")]
    CellFree6dmaHalfSpace,
    #[serde(rename = "centralized_6dma")]
    Centralized6dma,
    #[serde(rename = "cellfree_sectorized_upa")]
    CellFreeSectorizedUpa,
    #[serde(rename = "cellfree_isotropic_ula")]
    CellFreeIsotropicUla,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::CellFree6dmaDirectional,
        SchemeKind::CellFree6dmaHalfSpace,
        SchemeKind::Centralized6dma,
        SchemeKind::CellFreeSectorizedUpa,
        SchemeKind::CellFreeIsotropicUla,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::CellFree6dmaDirectional => "cellfree_6dma_directional",
            SchemeKind::CellFree6dmaHalfSpace => "cellfree_6dma_halfspace",
            SchemeKind::Centralized6dma => "centralized_6dma",
            SchemeKind::CellFreeSectorizedUpa => "cellfree_sectorized_upa",
            SchemeKind::CellFreeIsotropicUla => "cellfree_isotropic_ula",
        }
    }

    pub fn is_optimizable(self) -> bool {
        matches!(
            self,
            SchemeKind::CellFree6dmaDirectional
                | SchemeKind::CellFree6dmaHalfSpace
                | SchemeKind::Centralized6dma
        )
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.as_str().replace('_', "") == key)
            .ok_or_else(|| {
                let names: Vec<_> = SchemeKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::param("scheme", format!("unknown scheme '{s}', expected one of {}", names.join(", ")))
            })
    }
}

/// Rotation decision space of a scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "rotations", rename_all = "snake_case")]
pub enum RotationSpec {
    Optimizable,
    Fixed(RotationVector),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub kind: SchemeKind,
    pub deployment: Deployment,
    pub rotations: RotationSpec,
}

impl Scheme {
    pub fn total_antennas(&self) -> usize {
        self.deployment.layout.total_antennas()
    }
}

/// Three fixed sectors at local azimuths 0, 2π/3 and 4π/3.
pub const SECTOR_BORESIGHTS: [f64; 3] = [0.0, TAU / 3.0, 2.0 * TAU / 3.0];

/// Builds `kind` from the base layout. `directional` is the element pattern used
/// by the directional schemes.
pub fn build_scheme(kind: SchemeKind, base: &NetworkLayout, directional: &PatternParams) -> Result<Scheme> {
    base.validate()?;
    let directional_kind = PatternKind::Directional3gpp(*directional);
    let per_ap = base.antennas_per_ap();
    let (deployment, rotations) = match kind {
        SchemeKind::CellFree6dmaDirectional => {
            (Deployment::new(base.clone(), directional_kind), RotationSpec::Optimizable)
        }
        SchemeKind::CellFree6dmaHalfSpace => (
            Deployment::new(base.clone(), PatternKind::HalfSpaceIsotropic),
            RotationSpec::Optimizable,
        ),
        SchemeKind::Centralized6dma => {
            let layout = NetworkLayout {
                ap_positions: vec![[0.0, 0.0]],
                antennas_h: base.num_aps() * base.antennas_h,
                ..base.clone()
            };
            layout.validate()?;
            (Deployment::new(layout, directional_kind), RotationSpec::Optimizable)
        }
        SchemeKind::CellFreeSectorizedUpa => {
            if per_ap % 3 != 0 {
                return Err(Error::param(
                    "scheme",
                    format!("sectorized arrays need N·B divisible by 3, got {per_ap}"),
                ));
            }
            let layout = NetworkLayout {
                surfaces_per_ap: 3,
                antennas_h: per_ap / 3,
                antennas_v: 1,
                ..base.clone()
            };
            layout.validate()?;
            let angles = SECTOR_BORESIGHTS.repeat(layout.num_aps());
            let rot = RotationVector::new(3, angles)?;
            (Deployment::new(layout, directional_kind), RotationSpec::Fixed(rot))
        }
        SchemeKind::CellFreeIsotropicUla => {
            let layout = NetworkLayout {
                surfaces_per_ap: 1,
                antennas_h: per_ap,
                antennas_v: 1,
                ..base.clone()
            };
            layout.validate()?;
            // a surface facing +y lays its horizontal axis along local x
            let rot = RotationVector::new(1, vec![FRAC_PI_2; layout.num_aps()])?;
            let deployment = Deployment {
                layout,
                pattern: PatternKind::Isotropic,
                phase_radius: 0.0,
            };
            (deployment, RotationSpec::Fixed(rot))
        }
    };
    Ok(Scheme {
        kind,
        deployment,
        rotations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antenna::SectorPattern;
    use crate::channel::{array_response, RadioParams};
    use crate::geometry::{arrival_angles_from, is_feasible};

    fn base() -> NetworkLayout {
        NetworkLayout::new(
            vec![[20.0, 0.0], [0.0, 20.0], [-20.0, 0.0]],
            10.0,
            1.0,
            6,
            2,
            1,
            0.0625,
        )
        .unwrap()
    }

    fn pattern() -> PatternParams {
        PatternParams::new(SectorPattern::default()).unwrap()
    }

    #[test]
    fn antenna_parity() {
        let p = pattern();
        for kind in SchemeKind::ALL {
            let s = build_scheme(kind, &base(), &p).unwrap();
            assert_eq!(s.total_antennas(), 36, "{kind}");
            assert_eq!(kind.is_optimizable(), s.rotations == RotationSpec::Optimizable);
            if let RotationSpec::Fixed(r) = &s.rotations {
                assert!(is_feasible(r, s.deployment.layout.min_separation));
                assert_eq!(r.num_aps(), s.deployment.layout.num_aps());
            }
        }
    }

    #[test]
    fn centralized_shape() {
        let s = build_scheme(SchemeKind::Centralized6dma, &base(), &pattern()).unwrap();
        let l = &s.deployment.layout;
        assert_eq!(l.ap_positions, vec![[0.0, 0.0]]);
        assert_eq!((l.surfaces_per_ap, l.antennas_per_surface()), (6, 6));
    }

    #[test]
    fn sectorized_shape() {
        let s = build_scheme(SchemeKind::CellFreeSectorizedUpa, &base(), &pattern()).unwrap();
        let l = &s.deployment.layout;
        assert_eq!((l.num_aps(), l.surfaces_per_ap, l.antennas_h, l.antennas_v), (3, 3, 4, 1));
        assert!(matches!(s.deployment.pattern, PatternKind::Directional3gpp(_)));
    }

    #[test]
    fn sectorized_divisibility() {
        let layout = NetworkLayout {
            surfaces_per_ap: 5,
            ..base()
        };
        let err = build_scheme(SchemeKind::CellFreeSectorizedUpa, &layout, &pattern());
        assert!(err.is_err());
    }

    #[test]
    fn ula_is_a_broadside_linear_array_along_x() {
        let s = build_scheme(SchemeKind::CellFreeIsotropicUla, &base(), &pattern()).unwrap();
        let dep = &s.deployment;
        assert_eq!(dep.phase_radius, 0.0);
        let RotationSpec::Fixed(rot) = &s.rotations else {
            panic!("fixed rotations expected")
        };
        let radio = RadioParams::default();
        // user straight along +y from the AP sits on broadside: all phases equal
        let ap = dep.layout.ap_positions[0];
        let angles = arrival_angles_from(ap, dep.layout.ap_height, [ap[0], ap[1] + 15.0]);
        let f = array_response(rot.row(0)[0], &angles, &dep.pattern, 12, 1, 0.0, radio.wavelength);
        assert!(f.iter().all(|c| (c - f[0]).norm() < 1e-12 && (c.norm() - 1.0).abs() < 1e-12));
        // user along +x sits on endfire: adjacent phase step π·sin θ
        let angles = arrival_angles_from(ap, dep.layout.ap_height, [ap[0] + 15.0, ap[1]]);
        let f = array_response(rot.row(0)[0], &angles, &dep.pattern, 12, 1, 0.0, radio.wavelength);
        let step = (f[1] / f[0]).arg().abs();
        assert!((step - std::f64::consts::PI * angles.elevation.sin()).abs() < 1e-9);
    }

    #[test]
    fn names_round_trip() {
        for kind in SchemeKind::ALL {
            assert_eq!(kind.as_str().parse::<SchemeKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.as_str()));
        }
        assert_eq!("CellFree6DMADirectional".parse::<SchemeKind>().unwrap(), SchemeKind::CellFree6dmaDirectional);
        assert!("nope".parse::<SchemeKind>().is_err());
    }
}
