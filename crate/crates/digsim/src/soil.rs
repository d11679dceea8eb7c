//! Terramechanics: soil materials, tool separation force, shear failure,
//! track thrust, and pressure sinkage.
//!
//! The separation force uses the classic passive-wedge earthmoving form: the
//! soil ahead of the tool fails along the plane of least resistance and the
//! force splits into gravity, cohesion, and surcharge terms scaled by
//! dimensionless N-factors. All functions here are pure.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default slip modulus for the track thrust curve.
pub const DEFAULT_SLIP_MODULUS: f64 = 0.05;
/// Default bank-to-loose volume ratio.
pub const DEFAULT_SWELL_FACTOR: f64 = 1.25;

const WEDGE_SCAN_POINTS: usize = 512;
const GOLDEN_ITERS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum SoilError {
    #[error("invalid soil material `{name}`: {reason}")]
    InvalidMaterial { name: String, reason: String },
    #[error("invalid tool engagement: {0}")]
    InvalidEngagement(String),
    #[error(
        "degenerate wedge: rake angle {rake_rad:.4} rad with friction angle \
         {friction_rad:.4} rad admits no passive failure plane"
    )]
    DegenerateWedge { rake_rad: f64, friction_rad: f64 },
}

/// Bulk soil parameters.
///
/// `friction_angle` is in radians. The three stock presets share the swell
/// factor and differ in stiffness, cohesion, friction, and density; only the
/// Young's moduli are calibrated values (6.5 / 4.6 / 4.0 MPa), the rest are
/// representative textbook numbers for each material class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoilMaterial {
    pub name: String,
    /// Young's modulus, Pa.
    pub young_modulus: f64,
    /// Internal friction angle, radians.
    pub friction_angle: f64,
    /// Cohesion, Pa.
    pub cohesion: f64,
    /// Bank density, kg/m^3.
    pub density: f64,
    /// Bank-to-loose volume ratio, >= 1.
    pub swell_factor: f64,
    /// Slip modulus of the thrust-slip curve.
    pub slip_modulus: f64,
}

impl SoilMaterial {
    pub fn dirt() -> Self {
        Self {
            name: "dirt".into(),
            young_modulus: 6.5e6,
            friction_angle: 32.0_f64.to_radians(),
            cohesion: 10_000.0,
            density: 1600.0,
            swell_factor: DEFAULT_SWELL_FACTOR,
            slip_modulus: DEFAULT_SLIP_MODULUS,
        }
    }

    pub fn gravel() -> Self {
        Self {
            name: "gravel".into(),
            young_modulus: 4.6e6,
            friction_angle: 36.0_f64.to_radians(),
            cohesion: 1_000.0,
            density: 1800.0,
            swell_factor: DEFAULT_SWELL_FACTOR,
            slip_modulus: DEFAULT_SLIP_MODULUS,
        }
    }

    pub fn sand() -> Self {
        Self {
            name: "sand".into(),
            young_modulus: 4.0e6,
            friction_angle: 30.0_f64.to_radians(),
            cohesion: 0.0,
            density: 1500.0,
            swell_factor: DEFAULT_SWELL_FACTOR,
            // Loose sand develops thrust over more slip than bound soils.
            slip_modulus: 0.07,
        }
    }

    /// The stock material presets: dirt, gravel, sand.
    pub fn presets() -> Vec<SoilMaterial> {
        vec![Self::dirt(), Self::gravel(), Self::sand()]
    }

    pub fn validate(&self) -> Result<(), SoilError> {
        let fail = |reason: &str| {
            Err(SoilError::InvalidMaterial {
                name: self.name.clone(),
                reason: reason.into(),
            })
        };
        if !(self.young_modulus > 0.0) {
            return fail("young_modulus must be > 0");
        }
        if !(0.0..FRAC_PI_2).contains(&self.friction_angle) {
            return fail("friction_angle must be in [0, pi/2)");
        }
        if !(self.cohesion >= 0.0) {
            return fail("cohesion must be >= 0");
        }
        if !(self.density > 0.0) {
            return fail("density must be > 0");
        }
        if !(self.swell_factor >= 1.0) {
            return fail("swell_factor must be >= 1");
        }
        if !(self.slip_modulus > 0.0) {
            return fail("slip_modulus must be > 0");
        }
        Ok(())
    }
}

/// Geometry of a tool face engaged with the soil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolEngagement {
    /// Cutting width, m.
    pub width: f64,
    /// Depth of the cutting edge below the local surface, m.
    pub depth: f64,
    /// Angle between the cutting face and the horizontal, radians, in (0, pi).
    pub rake_angle: f64,
    /// Distributed load resting above the cut, Pa.
    pub surcharge: f64,
}

impl ToolEngagement {
    pub fn validate(&self) -> Result<(), SoilError> {
        if !(self.width > 0.0) {
            return Err(SoilError::InvalidEngagement(format!(
                "width {} must be > 0",
                self.width
            )));
        }
        if !(self.depth >= 0.0) {
            return Err(SoilError::InvalidEngagement(format!(
                "depth {} must be >= 0",
                self.depth
            )));
        }
        if !(self.rake_angle > 0.0 && self.rake_angle < PI) {
            return Err(SoilError::InvalidEngagement(format!(
                "rake angle {} must be in (0, pi)",
                self.rake_angle
            )));
        }
        if !(self.surcharge >= 0.0) {
            return Err(SoilError::InvalidEngagement(format!(
                "surcharge {} must be >= 0",
                self.surcharge
            )));
        }
        Ok(())
    }
}

/// Total wedge resistance for failure-plane angle `beta`, or `None` when the
/// wedge geometry is invalid there. Tool-soil friction is taken equal to the
/// soil's internal friction (rough tool).
fn wedge_resistance(t: &ToolEngagement, m: &SoilMaterial, gravity: f64, beta: f64) -> Option<f64> {
    let alpha = t.rake_angle;
    let phi = m.friction_angle;
    let delta = phi;
    let denom = (alpha + delta).cos() + (alpha + delta).sin() / (beta + phi).tan();
    if denom <= 1e-12 {
        return None;
    }
    let cot_alpha = alpha.cos() / alpha.sin();
    let cot_beta = beta.cos() / beta.sin();
    let n_gamma_num = cot_alpha + cot_beta;
    if n_gamma_num < 0.0 {
        return None;
    }
    let n_c_num = 1.0 + cot_beta / (beta + phi).tan();
    if m.cohesion > 0.0 && n_c_num < 0.0 {
        return None;
    }
    let gravity_term = m.density * gravity * t.depth * t.depth * n_gamma_num / 2.0;
    let cohesion_term = m.cohesion * t.depth * n_c_num.max(0.0);
    let surcharge_term = t.surcharge * t.depth * n_gamma_num;
    Some(t.width * (gravity_term + cohesion_term + surcharge_term) / denom)
}

/// Horizontal soil separation force on an engaged tool, N.
///
/// The failure-plane angle is chosen to minimize the wedge resistance
/// (coarse scan plus golden-section refinement over (0, pi/2)); the returned
/// value is the horizontal component of the minimal resistance. Zero depth
/// gives zero force. Geometries that admit no passive wedge are reported as
/// [`SoilError::DegenerateWedge`].
pub fn fee_force(t: &ToolEngagement, m: &SoilMaterial, gravity: f64) -> Result<f64, SoilError> {
    t.validate()?;
    m.validate()?;
    if t.rake_angle + m.friction_angle >= PI {
        return Err(SoilError::DegenerateWedge {
            rake_rad: t.rake_angle,
            friction_rad: m.friction_angle,
        });
    }
    if t.depth == 0.0 {
        return Ok(0.0);
    }

    let lo = 1e-4;
    let hi = FRAC_PI_2 - 1e-4;
    let step = (hi - lo) / WEDGE_SCAN_POINTS as f64;
    let mut best: Option<(usize, f64)> = None;
    for k in 0..WEDGE_SCAN_POINTS {
        let beta = lo + (k as f64 + 0.5) * step;
        if let Some(p) = wedge_resistance(t, m, gravity, beta) {
            if best.is_none_or(|(_, pb)| p < pb) {
                best = Some((k, p));
            }
        }
    }
    let (k_best, _) = best.ok_or(SoilError::DegenerateWedge {
        rake_rad: t.rake_angle,
        friction_rad: m.friction_angle,
    })?;

    // Golden-section refinement around the best scan cell.
    let mut a = lo + (k_best as f64 - 0.5) * step;
    let mut b = lo + (k_best as f64 + 1.5) * step;
    a = a.max(lo);
    b = b.min(hi);
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let eval = |beta: f64| wedge_resistance(t, m, gravity, beta).unwrap_or(f64::INFINITY);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c);
    let mut fd = eval(d);
    for _ in 0..GOLDEN_ITERS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        }
    }
    let p_min = fc.min(fd);
    let horizontal = p_min * (t.rake_angle + m.friction_angle).sin();
    Ok(horizontal.max(0.0))
}

/// Mohr-Coulomb shear stress at which a cut face fails, Pa.
///
/// `normal_stress` is the stress normal to the failure plane at the
/// engagement (overburden plus surcharge), computed by the caller.
pub fn shear_failure_threshold(m: &SoilMaterial, normal_stress: f64) -> f64 {
    m.cohesion + normal_stress.max(0.0) * m.friction_angle.tan()
}

/// Thrust a track can deliver at a given slip, N.
///
/// The limit is `H_max = A c + W tan(phi)`; the delivered fraction follows
/// the standard exponential slip curve `1 - exp(-slip / K)`.
pub fn track_thrust(m: &SoilMaterial, normal_load: f64, contact_area: f64, slip: f64) -> f64 {
    let h_max = thrust_limit(m, normal_load, contact_area);
    let s = slip.clamp(0.0, 1.0);
    h_max * (1.0 - (-s / m.slip_modulus).exp())
}

/// Maximum thrust the soil can carry under a track, N.
pub fn thrust_limit(m: &SoilMaterial, normal_load: f64, contact_area: f64) -> f64 {
    contact_area.max(0.0) * m.cohesion + normal_load.max(0.0) * m.friction_angle.tan()
}

/// Slip needed for the track to develop `required_thrust`, inverting the
/// thrust-slip curve. `None` when the soil cannot carry the load at any slip
/// in [0, 1].
pub fn required_slip(
    m: &SoilMaterial,
    normal_load: f64,
    contact_area: f64,
    required_thrust: f64,
) -> Option<f64> {
    if required_thrust <= 0.0 {
        return Some(0.0);
    }
    let h_max = thrust_limit(m, normal_load, contact_area);
    if required_thrust >= h_max {
        return None;
    }
    let slip = -m.slip_modulus * (1.0 - required_thrust / h_max).ln();
    (slip <= 1.0).then_some(slip)
}

/// Elastic settlement under a contact pressure, m.
pub fn sinkage(contact_pressure: f64, m: &SoilMaterial, characteristic_length: f64) -> f64 {
    contact_pressure.max(0.0) * characteristic_length / m.young_modulus
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::GRAVITY_M_S2;

    fn dirt_engagement() -> ToolEngagement {
        ToolEngagement {
            width: 0.5,
            depth: 0.1,
            rake_angle: 60.0_f64.to_radians(),
            surcharge: 0.0,
        }
    }

    /// Independent brute-force oracle: sweep the failure-plane angle on a
    /// 1e-4 rad grid using a from-scratch statement of the wedge force.
    fn wedge_sweep_oracle(t: &ToolEngagement, m: &SoilMaterial, gravity: f64) -> f64 {
        let alpha = t.rake_angle;
        let phi = m.friction_angle;
        let delta = phi;
        let mut best = f64::INFINITY;
        let mut beta = 1e-4;
        while beta < FRAC_PI_2 {
            let denom = (alpha + delta).cos() + (alpha + delta).sin() / (beta + phi).tan();
            let cot_a = 1.0 / alpha.tan();
            let cot_b = 1.0 / beta.tan();
            if denom > 1e-12 && cot_a + cot_b >= 0.0 {
                let nc = 1.0 + cot_b / (beta + phi).tan();
                if m.cohesion == 0.0 || nc >= 0.0 {
                    let p = t.width
                        * (m.density * gravity * t.depth * t.depth * (cot_a + cot_b) / 2.0
                            + m.cohesion * t.depth * nc.max(0.0)
                            + t.surcharge * t.depth * (cot_a + cot_b))
                        / denom;
                    best = best.min(p);
                }
            }
            beta += 1e-4;
        }
        best * (alpha + delta).sin()
    }

    #[test]
    fn zero_depth_gives_zero_force() {
        let t = ToolEngagement {
            depth: 0.0,
            ..dirt_engagement()
        };
        assert_eq!(fee_force(&t, &SoilMaterial::dirt(), GRAVITY_M_S2).unwrap(), 0.0);
    }

    #[test]
    fn force_is_linear_in_width() {
        let t = dirt_engagement();
        let wide = ToolEngagement {
            width: 1.0,
            ..dirt_engagement()
        };
        let f1 = fee_force(&t, &SoilMaterial::dirt(), GRAVITY_M_S2).unwrap();
        let f2 = fee_force(&wide, &SoilMaterial::dirt(), GRAVITY_M_S2).unwrap();
        assert!((f2 - 2.0 * f1).abs() < 1e-9 * f1);
    }

    #[test]
    fn dirt_spot_value_matches_wedge_sweep_oracle() {
        let t = dirt_engagement();
        let m = SoilMaterial::dirt();
        let got = fee_force(&t, &m, GRAVITY_M_S2).unwrap();
        let oracle = wedge_sweep_oracle(&t, &m, GRAVITY_M_S2);
        assert!(
            (got - oracle).abs() <= 1e-6 * oracle,
            "fee {got} vs oracle {oracle}"
        );
        // Frozen from the oracle above.
        assert!((got - 2100.18457547).abs() < 1e-3, "fee {got}");
    }

    #[test]
    fn degenerate_wedge_is_an_error() {
        let t = ToolEngagement {
            rake_angle: 170.0_f64.to_radians(),
            ..dirt_engagement()
        };
        let m = SoilMaterial::dirt(); // 32 deg friction, 170 + 32 > 180
        assert!(matches!(
            fee_force(&t, &m, GRAVITY_M_S2),
            Err(SoilError::DegenerateWedge { .. })
        ));
    }

    #[test]
    fn fee_monotone_in_depth_cohesion_density_surcharge() {
        let m0 = SoilMaterial::dirt();
        let mut prev = 0.0;
        for i in 0..20 {
            let t = ToolEngagement {
                depth: 0.01 * i as f64,
                ..dirt_engagement()
            };
            let f = fee_force(&t, &m0, GRAVITY_M_S2).unwrap();
            assert!(f >= prev);
            prev = f;
        }
        prev = 0.0;
        for i in 0..20 {
            let m = SoilMaterial {
                cohesion: 1000.0 * i as f64,
                ..SoilMaterial::dirt()
            };
            let f = fee_force(&dirt_engagement(), &m, GRAVITY_M_S2).unwrap();
            assert!(f >= prev);
            prev = f;
        }
        prev = 0.0;
        for i in 1..20 {
            let m = SoilMaterial {
                density: 200.0 * i as f64,
                ..SoilMaterial::dirt()
            };
            let f = fee_force(&dirt_engagement(), &m, GRAVITY_M_S2).unwrap();
            assert!(f >= prev);
            prev = f;
        }
        prev = 0.0;
        for i in 0..20 {
            let t = ToolEngagement {
                surcharge: 500.0 * i as f64,
                ..dirt_engagement()
            };
            let f = fee_force(&t, &m0, GRAVITY_M_S2).unwrap();
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn shear_threshold_cases() {
        let frictionless = SoilMaterial {
            friction_angle: 0.0,
            cohesion: 5000.0,
            ..SoilMaterial::dirt()
        };
        assert_eq!(shear_failure_threshold(&frictionless, 0.0), 5000.0);
        assert_eq!(shear_failure_threshold(&frictionless, 1e6), 5000.0);

        let loose = SoilMaterial {
            cohesion: 0.0,
            ..SoilMaterial::sand()
        };
        assert_eq!(shear_failure_threshold(&loose, 0.0), 0.0);

        let dirt = SoilMaterial::dirt();
        let tau = shear_failure_threshold(&dirt, 10_000.0);
        let expect = 10_000.0 + 10_000.0 * 32.0_f64.to_radians().tan();
        assert!((tau - expect).abs() < 1e-9);
    }

    #[test]
    fn track_thrust_limits_and_monotone_saturation() {
        let cohesionless = SoilMaterial {
            cohesion: 0.0,
            ..SoilMaterial::sand()
        };
        let h_max = thrust_limit(&cohesionless, 40_000.0, 1.2);
        assert!((h_max - 40_000.0 * 30.0_f64.to_radians().tan()).abs() < 1e-9);
        assert_eq!(track_thrust(&cohesionless, 0.0, 1.2, 0.5), 0.0);

        let sand = SoilMaterial::sand();
        let expect = thrust_limit(&sand, 40_000.0, 1.2) * (1.0 - (-0.2_f64 / 0.07).exp());
        let got = track_thrust(&sand, 40_000.0, 1.2, 0.2);
        assert!((got - expect).abs() < 1e-9);

        let mut prev = -1.0;
        for i in 0..=100 {
            let h = track_thrust(&sand, 40_000.0, 1.2, i as f64 / 100.0);
            assert!(h >= prev);
            assert!(h <= thrust_limit(&sand, 40_000.0, 1.2));
            prev = h;
        }
    }

    #[test]
    fn required_slip_inverts_thrust_curve() {
        let m = SoilMaterial::dirt();
        let (w, a) = (40_000.0, 1.2);
        for r in [100.0, 5_000.0, 20_000.0] {
            let slip = required_slip(&m, w, a, r).unwrap();
            let back = track_thrust(&m, w, a, slip);
            assert!((back - r).abs() < 1e-6 * r);
        }
        assert_eq!(required_slip(&m, w, a, 0.0), Some(0.0));
        assert!(required_slip(&m, w, a, 1e12).is_none());
    }

    #[test]
    fn sinkage_formula_and_preset_ordering() {
        let dirt = SoilMaterial::dirt();
        assert_eq!(sinkage(0.0, &dirt, 0.5), 0.0);
        let z = sinkage(30_000.0, &dirt, 0.5);
        assert!((z - 30_000.0 * 0.5 / 6.5e6).abs() < 1e-12);

        let p = 40_000.0;
        let z_dirt = sinkage(p, &SoilMaterial::dirt(), 0.5);
        let z_gravel = sinkage(p, &SoilMaterial::gravel(), 0.5);
        let z_sand = sinkage(p, &SoilMaterial::sand(), 0.5);
        assert!(z_sand > z_gravel && z_gravel > z_dirt);
    }

    #[test]
    fn sinkage_scales_inversely_with_stiffness() {
        let m = SoilMaterial::dirt();
        let scaled = SoilMaterial {
            young_modulus: m.young_modulus * 3.0,
            ..m.clone()
        };
        let a = sinkage(25_000.0, &m, 0.4) * m.young_modulus;
        let b = sinkage(25_000.0, &scaled, 0.4) * scaled.young_modulus;
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn presets_are_valid() {
        for m in SoilMaterial::presets() {
            m.validate().unwrap();
        }
    }
}
