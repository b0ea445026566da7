//! LEO geometry and link budget.
//!
//! Slant range, free-space path loss, log-normal shadow fading (in dB),
//! aggregation of the downlink and inter-satellite loss terms, the
//! large-scale gain `ζ`, and a circular-orbit Doppler estimate.

use core::f64::consts::FRAC_PI_2;

use rand::Rng;

use crate::math::{cos, log10, powf, sqrt};
use crate::rng::standard_normal;
use crate::{Error, Result};

/// Mean equatorial Earth radius used by default, km.
pub const EARTH_RADIUS_KM: f64 = 6378.0;
/// Standard gravitational parameter of the Earth, km³/s².
pub const EARTH_MU_KM3_S2: f64 = 398_600.0;
/// Speed of light, km/s.
pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitGeometry {
    pub earth_radius_km: f64,
    pub altitude_km: f64,
    /// Elevation of the satellite seen from the ground terminal.
    pub elevation_rad: f64,
    /// Distance between the two satellites of the inter-satellite link.
    pub isl_distance_km: f64,
}

impl Default for OrbitGeometry {
    fn default() -> Self {
        Self {
            earth_radius_km: EARTH_RADIUS_KM,
            altitude_km: 600.0,
            elevation_rad: FRAC_PI_2,
            isl_distance_km: 2000.0,
        }
    }
}

impl OrbitGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.earth_radius_km > 0.0) {
            return Err(Error::param("earth_radius_km", self.earth_radius_km));
        }
        if !(self.altitude_km > 0.0) {
            return Err(Error::param("altitude_km", self.altitude_km));
        }
        check_elevation(self.elevation_rad)?;
        if !(self.isl_distance_km > 0.0) {
            return Err(Error::param("isl_distance_km", self.isl_distance_km));
        }
        Ok(())
    }
}

fn check_elevation(theta: f64) -> Result<()> {
    if theta > 0.0 && theta <= FRAC_PI_2 {
        Ok(())
    } else {
        Err(Error::ElevationOutOfRange(theta))
    }
}

/// Carrier, antenna and loss parameters of the satellite link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub carrier_ghz: f64,
    pub sat_antenna_gain_db: f64,
    pub user_antenna_gain_db: f64,
    pub scintillation_loss_db: f64,
    pub atmospheric_loss_db: f64,
    pub shadow_sigma_db: f64,
    pub rician_factor: f64,
}

impl Default for LinkBudget {
    /// Ka-band LEO downlink: 28 GHz, 35 dBi satellite / 37 dBi user antenna,
    /// 0.5 dB scintillation, 0.3 dB gaseous absorption, Rician factor 2.8.
    fn default() -> Self {
        Self {
            carrier_ghz: 28.0,
            sat_antenna_gain_db: 35.0,
            user_antenna_gain_db: 37.0,
            scintillation_loss_db: 0.5,
            atmospheric_loss_db: 0.3,
            shadow_sigma_db: 4.0,
            rician_factor: 2.8,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_ghz > 0.0) {
            return Err(Error::param("carrier_ghz", self.carrier_ghz));
        }
        if !(self.scintillation_loss_db >= 0.0) {
            return Err(Error::param("scintillation_loss_db", self.scintillation_loss_db));
        }
        if !(self.atmospheric_loss_db >= 0.0) {
            return Err(Error::param("atmospheric_loss_db", self.atmospheric_loss_db));
        }
        if !(self.shadow_sigma_db >= 0.0) {
            return Err(Error::param("shadow_sigma_db", self.shadow_sigma_db));
        }
        if !(self.rician_factor >= 0.0) {
            return Err(Error::param("rician_factor", self.rician_factor));
        }
        Ok(())
    }
}

/// Loss components in dB. `total_db` is always the plain sum of the parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossBreakdown {
    pub distance_km: f64,
    pub fspl_db: f64,
    pub shadow_db: f64,
    pub gas_db: f64,
    pub scint_db: f64,
    pub total_db: f64,
}

/// Which slant-range expression to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SlantRangeMode {
    /// `sqrt(R²sin²θ + r² + 2Rr) − R·sinθ`, the usual Earth-centred triangle.
    #[default]
    Corrected,
    /// `sqrt(R²sin²θ + r² + 2Rr − 2Rr·sinθ)`. Kept for comparison; it
    /// does not reduce to the altitude at zenith.
    Uncorrected,
}

/// Ground-terminal-to-satellite distance in km.
pub fn slant_range(geom: &OrbitGeometry, mode: SlantRangeMode) -> Result<f64> {
    geom.validate()?;
    let re = geom.earth_radius_km;
    let rm = geom.altitude_km;
    let s = crate::math::sin(geom.elevation_rad);
    let d = match mode {
        SlantRangeMode::Corrected => sqrt(re * re * s * s + rm * rm + 2.0 * re * rm) - re * s,
        SlantRangeMode::Uncorrected => {
            sqrt(re * re * s * s + rm * rm + 2.0 * re * rm - 2.0 * re * rm * s)
        }
    };
    Ok(d)
}

/// `32.45 + 20·log10(f_GHz) + 20·log10(d_m)`.
///
/// Numerically identical to the familiar MHz/km form with the same 32.45
/// constant (the two 10⁻³/10³ unit shifts cancel), and to the GHz/km form
/// with 92.45.
pub fn free_space_path_loss(distance_m: f64, carrier_ghz: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::param("distance_m", distance_m));
    }
    if !(carrier_ghz > 0.0) {
        return Err(Error::param("carrier_ghz", carrier_ghz));
    }
    Ok(32.45 + 20.0 * log10(carrier_ghz) + 20.0 * log10(distance_m))
}

/// One shadow-fading draw in dB: zero-mean Gaussian with std `sigma_db`.
pub fn shadow_fading_sample<R: Rng + ?Sized>(sigma_db: f64, rng: &mut R) -> f64 {
    // Always consume the draw so stream position does not depend on sigma.
    let z = standard_normal(rng);
    if sigma_db == 0.0 {
        0.0
    } else {
        sigma_db * z
    }
}

/// Downlink loss at an explicit distance.
pub fn path_loss_at(distance_km: f64, budget: &LinkBudget, shadow_db: f64) -> Result<PathLossBreakdown> {
    budget.validate()?;
    let fspl_db = free_space_path_loss(distance_km * 1e3, budget.carrier_ghz)?;
    let gas_db = budget.atmospheric_loss_db;
    let scint_db = budget.scintillation_loss_db;
    Ok(PathLossBreakdown {
        distance_km,
        fspl_db,
        shadow_db,
        gas_db,
        scint_db,
        total_db: fspl_db + shadow_db + gas_db + scint_db,
    })
}

/// Downlink loss `PL_tot = FSPL + SF + PL_g + PL_s` at the slant range.
pub fn total_path_loss(
    geom: &OrbitGeometry,
    budget: &LinkBudget,
    shadow_db: f64,
    mode: SlantRangeMode,
) -> Result<PathLossBreakdown> {
    let d = slant_range(geom, mode)?;
    path_loss_at(d, budget, shadow_db)
}

/// Inter-satellite loss: free space only, no shadowing, gas or scintillation.
pub fn isl_path_loss(geom: &OrbitGeometry, budget: &LinkBudget) -> Result<PathLossBreakdown> {
    geom.validate()?;
    budget.validate()?;
    let fspl_db = free_space_path_loss(geom.isl_distance_km * 1e3, budget.carrier_ghz)?;
    Ok(PathLossBreakdown {
        distance_km: geom.isl_distance_km,
        fspl_db,
        shadow_db: 0.0,
        gas_db: 0.0,
        scint_db: 0.0,
        total_db: fspl_db,
    })
}

/// `ζ(dB) = PL − G_T`.
#[inline]
pub fn large_scale_gain(total_db: f64, antenna_gain_db: f64) -> f64 {
    total_db - antenna_gain_db
}

/// `ζ_lin = 10^(−ζ_dB/10)`.
#[inline]
pub fn zeta_linear(zeta_db: f64) -> f64 {
    powf(10.0, -zeta_db / 10.0)
}

/// Circular orbital speed at altitude, km/s.
pub fn orbital_speed_km_s(earth_radius_km: f64, altitude_km: f64) -> f64 {
    sqrt(EARTH_MU_KM3_S2 / (earth_radius_km + altitude_km))
}

/// Doppler magnitude in Hz for a pass through the terminal's zenith.
///
/// The velocity of a circular orbit is perpendicular to the Earth-centre
/// radius, so its projection on the line of sight is `v·sin η` where `η` is
/// the nadir angle, `sin η = R_E·cosθ / (R_E + r_m)`. Zero at zenith.
pub fn doppler_shift(
    earth_radius_km: f64,
    altitude_km: f64,
    elevation_rad: f64,
    carrier_ghz: f64,
) -> Result<f64> {
    check_elevation(elevation_rad)?;
    if !(earth_radius_km > 0.0) {
        return Err(Error::param("earth_radius_km", earth_radius_km));
    }
    if !(altitude_km > 0.0) {
        return Err(Error::param("altitude_km", altitude_km));
    }
    if !(carrier_ghz > 0.0) {
        return Err(Error::param("carrier_ghz", carrier_ghz));
    }
    let v = orbital_speed_km_s(earth_radius_km, altitude_km);
    let projection = earth_radius_km * cos(elevation_rad) / (earth_radius_km + altitude_km);
    // cos(π/2) is 6e-17, not 0.
    let projection = if elevation_rad == FRAC_PI_2 { 0.0 } else { projection };
    Ok(carrier_ghz * 1e9 * v * projection / SPEED_OF_LIGHT_KM_S)
}

/// Source of the Doppler value used by the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DopplerModel {
    CircularOrbit,
    Fixed(f64),
}

/// Everything the `linkbudget` report prints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudgetReport {
    pub downlink: PathLossBreakdown,
    pub zeta_db: f64,
    pub zeta_linear: f64,
    pub isl: PathLossBreakdown,
    pub isl_zeta_db: f64,
    pub doppler_hz: f64,
}

pub fn link_budget_report(
    geom: &OrbitGeometry,
    budget: &LinkBudget,
    shadow_db: f64,
    mode: SlantRangeMode,
    doppler: DopplerModel,
) -> Result<LinkBudgetReport> {
    let downlink = total_path_loss(geom, budget, shadow_db, mode)?;
    let isl = isl_path_loss(geom, budget)?;
    let zeta_db = large_scale_gain(downlink.total_db, budget.sat_antenna_gain_db);
    let doppler_hz = match doppler {
        DopplerModel::CircularOrbit => doppler_shift(
            geom.earth_radius_km,
            geom.altitude_km,
            geom.elevation_rad,
            budget.carrier_ghz,
        )?,
        DopplerModel::Fixed(v) => v,
    };
    Ok(LinkBudgetReport {
        downlink,
        zeta_db,
        zeta_linear: zeta_linear(zeta_db),
        isl,
        isl_zeta_db: large_scale_gain(isl.total_db, budget.sat_antenna_gain_db),
        doppler_hz,
    })
}
