//! Energy unit handling. Internally ħ = 1 and everything is rad/ps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Speed of light in cm/s.
const SPEED_OF_LIGHT_CM_PER_S: f64 = 2.997_924_58e10;

/// Angular frequency (rad/ps) of one wavenumber: 2πc with c in cm/ps.
pub const RAD_PS_PER_WAVENUMBER: f64 =
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_CM_PER_S * 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EnergyUnit {
    #[serde(rename = "cm-1")]
    Wavenumber,
    #[default]
    #[serde(rename = "rad/ps", alias = "rad-ps")]
    RadPerPs,
}

impl EnergyUnit {
    /// Factor that converts a value in this unit to rad/ps.
    pub fn to_rad_ps(self) -> f64 {
        match self {
            EnergyUnit::Wavenumber => RAD_PS_PER_WAVENUMBER,
            EnergyUnit::RadPerPs => 1.0,
        }
    }

    pub fn convert(self, value: f64) -> f64 {
        value * self.to_rad_ps()
    }

    /// Inverse of [`EnergyUnit::convert`].
    pub fn from_rad_ps(self, value: f64) -> f64 {
        value / self.to_rad_ps()
    }
}

impl FromStr for EnergyUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cm-1" | "cm^-1" => Ok(EnergyUnit::Wavenumber),
            "rad/ps" | "rad-ps" => Ok(EnergyUnit::RadPerPs),
            other => Err(Error::invalid(format!(
                "unknown unit '{other}' (expected cm-1 or rad-ps)"
            ))),
        }
    }
}

impl fmt::Display for EnergyUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnergyUnit::Wavenumber => f.write_str("cm-1"),
            EnergyUnit::RadPerPs => f.write_str("rad/ps"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavenumber_factor() {
        assert!((RAD_PS_PER_WAVENUMBER - 0.188365).abs() < 5e-7);
        assert_eq!(EnergyUnit::RadPerPs.convert(1.0), 1.0);
    }

    #[test]
    fn parse_units() {
        assert_eq!("cm-1".parse::<EnergyUnit>().unwrap(), EnergyUnit::Wavenumber);
        assert_eq!("rad-ps".parse::<EnergyUnit>().unwrap(), EnergyUnit::RadPerPs);
        assert!("eV".parse::<EnergyUnit>().is_err());
    }
}
