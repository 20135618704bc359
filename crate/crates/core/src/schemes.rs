//! D-RSMA and its two baselines as masks over the same stream set.
//!
//! Switching off the super-common stream leaves the GEO multicasting its
//! designated stream to all GUs (M-RSMA); also switching off the sub-common
//! streams leaves plain SDMA at every LEO (M-SDMA). Disabled streams are
//! removed from the subproblem together with their rate variables, so a
//! masked problem is the unmasked one restricted to `F = 0`, `c = 0` on the
//! disabled pieces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rates::CovariateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "DRSMA")]
    DRsma,
    #[serde(rename = "M_RSMA")]
    MRsma,
    #[serde(rename = "M_SDMA")]
    MSdma,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::DRsma, Scheme::MRsma, Scheme::MSdma];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::DRsma => "DRSMA",
            Scheme::MRsma => "M_RSMA",
            Scheme::MSdma => "M_SDMA",
        }
    }

    pub fn mask(self) -> StreamMask {
        match self {
            Scheme::DRsma => StreamMask { enable_geo_common: true, enable_sub_common: true },
            Scheme::MRsma => StreamMask { enable_geo_common: false, enable_sub_common: true },
            Scheme::MSdma => StreamMask { enable_geo_common: false, enable_sub_common: false },
        }
    }

    /// The scheme whose feasible set sits directly inside this one's.
    pub fn restriction(self) -> Option<Scheme> {
        match self {
            Scheme::DRsma => Some(Scheme::MRsma),
            Scheme::MRsma => Some(Scheme::MSdma),
            Scheme::MSdma => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_uppercase();
        match norm.as_str() {
            "DRSMA" => Ok(Scheme::DRsma),
            "MRSMA" => Ok(Scheme::MRsma),
            "MSDMA" => Ok(Scheme::MSdma),
            _ => Err(Error::InvalidConfig(format!("unknown scheme `{s}` (expected DRSMA, M_RSMA or M_SDMA)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamMask {
    pub enable_geo_common: bool,
    pub enable_sub_common: bool,
}

impl StreamMask {
    pub const FULL: StreamMask = StreamMask { enable_geo_common: true, enable_sub_common: true };

    /// Whether `self` only enables streams that `other` enables too.
    pub fn is_restriction_of(&self, other: &StreamMask) -> bool {
        (!self.enable_geo_common || other.enable_geo_common) && (!self.enable_sub_common || other.enable_sub_common)
    }
}

/// Zeroes the covariance blocks of disabled streams.
pub fn apply_mask(mask: StreamMask, f: &mut CovariateSet) {
    if !mask.enable_geo_common {
        f.geo_common.fill(num_complex::Complex64::new(0.0, 0.0));
    }
    if !mask.enable_sub_common {
        for b in &mut f.sub_common {
            b.fill(num_complex::Complex64::new(0.0, 0.0));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_nest() {
        assert_eq!(Scheme::DRsma.mask(), StreamMask::FULL);
        for s in Scheme::ALL {
            if let Some(r) = s.restriction() {
                assert!(r.mask().is_restriction_of(&s.mask()));
                assert!(!s.mask().is_restriction_of(&r.mask()));
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("D-RSMA".parse::<Scheme>().unwrap(), Scheme::DRsma);
        assert_eq!("m_rsma".parse::<Scheme>().unwrap(), Scheme::MRsma);
        assert_eq!("M-SDMA".parse::<Scheme>().unwrap(), Scheme::MSdma);
        assert!("NOMA".parse::<Scheme>().is_err());
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
    }
}
