//! Published α:β settings, looked up by table, region, variant and tap layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Backbone, ReadoutKind};

/// Weight pair `(α, β)`.
pub type Weights = (f64, f64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetTable {
    /// Image reconstruction, CAE-FR in each region.
    Ir,
    /// Neural similarity, CAE-FR in each region.
    Nrs,
    /// Image reconstruction, all nine variants (region 3 only).
    IrVariants,
    /// Neural similarity, all nine variants, per region.
    NrsVariants,
}

impl PresetTable {
    pub const ALL: [PresetTable; 4] = [
        PresetTable::Ir,
        PresetTable::Nrs,
        PresetTable::IrVariants,
        PresetTable::NrsVariants,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PresetTable::Ir => "ir",
            PresetTable::Nrs => "nrs",
            PresetTable::IrVariants => "ir-variants",
            PresetTable::NrsVariants => "nrs-variants",
        }
    }
}

impl fmt::Display for PresetTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PresetTable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetTable::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset table {s:?}")))
    }
}

// Rows are tap layers h1..h4, columns regions 1..3.
const IR_CAE_FR: [[Weights; 3]; 4] = [
    [(1.0, 1e-5), (1.0, 1e-3), (1.0, 1e-4)],
    [(1.0, 1e-5), (1.0, 1e-4), (1.0, 1e-3)],
    [(1.0, 1e-4), (1.0, 1e-3), (1.0, 1e-5)],
    [(1.0, 1e-5), (1.0, 1e-4), (1.0, 1e-4)],
];

const NRS_CAE_FR: [[Weights; 3]; 4] = [
    [(1.0, 9e-1), (7e-1, 1.0), (8e-1, 1.0)],
    [(7e-1, 1.0), (1.0, 1e-2), (4e-1, 1.0)],
    [(1.0, 6e-1), (1e-4, 1.0), (1.0, 4e-1)],
    [(1.0, 9e-1), (1.0, 1e-2), (1.0, 9e-1)],
];

use Backbone::{Cae, Vae, Vqvae};
use ReadoutKind::{Fc, Fm, Fr};

type VariantRow = (Backbone, ReadoutKind, [Weights; 4]);

const IR_VARIANTS_R3: [VariantRow; 9] = [
    (
        Cae,
        Fr,
        [(1.0, 1e-4), (1.0, 5e-3), (1.0, 1e-3), (1.0, 1e-3)],
    ),
    (
        Cae,
        Fc,
        [(1.0, 1e-4), (1.0, 1e-4), (1.0, 1e-4), (1.0, 1e-4)],
    ),
    (
        Cae,
        Fm,
        [(1.0, 2e-1), (1.0, 1e-3), (1.0, 1e-4), (1.0, 1e-4)],
    ),
    (
        Vae,
        Fr,
        [(1.0, 2e-2), (1.0, 1e-2), (1.0, 2e-1), (1.0, 5e-3)],
    ),
    (
        Vae,
        Fc,
        [(1.0, 1e-2), (1.0, 5e-3), (1.0, 1e-3), (1.0, 1e-1)],
    ),
    (
        Vae,
        Fm,
        [(1.0, 5e-3), (1.0, 5e-2), (1.0, 2e-1), (1.0, 5e-3)],
    ),
    (
        Vqvae,
        Fr,
        [(1.0, 2e-2), (1.0, 2e-1), (1.0, 1e-2), (1.0, 1e-3)],
    ),
    (
        Vqvae,
        Fc,
        [(1.0, 1e-3), (1.0, 1e-4), (1.0, 1e-4), (1.0, 1e-4)],
    ),
    (
        Vqvae,
        Fm,
        [(1.0, 2e-1), (1.0, 1e-3), (1.0, 1e-2), (1.0, 1e-3)],
    ),
];

const NRS_VARIANTS_R1: [VariantRow; 9] = [
    (
        Cae,
        Fr,
        [(1.0, 5e-1), (1.0, 5e-2), (1.0, 5e-2), (1.0, 1e-2)],
    ),
    (
        Vae,
        Fr,
        [(1e-3, 1.0), (2e-2, 1.0), (1e-3, 1.0), (1e-1, 1.0)],
    ),
    (
        Vqvae,
        Fr,
        [(1.0, 2e-2), (1.0, 2e-1), (1.0, 5e-3), (1.0, 2e-1)],
    ),
    (
        Cae,
        Fc,
        [(5e-3, 1.0), (1e-3, 1.0), (2e-2, 1.0), (1e-2, 1.0)],
    ),
    (
        Vae,
        Fc,
        [(2e-2, 1.0), (1.0, 1e-2), (2e-1, 1.0), (1e-3, 1.0)],
    ),
    (
        Vqvae,
        Fc,
        [(1.0, 1e-1), (1.0, 5e-1), (1e-4, 1.0), (1e-2, 1.0)],
    ),
    (
        Cae,
        Fm,
        [(1e-2, 1.0), (5e-1, 1.0), (1.0, 1e-1), (1.0, 5e-1)],
    ),
    (
        Vae,
        Fm,
        [(1e-4, 1.0), (1e-3, 1.0), (1e-1, 1.0), (1e-1, 1.0)],
    ),
    (
        Vqvae,
        Fm,
        [(1e-1, 1.0), (1e-1, 1.0), (1.0, 1e-2), (1.0, 1.0)],
    ),
];

const NRS_VARIANTS_R2: [VariantRow; 9] = [
    (
        Cae,
        Fr,
        [(1.0, 2e-1), (1.0, 2e-2), (5e-3, 1.0), (1.0, 5e-3)],
    ),
    (
        Vae,
        Fr,
        [(5e-3, 1.0), (2e-1, 1.0), (5e-2, 1.0), (5e-1, 1.0)],
    ),
    (
        Vqvae,
        Fr,
        [(1.0, 1e-1), (2e-1, 1.0), (1.0, 1e-2), (1.0, 2e-1)],
    ),
    (
        Cae,
        Fc,
        [(1e-2, 1.0), (5e-3, 1.0), (1.0, 5e-2), (1e-4, 1.0)],
    ),
    (
        Vae,
        Fc,
        [(1e-2, 1.0), (5e-3, 1.0), (1.0, 5e-1), (1e-4, 1.0)],
    ),
    (
        Vqvae,
        Fc,
        [(1.0, 1.0), (5e-3, 1.0), (1e-3, 1.0), (1e-3, 1.0)],
    ),
    (
        Cae,
        Fm,
        [(1.0, 1e-1), (1.0, 1e-2), (1.0, 5e-3), (1.0, 5e-3)],
    ),
    (
        Vae,
        Fm,
        [(5e-2, 1.0), (1e-4, 1.0), (5e-3, 1.0), (2e-2, 1.0)],
    ),
    (
        Vqvae,
        Fm,
        [(1.0, 5e-2), (5e-2, 1.0), (1.0, 1e-1), (1.0, 5e-1)],
    ),
];

const NRS_VARIANTS_R3: [VariantRow; 9] = [
    (Cae, Fr, [(1.0, 1e-1), (1.0, 1.0), (1.0, 5e-2), (1.0, 1e-2)]),
    (Vae, Fr, [(1.0, 1e-4), (5e-1, 1.0), (1e-2, 1.0), (1.0, 1.0)]),
    (
        Vqvae,
        Fr,
        [(1.0, 2e-1), (1.0, 2e-2), (1.0, 1.0), (1e-4, 1.0)],
    ),
    (
        Cae,
        Fc,
        [(1.0, 2e-1), (5e-2, 1.0), (1.0, 1e-1), (1.0, 2e-1)],
    ),
    (
        Vae,
        Fc,
        [(1e-3, 1.0), (1e-2, 1.0), (5e-3, 1.0), (2e-1, 1.0)],
    ),
    (
        Vqvae,
        Fc,
        [(1e-1, 1.0), (1e-3, 1.0), (1e-2, 1.0), (1e-4, 1.0)],
    ),
    (
        Cae,
        Fm,
        [(5e-3, 1.0), (1.0, 5e-3), (1.0, 5e-1), (1e-2, 1.0)],
    ),
    (
        Vae,
        Fm,
        [(1e-3, 1.0), (1.0, 2e-1), (2e-2, 1.0), (5e-2, 1.0)],
    ),
    (
        Vqvae,
        Fm,
        [(1.0, 5e-1), (1e-4, 1.0), (1e-3, 1.0), (1e-3, 1.0)],
    ),
];

/// Region number (1..=3) from a name such as `"region3"` or `"3"`.
pub fn region_index(region: &str) -> Result<usize> {
    let digits = region.trim_start_matches("region");
    match digits.parse::<usize>() {
        Ok(r @ 1..=3) => Ok(r),
        _ => Err(Error::Config(format!(
            "unknown region {region:?}, expected region1..region3"
        ))),
    }
}

/// Looks up `(α, β)` for a variant. Tables without an entry for the
/// combination return a configuration error.
pub fn lookup(
    table: PresetTable,
    region: usize,
    backbone: Backbone,
    readout: ReadoutKind,
    tap: usize,
) -> Result<Weights> {
    let missing = || {
        Error::Config(format!(
            "preset table {table} has no entry for {backbone}-{readout} tap {tap} in region {region}"
        ))
    };
    if !(1..=4).contains(&tap) || !(1..=3).contains(&region) {
        return Err(missing());
    }
    let rows: &[VariantRow] = match table {
        PresetTable::Ir | PresetTable::Nrs => {
            if (backbone, readout) != (Cae, Fr) {
                return Err(missing());
            }
            let t = if table == PresetTable::Ir {
                &IR_CAE_FR
            } else {
                &NRS_CAE_FR
            };
            return Ok(t[tap - 1][region - 1]);
        }
        PresetTable::IrVariants if region == 3 => &IR_VARIANTS_R3,
        PresetTable::IrVariants => return Err(missing()),
        PresetTable::NrsVariants => match region {
            1 => &NRS_VARIANTS_R1,
            2 => &NRS_VARIANTS_R2,
            _ => &NRS_VARIANTS_R3,
        },
    };
    rows.iter()
        .find(|(b, r, _)| (*b, *r) == (backbone, readout))
        .map(|(_, _, w)| w[tap - 1])
        .ok_or_else(missing)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region3_cae_fr_entries() {
        assert_eq!(lookup(PresetTable::Ir, 3, Cae, Fr, 1).unwrap(), (1.0, 1e-4));
        assert_eq!(
            lookup(PresetTable::IrVariants, 3, Cae, Fr, 2).unwrap(),
            (1.0, 5e-3)
        );
        assert_eq!(
            lookup(PresetTable::Nrs, 2, Cae, Fr, 3).unwrap(),
            (1e-4, 1.0)
        );
    }

    #[test]
    fn missing_combinations_error() {
        assert!(lookup(PresetTable::Ir, 3, Vae, Fr, 1).is_err());
        assert!(lookup(PresetTable::IrVariants, 1, Cae, Fr, 1).is_err());
        assert!(lookup(PresetTable::Ir, 3, Cae, Fr, 5).is_err());
    }

    #[test]
    fn names_round_trip() {
        for t in PresetTable::ALL {
            assert_eq!(t.name().parse::<PresetTable>().unwrap(), t);
        }
        assert_eq!(region_index("region2").unwrap(), 2);
        assert!(region_index("region4").is_err());
    }
}
