//! Plain-text kernel catalogs and kernel-curve dumps.
//!
//! A catalog is a TOML document:
//!
//! ```toml
//! version = 1
//!
//! [[kernel]]
//! variant = "log"
//! head = 0
//! heads = 4
//! params = [0.25, 1.0]
//! ```
//!
//! `relaxed = true` on an entry admits exponents above 2 (boundary probes).

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{KernelSpec, Variant};
use crate::error::{KerpleError, Result};

pub const CATALOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub variant: Variant,
    #[serde(default)]
    pub head: usize,
    #[serde(default = "one")]
    pub heads: usize,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub relaxed: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub version: u32,
    #[serde(rename = "kernel", default)]
    pub entries: Vec<CatalogEntry>,
}

impl Catalog {
    pub fn from_specs(specs: &[KernelSpec]) -> Self {
        let entries = specs
            .iter()
            .map(|s| CatalogEntry {
                variant: s.variant(),
                head: s.head_index(),
                heads: s.num_heads(),
                params: s.params().to_vec(),
                relaxed: s.is_relaxed(),
            })
            .collect();
        Self {
            version: CATALOG_VERSION,
            entries,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cat: Catalog = toml::from_str(text).map_err(|e| KerpleError::Config(e.to_string()))?;
        if cat.version != CATALOG_VERSION {
            return Err(KerpleError::Config(format!(
                "unsupported catalog version {} (expected {CATALOG_VERSION})",
                cat.version
            )));
        }
        Ok(cat)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("catalog is always serializable")
    }

    pub fn specs(&self) -> Result<Vec<KernelSpec>> {
        self.entries
            .iter()
            .map(|e| {
                if e.relaxed {
                    KernelSpec::relaxed(e.variant, e.params.clone())
                } else {
                    KernelSpec::new(e.variant, e.params.clone(), e.head, e.heads)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub distance: usize,
    pub value: f64,
    pub head: usize,
    pub variant: Variant,
}

/// Bias value of every spec at every distance in `0..=max_distance`.
pub fn kernel_curves(specs: &[KernelSpec], max_distance: usize) -> Vec<CurvePoint> {
    specs
        .iter()
        .flat_map(|s| {
            (0..=max_distance).map(move |d| CurvePoint {
                distance: d,
                value: s.eval_bias(d as i64),
                head: s.head_index(),
                variant: s.variant(),
            })
        })
        .collect()
}

/// Columns: `distance,value,head,variant`.
pub fn write_kernel_curves_csv<W: Write>(mut w: W, points: &[CurvePoint]) -> Result<()> {
    writeln!(w, "distance,value,head,variant")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.distance, p.value, p.head, p.variant)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_round_trip() {
        let specs = vec![
            KernelSpec::single(Variant::Log, &[0.5, 2.0]).unwrap(),
            KernelSpec::alibi(3, 8).unwrap(),
            KernelSpec::relaxed(Variant::Power, vec![1.0, 3.0]).unwrap(),
        ];
        let text = Catalog::from_specs(&specs).to_text();
        let back = Catalog::parse(&text).unwrap().specs().unwrap();
        assert_eq!(back, specs);
    }

    #[test]
    fn handwritten_catalog() {
        let text = r#"
version = 1

[[kernel]]
variant = "power"
params = [1.0, 1.5]

[[kernel]]
variant = "alibi"
head = 2
heads = 12
"#;
        let specs = Catalog::parse(text).unwrap().specs().unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[1].slope(), (-8.0 * 3.0f64 / 12.0).exp2());
    }

    #[test]
    fn rejects_bad_catalogs() {
        assert!(Catalog::parse("version = 2").is_err());
        let bad = "version = 1\n[[kernel]]\nvariant = \"power\"\nparams = [1.0, 2.5]\n";
        assert!(Catalog::parse(bad).unwrap().specs().is_err());
        assert!(Catalog::parse("version = 1\n[[kernel]]\nvariant = \"rope\"\n").is_err());
    }

    #[test]
    fn curve_csv_layout() {
        let spec = KernelSpec::single(Variant::Power, &[1.0, 1.0]).unwrap();
        let pts = kernel_curves(&[spec], 2);
        let mut buf = Vec::new();
        write_kernel_curves_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "distance,value,head,variant\n0,0,0,power\n1,-1,0,power\n2,-2,0,power\n");
    }
}
