// SPDX-License-Identifier: Apache-2.0
//! On-disk datasets: a directory holding `manifest.csv`, design PGMs under
//! `designs/` and binary mask PGMs under `masks/`.
//!
//! ```text
//! design,mask,mask_mse,provenance
//! designs/d0000.pgm,masks/m0000.pgm,212,ilt
//! designs/d0001.pgm,,,
//! ```
//!
//! Unlabeled designs leave the last three columns empty.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use litho_cfno::ilt::MaskGrid;
use litho_cfno::layout::LayoutRaster;
use litho_cfno::lgst::{Provenance, Sample, TrainingSet};

use crate::error::{read_bytes, read_to_string, write_bytes, IoError, Result};
use crate::pgm::{decode_binary, encode_binary};

pub const MANIFEST: &str = "manifest.csv";
const HEADER: &str = "design,mask,mask_mse,provenance";

#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub mask: String,
    pub mask_mse: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub design: String,
    pub label: Option<Label>,
}

pub fn provenance_str(p: Provenance) -> String {
    match p {
        Provenance::Ilt => "ilt".into(),
        Provenance::ModelRound(r) => format!("round{r}"),
    }
}

fn parse_provenance(s: &str) -> Option<Provenance> {
    match s {
        "ilt" => Some(Provenance::Ilt),
        _ => s
            .strip_prefix("round")?
            .parse()
            .ok()
            .map(Provenance::ModelRound),
    }
}

pub fn serialize_manifest(rows: &[Row]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in rows {
        match &r.label {
            Some(l) => writeln!(
                s,
                "{},{},{},{}",
                r.design,
                l.mask,
                l.mask_mse,
                provenance_str(l.provenance)
            ),
            None => writeln!(s, "{},,,", r.design),
        }
        .expect("string write");
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<Row>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => {
            return Err(IoError::syntax(
                1,
                format!("manifest must start with `{HEADER}`"),
            ))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let [design, mask, mse, prov] = f[..] else {
            return Err(IoError::syntax(
                i + 1,
                format!("expected 4 fields, found {}", f.len()),
            ));
        };
        if design.is_empty() {
            return Err(IoError::syntax(i + 1, "empty design path"));
        }
        let label = if mask.is_empty() && mse.is_empty() && prov.is_empty() {
            None
        } else {
            let mask_mse = mse
                .parse()
                .map_err(|_| IoError::syntax(i + 1, format!("`{mse}` is not a number")))?;
            let provenance = parse_provenance(prov)
                .ok_or_else(|| IoError::syntax(i + 1, format!("unknown provenance `{prov}`")))?;
            if mask.is_empty() {
                return Err(IoError::syntax(i + 1, "labelled row without a mask path"));
            }
            Some(Label {
                mask: mask.to_string(),
                mask_mse,
                provenance,
            })
        };
        rows.push(Row {
            design: design.to_string(),
            label,
        });
    }
    Ok(rows)
}

fn design_path(i: usize) -> String {
    format!("designs/d{i:04}.pgm")
}

fn mask_path(i: usize) -> String {
    format!("masks/m{i:04}.pgm")
}

/// Writes unlabeled designs and their manifest into `dir`.
pub fn save_designs(dir: &Path, designs: &[LayoutRaster]) -> Result<()> {
    let mut rows = Vec::with_capacity(designs.len());
    for (i, d) in designs.iter().enumerate() {
        let rel = design_path(i);
        write_bytes(&dir.join(&rel), &encode_binary(d.pixels()))?;
        rows.push(Row {
            design: rel,
            label: None,
        });
    }
    write_bytes(&dir.join(MANIFEST), serialize_manifest(&rows).as_bytes())
}

pub fn save_training_set(dir: &Path, ds: &TrainingSet) -> Result<()> {
    let mut rows = Vec::with_capacity(ds.len());
    for (i, s) in ds.samples().iter().enumerate() {
        let design = design_path(i);
        let mask = mask_path(i);
        write_bytes(&dir.join(&design), &encode_binary(s.design.pixels()))?;
        let bits = s.mask.values().map(|&v| u8::from(v >= 0.5));
        write_bytes(&dir.join(&mask), &encode_binary(&bits))?;
        rows.push(Row {
            design,
            label: Some(Label {
                mask,
                mask_mse: s.mask_mse,
                provenance: s.provenance,
            }),
        });
    }
    write_bytes(&dir.join(MANIFEST), serialize_manifest(&rows).as_bytes())
}

pub struct Loaded {
    pub rows: Vec<Row>,
    pub designs: Vec<LayoutRaster>,
    pub dir: PathBuf,
}

pub fn load_designs(dir: &Path, nm_per_px: f64) -> Result<Loaded> {
    let rows = parse_manifest(&read_to_string(&dir.join(MANIFEST))?)?;
    let designs = rows
        .iter()
        .map(|r| {
            Ok(LayoutRaster::new(
                decode_binary(&read_bytes(&dir.join(&r.design))?)?,
                nm_per_px,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Loaded {
        rows,
        designs,
        dir: dir.to_path_buf(),
    })
}

/// Loads a fully labelled dataset. Stored MSE values are taken as written;
/// callers that train on them check them with `TrainingSet::verify`.
pub fn load_training_set(dir: &Path, nm_per_px: f64) -> Result<TrainingSet> {
    let loaded = load_designs(dir, nm_per_px)?;
    let mut samples = Vec::with_capacity(loaded.rows.len());
    for (r, design) in loaded.rows.into_iter().zip(loaded.designs) {
        let l = r.label.ok_or_else(|| {
            IoError::Format(format!(
                "design `{}` has no label; run `ilt` first",
                r.design
            ))
        })?;
        let bits = decode_binary(&read_bytes(&dir.join(&l.mask))?)?;
        let mask = MaskGrid::new(bits.map(|&b| f64::from(b)), nm_per_px)?;
        samples.push(Sample {
            design,
            mask,
            mask_mse: l.mask_mse,
            provenance: l.provenance,
        });
    }
    Ok(TrainingSet::new(samples, 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let rows = vec![
            Row {
                design: "designs/d0000.pgm".into(),
                label: Some(Label {
                    mask: "masks/m0000.pgm".into(),
                    mask_mse: 212.5,
                    provenance: Provenance::ModelRound(3),
                }),
            },
            Row {
                design: "designs/d0001.pgm".into(),
                label: None,
            },
        ];
        let text = serialize_manifest(&rows);
        assert!(text.contains(",,,\n"));
        assert_eq!(parse_manifest(&text).unwrap(), rows);
    }

    #[test]
    fn manifest_errors() {
        assert!(parse_manifest("design,mask\n").is_err());
        assert!(parse_manifest(&format!("{HEADER}\na.pgm,m.pgm,1\n")).is_err());
        assert!(parse_manifest(&format!("{HEADER}\na.pgm,m.pgm,x,ilt\n")).is_err());
        assert!(parse_manifest(&format!("{HEADER}\na.pgm,m.pgm,1,teacher\n")).is_err());
        assert!(parse_manifest(&format!("{HEADER}\na.pgm,,1,ilt\n")).is_err());
    }
}
