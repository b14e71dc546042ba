//! Binary snapshots of Higgs pairs.
//!
//! Layout: `HLSNAP01`, a u64 little-endian header length, the JSON header, then the
//! payload of little-endian f64 (re, im) pairs, site-major (x-major sites), matrix
//! entries row-major, one field after another at the offsets listed in the header.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fields::HiggsPair;
use crate::geometry::{FormDegree, MatrixField, Stencil, TorusGrid};

const MAGIC: &[u8; 8] = b"HLSNAP01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub degree: FormDegree,
    /// byte offset into the payload
    pub offset: u64,
    /// number of f64 values
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format_version: u32,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub r: usize,
    pub t: f64,
    pub stencil: Stencil,
    pub fixed_det: bool,
    pub seed: Option<u64>,
    pub fields: Vec<FieldEntry>,
}

pub fn encode(p: &HiggsPair, t: f64, seed: Option<u64>) -> Vec<u8> {
    let g = p.grid();
    let named = [("a2", p.a2()), ("phi", p.phi())];
    let mut fields = vec![];
    let mut payload = vec![];
    for (name, f) in named {
        let offset = payload.len() as u64;
        for z in f.data() {
            payload.extend_from_slice(&z.re.to_le_bytes());
            payload.extend_from_slice(&z.im.to_le_bytes());
        }
        fields.push(FieldEntry { name: name.into(), degree: f.degree(), offset, len: 2 * f.data().len() as u64 });
    }
    let header = SnapshotHeader {
        format_version: FORMAT_VERSION,
        n: g.n(),
        l: g.l(),
        r: p.r(),
        t,
        stencil: g.stencil(),
        fixed_det: p.fixed_det(),
        seed,
        fields,
    };
    let hj = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + hj.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(hj.len() as u64).to_le_bytes());
    out.extend_from_slice(&hj);
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<(HiggsPair, SnapshotHeader)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(LabError::Format("missing snapshot magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let hend = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| LabError::Format("truncated header".into()))?;
    let header: SnapshotHeader =
        serde_json::from_slice(&bytes[16..hend]).map_err(|e| LabError::Format(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(LabError::Format(format!("unsupported format_version {}", header.format_version)));
    }
    let payload = &bytes[hend..];
    let declared: u64 = header.fields.iter().map(|f| f.len * 8).sum();
    if declared != payload.len() as u64 {
        return Err(LabError::Format(format!("payload is {} bytes, header declares {declared}", payload.len())));
    }
    let grid = TorusGrid::new(header.n, header.l)?.with_stencil(header.stencil);
    let expect = (2 * grid.sites() * header.r * header.r) as u64;
    let read = |name: &str| -> Result<MatrixField> {
        let e = header
            .fields
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| LabError::Format(format!("field {name} missing")))?;
        if e.len != expect {
            return Err(LabError::Format(format!("field {name} has {} values, expected {expect}", e.len)));
        }
        let start = e.offset as usize;
        let raw = payload
            .get(start..start + 8 * e.len as usize)
            .ok_or_else(|| LabError::Format(format!("field {name} out of range")))?;
        let vals: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let data = vals.chunks_exact(2).map(|c| C::new(c[0], c[1])).collect();
        MatrixField::from_data(grid, header.r, e.degree, data)
    };
    let a = read("a2")?;
    let phi = read("phi")?;
    if !a.is_finite() || !phi.is_finite() {
        return Err(LabError::NonFinite("snapshot payload"));
    }
    Ok((HiggsPair::new(a, phi, header.fixed_det)?, header))
}

pub fn write(path: &Path, p: &HiggsPair, t: f64, seed: Option<u64>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(p, t, seed))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(HiggsPair, SnapshotHeader)> {
    decode(&fs::read(path)?)
}
