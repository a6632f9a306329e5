//! Event-set file formats.
//!
//! Binary layout (all little-endian):
//!
//! | field          | type     |
//! |----------------|----------|
//! | magic `AMIL`   | 4 bytes  |
//! | version        | u32      |
//! | family tag     | u32      |
//! | θ              | f64      |
//! | n              | u64      |
//! | dim            | u32      |
//! | informative    | u32      |
//! | seed           | u64      |
//! | features       | n·dim f64, row-major |
//!
//! Family tags: 0 gauss-shift, 1 gauss-log-var, 2 background.

use std::io::{Read, Write};
use std::path::Path;

use super::events::{EventSet, EventSource};
use super::family::{EventFamily, FamilyKind};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const EVENTS_MAGIC: &[u8; 4] = b"AMIL";
pub const EVENTS_VERSION: u32 = 1;
const BACKGROUND_TAG: u32 = 2;

pub fn write_events<W: Write>(ev: &EventSet, mut w: W) -> Result<()> {
    let (tag, informative) = match ev.source {
        EventSource::Family(f) => (f.kind.tag(), f.dim as u32),
        EventSource::Background { .. } => (BACKGROUND_TAG, 0),
    };
    w.write_all(EVENTS_MAGIC)?;
    w.write_all(&EVENTS_VERSION.to_le_bytes())?;
    w.write_all(&tag.to_le_bytes())?;
    w.write_all(&ev.theta.to_le_bytes())?;
    w.write_all(&(ev.len() as u64).to_le_bytes())?;
    w.write_all(&(ev.dim_total() as u32).to_le_bytes())?;
    w.write_all(&informative.to_le_bytes())?;
    w.write_all(&ev.seed.to_le_bytes())?;
    let mut buf = Vec::with_capacity(ev.features.as_slice().len() * 8);
    for v in ev.features.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|_| Error::Integrity("event file header truncated".into()))?;
    Ok(b)
}

pub fn read_events<R: Read>(mut r: R) -> Result<EventSet> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != EVENTS_MAGIC {
        return Err(Error::Format("not an event file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != EVENTS_VERSION {
        return Err(Error::Format(format!(
            "unsupported event file version {version}"
        )));
    }
    let tag = u32::from_le_bytes(read_array(&mut r)?);
    let theta = f64::from_le_bytes(read_array(&mut r)?);
    let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let informative = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let seed = u64::from_le_bytes(read_array(&mut r)?);

    let source = if tag == BACKGROUND_TAG {
        EventSource::Background { dim_total: dim }
    } else {
        let kind = FamilyKind::from_tag(tag)
            .ok_or_else(|| Error::Format(format!("unknown family tag {tag}")))?;
        if informative == 0 || informative > dim {
            return Err(Error::Format(format!(
                "bad informative dim {informative} for width {dim}"
            )));
        }
        EventSource::Family(EventFamily::with_dims(kind, informative, dim - informative))
    };

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != n * dim * 8 {
        return Err(Error::Integrity(format!(
            "payload is {} bytes, header promises {}",
            payload.len(),
            n * dim * 8
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(EventSet {
        source,
        features: Matrix::from_vec(n, dim, data),
        theta,
        seed,
    })
}

pub fn save_events(ev: &EventSet, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_events(ev, std::io::BufWriter::new(f))
}

pub fn load_events(path: &Path) -> Result<EventSet> {
    let f = std::fs::File::open(path)?;
    read_events(std::io::BufReader::new(f))
}

/// CSV with a header row `x0,x1,...`.
pub fn write_events_csv<W: Write>(ev: &EventSet, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record((0..ev.dim_total()).map(|j| format!("x{j}")))?;
    for row in ev.features.iter_rows() {
        wr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
