//! Event logs and measure snapshots, with CSV and binary export.
//!
//! Both formats carry the same five columns: `replicate, time, kind, site,
//! mass`. For branch events the `mass` column holds the offspring count.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! bytes 0..6    magic "SKSIM1"
//! bytes 6..8    u16 format version (1)
//! bytes 8..16   u64 record count
//! then per record five f64: replicate, time, kind code, site, mass
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"SKSIM1";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Excursion-surrogate immigration of mass epsilon.
    Continuous,
    /// Immigration of a jump atom's mass.
    Discontinuous,
    /// Immigration at a skeleton branch point.
    BranchPoint,
    /// Skeleton branching; `mass` is the offspring count.
    Branch,
    /// Snapshot row: a mass particle of the dressed measure or superprocess.
    MassAtom,
    /// Snapshot row: a skeleton particle (mass column 1).
    SkeletonAtom,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Continuous,
        EventKind::Discontinuous,
        EventKind::BranchPoint,
        EventKind::Branch,
        EventKind::MassAtom,
        EventKind::SkeletonAtom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Continuous => "continuous",
            EventKind::Discontinuous => "discontinuous",
            EventKind::BranchPoint => "branch-point",
            EventKind::Branch => "branch",
            EventKind::MassAtom => "mass-atom",
            EventKind::SkeletonAtom => "skeleton-atom",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            EventKind::Continuous => 0,
            EventKind::Discontinuous => 1,
            EventKind::BranchPoint => 2,
            EventKind::Branch => 3,
            EventKind::MassAtom => 4,
            EventKind::SkeletonAtom => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        EventKind::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn is_immigration(self) -> bool {
        matches!(
            self,
            EventKind::Continuous | EventKind::Discontinuous | EventKind::BranchPoint
        )
    }
}

/// One logged event of a dressed or skeleton simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub site: f64,
    pub mass: f64,
    /// Skeleton particle that triggered the event.
    pub source: u64,
}

/// A flat record as written to CSV or binary files.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub replicate: u64,
    pub time: f64,
    pub kind: EventKind,
    pub site: f64,
    pub mass: f64,
}

impl Record {
    pub fn from_event(replicate: u64, e: &Event) -> Self {
        Record {
            replicate,
            time: e.time,
            kind: e.kind,
            site: e.site,
            mass: e.mass,
        }
    }
}

pub fn write_csv<W: Write>(mut out: W, records: &[Record]) -> std::io::Result<()> {
    writeln!(out, "replicate,time,kind,site,mass")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.replicate,
            r.time,
            r.kind.as_str(),
            r.site,
            r.mass
        )?;
    }
    Ok(())
}

pub fn write_binary<W: Write>(mut out: W, records: &[Record]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        for v in [
            r.replicate as f64,
            r.time,
            r.kind.code() as f64,
            r.site,
            r.mass,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Vec<Record>> {
    let bad = |m: &str| Error::SchemeFailure {
        equation: "snapshot",
        detail: m.to_string(),
    };
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..6] != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = u16::from_le_bytes([header[6], header[7]]);
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut buf = [0u8; 40];
    for _ in 0..count {
        input.read_exact(&mut buf)?;
        let f = |i: usize| f64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().unwrap());
        let kind = EventKind::from_code(f(2) as u8).ok_or_else(|| bad("unknown kind code"))?;
        records.push(Record {
            replicate: f(0) as u64,
            time: f(1),
            kind,
            site: f(3),
            mass: f(4),
        });
    }
    Ok(records)
}
