//! Versioned, checksummed binary pose-graph files for save/continue mapping.
//!
//! Layout: `FSPGRAPH` magic, u32 version, u64 body length, body, u64 FNV-1a
//! of the body. All integers and floats are little-endian; floats are stored
//! bit-exact.

use super::{EdgeKind, GraphConfig, GraphSlam, PoseGraph, PoseGraphEdge, PoseGraphNode};
use crate::geometry::Pose2;
use crate::world::LaserScan;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"FSPGRAPH";
pub const FORMAT_VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SerializeError {
    #[error("not a pose-graph file")]
    BadMagic,
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("truncated payload")]
    Truncated,
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn config_hash(cfg: &GraphConfig) -> u64 {
    fnv1a64(format!("{cfg:?}").as_bytes())
}

/// Mapper state recovered from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedGraph {
    pub graph: PoseGraph,
    pub pending: Pose2,
    pub since_optimize: usize,
    pub config_hash: u64,
}

struct W(Vec<u8>);

impl W {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn pose(&mut self, p: &Pose2) {
        self.f64(p.x);
        self.f64(p.y);
        self.f64(p.theta);
    }
}

struct R<'a> {
    b: &'a [u8],
    at: usize,
}

impl R<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], SerializeError> {
        let s = self.b.get(self.at..self.at + n).ok_or(SerializeError::Truncated)?;
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, SerializeError> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64, SerializeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, SerializeError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn pose(&mut self) -> Result<Pose2, SerializeError> {
        // raw fields: a bit-exact round trip must not re-wrap theta
        Ok(Pose2 {
            x: self.f64()?,
            y: self.f64()?,
            theta: self.f64()?,
        })
    }
    fn len(&mut self, elem_size: usize) -> Result<usize, SerializeError> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem_size) > self.b.len() - self.at {
            return Err(SerializeError::Truncated);
        }
        Ok(n)
    }
}

fn kind_tag(k: EdgeKind) -> u8 {
    match k {
        EdgeKind::Odometry => 0,
        EdgeKind::ScanMatch => 1,
        EdgeKind::LoopClosure => 2,
    }
}

pub fn serialize(slam: &GraphSlam) -> Vec<u8> {
    let g = &slam.graph;
    let mut w = W(Vec::new());
    w.u64(config_hash(&slam.cfg));
    w.u64(g.anchor);
    w.pose(&slam.pending);
    w.u64(slam.since_optimize as u64);
    w.u64(g.nodes.len() as u64);
    for n in &g.nodes {
        w.u64(n.id);
        w.pose(&n.pose);
        let s = &n.scan;
        for v in [s.timestamp, s.angle_min, s.angle_increment, s.range_min, s.range_max] {
            w.f64(v);
        }
        w.u64(s.ranges.len() as u64);
        for r in &s.ranges {
            w.f64(*r);
        }
    }
    w.u64(g.edges.len() as u64);
    for e in &g.edges {
        w.u64(e.from);
        w.u64(e.to);
        w.u8(kind_tag(e.kind));
        w.pose(&e.measurement);
        for row in &e.information {
            for v in row {
                w.f64(*v);
            }
        }
    }
    let body = w.0;
    let mut out = Vec::with_capacity(HEADER + body.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&fnv1a64(&body).to_le_bytes());
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<SavedGraph, SerializeError> {
    if bytes.len() < MAGIC.len() {
        return Err(SerializeError::Truncated);
    }
    if &bytes[..8] != MAGIC {
        return Err(SerializeError::BadMagic);
    }
    if bytes.len() < HEADER {
        return Err(SerializeError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(SerializeError::Version { found: version });
    }
    let body_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let end = HEADER.checked_add(body_len).ok_or(SerializeError::Truncated)?;
    if bytes.len() < end + 8 {
        return Err(SerializeError::Truncated);
    }
    let body = &bytes[HEADER..end];
    let stored = u64::from_le_bytes(bytes[end..end + 8].try_into().unwrap());
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(SerializeError::Checksum { stored, computed });
    }
    let mut r = R { b: body, at: 0 };
    let config_hash = r.u64()?;
    let anchor = r.u64()?;
    let pending = r.pose()?;
    let since_optimize = r.u64()? as usize;
    let n_nodes = r.len(8 * 10)?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let id = r.u64()?;
        let pose = r.pose()?;
        let (timestamp, angle_min, angle_increment, range_min, range_max) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let n = r.len(8)?;
        let ranges = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        if nodes.last().is_some_and(|p: &PoseGraphNode| p.id >= id) {
            return Err(SerializeError::Malformed("node ids not increasing"));
        }
        nodes.push(PoseGraphNode {
            id,
            pose,
            scan: LaserScan {
                timestamp,
                angle_min,
                angle_increment,
                range_min,
                range_max,
                ranges,
            },
        });
    }
    let n_edges = r.len(8 + 8 + 1 + 24 + 72)?;
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let from = r.u64()?;
        let to = r.u64()?;
        let kind = match r.u8()? {
            0 => EdgeKind::Odometry,
            1 => EdgeKind::ScanMatch,
            2 => EdgeKind::LoopClosure,
            _ => return Err(SerializeError::Malformed("unknown edge kind")),
        };
        let measurement = r.pose()?;
        let mut information = [[0.0; 3]; 3];
        for row in &mut information {
            for v in row.iter_mut() {
                *v = r.f64()?;
            }
        }
        edges.push(PoseGraphEdge {
            from,
            to,
            measurement,
            information,
            kind,
        });
    }
    if r.at != body.len() {
        return Err(SerializeError::Malformed("trailing bytes"));
    }
    let graph = PoseGraph { nodes, edges, anchor };
    let ids = graph.index_map();
    if !graph.nodes.is_empty() && !ids.contains_key(&anchor) {
        return Err(SerializeError::Malformed("anchor is not a node"));
    }
    if graph.edges.iter().any(|e| !ids.contains_key(&e.from) || !ids.contains_key(&e.to)) {
        return Err(SerializeError::Malformed("edge references a missing node"));
    }
    Ok(SavedGraph {
        graph,
        pending,
        since_optimize,
        config_hash,
    })
}

impl GraphSlam {
    pub fn save(&self) -> Vec<u8> {
        serialize(self)
    }

    /// Continue mapping from a saved state. The returned flag is false when the
    /// file was written under a different configuration.
    pub fn restore(saved: SavedGraph, cfg: GraphConfig) -> (Self, bool) {
        let same = saved.config_hash == config_hash(&cfg);
        (
            Self {
                cfg,
                graph: saved.graph,
                pending: saved.pending,
                since_optimize: saved.since_optimize,
            },
            same,
        )
    }
}
