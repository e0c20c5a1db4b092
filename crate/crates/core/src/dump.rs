//! Binary dumps of snapshots and full histories.
//!
//! Layout, all little-endian:
//!
//! ```text
//! u64 n, u64 method tag, u64 count, then count records of f64
//! ```
//!
//! Tag 0 holds snapshots, each record being `t, u[n]`. Tags 1–4 (euler,
//! erk2 with c2 = 1, col3, gl4) hold history segments, each record being
//! `t_start, t_end, u_start[n], u_end[n], G_1[n] .. G_s[n]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::history::{HistoryBuffer, Segment};
use crate::method::{Method, MethodKind};
use crate::operator::GridFunction;
use crate::problem::HistoryFn;

pub const SNAPSHOT_TAG: u64 = 0;

pub fn method_tag(method: &Method) -> Option<u64> {
    match method.kind() {
        MethodKind::Euler => Some(1),
        MethodKind::Erk2 { c2 } if *c2 == 1.0 => Some(2),
        MethodKind::Erk2 { .. } => None,
        MethodKind::Collocation => match method.name().as_str() {
            "col3" => Some(3),
            "gl4" => Some(4),
            _ => None,
        },
    }
}

fn method_from_tag(tag: u64) -> Result<Method> {
    match tag {
        1 => Ok(Method::euler()),
        2 => Method::erk2(1.0),
        3 => Ok(Method::col3()),
        4 => Ok(Method::gl4()),
        other => Err(Error::Format(format!("unknown method tag {other}"))),
    }
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated record: {e}")))?;
    Ok(f64::from_le_bytes(b))
}

fn read_grid(r: &mut impl Read, n: usize) -> Result<GridFunction> {
    let values = (0..n).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
    GridFunction::new(values).map_err(|e| Error::Format(e.to_string()))
}

/// Header of a dump file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub n: u64,
    pub tag: u64,
    pub count: u64,
}

fn read_header(r: &mut impl Read) -> Result<Header> {
    let n = read_u64(r)?;
    let tag = read_u64(r)?;
    let count = read_u64(r)?;
    if n == 0 {
        return Err(Error::Format("zero grid size".into()));
    }
    Ok(Header { n, tag, count })
}

pub fn write_snapshots(w: &mut impl Write, snapshots: &[(f64, &GridFunction)]) -> Result<()> {
    let n = snapshots
        .first()
        .map(|(_, u)| u.len())
        .ok_or_else(|| Error::InvalidArgument("no snapshots to write".into()))?;
    write_u64(w, n as u64)?;
    write_u64(w, SNAPSHOT_TAG)?;
    write_u64(w, snapshots.len() as u64)?;
    for (t, u) in snapshots {
        if u.len() != n {
            return Err(Error::InvalidArgument("snapshots differ in length".into()));
        }
        write_f64s(w, &[*t])?;
        write_f64s(w, u.as_slice())?;
    }
    Ok(())
}

pub fn read_snapshots(r: &mut impl Read) -> Result<Vec<(f64, GridFunction)>> {
    let header = read_header(r)?;
    if header.tag != SNAPSHOT_TAG {
        return Err(Error::Format(format!("expected snapshot tag, found {}", header.tag)));
    }
    let n = header.n as usize;
    (0..header.count)
        .map(|_| Ok((read_f64(r)?, read_grid(r, n)?)))
        .collect()
}

pub fn write_history(w: &mut impl Write, buf: &HistoryBuffer) -> Result<()> {
    let segments = buf.segments();
    let first = segments
        .first()
        .ok_or_else(|| Error::InvalidArgument("history has no segments".into()))?;
    let tag = method_tag(&first.method).ok_or_else(|| {
        Error::InvalidArgument(format!("method {} has no dump tag", first.method))
    })?;
    if segments.iter().any(|s| s.method != first.method) {
        return Err(Error::InvalidArgument("mixed-method histories cannot be dumped".into()));
    }
    write_u64(w, first.u_start.len() as u64)?;
    write_u64(w, tag)?;
    write_u64(w, segments.len() as u64)?;
    for s in segments {
        write_f64s(w, &[s.t_start, s.t_end])?;
        write_f64s(w, s.u_start.as_slice())?;
        write_f64s(w, s.u_end.as_slice())?;
        for g in &s.stage_values {
            write_f64s(w, g.as_slice())?;
        }
    }
    Ok(())
}

pub fn read_history(r: &mut impl Read, initial: Arc<HistoryFn>) -> Result<HistoryBuffer> {
    let header = read_header(r)?;
    let method = method_from_tag(header.tag)?;
    let n = header.n as usize;
    let mut buf = HistoryBuffer::new(initial);
    for _ in 0..header.count {
        let t_start = read_f64(r)?;
        let t_end = read_f64(r)?;
        let u_start = read_grid(r, n)?;
        let u_end = read_grid(r, n)?;
        let stages = (0..method.stages())
            .map(|_| read_grid(r, n))
            .collect::<Result<Vec<_>>>()?;
        let seg = Segment::new(t_start, t_end, u_start, u_end, method.clone(), stages)
            .map_err(|e| Error::Format(e.to_string()))?;
        buf.append(seg).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(buf)
}

pub fn save_snapshot(path: &Path, t: f64, u: &GridFunction) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_snapshots(&mut w, &[(t, u)])?;
    w.flush()?;
    Ok(())
}

pub fn save_history(path: &Path, buf: &HistoryBuffer) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_history(&mut w, buf)?;
    w.flush()?;
    Ok(())
}

/// Last state stored in a dump of either kind, with its time.
pub fn load_terminal_state(path: &Path) -> Result<(f64, GridFunction)> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r)?;
    if header.count == 0 {
        return Err(Error::Format("dump holds no records".into()));
    }
    let n = header.n as usize;
    let mut last = None;
    if header.tag == SNAPSHOT_TAG {
        for _ in 0..header.count {
            last = Some((read_f64(&mut r)?, read_grid(&mut r, n)?));
        }
    } else {
        let stages = method_from_tag(header.tag)?.stages();
        for _ in 0..header.count {
            let _t_start = read_f64(&mut r)?;
            let t_end = read_f64(&mut r)?;
            let _u_start = read_grid(&mut r, n)?;
            let u_end = read_grid(&mut r, n)?;
            for _ in 0..stages {
                read_grid(&mut r, n)?;
            }
            last = Some((t_end, u_end));
        }
    }
    last.ok_or_else(|| Error::Format("dump holds no records".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_layout_is_exact() {
        let u = GridFunction::new(vec![1.5, -2.0]).unwrap();
        let mut bytes = Vec::new();
        write_snapshots(&mut bytes, &[(1.0, &u)]).unwrap();
        assert_eq!(bytes.len(), 3 * 8 + 3 * 8);
        assert_eq!(&bytes[0..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &0u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[32..40], &1.5f64.to_le_bytes());
        let back = read_snapshots(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, vec![(1.0, u)]);
    }

    #[test]
    fn truncated_files_are_rejected() {
        let u = GridFunction::new(vec![1.5, -2.0]).unwrap();
        let mut bytes = Vec::new();
        write_snapshots(&mut bytes, &[(1.0, &u)]).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(read_snapshots(&mut bytes.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_snapshots(&mut &bytes[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn tags() {
        assert_eq!(method_tag(&Method::euler()), Some(1));
        assert_eq!(method_tag(&Method::erk2(1.0).unwrap()), Some(2));
        assert_eq!(method_tag(&Method::erk2(0.5).unwrap()), None);
        assert_eq!(method_tag(&Method::col3()), Some(3));
        assert_eq!(method_tag(&Method::gl4()), Some(4));
    }
}
