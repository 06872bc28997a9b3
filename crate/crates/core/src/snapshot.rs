//! `.sfld` snapshot files: a short text header followed by little-endian f64 payload.
//!
//! ```text
//! sfld 1
//! kind field            (or: kind profile)
//! L 8                   field: half-width
//! N 257                 field: nodes per side
//! boundary 0 0 1        field: pinned boundary value
//! m 1                   profile: winding number
//! count 600             profile: number of radial nodes
//! t 0.25                optional time stamp
//! meta key=value        any number of metadata lines
//! data
//! ```
//! The payload is 3N² values (x, y, z per node, row-major) for a field, or the radial nodes
//! followed by the angles for a profile. Header numbers use the shortest round-trip decimal
//! form, so a write/read cycle is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::SphereField;
use crate::flow::State;
use crate::grid::Grid;
use crate::radial::RadialProfile;

const MAGIC: &str = "sfld 1";

fn bad(msg: impl Into<String>) -> Error {
    Error::Snapshot(msg.into())
}

fn push_f64s(out: &mut Vec<u8>, xs: impl IntoIterator<Item = f64>) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn check_meta(key: &str, value: &str) -> Result<()> {
    if key.is_empty() || key.contains(['=', '\n', ' ']) || value.contains('\n') {
        return Err(bad(format!("metadata entry {key:?} cannot be stored in a header line")));
    }
    Ok(())
}

/// Serializes a state, with an optional time stamp.
pub fn encode(state: &State, t: Option<f64>) -> Result<Vec<u8>> {
    let mut head = String::from(MAGIC);
    head.push('\n');
    let mut body = Vec::new();
    match state {
        State::Field(u) => {
            let g = u.grid();
            let b = u.boundary_value();
            head.push_str(&format!("kind field\nL {:?}\nN {}\n", g.half_width(), g.n()));
            head.push_str(&format!("boundary {:?} {:?} {:?}\n", b[0], b[1], b[2]));
            if let Some(t) = t {
                head.push_str(&format!("t {t:?}\n"));
            }
            for (k, v) in u.metadata() {
                check_meta(k, v)?;
                head.push_str(&format!("meta {k}={v}\n"));
            }
            push_f64s(&mut body, u.values().iter().flat_map(|v| *v));
        }
        State::Profile(p) => {
            head.push_str(&format!("kind profile\nm {}\ncount {}\n", p.m(), p.nodes().len()));
            if let Some(t) = t {
                head.push_str(&format!("t {t:?}\n"));
            }
            push_f64s(&mut body, p.nodes().iter().copied());
            push_f64s(&mut body, p.values().iter().copied());
        }
    }
    head.push_str("data\n");
    let mut out = head.into_bytes();
    out.extend_from_slice(&body);
    Ok(out)
}

/// A decoded snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFile {
    pub state: State,
    pub t: Option<f64>,
}

fn parse_num<T: std::str::FromStr>(s: Option<&str>, what: &str) -> Result<T> {
    s.and_then(|x| x.parse().ok()).ok_or_else(|| bad(format!("malformed {what}")))
}

pub fn decode(bytes: &[u8]) -> Result<SnapshotFile> {
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not UTF-8"))?;
        pos += end + 1;
        if line == "data" {
            break;
        }
        lines.push(line.to_string());
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(bad("missing 'sfld 1' magic line"));
    }
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut meta = BTreeMap::new();
    for line in &lines[1..] {
        let (key, rest) = line.split_once(' ').ok_or_else(|| bad(format!("bad header line {line:?}")))?;
        if key == "meta" {
            let (k, v) = rest.split_once('=').ok_or_else(|| bad(format!("bad metadata line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        } else if fields.insert(key.to_string(), rest.to_string()).is_some() {
            return Err(bad(format!("duplicate header key {key}")));
        }
    }
    let payload = &bytes[pos..];
    if !payload.len().is_multiple_of(8) {
        return Err(bad("payload length is not a multiple of 8"));
    }
    let data: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let t = match fields.get("t") {
        Some(s) => Some(parse_num(Some(s), "time stamp")?),
        None => None,
    };
    let state = match fields.get("kind").map(String::as_str) {
        Some("field") => {
            let l: f64 = parse_num(fields.get("L").map(String::as_str), "L")?;
            let n: usize = parse_num(fields.get("N").map(String::as_str), "N")?;
            let b: Vec<f64> = fields
                .get("boundary")
                .ok_or_else(|| bad("missing boundary"))?
                .split(' ')
                .map(|x| parse_num(Some(x), "boundary value"))
                .collect::<Result<_>>()?;
            if b.len() != 3 {
                return Err(bad("boundary needs three components"));
            }
            let grid = Grid::new(l, n)?;
            if data.len() != 3 * grid.len() {
                return Err(bad(format!("expected {} values, found {}", 3 * grid.len(), data.len())));
            }
            let values = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            let mut u = SphereField::from_values(grid, values, [b[0], b[1], b[2]])?;
            *u.metadata_mut() = meta;
            State::Field(u)
        }
        Some("profile") => {
            let m: u32 = parse_num(fields.get("m").map(String::as_str), "m")?;
            let count: usize = parse_num(fields.get("count").map(String::as_str), "count")?;
            if data.len() != 2 * count {
                return Err(bad(format!("expected {} values, found {}", 2 * count, data.len())));
            }
            State::Profile(RadialProfile::new(data[..count].to_vec(), data[count..].to_vec(), m)?)
        }
        other => return Err(bad(format!("unknown kind {other:?}"))),
    };
    Ok(SnapshotFile { state, t })
}

pub fn write(path: &Path, state: &State, t: Option<f64>) -> Result<()> {
    let bytes = encode(state, t)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<SnapshotFile> {
    decode(&fs::read(path)?)
}

/// File name `snap_<t>.sfld`, t in shortest round-trip form: records near a concentration
/// stop can be closer than any fixed number of decimals.
pub fn file_name(t: f64) -> String {
    format!("snap_{t:?}.sfld")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_bubble, Rotation};
    use crate::radial::geometric_nodes;

    #[test]
    fn field_round_trip_is_bit_exact() {
        let q = Rotation::from_axis_angle([1.0, 2.0, 0.5], 0.7).unwrap();
        let u = make_bubble(Grid::new(3.3, 33).unwrap(), 2, 0.37, [0.1, -0.2], &q).unwrap();
        let st = State::Field(u);
        let back = decode(&encode(&st, Some(0.1 + 0.2)).unwrap()).unwrap();
        assert_eq!(back.t, Some(0.1 + 0.2));
        assert_eq!(back.state, st);
    }

    #[test]
    fn profile_round_trip_is_bit_exact() {
        let r = geometric_nodes(8.0, 8e-4, 1.02).unwrap();
        let p = RadialProfile::from_fn(r, 1, |x| 2.2 * (x / 0.05).atan()).unwrap();
        let st = State::Profile(p);
        assert_eq!(decode(&encode(&st, None).unwrap()).unwrap().state, st);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let u = SphereField::constant(Grid::new(1.0, 16).unwrap(), crate::field::NORTH).unwrap();
        let bytes = encode(&State::Field(u), None).unwrap();
        assert!(decode(&bytes[..bytes.len() - 8]).is_err());
        assert!(decode(b"sfld 2\ndata\n").is_err());
        let bad_meta =
            SphereField::constant(Grid::new(1.0, 16).unwrap(), crate::field::NORTH).unwrap().with_metadata("a=b", "c");
        assert!(encode(&State::Field(bad_meta), None).is_err());
    }
}
