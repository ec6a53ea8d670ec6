//! Motion-vector sidecar ingestion.
//!
//! The sidecar is a CSV with one row per decoder-exported block vector. Raw
//! vectors point from the current frame back into its reference; selection
//! negates them so that [`BlockVector`] carries forward flow in pixels.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const SIDECAR_HEADER: &str =
    "framenum,source,blockw,blockh,srcx,srcy,dstx,dsty,flags,motion_x,motion_y,motion_scale,d_ref";

const FIELD_COUNT: usize = 13;
const BLOCK_SIZES: [u32; 3] = [4, 8, 16];

/// Which reference a vector predicts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefSource {
    Past,
    Future,
}

impl RefSource {
    fn code(self) -> i32 {
        match self {
            RefSource::Past => -1,
            RefSource::Future => 1,
        }
    }
}

/// One decoder-exported block motion vector, fields as they appear in the sidecar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MvRecord {
    pub frame_index: u32,
    pub source: RefSource,
    pub block_w: u32,
    pub block_h: u32,
    pub src_x: i32,
    pub src_y: i32,
    /// Block top-left in the current frame.
    pub dst_x: i32,
    pub dst_y: i32,
    /// Opaque hex flags, kept verbatim.
    pub flags: String,
    pub motion_x: i32,
    pub motion_y: i32,
    pub motion_scale: u32,
    pub d_ref: u32,
}

/// A block of forward flow in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockVector {
    pub x0: i32,
    pub y0: i32,
    pub w: u32,
    pub h: u32,
    pub dx: f32,
    pub dy: f32,
}

pub fn parse_sidecar<R: BufRead>(reader: R) -> Result<Vec<MvRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if idx == 0 {
            if line.trim() != SIDECAR_HEADER {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected header `{SIDECAR_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_row(line).map_err(|msg| Error::Parse { line: line_no, msg })?);
    }
    Ok(records)
}

pub fn parse_sidecar_str(text: &str) -> Result<Vec<MvRecord>> {
    parse_sidecar(text.as_bytes())
}

fn parse_row(line: &str) -> std::result::Result<MvRecord, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != FIELD_COUNT {
        return Err(format!("expected {FIELD_COUNT} fields, found {}", fields.len()));
    }
    fn int<T: std::str::FromStr>(name: &str, s: &str) -> std::result::Result<T, String> {
        s.parse::<T>()
            .map_err(|_| format!("field `{name}`: `{s}` is not a valid integer"))
    }
    let source = match int::<i32>("source", fields[1])? {
        -1 => RefSource::Past,
        1 => RefSource::Future,
        other => return Err(format!("field `source`: expected -1 or 1, found {other}")),
    };
    let block_w = int::<u32>("blockw", fields[2])?;
    let block_h = int::<u32>("blockh", fields[3])?;
    if !BLOCK_SIZES.contains(&block_w) || !BLOCK_SIZES.contains(&block_h) {
        return Err(format!("unsupported block size {block_w}x{block_h}"));
    }
    let flags = fields[8];
    let hex = flags
        .strip_prefix("0x")
        .or_else(|| flags.strip_prefix("0X"))
        .ok_or_else(|| format!("field `flags`: `{flags}` is not hex"))?;
    if hex.is_empty() || u64::from_str_radix(hex, 16).is_err() {
        return Err(format!("field `flags`: `{flags}` is not hex"));
    }
    let motion_scale = int::<u32>("motion_scale", fields[11])?;
    if motion_scale == 0 {
        return Err("field `motion_scale` must be >= 1".into());
    }
    let d_ref = int::<u32>("d_ref", fields[12])?;
    if d_ref == 0 {
        return Err("field `d_ref` must be >= 1".into());
    }
    Ok(MvRecord {
        frame_index: int("framenum", fields[0])?,
        source,
        block_w,
        block_h,
        src_x: int("srcx", fields[4])?,
        src_y: int("srcy", fields[5])?,
        dst_x: int("dstx", fields[6])?,
        dst_y: int("dsty", fields[7])?,
        flags: flags.to_string(),
        motion_x: int("motion_x", fields[9])?,
        motion_y: int("motion_y", fields[10])?,
        motion_scale,
        d_ref,
    })
}

pub fn write_sidecar<W: Write>(mut w: W, records: &[MvRecord]) -> Result<()> {
    writeln!(w, "{SIDECAR_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.frame_index,
            r.source.code(),
            r.block_w,
            r.block_h,
            r.src_x,
            r.src_y,
            r.dst_x,
            r.dst_y,
            r.flags,
            r.motion_x,
            r.motion_y,
            r.motion_scale,
            r.d_ref
        )?;
    }
    Ok(())
}

pub fn sidecar_to_string(records: &[MvRecord]) -> String {
    let mut buf = Vec::new();
    write_sidecar(&mut buf, records).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("sidecar is ASCII")
}

/// Past-reference vectors of `frame_index` with `d_ref <= d_ref_max`, negated and
/// scaled to pixels, in input order. An empty result means the frame passes through.
pub fn select_vectors(records: &[MvRecord], frame_index: u32, d_ref_max: u32) -> Vec<BlockVector> {
    records
        .iter()
        .filter(|r| {
            r.frame_index == frame_index && r.source == RefSource::Past && r.d_ref <= d_ref_max
        })
        .map(|r| {
            let scale = r.motion_scale as f64;
            BlockVector {
                x0: r.dst_x,
                y0: r.dst_y,
                w: r.block_w,
                h: r.block_h,
                dx: (-(r.motion_x as f64) / scale) as f32,
                dy: (-(r.motion_y as f64) / scale) as f32,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_header(rows: &[&str]) -> String {
        let mut s = format!("{SIDECAR_HEADER}\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn single_row_maps_fields() {
        let text = with_header(&["1,-1,16,16,-1,0,0,0,0x0,-4,0,4,1"]);
        let recs = parse_sidecar_str(&text).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.frame_index, 1);
        assert_eq!(r.source, RefSource::Past);
        assert_eq!((r.block_w, r.block_h), (16, 16));
        assert_eq!((r.dst_x, r.dst_y), (0, 0));
        assert_eq!((r.motion_x, r.motion_y, r.motion_scale), (-4, 0, 4));
        assert_eq!(r.d_ref, 1);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse_sidecar_str(&with_header(&[])).unwrap().is_empty());
        assert!(parse_sidecar_str("").unwrap().is_empty());
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = with_header(&["1,-1,16,16,0,0,0,0,0x0,0,0,4,1", "1,-1,16,16,0,0,0,0,0x0,zz,0,4,1"]);
        match parse_sidecar_str(&text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("motion_x"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let cases = [
            "1,-1,16,16,0,0,0,0,0x0,0,0,4",     // short row
            "1,0,16,16,0,0,0,0,0x0,0,0,4,1",    // bad source
            "1,-1,12,16,0,0,0,0,0x0,0,0,4,1",   // bad block size
            "1,-1,16,16,0,0,0,0,0x0,0,0,0,1",   // zero scale
            "1,-1,16,16,0,0,0,0,zero,0,0,4,1",  // flags not hex
        ];
        for row in cases {
            assert!(
                matches!(parse_sidecar_str(&with_header(&[row])), Err(Error::Parse { line: 2, .. })),
                "{row}"
            );
        }
        assert!(matches!(parse_sidecar_str("frame,x\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn select_negates_and_scales() {
        let recs = parse_sidecar_str(&with_header(&["3,-1,8,8,4,8,5,6,0x0,-4,8,4,1"])).unwrap();
        let v = select_vectors(&recs, 3, 1);
        assert_eq!(
            v,
            vec![BlockVector { x0: 5, y0: 6, w: 8, h: 8, dx: 1.0, dy: -2.0 }]
        );
    }

    #[test]
    fn select_drops_future_far_and_other_frames() {
        let recs = parse_sidecar_str(&with_header(&[
            "2,-1,16,16,0,0,0,0,0x0,4,0,4,1",   // keep
            "2,1,16,16,0,0,16,0,0x0,4,0,4,1",   // future reference
            "2,-1,16,16,0,0,32,0,0x0,4,0,4,2",  // d_ref 2
            "1,-1,16,16,0,0,48,0,0x0,4,0,4,1",  // other frame
            "2,-1,8,16,0,0,0,16,0x1,-8,2,2,1",  // keep
        ]))
        .unwrap();
        let v = select_vectors(&recs, 2, 1);
        assert_eq!(v.len(), 2);
        assert_eq!((v[0].x0, v[0].y0, v[0].dx, v[0].dy), (0, 0, -1.0, 0.0));
        assert_eq!((v[1].x0, v[1].y0, v[1].dx, v[1].dy), (0, 16, 4.0, -1.0));
        assert_eq!(select_vectors(&recs, 2, 2).len(), 3);
    }

    #[test]
    fn fixture_file_parses_field_by_field() {
        let text = include_str!("../tests/fixtures/three_rows.csv");
        let recs = parse_sidecar_str(text).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].frame_index, 1);
        assert_eq!((recs[0].block_w, recs[0].block_h, recs[0].dst_x, recs[0].dst_y), (16, 16, 0, 0));
        assert_eq!((recs[0].motion_x, recs[0].motion_y), (-8, 4));
        assert_eq!(recs[1].source, RefSource::Future);
        assert_eq!((recs[1].block_w, recs[1].block_h), (8, 16));
        assert_eq!(recs[1].flags, "0x4");
        assert_eq!((recs[2].src_x, recs[2].src_y, recs[2].dst_x, recs[2].dst_y), (31, 17, 32, 16));
        assert_eq!((recs[2].motion_x, recs[2].motion_y, recs[2].motion_scale, recs[2].d_ref), (-2, 3, 2, 2));
        assert_eq!(sidecar_to_string(&recs), text);
    }
}
