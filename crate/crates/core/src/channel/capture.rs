//! Capture files: per-lane received symbols with the aligned transmitted bits.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "NLEQCAP\0"
//! 8       2     version (1)
//! 10      2     lane count L
//! then L lane records:
//!         1     lane id (0 = XI, 1 = XQ, 2 = YI, 3 = YQ)
//!         1     bits per symbol m (1..=6)
//!         2     reserved, zero
//!         8     symbol count n
//!         8n    symbols, IEEE-754 binary64
//!         ceil(nm/8)  bits, row-major, MSB-first within each byte, zero padded
//! ```
//!
//! The CSV alternative has the header `lane,index,y,b1,...,bm` with one row
//! per symbol.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::modem::{BitFrame, FrameSource, Lane, SymbolFrame, MAX_BITS_PER_SYMBOL};

pub const MAGIC: [u8; 8] = *b"NLEQCAP\0";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureLane {
    pub lane: Lane,
    pub y: Vec<f64>,
    pub bits: BitFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureFile {
    pub path: Option<String>,
    pub lanes: Vec<CaptureLane>,
}

impl CaptureLane {
    pub fn new(lane: Lane, y: Vec<f64>, bits: BitFrame) -> Result<Self> {
        if y.len() != bits.len() {
            return Err(Error::InvalidArgument(format!(
                "length mismatch: {} symbols vs {} bit rows",
                y.len(),
                bits.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite symbol at index {i}")));
        }
        Ok(CaptureLane { lane, y, bits })
    }

    pub fn symbols(&self, path: Option<&str>) -> SymbolFrame<f64> {
        SymbolFrame::with_source(
            self.y.clone(),
            FrameSource::Capture {
                path: path.unwrap_or("").to_string(),
                lane: self.lane,
            },
        )
    }
}

impl CaptureFile {
    pub fn lane(&self, lane: Lane) -> Option<&CaptureLane> {
        self.lanes.iter().find(|l| l.lane == lane)
    }
}

fn parse_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        offset: offset as u64,
        message: message.into(),
    })
}

/// Serializes to the binary layout.
pub fn encode_capture(cap: &CaptureFile) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cap.lanes.len() as u16).to_le_bytes());
    for lane in &cap.lanes {
        let m = lane.bits.bits_per_symbol();
        out.push(lane.lane.index());
        out.push(m as u8);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(lane.y.len() as u64).to_le_bytes());
        for v in &lane.y {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let bits = lane.bits.as_slice();
        for chunk in bits.chunks(8) {
            let mut byte = 0u8;
            for (k, &b) in chunk.iter().enumerate() {
                byte |= b << (7 - k);
            }
            out.push(byte);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return parse_err(
                self.pos,
                format!(
                    "length mismatch: {what} needs {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            );
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses the binary layout.
pub fn decode_capture(buf: &[u8]) -> Result<CaptureFile> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return parse_err(0, "bad magic, not a capture file");
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return parse_err(8, format!("unsupported version {version}"));
    }
    let count = r.u16("lane count")?;
    let mut lanes = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = r.pos;
        let id = r.u8("lane id")?;
        let lane = match Lane::from_index(id) {
            Some(l) => l,
            None => return parse_err(at, format!("malformed header: lane id {id}")),
        };
        let m = r.u8("bits per symbol")? as usize;
        if !(1..=MAX_BITS_PER_SYMBOL).contains(&m) {
            return parse_err(at + 1, format!("malformed header: bits per symbol {m}"));
        }
        if r.u16("reserved")? != 0 {
            return parse_err(at + 2, "malformed header: reserved field is nonzero");
        }
        let n = r.u64("symbol count")?;
        if n == 0 {
            return parse_err(at + 4, "malformed header: empty lane");
        }
        let n = usize::try_from(n)
            .ok()
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or(Error::Parse {
                offset: (at + 4) as u64,
                message: "malformed header: symbol count too large".into(),
            })?;
        let sym_at = r.pos;
        let raw = r.take(n * 8, "symbol payload")?;
        let mut y = Vec::with_capacity(n);
        for (i, c) in raw.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return parse_err(sym_at + 8 * i, format!("non-finite sample {v}"));
            }
            y.push(v);
        }
        let nbits = n * m;
        let packed = r.take(nbits.div_ceil(8), "bit payload")?;
        let bits = (0..nbits)
            .map(|k| (packed[k / 8] >> (7 - k % 8)) & 1)
            .collect();
        lanes.push(CaptureLane {
            lane,
            y,
            bits: BitFrame::new(bits, m, lane, 0)?,
        });
    }
    if r.pos != buf.len() {
        return parse_err(r.pos, format!("length mismatch: {} trailing bytes", buf.len() - r.pos));
    }
    Ok(CaptureFile { path: None, lanes })
}

/// CSV rendering with header `lane,index,y,b1..bm`.
pub fn encode_capture_csv(cap: &CaptureFile) -> Result<String> {
    let m = common_m(cap)?;
    let mut s = String::from("lane,index,y");
    for j in 1..=m {
        s.push_str(&format!(",b{j}"));
    }
    s.push('\n');
    for lane in &cap.lanes {
        for (i, v) in lane.y.iter().enumerate() {
            // `{:?}` prints the shortest representation that round-trips.
            s.push_str(&format!("{:?},{i},{v:?}", lane.lane));
            for b in lane.bits.row(i) {
                s.push_str(&format!(",{b}"));
            }
            s.push('\n');
        }
    }
    Ok(s)
}

fn common_m(cap: &CaptureFile) -> Result<usize> {
    let m = cap.lanes.first().map(|l| l.bits.bits_per_symbol()).unwrap_or(1);
    if cap.lanes.iter().any(|l| l.bits.bits_per_symbol() != m) {
        return Err(Error::InvalidArgument(
            "CSV captures need the same bits per symbol on every lane".into(),
        ));
    }
    Ok(m)
}

fn lane_from_name(s: &str) -> Option<Lane> {
    match s {
        "XI" => Some(Lane::XI),
        "XQ" => Some(Lane::XQ),
        "YI" => Some(Lane::YI),
        "YQ" => Some(Lane::YQ),
        _ => s.parse::<u8>().ok().and_then(Lane::from_index),
    }
}

/// Parses the CSV alternative. Rows of one lane must be contiguous and
/// indexed from 0.
pub fn decode_capture_csv(text: &str) -> Result<CaptureFile> {
    let mut offset = 0usize;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().unwrap_or("").trim_end();
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[..3] != ["lane", "index", "y"] {
        return parse_err(0, "malformed header: expected lane,index,y,b1..bm");
    }
    let m = cols.len() - 3;
    for (j, c) in cols[3..].iter().enumerate() {
        if *c != format!("b{}", j + 1) {
            return parse_err(0, format!("malformed header column {c}"));
        }
    }
    if m > MAX_BITS_PER_SYMBOL {
        return parse_err(0, "malformed header: too many bit columns");
    }
    offset += header.len() + 1;
    let mut lanes: Vec<(Lane, Vec<f64>, Vec<u8>)> = Vec::new();
    for line in lines {
        let row_at = offset;
        offset += line.len();
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 + m {
            return parse_err(row_at, format!("length mismatch: expected {} fields", 3 + m));
        }
        let lane = lane_from_name(f[0])
            .ok_or(())
            .or_else(|_| parse_err(row_at, format!("unknown lane {}", f[0])))?;
        let index: usize = f[1]
            .parse()
            .or_else(|_| parse_err(row_at, format!("bad index {}", f[1])))?;
        let y: f64 = f[2]
            .parse()
            .or_else(|_| parse_err(row_at, format!("bad sample {}", f[2])))?;
        if !y.is_finite() {
            return parse_err(row_at, format!("non-finite sample {y}"));
        }
        if lanes.last().map(|l| l.0) != Some(lane) {
            if lanes.iter().any(|l| l.0 == lane) {
                return parse_err(row_at, format!("rows of lane {lane:?} are not contiguous"));
            }
            lanes.push((lane, Vec::new(), Vec::new()));
        }
        let cur = lanes.last_mut().unwrap();
        if index != cur.1.len() {
            return parse_err(row_at, format!("index {index} out of sequence"));
        }
        cur.1.push(y);
        for b in &f[3..] {
            match *b {
                "0" => cur.2.push(0),
                "1" => cur.2.push(1),
                _ => return parse_err(row_at, format!("bad bit {b}")),
            }
        }
    }
    let lanes = lanes
        .into_iter()
        .map(|(lane, y, bits)| {
            let bits = BitFrame::new(bits, m, lane, 0)?;
            CaptureLane::new(lane, y, bits)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CaptureFile { path: None, lanes })
}

/// Writes binary unless the extension is `.csv`.
pub fn save_capture(cap: &CaptureFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_csv(path) {
        encode_capture_csv(cap)?.into_bytes()
    } else {
        encode_capture(cap)
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Loads either format; binary is recognized by its magic.
pub fn load_capture(path: impl AsRef<Path>) -> Result<CaptureFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cap = if bytes.starts_with(&MAGIC) || !is_csv(path) {
        decode_capture(&bytes)?
    } else {
        let text = String::from_utf8(bytes).or_else(|e| {
            parse_err(e.utf8_error().valid_up_to(), "CSV capture is not UTF-8")
        })?;
        decode_capture_csv(&text)?
    };
    cap.path = Some(path.display().to_string());
    Ok(cap)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}
