//! `CSB1` capture files and the CSV label sidecar.
//!
//! ```text
//! "CSB1\0\0\0\0" | version | S | K | sample_rate_mHz      (u32 LE)
//! S·K × (re f32, im f32)                                  (time-major)
//! S × f64 timestamp
//! S × u8 validity
//! ```

use std::io::{BufRead, Read, Write};

use num_complex::Complex;

use crate::scalar::Real;

use super::{CsiCapture, CsiError, LabelSpan};

pub const CSB1_MAGIC: &[u8; 8] = b"CSB1\0\0\0\0";
pub const CSB1_VERSION: u32 = 1;
const LABEL_HEADER: &str = "start_row,end_row,subject_id,activity_id";

pub fn write_csb1<T: Real, W: Write>(w: &mut W, capture: &CsiCapture<T>) -> Result<(), CsiError> {
    let rate_mhz = (capture.sample_rate_hz() * 1000.0).round();
    if rate_mhz < 1.0 || rate_mhz > u32::MAX as f64 {
        return Err(CsiError::Format(format!("sample rate {} Hz not representable", capture.sample_rate_hz())));
    }
    let mut buf = Vec::with_capacity(24 + capture.samples().len() * 8 + capture.rows() * 9);
    buf.extend_from_slice(CSB1_MAGIC);
    for v in [CSB1_VERSION, capture.rows() as u32, capture.subcarriers() as u32, rate_mhz as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for c in capture.samples() {
        buf.extend_from_slice(&(c.re.as_f64() as f32).to_le_bytes());
        buf.extend_from_slice(&(c.im.as_f64() as f32).to_le_bytes());
    }
    for t in capture.timestamps() {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    buf.extend(capture.valid().iter().map(|&v| v as u8));
    w.write_all(&buf)?;
    Ok(())
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes(b[i * 4..i * 4 + 4].try_into().unwrap())
}

pub fn read_csb1<T: Real, R: Read>(r: &mut R, monitor_id: u32) -> Result<CsiCapture<T>, CsiError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CSB1_MAGIC {
        return Err(CsiError::Format(format!("bad magic {magic:?}")));
    }
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    let version = u32_at(&head, 0);
    if version != CSB1_VERSION {
        return Err(CsiError::Format(format!("unsupported version {version}")));
    }
    let (rows, cols) = (u32_at(&head, 1) as usize, u32_at(&head, 2) as usize);
    let rate_hz = u32_at(&head, 3) as f64 / 1000.0;

    let mut body = vec![0u8; rows * cols * 8];
    r.read_exact(&mut body)?;
    let samples = body
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..].try_into().unwrap());
            Complex::new(T::lit(re as f64), T::lit(im as f64))
        })
        .collect();
    let mut ts = vec![0u8; rows * 8];
    r.read_exact(&mut ts)?;
    let timestamps = ts.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut valid = vec![0u8; rows];
    r.read_exact(&mut valid)?;
    if let Some(b) = valid.iter().find(|&&b| b > 1) {
        return Err(CsiError::Format(format!("validity byte {b}")));
    }
    CsiCapture::new(samples, cols, timestamps, monitor_id, rate_hz, valid.into_iter().map(|b| b == 1).collect())
}

pub fn write_labels<W: Write>(w: &mut W, spans: &[LabelSpan]) -> Result<(), CsiError> {
    writeln!(w, "{LABEL_HEADER}")?;
    for s in spans {
        writeln!(w, "{},{},{},{}", s.start_row, s.end_row, s.subject_id, s.activity_id)?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<LabelSpan>, CsiError> {
    let mut spans = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line == LABEL_HEADER) {
            continue;
        }
        let bad = || CsiError::Format(format!("label line {}: {line:?}", n + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let span = LabelSpan {
            start_row: f[0].parse().map_err(|_| bad())?,
            end_row: f[1].parse().map_err(|_| bad())?,
            subject_id: f[2].parse().map_err(|_| bad())?,
            activity_id: f[3].parse().map_err(|_| bad())?,
        };
        if span.end_row < span.start_row {
            return Err(bad());
        }
        spans.push(span);
    }
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::seeded;
    use rand::Rng;

    #[test]
    fn csb1_round_trip_with_invalid_rows() {
        let mut rng = seeded(5);
        let s: Vec<Complex<f32>> = (0..12).map(|_| Complex::new(rng.random(), rng.random())).collect();
        let mut s_nan = s.clone();
        s_nan[4].re = f32::NAN;
        let c = CsiCapture::new(s_nan, 4, vec![0.0, 0.002, 0.0041], 3, 500.0, vec![true, false, true]).unwrap();
        let mut buf = Vec::new();
        write_csb1(&mut buf, &c).unwrap();
        assert_eq!(&buf[..8], b"CSB1\0\0\0\0");
        assert_eq!(buf.len(), 8 + 16 + 12 * 8 + 3 * 8 + 3);
        let back: CsiCapture<f32> = read_csb1(&mut buf.as_slice(), 3).unwrap();
        assert_eq!(back.valid(), c.valid());
        assert_eq!(back.timestamps(), c.timestamps());
        assert_eq!(back.sample_rate_hz(), 500.0);
        assert!(back.get(1, 0).re.is_nan());
        assert_eq!(back.get(2, 3), c.get(2, 3));
    }

    #[test]
    fn csb1_rejects_bad_magic_and_truncation() {
        let c = CsiCapture::uniform(vec![Complex::new(1.0f64, 2.0); 6], 3, 0, 500.0).unwrap();
        let mut buf = Vec::new();
        write_csb1(&mut buf, &c).unwrap();
        let mut bad = buf.clone();
        bad[3] = b'2';
        assert!(matches!(read_csb1::<f64, _>(&mut bad.as_slice(), 0), Err(CsiError::Format(_))));
        assert!(matches!(read_csb1::<f64, _>(&mut &buf[..buf.len() - 1], 0), Err(CsiError::Io(_))));
    }

    #[test]
    fn labels_round_trip() {
        let spans = vec![
            LabelSpan { start_row: 0, end_row: 500, subject_id: 1, activity_id: 4 },
            LabelSpan { start_row: 500, end_row: 750, subject_id: 2, activity_id: 0 },
        ];
        let mut buf = Vec::new();
        write_labels(&mut buf, &spans).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("start_row,end_row,subject_id,activity_id\n"));
        assert_eq!(read_labels(buf.as_slice()).unwrap(), spans);
        assert!(read_labels("1,2,3\n".as_bytes()).is_err());
        assert!(read_labels("5,2,3,4\n".as_bytes()).is_err());
    }
}
