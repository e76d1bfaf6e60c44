//! Minimal RIFF/WAVE reader and writer for mono audio.
//!
//! Reads PCM 16/24-bit and IEEE float 32/64-bit (plain or extensible
//! header); writes the same formats. Samples are exchanged as `f64` with
//! full scale at 1.0. Double-precision float WAV keeps probe/target audio
//! bit-exact across a save/load round trip.

use std::io::Write as _;
use std::path::Path;

use crate::signal::SampledSignal;
use crate::{Error, Result};

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Pcm24,
    Float32,
    Float64,
}

fn rd_u16(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::Data("wav: truncated header".into()))
}

fn rd_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::Data("wav: truncated header".into()))
}

/// Read a mono WAV file.
pub fn read_wav_mono(path: &Path) -> Result<SampledSignal> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Data(format!("{}: not a RIFF/WAVE file", path.display())));
    }
    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // code, channels, rate, bits
    let mut data: Option<(usize, usize)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = rd_u32(&bytes, pos + 4)? as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(Error::Data(format!("{}: chunk overruns file", path.display())));
        }
        match id {
            b"fmt " => {
                let mut code = rd_u16(&bytes, body)?;
                let channels = rd_u16(&bytes, body + 2)?;
                let rate = rd_u32(&bytes, body + 4)?;
                let bits = rd_u16(&bytes, body + 14)?;
                if code == 0xFFFE {
                    // Extensible: actual code is the first 2 bytes of the GUID.
                    if size < 40 {
                        return Err(Error::Data("wav: short extensible fmt chunk".into()));
                    }
                    code = rd_u16(&bytes, body + 24)?;
                }
                fmt = Some((code, channels, rate, bits));
            }
            b"data" => data = Some((body, size)),
            _ => {}
        }
        pos = body + size + (size & 1); // chunks are word-aligned
    }
    let (code, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Data(format!("{}: missing fmt chunk", path.display())))?;
    let (body, size) =
        data.ok_or_else(|| Error::Data(format!("{}: missing data chunk", path.display())))?;
    if channels != 1 {
        return Err(Error::Data(format!(
            "{}: expected mono, found {channels} channels",
            path.display()
        )));
    }
    let raw = &bytes[body..body + size];
    let samples: Vec<f64> = match (code, bits) {
        (1, 16) => raw
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (1, 24) => raw
            .chunks_exact(3)
            .map(|c| {
                let v = ((c[2] as i32) << 24 | (c[1] as i32) << 16 | (c[0] as i32) << 8) >> 8;
                v as f64 / 8_388_608.0
            })
            .collect(),
        (3, 32) => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        (3, 64) => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect(),
        _ => {
            return Err(Error::Data(format!(
                "{}: unsupported wav encoding (format {code}, {bits} bit)",
                path.display()
            )))
        }
    };
    Ok(SampledSignal::new(samples, rate))
}

/// Write a mono WAV file atomically (temp file + rename). PCM samples are
/// clamped to [-1, 1) full scale; float formats are written untouched.
pub fn write_wav(path: &Path, signal: &SampledSignal, format: SampleFormat) -> Result<()> {
    let n = signal.data.len();
    let (code, bits): (u16, u16) = match format {
        SampleFormat::Pcm16 => (1, 16),
        SampleFormat::Pcm24 => (1, 24),
        SampleFormat::Float32 => (3, 32),
        SampleFormat::Float64 => (3, 64),
    };
    let bytes_per = (bits / 8) as usize;
    let data_len = n * bytes_per;
    let is_float = code == 3;
    // fmt(24) + optional fact(12) + data header(8)
    let riff_len = 4 + 24 + if is_float { 12 } else { 0 } + 8 + data_len;

    let mut out: Vec<u8> = Vec::with_capacity(riff_len + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(riff_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&signal.rate.to_le_bytes());
    out.extend_from_slice(&(signal.rate * bytes_per as u32).to_le_bytes());
    out.extend_from_slice(&(bytes_per as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    if is_float {
        out.extend_from_slice(b"fact");
        out.extend_from_slice(&4u32.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &v in &signal.data {
        match format {
            SampleFormat::Pcm16 => {
                let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            SampleFormat::Pcm24 => {
                let q = (v * 8_388_608.0).round().clamp(-8_388_608.0, 8_388_607.0) as i32;
                let b = q.to_le_bytes();
                out.extend_from_slice(&b[..3]);
            }
            SampleFormat::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            SampleFormat::Float64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }

    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("wav.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&out)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> SampledSignal {
        let data = (0..n).map(|i| (i as f64 / n as f64) * 1.8 - 0.9).collect();
        SampledSignal::new(data, 44100)
    }

    #[test]
    fn float64_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let sig = SampledSignal::new(
            (0..1000).map(|i| ((i as f64) * 0.37).sin() * 0.99).collect(),
            48000,
        );
        write_wav(&path, &sig, SampleFormat::Float64).unwrap();
        let back = read_wav_mono(&path).unwrap();
        assert_eq!(back.rate, 48000);
        assert_eq!(back.data, sig.data);
    }

    #[test]
    fn pcm_round_trips_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        for (fmt, tol) in [
            (SampleFormat::Pcm16, 1.0 / 32768.0),
            (SampleFormat::Pcm24, 1.0 / 8_388_608.0),
            (SampleFormat::Float32, 1e-7),
        ] {
            let path = dir.path().join("q.wav");
            let sig = ramp(500);
            write_wav(&path, &sig, fmt).unwrap();
            let back = read_wav_mono(&path).unwrap();
            assert_eq!(back.len(), 500);
            for (a, b) in sig.data.iter().zip(&back.data) {
                assert!((a - b).abs() <= tol, "{fmt:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_stereo_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"not a wav at all, just bytes").unwrap();
        assert!(matches!(read_wav_mono(&path), Err(Error::Data(_))));

        // Hand-build a 2-channel header.
        let mut b: Vec<u8> = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&36u32.to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes()); // stereo
        b.extend_from_slice(&44100u32.to_le_bytes());
        b.extend_from_slice(&(44100u32 * 4).to_le_bytes());
        b.extend_from_slice(&4u16.to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &b).unwrap();
        let err = read_wav_mono(&path).unwrap_err();
        assert!(err.to_string().contains("mono"), "{err}");
    }

    #[test]
    fn skips_unknown_chunks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let sig = ramp(10);
        write_wav(&path, &sig, SampleFormat::Float64).unwrap();
        // Splice a LIST chunk between fmt and data.
        let orig = std::fs::read(&path).unwrap();
        let mut spliced = orig[..36].to_vec(); // RIFF..fmt end (12 + 24)
        spliced.extend_from_slice(b"LIST");
        spliced.extend_from_slice(&5u32.to_le_bytes());
        spliced.extend_from_slice(b"INFOx");
        spliced.push(0); // pad to even
        spliced.extend_from_slice(&orig[36..]);
        let new_riff = (spliced.len() - 8) as u32;
        spliced[4..8].copy_from_slice(&new_riff.to_le_bytes());
        std::fs::write(&path, &spliced).unwrap();
        let back = read_wav_mono(&path).unwrap();
        assert_eq!(back.data, sig.data);
    }
}
