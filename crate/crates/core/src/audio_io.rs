//! WAV input, resampling and amplitude conditioning.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{LidError, Result};

/// Mono PCM samples at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(LidError::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Keeps at most the first `seconds` of audio.
    pub fn truncated(&self, seconds: f64) -> Waveform {
        let n = (seconds * f64::from(self.sample_rate)).round() as usize;
        Waveform {
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 0x0003;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
    block_align: u16,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(LidError::MalformedWav("fmt chunk shorter than 16 bytes".into()));
    }
    let mut format = le_u16(body, 0);
    let channels = le_u16(body, 2);
    let sample_rate = le_u32(body, 4);
    let block_align = le_u16(body, 12);
    let bits = le_u16(body, 14);
    if format == WAVE_FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the subformat GUID,
        // whose first two bytes carry the actual format tag.
        if body.len() < 26 {
            return Err(LidError::MalformedWav("truncated WAVE_FORMAT_EXTENSIBLE".into()));
        }
        format = le_u16(body, 24);
    }
    Ok(FmtChunk { format, channels, sample_rate, bits, block_align })
}

/// Decodes a RIFF/WAVE byte buffer. Multichannel input is averaged to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(LidError::MalformedWav("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(size)
            .ok_or_else(|| LidError::MalformedWav("chunk size overflow".into()))?;
        if end > bytes.len() {
            return Err(LidError::MalformedWav(format!(
                "chunk '{}' declares {size} bytes but only {} remain",
                String::from_utf8_lossy(id),
                bytes.len() - start
            )));
        }
        match id {
            b"fmt " => fmt = Some(parse_fmt(&bytes[start..end])?),
            b"data" => data = Some(&bytes[start..end]),
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| LidError::MalformedWav("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| LidError::MalformedWav("no data chunk".into()))?;

    if fmt.channels == 0 || fmt.sample_rate == 0 {
        return Err(LidError::MalformedWav("zero channels or sample rate".into()));
    }
    let decode: fn(&[u8]) -> f64 = match (fmt.format, fmt.bits) {
        (WAVE_FORMAT_PCM, 8) => |b| (f64::from(b[0]) - 128.0) / 128.0,
        (WAVE_FORMAT_PCM, 16) => |b| f64::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0,
        (WAVE_FORMAT_PCM, 24) => {
            |b| f64::from(i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8) / 8_388_608.0
        }
        (WAVE_FORMAT_PCM, 32) => {
            |b| f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])) / 2_147_483_648.0
        }
        (WAVE_FORMAT_IEEE_FLOAT, 32) => |b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        (WAVE_FORMAT_PCM, bits) | (WAVE_FORMAT_IEEE_FLOAT, bits) => {
            return Err(LidError::UnsupportedEncoding(format!(
                "format tag {:#06x} with {bits} bits per sample",
                fmt.format
            )))
        }
        (tag, _) => {
            return Err(LidError::UnsupportedEncoding(format!("compressed format tag {tag:#06x}")))
        }
    };
    let width = usize::from(fmt.bits / 8);
    let channels = usize::from(fmt.channels);
    if usize::from(fmt.block_align) != width * channels {
        return Err(LidError::MalformedWav(format!(
            "block align {} inconsistent with {channels} x {width} bytes",
            fmt.block_align
        )));
    }
    let frame = width * channels;
    if data.len() % frame != 0 {
        return Err(LidError::MalformedWav("data chunk is not a whole number of frames".into()));
    }
    let samples = data
        .chunks_exact(frame)
        .map(|f| f.chunks_exact(width).map(decode).sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(samples, fmt.sample_rate)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(LidError::MissingFile(path.to_path_buf()));
    }
    decode_wav(&fs::read(path)?)
}

/// Encodes mono 16-bit PCM. Samples are scaled by 32768 and clamped.
pub fn encode_wav_pcm16(w: &Waveform) -> Vec<u8> {
    let data_len = (w.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav_pcm16(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_wav_pcm16(w))?;
    Ok(())
}

/// Removes the DC mean, then scales so the peak magnitude is one.
///
/// An all-zero signal (including one that is all-zero after mean removal)
/// is returned without the peak step.
pub fn preprocess(w: &Waveform) -> Result<Waveform> {
    if w.samples.is_empty() {
        return Err(LidError::EmptySignal);
    }
    let mean = mean_two_pass(&w.samples);
    let mut samples: Vec<f64> = w.samples.iter().map(|s| s - mean).collect();
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|s| *s /= peak);
    }
    Ok(Waveform { samples, sample_rate: w.sample_rate })
}

/// Arithmetic mean with a residual-correction pass, exact for constant input.
pub(crate) fn mean_two_pass(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let rough = xs.iter().sum::<f64>() / n;
    rough + xs.iter().map(|x| x - rough).sum::<f64>() / n
}

const KAISER_BETA: f64 = 8.6;
const TAPS_PER_PHASE: usize = 64;
const CUTOFF_FRACTION: f64 = 0.9;
const MAX_TABLE_PHASES: usize = 4096;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Windowed-sinc interpolation kernel, parameterised by the input rate.
struct SincKernel {
    /// cutoff as a fraction of the input rate
    cutoff: f64,
    /// half width in input samples
    half_width: f64,
    i0_beta: f64,
}

impl SincKernel {
    fn new(in_hz: u32, out_hz: u32) -> Self {
        let min_rate = f64::from(in_hz.min(out_hz));
        let cutoff = CUTOFF_FRACTION * 0.5 * min_rate / f64::from(in_hz);
        let half_width = (TAPS_PER_PHASE / 2) as f64 * f64::from(in_hz) / min_rate;
        Self { cutoff, half_width, i0_beta: bessel_i0(KAISER_BETA) }
    }

    fn eval(&self, t: f64) -> f64 {
        let x = t / self.half_width;
        if x.abs() >= 1.0 {
            return 0.0;
        }
        let arg = 2.0 * self.cutoff * t;
        let sinc = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
        let win = bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt()) / self.i0_beta;
        2.0 * self.cutoff * sinc * win
    }

    /// Taps for an output instant `frac` input samples past `base`; first tap
    /// index is returned alongside the unit-DC-gain weights.
    fn taps(&self, frac: f64) -> (i64, Vec<f64>) {
        let lo = (frac - self.half_width).ceil() as i64;
        let hi = (frac + self.half_width).floor() as i64;
        let mut w: Vec<f64> = (lo..=hi).map(|k| self.eval(frac - k as f64)).collect();
        let s: f64 = w.iter().sum();
        if s != 0.0 {
            w.iter_mut().for_each(|v| *v /= s);
        }
        (lo, w)
    }
}

/// Band-limited rate conversion with a polyphase Kaiser-windowed sinc.
pub fn resample(w: &Waveform, target_hz: u32) -> Result<Waveform> {
    if target_hz == 0 {
        return Err(LidError::InvalidArgument("target rate must be positive".into()));
    }
    if target_hz == w.sample_rate {
        return Ok(w.clone());
    }
    let g = gcd(u64::from(w.sample_rate), u64::from(target_hz));
    let up = u64::from(target_hz) / g;
    let down = u64::from(w.sample_rate) / g;
    let n_in = w.samples.len() as u64;
    let n_out = (n_in * up).div_ceil(down) as usize;
    let kernel = SincKernel::new(w.sample_rate, target_hz);

    let table: Option<Vec<(i64, Vec<f64>)>> = (up as usize <= MAX_TABLE_PHASES)
        .then(|| (0..up).map(|p| kernel.taps(p as f64 / up as f64)).collect());

    let x = &w.samples;
    let samples = (0..n_out as u64)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as i64;
            let phase = pos % up;
            let computed;
            let (lo, taps) = match &table {
                Some(t) => {
                    let (lo, ref taps) = t[phase as usize];
                    (lo, taps)
                }
                None => {
                    computed = kernel.taps(phase as f64 / up as f64);
                    (computed.0, &computed.1)
                }
            };
            taps.iter()
                .enumerate()
                .filter_map(|(j, h)| {
                    let idx = base + lo + j as i64;
                    (idx >= 0 && (idx as u64) < n_in).then(|| h * x[idx as usize])
                })
                .sum()
        })
        .collect();
    Waveform::new(samples, target_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav16(channels: u16, frames: &[i16]) -> Vec<u8> {
        let data_len = (frames.len() * 2) as u32;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&16000u32.to_le_bytes());
        out.extend_from_slice(&(16000 * 2 * u32::from(channels)).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&data_len.to_le_bytes());
        for s in frames {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    fn sine(freq: f64, rate: u32, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / f64::from(rate)).sin())
            .collect()
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn half_scale_sixteen_bit() {
        let w = decode_wav(&wav16(1, &[16384, -32768])).unwrap();
        assert_eq!(w.samples, vec![0.5, -1.0]);
        assert_eq!(w.sample_rate, 16000);
    }

    #[test]
    fn stereo_is_averaged() {
        let w = decode_wav(&wav16(2, &[1000, -1000])).unwrap();
        assert_eq!(w.samples, vec![0.0]);
    }

    #[test]
    fn overlong_data_chunk_is_malformed() {
        let mut bytes = wav16(1, &[1, 2, 3, 4]);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(decode_wav(&bytes), Err(LidError::MalformedWav(_))));
    }

    #[test]
    fn bad_header_and_compressed_codecs() {
        assert!(matches!(decode_wav(b"RIFX0000WAVE"), Err(LidError::MalformedWav(_))));
        let mut bytes = wav16(1, &[0, 0]);
        bytes[20] = 0x11; // IMA ADPCM
        assert!(matches!(decode_wav(&bytes), Err(LidError::UnsupportedEncoding(_))));
    }

    #[test]
    fn other_bit_depths() {
        let mut b = wav16(1, &[]);
        // rewrite as 24-bit, one sample of half scale
        b[32..34].copy_from_slice(&3u16.to_le_bytes());
        b[34..36].copy_from_slice(&24u16.to_le_bytes());
        b[40..44].copy_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&[0x00, 0x00, 0x40]);
        b[4..8].copy_from_slice(&(36u32 + 3).to_le_bytes());
        let w = decode_wav(&b).unwrap();
        assert_eq!(w.samples, vec![0.5]);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(read_wav("/nonexistent/x.wav"), Err(LidError::MissingFile(_))));
    }

    #[test]
    fn preprocess_examples() {
        let w = |s: Vec<f64>| Waveform::new(s, 16000).unwrap();
        assert_eq!(preprocess(&w(vec![0.2, 0.2, 0.2])).unwrap().samples, vec![0.0; 3]);
        assert_eq!(
            preprocess(&w(vec![1.0, -1.0, 1.0, -1.0])).unwrap().samples,
            vec![1.0, -1.0, 1.0, -1.0]
        );
        let out = preprocess(&w(vec![0.5, 0.1])).unwrap().samples;
        assert!((out[0] - 1.0).abs() < 1e-12 && (out[1] + 1.0).abs() < 1e-12);
        assert!(matches!(preprocess(&w(vec![])), Err(LidError::EmptySignal)));
    }

    #[test]
    fn resample_identity_and_length() {
        let w = Waveform::new(sine(100.0, 16000, 1000), 16000).unwrap();
        assert_eq!(resample(&w, 16000).unwrap(), w);
        let w48 = Waveform::new(vec![0.0; 48000], 48000).unwrap();
        let out = resample(&w48, 16000).unwrap();
        assert!((out.len() as i64 - 16000).abs() <= 1);
        assert_eq!(out.sample_rate, 16000);
    }

    #[test]
    fn resampled_sine_matches_direct_synthesis() {
        let w = Waveform::new(sine(100.0, 48000, 48000), 48000).unwrap();
        let out = resample(&w, 16000).unwrap();
        let oracle = sine(100.0, 16000, out.len());
        assert!(correlation(&out.samples, &oracle) >= 0.999);
    }

    #[test]
    fn round_trip_through_other_rate() {
        // 1 kHz tone is below 0.4 x the lower Nyquist (0.4 * 5512.5)
        let w = Waveform::new(sine(1000.0, 16000, 16000), 16000).unwrap();
        let there = resample(&w, 11025).unwrap();
        let back = resample(&there, 16000).unwrap();
        assert!(correlation(&back.samples, &w.samples) >= 0.999);
    }

    #[test]
    fn large_phase_count_falls_back_to_direct_taps() {
        let w = Waveform::new(sine(200.0, 16001, 4000), 16001).unwrap();
        let out = resample(&w, 16000).unwrap();
        let oracle = sine(200.0, 16000, out.len());
        assert!(correlation(&out.samples, &oracle) >= 0.999);
    }
}
