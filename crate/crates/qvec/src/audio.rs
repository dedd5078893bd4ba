//! Waveform loading, validation and chunking.
//!
//! The only module that touches audio files. Accepts exactly one format:
//! RIFF/WAVE, PCM (format tag 1), 16-bit little-endian, mono, 16 kHz.
//! Anything else is rejected instead of silently converted, which keeps the
//! downstream frame math bit-reproducible.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

/// Sample rate every signal in the pipeline must have, in Hz.
pub const PIPELINE_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a RIFF/WAVE file ({reason})")]
    Format { path: String, reason: String },
    #[error("{path}: sample rate {rate} Hz unsupported, expected {PIPELINE_SAMPLE_RATE} Hz (no resampling)")]
    UnsupportedRate { path: String, rate: u32 },
    #[error("{path}: {channels} channels unsupported, expected mono")]
    UnsupportedChannels { path: String, channels: u16 },
    #[error("{path}: unsupported encoding ({detail}), expected 16-bit PCM")]
    UnsupportedEncoding { path: String, detail: String },
}

/// Mono PCM signal with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Signal duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn read_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Load a mono 16 kHz PCM16 WAV file.
///
/// 16-bit integer samples are mapped to [-1, 1] by division by 32768.
/// Unknown chunks are skipped; only canonical `fmt ` and `data` chunks are
/// interpreted. The `fmt ` chunk must precede `data`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioSignal, AudioError> {
    let path = path.as_ref();
    let p = || path.display().to_string();
    let bytes = fs::read(path).map_err(|source| AudioError::Io {
        path: p(),
        source,
    })?;

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::Format {
            path: p(),
            reason: "missing RIFF/WAVE header".into(),
        });
    }

    let mut cursor = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (tag, channels, rate, bits)

    while cursor + 8 <= bytes.len() {
        let id = &bytes[cursor..cursor + 4];
        let size = read_u32(&bytes, cursor + 4) as usize;
        let body = cursor + 8;
        if body + size > bytes.len() {
            return Err(AudioError::Format {
                path: p(),
                reason: format!(
                    "chunk {:?} of {} bytes exceeds file length",
                    String::from_utf8_lossy(id),
                    size
                ),
            });
        }

        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::Format {
                        path: p(),
                        reason: "fmt chunk too small".into(),
                    });
                }
                fmt = Some((
                    read_u16(&bytes, body),
                    read_u16(&bytes, body + 2),
                    read_u32(&bytes, body + 4),
                    read_u16(&bytes, body + 14),
                ));
            }
            b"data" => {
                let (tag, channels, rate, bits) = fmt.ok_or_else(|| AudioError::Format {
                    path: p(),
                    reason: "data chunk before fmt chunk".into(),
                })?;
                if tag != 1 {
                    return Err(AudioError::UnsupportedEncoding {
                        path: p(),
                        detail: format!("format tag {tag}"),
                    });
                }
                if rate != PIPELINE_SAMPLE_RATE {
                    return Err(AudioError::UnsupportedRate { path: p(), rate });
                }
                if channels != 1 {
                    return Err(AudioError::UnsupportedChannels {
                        path: p(),
                        channels,
                    });
                }
                if bits != 16 {
                    return Err(AudioError::UnsupportedEncoding {
                        path: p(),
                        detail: format!("{bits}-bit samples"),
                    });
                }
                if size < 2 {
                    return Err(AudioError::Format {
                        path: p(),
                        reason: "empty data chunk".into(),
                    });
                }
                let n = size / 2;
                let mut samples = Vec::with_capacity(n);
                for i in 0..n {
                    let s = i16::from_le_bytes([bytes[body + 2 * i], bytes[body + 2 * i + 1]]);
                    samples.push(s as f32 / 32768.0);
                }
                return Ok(AudioSignal::new(samples, rate));
            }
            _ => {}
        }
        // chunk bodies are padded to even length
        cursor = body + size + (size & 1);
    }

    Err(AudioError::Format {
        path: p(),
        reason: "no data chunk".into(),
    })
}

/// Write a signal as canonical mono PCM16 WAV. Samples are clamped to
/// [-1, 1] and quantized by multiplication with 32768.
pub fn write_wav(path: impl AsRef<Path>, signal: &AudioSignal) -> Result<(), AudioError> {
    let path = path.as_ref();
    let p = || path.display().to_string();
    let n = signal.samples.len();
    let data_size = (n * 2) as u32;

    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&signal.sample_rate.to_le_bytes());
    out.extend_from_slice(&(signal.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &signal.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round();
        let q = q.clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }

    let mut file = fs::File::create(path).map_err(|source| AudioError::Io {
        path: p(),
        source,
    })?;
    file.write_all(&out).map_err(|source| AudioError::Io {
        path: p(),
        source,
    })
}

/// Crop a signal to at most `max_seconds`, taking a uniformly random
/// contiguous segment. Signals already short enough pass through unchanged.
///
/// The start offset is drawn uniformly from `[0, len - chunk_len]` inclusive.
pub fn random_chunk(signal: &AudioSignal, max_seconds: f64, rng: &mut impl Rng) -> AudioSignal {
    assert!(max_seconds > 0.0, "max_seconds must be positive");
    let chunk_len = (max_seconds * signal.sample_rate as f64).round() as usize;
    if signal.samples.len() <= chunk_len {
        return signal.clone();
    }
    let offset = rng.gen_range(0..=signal.samples.len() - chunk_len);
    AudioSignal::new(
        signal.samples[offset..offset + chunk_len].to_vec(),
        signal.sample_rate,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("qvec-audio-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn ramp_signal(n: usize) -> AudioSignal {
        let samples = (0..n).map(|i| ((i % 2000) as f32 - 1000.0) / 2048.0).collect();
        AudioSignal::new(samples, PIPELINE_SAMPLE_RATE)
    }

    #[test]
    fn load_valid_pcm16() {
        let path = temp_path("valid.wav");
        let sig = ramp_signal(16000);
        write_wav(&path, &sig).unwrap();
        let loaded = load_wav(&path).unwrap();
        assert_eq!(loaded.samples.len(), 16000);
        assert_eq!(loaded.sample_rate, 16000);
    }

    #[test]
    fn pcm16_scaling_convention() {
        // 32767 maps to 32767/32768
        let path = temp_path("scale.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 4).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&32767i16.to_le_bytes());
        bytes.extend_from_slice(&(-32768i16).to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();

        let sig = load_wav(&path).unwrap();
        assert_eq!(sig.samples[0], 32767.0 / 32768.0);
        assert_eq!(sig.samples[1], -1.0);
    }

    #[test]
    fn rejects_wrong_rate_before_channels() {
        // a 44.1 kHz stereo file reports the rate problem
        let path = temp_path("rate.wav");
        let mut sig = ramp_signal(100);
        sig.sample_rate = 44100;
        write_wav(&path, &sig).unwrap();
        // patch channel count to 2
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[22..24].copy_from_slice(&2u16.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_wav(&path) {
            Err(AudioError::UnsupportedRate { rate, .. }) => assert_eq!(rate, 44100),
            other => panic!("expected UnsupportedRate, got {other:?}"),
        }
    }

    #[test]
    fn rejects_stereo() {
        let path = temp_path("stereo.wav");
        write_wav(&path, &ramp_signal(100)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[22..24].copy_from_slice(&2u16.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_wav(&path),
            Err(AudioError::UnsupportedChannels { channels: 2, .. })
        ));
    }

    #[test]
    fn rejects_compressed_encoding() {
        let path = temp_path("alaw.wav");
        write_wav(&path, &ramp_signal(100)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20..22].copy_from_slice(&6u16.to_le_bytes()); // A-law
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_wav(&path),
            Err(AudioError::UnsupportedEncoding { .. })
        ));
    }

    #[test]
    fn rejects_non_riff() {
        let path = temp_path("garbage.wav");
        std::fs::write(&path, b"OggS but not really a wav file").unwrap();
        assert!(matches!(load_wav(&path), Err(AudioError::Format { .. })));
    }

    #[test]
    fn skips_unknown_chunks() {
        let path = temp_path("listchunk.wav");
        let sig = ramp_signal(64);
        write_wav(&path, &sig).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // splice a LIST chunk between fmt and data
        let mut patched = bytes[..36].to_vec();
        patched.extend_from_slice(b"LIST");
        patched.extend_from_slice(&6u32.to_le_bytes());
        patched.extend_from_slice(b"INFOxx");
        patched.extend_from_slice(&bytes[36..]);
        let total = (patched.len() - 8) as u32;
        patched[4..8].copy_from_slice(&total.to_le_bytes());
        std::fs::write(&path, &patched).unwrap();
        let loaded = load_wav(&path).unwrap();
        assert_eq!(loaded.samples.len(), 64);
    }

    #[test]
    fn wav_round_trip_bit_exact() {
        let path = temp_path("roundtrip.wav");
        let sig = ramp_signal(3210);
        write_wav(&path, &sig).unwrap();
        let once = load_wav(&path).unwrap();
        write_wav(&path, &once).unwrap();
        let twice = load_wav(&path).unwrap();
        assert_eq!(once.samples, twice.samples);
    }

    #[test]
    fn chunk_noop_when_short() {
        let sig = ramp_signal(5 * 16000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = random_chunk(&sig, 8.0, &mut rng);
        assert_eq!(out.samples, sig.samples);
    }

    #[test]
    fn chunk_is_contiguous_segment() {
        let sig = ramp_signal(20 * 16000);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = random_chunk(&sig, 8.0, &mut rng);
        assert_eq!(out.samples.len(), 128_000);
        // locate the offset and compare sample-by-sample
        let offset = sig
            .samples
            .windows(out.samples.len())
            .position(|w| w == out.samples.as_slice())
            .expect("chunk not found in source");
        assert_eq!(
            &sig.samples[offset..offset + out.samples.len()],
            out.samples.as_slice()
        );
    }

    #[test]
    fn chunk_deterministic_under_seed() {
        let sig = ramp_signal(12 * 16000);
        let a = random_chunk(&sig, 8.0, &mut ChaCha8Rng::seed_from_u64(42));
        let b = random_chunk(&sig, 8.0, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a.samples, b.samples);
    }
}
