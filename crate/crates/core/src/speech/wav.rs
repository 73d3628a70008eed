// RIFF/WAVE reading (PCM16, float32) and PCM16 writing.
// Layout reference: https://ccrma.stanford.edu/courses/422-winter-2014/projects/WaveFormat/

use super::{AudioBuffer, SpeechError};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct Format {
    code: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, SpeechError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(SpeechError::NotWav);
    }
    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let body_start = at + 8;
        let body_end = body_start.checked_add(size).ok_or(SpeechError::Truncated)?;
        if body_end > bytes.len() {
            return Err(SpeechError::Truncated);
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(SpeechError::Truncated);
                }
                let mut code = u16_at(body, 0);
                if code == FORMAT_EXTENSIBLE {
                    // sub-format GUID starts at offset 24; its first two bytes are the format code
                    if body.len() < 26 {
                        return Err(SpeechError::Truncated);
                    }
                    code = u16_at(body, 24);
                }
                format = Some(Format {
                    code,
                    channels: u16_at(body, 2),
                    sample_rate: u32_at(body, 4),
                    bits: u16_at(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        at = body_end + (size & 1);
    }

    let format = format.ok_or(SpeechError::Truncated)?;
    let data = data.ok_or(SpeechError::Truncated)?;
    if format.channels == 0 || format.channels > 2 {
        return Err(SpeechError::UnsupportedEncoding(format!(
            "{} channels",
            format.channels
        )));
    }
    if format.sample_rate == 0 {
        return Err(SpeechError::UnsupportedEncoding("zero sample rate".into()));
    }
    let samples: Vec<f32> = match (format.code, format.bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (FORMAT_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if v.is_finite() {
                    v.clamp(-1.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect(),
        (code, bits) => {
            return Err(SpeechError::UnsupportedEncoding(format!(
                "format {code} with {bits} bits per sample"
            )))
        }
    };
    let channels = format.channels as usize;
    if samples.len() % channels != 0 {
        return Err(SpeechError::Truncated);
    }
    Ok(AudioBuffer {
        sample_rate: format.sample_rate,
        channels: format.channels,
        samples,
    })
}

fn quantize(s: f32) -> i16 {
    (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Canonical 44-byte-header PCM 16-bit little-endian file.
pub fn encode_wav(buffer: &AudioBuffer) -> Vec<u8> {
    let channels = buffer.channels;
    let bits: u16 = 16;
    let block_align = channels * (bits / 8);
    let byte_rate = buffer.sample_rate * block_align as u32;
    let data_len = (buffer.samples.len() * 2) as u32;

    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");

    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&buffer.sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());

    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &buffer.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}
