//! LED-ID framing and on-off keying over a rolling-shutter sample stream.
//!
//! Frame layout, 48 bits, big-endian, preamble first:
//!
//! ```text
//! | 0xAA preamble | x_cm (u16) | y_cm (u16) | CRC-8 |
//! ```
//!
//! The CRC uses polynomial 0x07 with zero init over the four payload bytes.
//! Each bit is held for `samples_per_bit` row exposures; a `1` drives the LED
//! high and a `0` dims it without switching it off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub const PREAMBLE: u8 = 0b1010_1010;
pub const FRAME_BITS: usize = 48;
/// Smallest bit count accepted by [`measure_ber`].
pub const MIN_BER_BITS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModemError {
    #[error("coordinate {0} cm does not fit in 16 bits")]
    CoordinateOverflow(u32),
    #[error("high level {high} must exceed dim level {dim} >= 0")]
    BadLevels { high: f64, dim: f64 },
    #[error("samples_per_bit must be at least 1")]
    ZeroSamplesPerBit,
    #[error("waveform length {len} is not a multiple of {samples_per_bit} samples per bit")]
    LengthMismatch { len: usize, samples_per_bit: usize },
    #[error("frame must be {FRAME_BITS} bits, got {0}")]
    BadFrameLength(usize),
    #[error("preamble mismatch")]
    BadPreamble,
    #[error("CRC mismatch: computed {computed:#04x}, received {received:#04x}")]
    BadCrc { computed: u8, received: u8 },
    #[error("noise sigma must be finite and non-negative, got {0}")]
    BadSigma(f64),
    #[error("need at least {MIN_BER_BITS} bits for a BER estimate, got {0}")]
    TooFewBits(usize),
    #[error("SNIR must be finite and non-negative, got {0}")]
    BadSnir(f64),
}

/// CRC-8, polynomial x^8 + x^2 + x + 1, init 0, no reflection.
pub fn crc8(bytes: &[u8]) -> u8 {
    let mut crc = 0u8;
    for &b in bytes {
        crc ^= b;
        for _ in 0..8 {
            crc = if crc & 0x80 != 0 {
                (crc << 1) ^ 0x07
            } else {
                crc << 1
            };
        }
    }
    crc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LedIdFrame {
    pub x_cm: u16,
    pub y_cm: u16,
    pub crc8: u8,
}

impl LedIdFrame {
    pub fn new(x_cm: u16, y_cm: u16) -> Self {
        let mut frame = Self { x_cm, y_cm, crc8: 0 };
        frame.crc8 = crc8(&frame.payload());
        frame
    }

    fn payload(&self) -> [u8; 4] {
        let [x0, x1] = self.x_cm.to_be_bytes();
        let [y0, y1] = self.y_cm.to_be_bytes();
        [x0, x1, y0, y1]
    }

    pub fn to_bytes(&self) -> [u8; 6] {
        let p = self.payload();
        [PREAMBLE, p[0], p[1], p[2], p[3], self.crc8]
    }

    /// MSB-first bit serialisation.
    pub fn to_bits(&self) -> Vec<bool> {
        self.to_bytes()
            .iter()
            .flat_map(|&byte| (0..8).rev().map(move |i| (byte >> i) & 1 == 1))
            .collect()
    }
}

pub fn encode_frame(x_cm: u32, y_cm: u32) -> Result<Vec<bool>, ModemError> {
    let x = u16::try_from(x_cm).map_err(|_| ModemError::CoordinateOverflow(x_cm))?;
    let y = u16::try_from(y_cm).map_err(|_| ModemError::CoordinateOverflow(y_cm))?;
    Ok(LedIdFrame::new(x, y).to_bits())
}

/// Inverse of [`LedIdFrame::to_bits`]; only frames with a matching preamble
/// and CRC are accepted.
pub fn decode_frame(bits: &[bool]) -> Result<(u16, u16), ModemError> {
    if bits.len() != FRAME_BITS {
        return Err(ModemError::BadFrameLength(bits.len()));
    }
    let mut bytes = [0u8; 6];
    for (byte, chunk) in bytes.iter_mut().zip(bits.chunks(8)) {
        *byte = chunk.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8);
    }
    if bytes[0] != PREAMBLE {
        return Err(ModemError::BadPreamble);
    }
    let computed = crc8(&bytes[1..5]);
    if computed != bytes[5] {
        return Err(ModemError::BadCrc {
            computed,
            received: bytes[5],
        });
    }
    Ok((
        u16::from_be_bytes([bytes[1], bytes[2]]),
        u16::from_be_bytes([bytes[3], bytes[4]]),
    ))
}

/// Row-exposure intensity samples for a bit stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWaveform {
    pub samples: Vec<f64>,
    pub samples_per_bit: usize,
    pub noise_sigma: f64,
}

pub fn modulate(
    bits: &[bool],
    samples_per_bit: usize,
    high_level: f64,
    dim_level: f64,
) -> Result<SampledWaveform, ModemError> {
    if samples_per_bit == 0 {
        return Err(ModemError::ZeroSamplesPerBit);
    }
    if !(dim_level >= 0.0 && high_level > dim_level) {
        return Err(ModemError::BadLevels {
            high: high_level,
            dim: dim_level,
        });
    }
    let samples = bits
        .iter()
        .flat_map(|&b| std::iter::repeat_n(if b { high_level } else { dim_level }, samples_per_bit))
        .collect();
    Ok(SampledWaveform {
        samples,
        samples_per_bit,
        noise_sigma: 0.0,
    })
}

/// Adds white Gaussian noise drawn from the caller's RNG.
pub fn add_awgn_with<R: Rng + ?Sized>(
    wave: &SampledWaveform,
    sigma: f64,
    rng: &mut R,
) -> Result<SampledWaveform, ModemError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(ModemError::BadSigma(sigma));
    }
    let mut out = wave.clone();
    if sigma > 0.0 {
        for s in &mut out.samples {
            let n: f64 = StandardNormal.sample(rng);
            *s += sigma * n;
        }
    }
    out.noise_sigma = (wave.noise_sigma.powi(2) + sigma * sigma).sqrt();
    Ok(out)
}

pub fn add_awgn(wave: &SampledWaveform, sigma: f64, seed: u64) -> Result<SampledWaveform, ModemError> {
    add_awgn_with(wave, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Decision threshold halfway between the two drive levels.
pub fn midpoint_threshold(high_level: f64, dim_level: f64) -> f64 {
    0.5 * (high_level + dim_level)
}

/// Integrate-and-dump detector: a bit is `1` when its mean sample exceeds
/// `threshold`.
pub fn demodulate(wave: &SampledWaveform, samples_per_bit: usize, threshold: f64) -> Result<Vec<bool>, ModemError> {
    if samples_per_bit == 0 {
        return Err(ModemError::ZeroSamplesPerBit);
    }
    if wave.samples.len() % samples_per_bit != 0 {
        return Err(ModemError::LengthMismatch {
            len: wave.samples.len(),
            samples_per_bit,
        });
    }
    Ok(wave
        .samples
        .chunks(samples_per_bit)
        .map(|c| c.iter().sum::<f64>() / samples_per_bit as f64 > threshold)
        .collect())
}

/// Monte-Carlo OOK bit error rate at the given linear SNIR.
///
/// Unit-variance noise; the drive levels are `0` and `2 sqrt(SNIR)` with the
/// threshold in between, so each bit sits `sqrt(SNIR)` standard deviations
/// from the decision boundary and the analytic rate is `Q(sqrt(SNIR))`.
pub fn measure_ber(snir_linear: f64, n_bits: usize, seed: u64) -> Result<f64, ModemError> {
    Ok(count_bit_errors(snir_linear, n_bits, seed)? as f64 / n_bits as f64)
}

/// Error count behind [`measure_ber`].
pub fn count_bit_errors(snir_linear: f64, n_bits: usize, seed: u64) -> Result<u64, ModemError> {
    if n_bits < MIN_BER_BITS {
        return Err(ModemError::TooFewBits(n_bits));
    }
    if !(snir_linear.is_finite() && snir_linear >= 0.0) {
        return Err(ModemError::BadSnir(snir_linear));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amplitude = snir_linear.sqrt();
    let high = 2.0 * amplitude;
    let bits: Vec<bool> = (0..n_bits).map(|_| rng.random()).collect();
    let threshold = midpoint_threshold(high, 0.0);
    let mut errors = 0u64;
    // SNIR = 0 collapses both levels onto the threshold; skip modulate's level check.
    for &bit in &bits {
        let level = if bit { high } else { 0.0 };
        let n: f64 = StandardNormal.sample(&mut rng);
        let decided = level + n > threshold;
        if decided != bit {
            errors += 1;
        }
    }
    Ok(errors)
}
