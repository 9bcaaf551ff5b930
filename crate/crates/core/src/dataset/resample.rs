use crate::error::{Error, Result};
use crate::media::AudioTrack;
use crate::par;

/// Zero crossings of the sinc kept on each side of the centre tap.
const ZERO_CROSSINGS: f64 = 32.0;
const KAISER_BETA: f64 = 8.6;
/// Fraction of the output Nyquist frequency left in the passband.
const ROLLOFF: f64 = 0.95;
const MAX_PHASE_TABLE: u64 = 4096;

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct Kernel {
    cutoff: f64,
    half_width: f64,
    i0_beta: f64,
}

impl Kernel {
    fn new(source: u32, target: u32) -> Self {
        let cutoff = 0.5 * ROLLOFF * (target as f64 / source as f64).min(1.0);
        Kernel {
            cutoff,
            half_width: ZERO_CROSSINGS / (2.0 * cutoff),
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    fn tap(&self, t: f64) -> f64 {
        let r = t / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        2.0 * self.cutoff * sinc(2.0 * self.cutoff * t) * window
    }

    /// Taps for an output position whose source coordinate has fractional
    /// part `frac`, covering source offsets `first..first + len`.
    fn taps(&self, frac: f64) -> (i64, Vec<f64>) {
        let first = (frac - self.half_width).ceil() as i64;
        let last = (frac + self.half_width).floor() as i64;
        let taps = (first..=last).map(|k| self.tap(frac - k as f64)).collect();
        (first, taps)
    }
}

/// Band-limited sample-rate conversion with a Kaiser-windowed sinc.
///
/// Output length is `round(len * target / source)`. Samples beyond either
/// end of the input are treated as silence, and the result is clipped to
/// `[-1, 1]`. A track already at `target_rate` is returned unchanged.
pub fn resample_audio(track: &AudioTrack, target_rate: i64) -> Result<AudioTrack> {
    if target_rate <= 0 || target_rate > u32::MAX as i64 {
        return Err(Error::InvalidSampleRate(target_rate));
    }
    let target = target_rate as u32;
    let source = track.sample_rate;
    if source == 0 {
        return Err(Error::InvalidSampleRate(0));
    }
    if source == target {
        return Ok(track.clone());
    }
    let n_in = track.samples.len();
    let n_out = (n_in as f64 * target as f64 / source as f64).round() as usize;
    let g = gcd(source as u64, target as u64);
    let up = target as u64 / g;
    let down = source as u64 / g;
    let kernel = Kernel::new(source, target);
    let table: Option<Vec<(i64, Vec<f64>)>> = (up <= MAX_PHASE_TABLE)
        .then(|| par::map_indexed(up as usize, |p| kernel.taps(p as f64 / up as f64)));

    let input = &track.samples;
    let samples = par::map_indexed(n_out, |n| {
        let pos = n as u64 * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let owned;
        let (first, taps) = match &table {
            Some(t) => {
                let (f, ref taps) = t[phase as usize];
                (f, taps.as_slice())
            }
            None => {
                owned = kernel.taps(phase as f64 / up as f64);
                (owned.0, owned.1.as_slice())
            }
        };
        let mut acc = 0.0;
        for (j, &w) in taps.iter().enumerate() {
            let k = base + first + j as i64;
            if k >= 0 && (k as usize) < n_in {
                acc += w * input[k as usize] as f64;
            }
        }
        acc.clamp(-1.0, 1.0) as f32
    });
    AudioTrack::new(target, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_matches_reference() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_44).abs() < 1e-11);
    }

    #[test]
    fn rejects_non_positive_target() {
        let t = AudioTrack::new(8000, vec![0.0; 10]).unwrap();
        assert!(resample_audio(&t, 0).is_err());
        assert!(resample_audio(&t, -16000).is_err());
    }

    #[test]
    fn dc_level_is_preserved_in_the_interior() {
        let t = AudioTrack::new(44100, vec![0.5; 44100]).unwrap();
        let r = resample_audio(&t, 16000).unwrap();
        assert_eq!(r.samples.len(), 16000);
        for &s in &r.samples[500..15500] {
            assert!((s - 0.5).abs() < 1e-4, "{s}");
        }
    }
}
