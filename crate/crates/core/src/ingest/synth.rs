use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EcgRecord;
use crate::{Error, Result};

/// Parameters of a synthetic QRS train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub duration_s: f64,
    pub bpm: f64,
    pub amplitude: f64,
    /// Bump width spanning ±3 standard deviations of the Gaussian.
    pub qrs_width_s: f64,
    pub noise_sigma: f64,
    pub fs: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            duration_s: 30.0,
            bpm: 60.0,
            amplitude: 1.0,
            qrs_width_s: 0.1,
            noise_sigma: 0.0,
            fs: 200.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.duration_s) {
            return Err(Error::invalid("synthetic duration must be positive"));
        }
        if !positive(self.bpm) {
            return Err(Error::invalid("synthetic heart rate must be positive"));
        }
        if !positive(self.fs) {
            return Err(Error::invalid("synthetic sampling rate must be positive"));
        }
        if !positive(self.qrs_width_s) {
            return Err(Error::invalid("QRS width must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be nonnegative"));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::invalid("amplitude must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthEcg {
    pub record: EcgRecord,
    /// Ground-truth R positions (sample indices).
    pub peaks: Vec<usize>,
}

/// Gaussian QRS bumps centred on the sample grid at `(k + 1/2)` RR intervals,
/// plus white Gaussian noise from a ChaCha8 stream seeded by `spec.seed`.
pub fn synth_ecg(spec: &SynthSpec) -> Result<SynthEcg> {
    spec.validate()?;
    let n = (spec.duration_s * spec.fs).round().max(1.0) as usize;
    let rr = 60.0 / spec.bpm;
    let sigma = spec.qrs_width_s / 6.0 * spec.fs;
    let reach = (8.0 * sigma).ceil() as usize;

    let mut samples = vec![0.0; n];
    let mut peaks = Vec::new();
    let mut k = 0usize;
    loop {
        let t = (k as f64 + 0.5) * rr;
        if t >= spec.duration_s {
            break;
        }
        let centre = (t * spec.fs).round() as usize;
        if centre >= n {
            break;
        }
        peaks.push(centre);
        let lo = centre.saturating_sub(reach);
        let hi = (centre + reach).min(n - 1);
        for (i, s) in samples.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let d = (i as f64 - centre as f64) / sigma;
            *s += spec.amplitude * (-0.5 * d * d).exp();
        }
        k += 1;
    }

    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
        for s in samples.iter_mut() {
            *s += normal.sample(&mut rng);
        }
    }

    let record = EcgRecord::new(format!("synth-{}", spec.seed), spec.fs, samples)?;
    Ok(SynthEcg { record, peaks })
}
