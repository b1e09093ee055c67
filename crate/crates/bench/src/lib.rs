//! Shared inputs for the kernel benchmarks.

use cardioscope_core::ingest::{synth_ecg, SynthSpec};
use cardioscope_core::EcgRecord;

/// A 30 s synthetic record at 300 Hz with mild noise.
pub fn bench_record() -> EcgRecord {
    synth_ecg(&SynthSpec {
        bpm: 72.0,
        fs: 300.0,
        duration_s: 30.0,
        noise_sigma: 0.05,
        seed: 1,
        ..SynthSpec::default()
    })
    .expect("valid synthetic spec")
    .record
}
