//! End-to-end composition of the stages behind one serializable config.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{prepare_image, NetworkConfig, TrainConfig};
use crate::dsp::{apply_filter, design_butterworth_lowpass, IirCascade};
use crate::featurize::{extract_feature_wave, gate_noise, FeatureWave, GateConfig, GateReason};
use crate::ingest::{
    load_record, parse_csv_samples, read_sidecar, sidecar_path, write_csv, EcgRecord,
    RecordFormat, DEFAULT_FS,
};
use crate::rpeak::{detect_rpeaks, DetectorConfig, RPeaks};
use crate::scalogram::{cwt_strided, to_grayscale, GrayImage, Scalogram, ScalogramConfig, WaveletTable};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LowpassConfig {
    pub order: usize,
    pub cutoff_hz: f64,
    /// Subtract the record mean before filtering so a baseline offset does
    /// not start the filter with a step.
    pub remove_mean: bool,
}

impl Default for LowpassConfig {
    fn default() -> Self {
        Self {
            order: 6,
            cutoff_hz: 35.0,
            remove_mean: true,
        }
    }
}

/// Every tunable of the pipeline. Missing JSON fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Rate assumed for records without a sidecar.
    pub default_fs: f64,
    pub lowpass: LowpassConfig,
    pub detector: DetectorConfig,
    pub gate: GateConfig,
    pub feature_len: usize,
    pub scalogram: ScalogramConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            default_fs: DEFAULT_FS,
            lowpass: LowpassConfig::default(),
            detector: DetectorConfig::default(),
            gate: GateConfig::default(),
            feature_len: 1024,
            scalogram: ScalogramConfig::default(),
            network: NetworkConfig::default(),
            training: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.default_fs.is_finite() && self.default_fs > 0.0) {
            return Err(Error::invalid("default_fs must be positive"));
        }
        design_butterworth_lowpass(self.lowpass.order, self.lowpass.cutoff_hz, self.default_fs)?;
        if self.feature_len == 0 {
            return Err(Error::invalid("feature_len must be positive"));
        }
        let s = &self.scalogram;
        if s.scale_count == 0 || s.stride == 0 {
            return Err(Error::invalid("scale_count and stride must be positive"));
        }
        if !(4..=20).contains(&s.iterations) {
            return Err(Error::invalid("wavelet iterations must be in 4..=20"));
        }
        let widest = s.scale_count as f64 * WaveletTable::DB4_SUPPORT;
        if widest > 8.0 * self.feature_len as f64 {
            return Err(Error::invalid(format!(
                "largest scale spans {widest} samples, more than 8x feature_len {}",
                self.feature_len
            )));
        }
        if !(self.gate.min_bpm >= 0.0 && self.gate.max_bpm > self.gate.min_bpm) {
            return Err(Error::invalid("gate needs 0 <= min_bpm < max_bpm"));
        }
        self.network.validate()?;
        self.training.validate()
    }

    /// The training seed with the top-level seed folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Intermediate products of one record.
#[derive(Debug, Clone)]
pub struct Stages {
    pub filtered: EcgRecord,
    pub peaks: RPeaks,
    pub wave: FeatureWave,
    pub scalogram: Scalogram,
    pub image: GrayImage,
}

/// A validated config with its wavelet table built once.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    wavelet: WaveletTable,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate().map_err(|e| e.in_stage("config"))?;
        let wavelet = WaveletTable::db4(config.scalogram.iterations)?;
        Ok(Self { config, wavelet })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn wavelet(&self) -> &WaveletTable {
        &self.wavelet
    }

    pub fn lowpass(&self, fs: f64) -> Result<IirCascade> {
        design_butterworth_lowpass(self.config.lowpass.order, self.config.lowpass.cutoff_hz, fs)
    }

    pub fn preprocess(&self, record: &EcgRecord) -> Result<EcgRecord> {
        let run = || {
            let filter = self.lowpass(record.fs())?;
            let mut x = record.samples().to_vec();
            if self.config.lowpass.remove_mean {
                let mean = x.iter().sum::<f64>() / x.len() as f64;
                x.iter_mut().for_each(|v| *v -= mean);
            }
            let y = apply_filter(&filter, &x)?;
            EcgRecord::new(record.id(), record.fs(), y)
        };
        run().map_err(|e| e.in_stage("preprocess"))
    }

    pub fn detect(&self, filtered: &EcgRecord) -> Result<RPeaks> {
        detect_rpeaks(filtered, &self.config.detector).map_err(|e| e.in_stage("detect"))
    }

    pub fn featurize(&self, filtered: &EcgRecord, peaks: &RPeaks) -> Result<FeatureWave> {
        let run = || {
            let gated = gate_noise(peaks, filtered.duration(), &self.config.gate)?;
            extract_feature_wave(
                filtered.samples(),
                filtered.fs(),
                filtered.id(),
                peaks,
                gated,
                self.config.feature_len,
            )
        };
        run().map_err(|e| e.in_stage("featurize"))
    }

    pub fn scalogram(&self, wave: &FeatureWave) -> Result<Scalogram> {
        let s = &self.config.scalogram;
        cwt_strided(wave.samples(), wave.fs(), &s.scales(), &self.wavelet, s.stride)
            .map_err(|e| e.in_stage("scalogram"))
    }

    pub fn run(&self, record: &EcgRecord) -> Result<Stages> {
        let filtered = self.preprocess(record)?;
        let peaks = self.detect(&filtered)?;
        let wave = self.featurize(&filtered, &peaks)?;
        let scalogram = self.scalogram(&wave)?;
        let image = to_grayscale(&scalogram);
        Ok(Stages {
            filtered,
            peaks,
            wave,
            scalogram,
            image,
        })
    }

    pub fn image(&self, record: &EcgRecord) -> Result<GrayImage> {
        Ok(self.run(record)?.image)
    }

    /// Network-ready input: pixels in `[0, 1]`, resampled to the configured size.
    pub fn network_input(&self, image: &GrayImage) -> Result<Vec<f64>> {
        prepare_image(image.pixels(), image.height(), image.width(), &self.config.network)
            .map_err(|e| e.in_stage("classify"))
    }

    pub fn load(&self, path: &Path) -> Result<EcgRecord> {
        let format = RecordFormat::from_path(path)
            .ok_or_else(|| Error::invalid(format!("cannot infer format of {}", path.display())))
            .map_err(|e| e.in_stage("ingest"))?;
        load_record(path, format, self.config.default_fs).map_err(|e| e.in_stage("ingest"))
    }

    /// Network inputs for many records, in the order given. Records run in
    /// parallel; each result depends only on its own record.
    pub fn network_inputs(&self, paths: &[PathBuf]) -> Result<Vec<Vec<f64>>> {
        paths
            .par_iter()
            .map(|p| {
                let rec = self.load(p)?;
                self.network_input(&self.image(&rec)?)
            })
            .map(|r: Result<Vec<f64>>| r)
            .collect()
    }
}

/// Record files in `dir`, sorted by id (file stem). Sidecars are skipped.
pub fn list_records(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || RecordFormat::from_path(&path).is_none() {
            continue;
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((id, path));
    }
    out.sort();
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid(format!("record id '{}' appears in two files", w[0].0)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct WaveSidecar {
    id: String,
    fs: f64,
    gated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<GateReason>,
}

/// Feature wave as csv plus a `<name>.json` sidecar `{id, fs, gated, reason}`.
pub fn write_feature_wave(path: &Path, wave: &FeatureWave) -> Result<()> {
    write_csv(path, wave.samples())?;
    let side = WaveSidecar {
        id: wave.source_id().to_string(),
        fs: wave.fs(),
        gated: wave.is_noise_gated(),
        reason: wave.gate_reason(),
    };
    let sp = sidecar_path(path);
    fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))
}

pub fn read_feature_wave(path: &Path) -> Result<FeatureWave> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let samples = parse_csv_samples(&bytes)?;
    let sp = sidecar_path(path);
    let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: WaveSidecar = serde_json::from_str(&text)?;
    let reason = match (side.gated, side.reason) {
        (false, _) => None,
        (true, r) => Some(r.unwrap_or(GateReason::CountOutOfRange)),
    };
    FeatureWave::new(samples, reason, side.id, side.fs)
}

/// R-peak indices, one per line, plus a sidecar carrying id and fs.
pub fn write_peaks(path: &Path, id: &str, peaks: &RPeaks) -> Result<()> {
    let mut text = String::new();
    for i in peaks.indices() {
        text.push_str(&i.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let side = crate::ingest::Sidecar {
        id: Some(id.to_string()),
        fs: Some(peaks.fs()),
        scale: None,
    };
    let sp = sidecar_path(path);
    fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))
}

pub fn read_peaks(path: &Path, default_fs: f64) -> Result<RPeaks> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fs = read_sidecar(path)?.and_then(|s| s.fs).unwrap_or(default_fs);
    let mut indices = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let field = line.trim();
        if !field.is_empty() {
            indices.push(field.parse().map_err(|_| Error::Format {
                format: "peaks",
                offset,
                message: format!("'{field}' is not a sample index"),
            })?);
        }
        offset += line.len() as u64;
    }
    RPeaks::new(indices, fs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{synth_ecg, SynthSpec};

    #[test]
    fn config_round_trip_exact() {
        let mut cfg = PipelineConfig::default();
        cfg.lowpass.cutoff_hz = 0.1 + 0.2 + 34.0;
        cfg.training.learning_rate = 1.0 / 3.0;
        cfg.seed = u64::MAX;
        let back = PipelineConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_takes_defaults() {
        let cfg = PipelineConfig::from_json(r#"{"seed": 7, "lowpass": {"cutoff_hz": 40}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.lowpass.cutoff_hz, 40.0);
        assert_eq!(cfg.lowpass.order, 6);
        assert_eq!(cfg.feature_len, 1024);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(PipelineConfig::from_json(r#"{"lowpass": {"cutoff_hz": 150}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"feature_len": 50}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"network": {"classes": 5}}"#).is_err());
    }

    #[test]
    fn clean_record_runs_through() {
        let synth = synth_ecg(&SynthSpec::default()).unwrap();
        let p = Pipeline::new(PipelineConfig::default()).unwrap();
        let st = p.run(&synth.record).unwrap();
        assert_eq!(st.peaks.len(), synth.peaks.len());
        assert!(!st.wave.is_noise_gated());
        assert_eq!((st.image.height(), st.image.width()), (64, 1024));
        assert!(!st.image.is_black());
        assert_eq!(p.network_input(&st.image).unwrap().len(), 64 * 256);
    }

    #[test]
    fn flat_record_is_black() {
        let rec = EcgRecord::new("z", 200.0, vec![0.0; 6000]).unwrap();
        let p = Pipeline::new(PipelineConfig::default()).unwrap();
        let st = p.run(&rec).unwrap();
        assert!(st.wave.is_noise_gated());
        assert!(st.image.is_black());
    }

    #[test]
    fn errors_carry_stage() {
        let rec = EcgRecord::new("short", 200.0, vec![0.0; 100]).unwrap();
        let p = Pipeline::new(PipelineConfig::default()).unwrap();
        let err = p.run(&rec).unwrap_err();
        assert!(err.to_string().starts_with("detect:"), "{err}");
    }

    #[test]
    fn artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let peaks = RPeaks::new(vec![3, 9, 400], 250.0).unwrap();
        let pp = dir.path().join("p.csv");
        write_peaks(&pp, "rec", &peaks).unwrap();
        assert_eq!(read_peaks(&pp, 200.0).unwrap(), peaks);

        let wave = FeatureWave::new(vec![0.1, -1.0 / 3.0, 2.5], None, "rec", 212.7).unwrap();
        let wp = dir.path().join("w.csv");
        write_feature_wave(&wp, &wave).unwrap();
        assert_eq!(read_feature_wave(&wp).unwrap(), wave);

        let gated = FeatureWave::zeros(4, GateReason::TooFewPeaks, "g", 200.0);
        write_feature_wave(&wp, &gated).unwrap();
        assert_eq!(read_feature_wave(&wp).unwrap(), gated);
    }
}
