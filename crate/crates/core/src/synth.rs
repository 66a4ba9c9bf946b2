//! Synthetic bearing vibration with a controllable working condition.
//!
//! Every segment carries the shaft rotation (fundamental plus two harmonics)
//! and white noise. Faulty classes add a train of impacts at the fault
//! characteristic frequency; each impact rings the structural resonance and
//! decays exponentially. Inner-race impacts are amplitude-modulated by the
//! shaft rotation and ball impacts by the cage rotation. Shaft speed moves
//! both the rotation harmonics and the impact rate, so two speeds give two
//! genuinely different feature distributions.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{
    write_raw_f64_le, DatasetManifest, FaultLabel, LabelDecl, ManifestEntry, RecordFormat, SegmentSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultType {
    NO,
    IF,
    OF,
    BF,
}

impl FaultType {
    pub const ALL: [FaultType; 4] = [FaultType::NO, FaultType::IF, FaultType::OF, FaultType::BF];

    pub fn class_id(self) -> u32 {
        self as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultType::NO => "NO",
            FaultType::IF => "IF",
            FaultType::OF => "OF",
            FaultType::BF => "BF",
        }
    }

    pub fn label(self) -> FaultLabel {
        FaultLabel::new(self.class_id(), self.name())
    }
}

/// Fault characteristic frequencies as multiples of the shaft frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultMultipliers {
    pub outer: f64,
    pub inner: f64,
    pub ball: f64,
    /// Cage rotation, used for ball-fault modulation.
    pub cage: f64,
}

impl Default for FaultMultipliers {
    fn default() -> Self {
        Self {
            outer: 3.58,
            inner: 5.42,
            ball: 4.71,
            cage: 0.40,
        }
    }
}

/// Peak amplitude of one impact burst per fault type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpulseAmplitudes {
    pub outer: f64,
    pub inner: f64,
    pub ball: f64,
}

impl Default for ImpulseAmplitudes {
    fn default() -> Self {
        Self {
            outer: 1.5,
            inner: 1.5,
            ball: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub shaft_speed_rpm: f64,
    pub fault_type: FaultType,
    pub fault_freq_multiplier: FaultMultipliers,
    pub resonance_hz: f64,
    /// Exponential decay rate of each ringing impact, 1/s.
    pub decay_rate: f64,
    pub impulse_amplitude: ImpulseAmplitudes,
    /// Amplitudes of the shaft fundamental and its harmonics.
    pub shaft_harmonics: Vec<f64>,
    pub noise_std: f64,
    pub sampling_rate_hz: f64,
    pub segment_len: usize,
    /// Half-width of the random slip of each impact, as a fraction of the
    /// impact period.
    pub period_jitter: f64,
    pub rng_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            shaft_speed_rpm: 1200.0,
            fault_type: FaultType::NO,
            fault_freq_multiplier: FaultMultipliers::default(),
            resonance_hz: 3000.0,
            decay_rate: 800.0,
            impulse_amplitude: ImpulseAmplitudes::default(),
            shaft_harmonics: vec![1.0, 0.5, 0.25],
            noise_std: 0.2,
            sampling_rate_hz: 12_000.0,
            segment_len: 8192,
            period_jitter: 0.01,
            rng_seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn shaft_hz(&self) -> f64 {
        self.shaft_speed_rpm / 60.0
    }

    /// Impact rate for faulty classes, `None` for the normal condition.
    pub fn fault_hz(&self) -> Option<f64> {
        let m = &self.fault_freq_multiplier;
        let mult = match self.fault_type {
            FaultType::NO => return None,
            FaultType::OF => m.outer,
            FaultType::IF => m.inner,
            FaultType::BF => m.ball,
        };
        Some(mult * self.shaft_hz())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("shaft_speed_rpm", self.shaft_speed_rpm),
            ("resonance_hz", self.resonance_hz),
            ("decay_rate", self.decay_rate),
            ("sampling_rate_hz", self.sampling_rate_hz),
            ("fault multiplier (outer)", self.fault_freq_multiplier.outer),
            ("fault multiplier (inner)", self.fault_freq_multiplier.inner),
            ("fault multiplier (ball)", self.fault_freq_multiplier.ball),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let a = &self.impulse_amplitude;
        if !(self.noise_std >= 0.0) || ![a.outer, a.inner, a.ball].iter().all(|&v| v >= 0.0) {
            return Err(Error::Config("noise_std and impulse_amplitude must be non-negative".into()));
        }
        if !(0.0..0.5).contains(&self.period_jitter) {
            return Err(Error::Config(format!("period_jitter {} outside [0, 0.5)", self.period_jitter)));
        }
        if self.segment_len == 0 {
            return Err(Error::Config("segment_len must be positive".into()));
        }
        let nyquist = self.sampling_rate_hz / 2.0;
        let top_harmonic = self.shaft_hz() * self.shaft_harmonics.len() as f64;
        if self.resonance_hz >= nyquist || top_harmonic >= nyquist {
            return Err(Error::Config(format!(
                "resonance {} Hz or shaft harmonic {top_harmonic} Hz at or above Nyquist {nyquist} Hz",
                self.resonance_hz
            )));
        }
        if let Some(f) = self.fault_hz() {
            if f >= nyquist {
                return Err(Error::Config(format!(
                    "fault frequency {f} Hz at or above Nyquist {nyquist} Hz"
                )));
            }
            let duration = self.segment_len as f64 / self.sampling_rate_hz;
            // impacts that cannot slip out of the segment
            let impacts = duration * f - 2.0 * self.period_jitter;
            if impacts < 5.0 {
                return Err(Error::Config(format!(
                    "segment of {duration:.4} s holds only {impacts:.1} impacts at {f:.2} Hz; need at least 5"
                )));
            }
        }
        Ok(())
    }

    /// Nominal impact times within one segment for a starting phase in
    /// [0, 1) of the impact period.
    fn impact_times(&self, fault_hz: f64, offset: f64) -> Vec<f64> {
        let period = 1.0 / fault_hz;
        let duration = self.segment_len as f64 / self.sampling_rate_hz;
        (0..)
            .map(|k| (offset + k as f64) * period)
            .take_while(|&t| t < duration)
            .collect()
    }

    fn segment(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let fs = self.sampling_rate_hz;
        let shaft = self.shaft_hz();
        let phases: Vec<f64> = self
            .shaft_harmonics
            .iter()
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        let mut x: Vec<f64> = (0..self.segment_len)
            .map(|n| {
                let t = n as f64 / fs;
                self.shaft_harmonics
                    .iter()
                    .zip(&phases)
                    .enumerate()
                    .map(|(h, (a, p))| a * (2.0 * PI * (h + 1) as f64 * shaft * t + p).sin())
                    .sum()
            })
            .collect();

        if let Some(fault_hz) = self.fault_hz() {
            let offset = rng.random_range(0.0..1.0);
            let mod_phase = rng.random_range(0.0..2.0 * PI);
            let peak = match self.fault_type {
                FaultType::IF => self.impulse_amplitude.inner,
                FaultType::BF => self.impulse_amplitude.ball,
                _ => self.impulse_amplitude.outer,
            };
            let mod_hz = match self.fault_type {
                FaultType::IF => Some(shaft),
                FaultType::BF => Some(self.fault_freq_multiplier.cage * shaft),
                _ => None,
            };
            // ring until the envelope drops below 1e-4
            let ring = ((1e4f64).ln() / self.decay_rate * fs).ceil() as usize;
            let duration = self.segment_len as f64 / fs;
            for nominal in self.impact_times(fault_hz, offset) {
                // each impact slips by up to ±period_jitter of the period
                let t0 = nominal + rng.random_range(-self.period_jitter..=self.period_jitter) / fault_hz;
                if !(0.0..duration).contains(&t0) {
                    continue;
                }
                let amp = peak
                    * mod_hz.map_or(1.0, |f| 1.0 + 0.5 * (2.0 * PI * f * t0 + mod_phase).cos());
                let start = (t0 * fs).ceil() as usize;
                for n in start..(start + ring).min(self.segment_len) {
                    let dt = n as f64 / fs - t0;
                    x[n] += amp * (-self.decay_rate * dt).exp() * (2.0 * PI * self.resonance_hz * dt).sin();
                }
            }
        }

        if self.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.noise_std).expect("finite std");
            for v in &mut x {
                *v += noise.sample(rng);
            }
        }
        x
    }
}

/// `count` segments for one spec; segment `i` uses its own RNG stream so the
/// output does not depend on evaluation order.
pub fn generate(spec: &SynthSpec, count: usize) -> Result<SegmentSet> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::Config("count must be positive".into()));
    }
    let segments = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
            rng.set_stream(i as u64);
            spec.segment(&mut rng)
        })
        .collect();
    Ok(SegmentSet {
        segments,
        labels: vec![spec.fault_type.label(); count],
        sampling_rate_hz: spec.sampling_rate_hz,
    })
}

fn mix_seed(seed: u64, domain: u64, class: u64) -> u64 {
    // splitmix64 finaliser over a combined key
    let mut z = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ class.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One domain at `rpm`: all four classes, `per_class` segments each.
pub fn generate_domain(base: &SynthSpec, rpm: f64, per_class: usize, domain_key: u64) -> Result<SegmentSet> {
    let mut out = SegmentSet {
        segments: Vec::with_capacity(per_class * 4),
        labels: Vec::with_capacity(per_class * 4),
        sampling_rate_hz: base.sampling_rate_hz,
    };
    for fault in FaultType::ALL {
        let spec = SynthSpec {
            shaft_speed_rpm: rpm,
            fault_type: fault,
            rng_seed: mix_seed(base.rng_seed, domain_key, u64::from(fault.class_id())),
            ..base.clone()
        };
        let part = generate(&spec, per_class).map_err(|e| e.context(format!("{} at {rpm} rpm", fault.name())))?;
        out.segments.extend(part.segments);
        out.labels.extend(part.labels);
    }
    Ok(out)
}

/// Source and target domains that differ only in shaft speed.
pub fn generate_domain_pair(
    base: &SynthSpec,
    source_rpm: f64,
    target_rpm: f64,
    per_class: usize,
) -> Result<(SegmentSet, SegmentSet)> {
    Ok((
        generate_domain(base, source_rpm, per_class, 0)?,
        generate_domain(base, target_rpm, per_class, 1)?,
    ))
}

/// Writes one raw little-endian record per class plus a manifest that cuts
/// it back into the same segments. Returns the manifest path.
pub fn write_dataset(set: &SegmentSet, dir: impl AsRef<Path>, name: &str) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let segment_len = set
        .segments
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::EmptyInput("no segments to write".into()))?;

    let mut labels: Vec<FaultLabel> = set.labels.clone();
    labels.sort();
    labels.dedup();
    let mut entries = Vec::new();
    for label in &labels {
        let values: Vec<f64> = set
            .segments
            .iter()
            .zip(&set.labels)
            .filter(|(_, l)| *l == label)
            .flat_map(|(s, _)| s.iter().copied())
            .collect();
        let file = format!("{name}_{}.f64", label.class_name);
        write_raw_f64_le(dir.join(&file), &values)?;
        entries.push(ManifestEntry {
            path: file.into(),
            format: RecordFormat::RawF64Le,
            label_id: label.class_id,
            segment_len,
            segment_count: values.len() / segment_len,
        });
    }
    let manifest = DatasetManifest {
        name: name.to_owned(),
        labels: labels
            .iter()
            .map(|l| LabelDecl {
                id: l.class_id,
                name: l.class_name.clone(),
            })
            .collect(),
        entries,
        sampling_rate_hz: Some(set.sampling_rate_hz),
        base_dir: None,
    };
    let path = dir.join(format!("{name}.json"));
    manifest.save(&path)?;
    Ok(path)
}
