//! Synthetic ECG/EEG corpus with a known link between latent emotion state and
//! signal properties.
//!
//! * ECG: heart rate encodes arousal, T-wave amplitude encodes valence.
//! * EEG: the log ratio of beta to alpha amplitude encodes arousal, frontal
//!   alpha asymmetry (right minus left) encodes valence.
//!
//! Each labeled trial is informative in ECG only, EEG only, or both. The other
//! modality then carries neutral parameters that sit between the two classes.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::io::write_signal;
use crate::dataset::manifest::{Manifest, ManifestEntry, TrialFiles};
use crate::dsp::Modality;
use crate::error::{Error, Result};
use crate::rng::{stream, Rng, Stream};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TRUTH_FILE: &str = "synthetic_truth.toml";

/// A latent parameter: class means at `center ± separation`, each jittered
/// uniformly by `jitter`; neutral values lie within `center ± neutral_jitter`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Level {
    pub center: f64,
    pub separation: f64,
    pub jitter: f64,
    pub neutral_jitter: f64,
}

impl Level {
    fn draw(&self, state: State, rng: &mut Rng) -> f64 {
        let u = |rng: &mut Rng, w: f64| if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 };
        match state {
            State::High => self.center + self.separation + u(rng, self.jitter),
            State::Low => self.center - self.separation + u(rng, self.jitter),
            State::Neutral => self.center + u(rng, self.neutral_jitter),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.separation > self.jitter && self.separation > self.neutral_jitter)
            || self.jitter < 0.0
            || self.neutral_jitter < 0.0
        {
            return Err(Error::Config(format!(
                "synthetic level `{what}` must have separation above both jitters"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcgSynth {
    pub heart_rate_bpm: Level,
    pub t_wave_amplitude: Level,
    pub noise_std: f64,
    pub baseline_wander: f64,
}

impl Default for EcgSynth {
    fn default() -> Self {
        Self {
            heart_rate_bpm: Level {
                center: 75.0,
                separation: 15.0,
                jitter: 5.0,
                neutral_jitter: 5.0,
            },
            t_wave_amplitude: Level {
                center: 0.25,
                separation: 0.15,
                jitter: 0.05,
                neutral_jitter: 0.05,
            },
            noise_std: 0.15,
            baseline_wander: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EegSynth {
    pub beta_alpha_log_ratio: Level,
    pub alpha_asymmetry: Level,
    pub alpha_hz: f64,
    pub beta_hz: f64,
    /// Weight of the rhythm source shared by all electrodes; the rest of each
    /// rhythm is private to its channel.
    pub spatial_coherence: f64,
    pub noise_std: f64,
}

impl Default for EegSynth {
    fn default() -> Self {
        Self {
            beta_alpha_log_ratio: Level {
                center: 0.0,
                separation: 0.9,
                jitter: 0.3,
                neutral_jitter: 0.3,
            },
            alpha_asymmetry: Level {
                center: 0.0,
                separation: 0.4,
                jitter: 0.1,
                neutral_jitter: 0.1,
            },
            alpha_hz: 10.0,
            beta_hz: 20.0,
            spatial_coherence: 0.9,
            noise_std: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub name: String,
    pub subjects: usize,
    pub trials_per_subject: usize,
    /// Extra rating-free trials per subject, usable only for pre-training.
    pub unlabeled_trials_per_subject: usize,
    pub duration_s: f64,
    pub sample_rate: f64,
    pub ecg_only_fraction: f64,
    pub eeg_only_fraction: f64,
    pub ecg: EcgSynth,
    pub eeg: EegSynth,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            subjects: 4,
            trials_per_subject: 10,
            unlabeled_trials_per_subject: 0,
            duration_s: 60.0,
            sample_rate: 256.0,
            ecg_only_fraction: 0.4,
            eeg_only_fraction: 0.4,
            ecg: EcgSynth::default(),
            eeg: EegSynth::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.trials_per_subject == 0 {
            return Err(Error::Config("synthetic spec needs at least one subject and trial".into()));
        }
        if !(self.duration_s > 0.0 && self.sample_rate > 0.0) {
            return Err(Error::Config("synthetic duration and sample rate must be positive".into()));
        }
        let (a, b) = (self.ecg_only_fraction, self.eeg_only_fraction);
        if !(a >= 0.0 && b >= 0.0 && a + b <= 1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "informative fractions {a} + {b} must be non-negative and sum to at most 1"
            )));
        }
        self.ecg.heart_rate_bpm.validate("ecg.heart_rate_bpm")?;
        self.ecg.t_wave_amplitude.validate("ecg.t_wave_amplitude")?;
        self.eeg.beta_alpha_log_ratio.validate("eeg.beta_alpha_log_ratio")?;
        self.eeg.alpha_asymmetry.validate("eeg.alpha_asymmetry")?;
        if !(self.ecg.noise_std >= 0.0 && self.eeg.noise_std >= 0.0) {
            return Err(Error::Config("synthetic noise levels must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.eeg.spatial_coherence) {
            return Err(Error::Config("eeg.spatial_coherence must lie in [0, 1]".into()));
        }
        if self.eeg.beta_hz * 2.0 >= self.sample_rate || self.ecg.heart_rate_bpm.center <= 0.0 {
            return Err(Error::Config("synthetic rhythm frequencies out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Informative {
    Ecg,
    Eeg,
    Both,
    None,
}

impl Informative {
    pub fn covers(self, m: Modality) -> bool {
        matches!(
            (self, m),
            (Informative::Both, _) | (Informative::Ecg, Modality::Ecg) | (Informative::Eeg, Modality::Eeg)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Low,
    High,
    Neutral,
}

/// Generating parameters of one trial, written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialTruth {
    pub subject_id: String,
    pub trial_id: String,
    pub informative: Informative,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arousal_high: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence_high: Option<bool>,
    pub heart_rate_bpm: f64,
    pub t_wave_amplitude: f64,
    pub beta_alpha_log_ratio: f64,
    pub alpha_asymmetry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTruth {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub trials: Vec<TrialTruth>,
}

impl SyntheticTruth {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::load(path, e.to_string()))
    }
}

fn balanced(n: usize, rng: &mut Rng) -> Vec<bool> {
    let mut v: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    v.shuffle(rng);
    v
}

fn plan_trials(spec: &SyntheticSpec, seed: u64) -> Vec<TrialTruth> {
    let n = spec.subjects * spec.trials_per_subject;
    let mut rng = stream(seed, Stream::Synthetic, &[0]);
    let arousal = balanced(n, &mut rng);
    let valence = balanced(n, &mut rng);
    let n_ecg = (spec.ecg_only_fraction * n as f64).round() as usize;
    let n_eeg = ((spec.eeg_only_fraction * n as f64).round() as usize).min(n - n_ecg);
    let mut informative: Vec<Informative> = (0..n)
        .map(|i| {
            if i < n_ecg {
                Informative::Ecg
            } else if i < n_ecg + n_eeg {
                Informative::Eeg
            } else {
                Informative::Both
            }
        })
        .collect();
    informative.shuffle(&mut rng);

    let state = |high: bool| if high { State::High } else { State::Low };
    let mut out = Vec::new();
    for s in 0..spec.subjects {
        let total = spec.trials_per_subject + spec.unlabeled_trials_per_subject;
        for t in 0..total {
            let mut prng = stream(seed, Stream::Synthetic, &[1, s as u64, t as u64]);
            let labeled = t < spec.trials_per_subject;
            let (a, v, inf, trial_id) = if labeled {
                let i = s * spec.trials_per_subject + t;
                (Some(arousal[i]), Some(valence[i]), informative[i], format!("T{:02}", t + 1))
            } else {
                let u = t - spec.trials_per_subject;
                (None, None, Informative::None, format!("U{:02}", u + 1))
            };
            // Unlabeled trials cover all three states so pre-training sees the full range.
            let pick = |high: Option<bool>, covered: bool, rng: &mut Rng| match high {
                Some(h) if covered => state(h),
                Some(_) => State::Neutral,
                None => [State::Low, State::High, State::Neutral][rng.random_range(0..3)],
            };
            let ecg_a = pick(a, inf.covers(Modality::Ecg), &mut prng);
            let ecg_v = pick(v, inf.covers(Modality::Ecg), &mut prng);
            let eeg_a = pick(a, inf.covers(Modality::Eeg), &mut prng);
            let eeg_v = pick(v, inf.covers(Modality::Eeg), &mut prng);
            out.push(TrialTruth {
                subject_id: format!("S{:02}", s + 1),
                trial_id,
                informative: inf,
                arousal_high: a,
                valence_high: v,
                heart_rate_bpm: spec.ecg.heart_rate_bpm.draw(ecg_a, &mut prng),
                t_wave_amplitude: spec.ecg.t_wave_amplitude.draw(ecg_v, &mut prng),
                beta_alpha_log_ratio: spec.eeg.beta_alpha_log_ratio.draw(eeg_a, &mut prng),
                alpha_asymmetry: spec.eeg.alpha_asymmetry.draw(eeg_v, &mut prng),
            });
        }
    }
    out
}

fn gauss(x: f64, mu: f64, sigma: f64) -> f64 {
    (-0.5 * ((x - mu) / sigma).powi(2)).exp()
}

/// Quasi-periodic PQRST pulse train.
fn ecg_signal(spec: &SyntheticSpec, truth: &TrialTruth, subject_scale: f64, rng: &mut Rng) -> Vec<f64> {
    let fs = spec.sample_rate;
    let n = (spec.duration_s * fs).round() as usize;
    let mut x = vec![0.0; n];
    let rr_mean = 60.0 / truth.heart_rate_bpm;
    let hrv = Normal::new(0.0, 0.03).expect("valid sigma");
    let t_amp = truth.t_wave_amplitude;
    let mut beat = rng.random_range(0.0..rr_mean);
    while beat < spec.duration_s + 0.5 {
        let rr = rr_mean * (1.0 + hrv.sample(rng));
        let t_pos = 0.28 * rr.sqrt();
        let lo = ((beat - 0.3) * fs).floor().max(0.0) as usize;
        let hi = (((beat + 0.6) * fs).ceil() as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            let dt = i as f64 / fs - beat;
            *v += subject_scale
                * (0.12 * gauss(dt, -0.16, 0.02) - 0.1 * gauss(dt, -0.03, 0.008)
                    + gauss(dt, 0.0, 0.01)
                    - 0.2 * gauss(dt, 0.03, 0.008)
                    + t_amp * gauss(dt, t_pos, 0.045));
        }
        beat += rr;
    }
    let noise = Normal::new(0.0, spec.ecg.noise_std).expect("validated noise level");
    let phase = rng.random_range(0.0..2.0 * PI);
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *v += spec.ecg.baseline_wander * (2.0 * PI * 0.25 * t + phase).sin();
        *v += noise.sample(rng);
    }
    x
}

/// Band oscillation with slow amplitude modulation: three close sinusoids.
fn rhythm(freq: f64, amp: f64, n: usize, fs: f64, rng: &mut Rng) -> Vec<f64> {
    let comps: Vec<(f64, f64)> = (0..3)
        .map(|_| (freq + rng.random_range(-0.6..0.6), rng.random_range(0.0..2.0 * PI)))
        .collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            amp / 3f64.sqrt() * comps.iter().map(|&(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>()
        })
        .collect()
}

fn eeg_signal(spec: &SyntheticSpec, truth: &TrialTruth, alpha_shift: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    let fs = spec.sample_rate;
    let n = (spec.duration_s * fs).round() as usize;
    let r = truth.beta_alpha_log_ratio;
    let (alpha_amp, beta_amp) = ((-r / 2.0).exp(), (r / 2.0).exp());
    let asym = truth.alpha_asymmetry;
    let noise = Normal::new(0.0, spec.eeg.noise_std).expect("validated noise level");
    let (shared, private) = (spec.eeg.spatial_coherence, (1.0 - spec.eeg.spatial_coherence.powi(2)).sqrt());
    let alpha_hz = spec.eeg.alpha_hz + alpha_shift;
    let common = [
        rhythm(alpha_hz, 1.0, n, fs, rng),
        rhythm(spec.eeg.beta_hz, 1.0, n, fs, rng),
        rhythm(6.0, 1.0, n, fs, rng),
    ];
    let delta = rhythm(2.0, 0.5, n, fs, rng);
    (0..Modality::Eeg.channel_count())
        .map(|c| {
            // F7, F3 on the left; F4, F8 on the right.
            let side = match c {
                0 | 1 => 1.0 - asym,
                8 | 9 => 1.0 + asym,
                _ => 1.0,
            };
            let gains = [alpha_amp * side, beta_amp, 0.3];
            let own = [
                rhythm(alpha_hz, 1.0, n, fs, rng),
                rhythm(spec.eeg.beta_hz, 1.0, n, fs, rng),
                rhythm(6.0, 1.0, n, fs, rng),
            ];
            let spread: f64 = rng.random_range(0.8..1.2);
            (0..n)
                .map(|i| {
                    let rhythms: f64 = (0..3)
                        .map(|b| gains[b] * (shared * common[b][i] + private * own[b][i]))
                        .sum();
                    spread * rhythms + 0.5 * delta[i] + noise.sample(rng)
                })
                .collect()
        })
        .collect()
}

/// Writes signals, `manifest.toml`, and `synthetic_truth.toml` under `out`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let truths = plan_trials(spec, seed);
    let mut entries = Vec::with_capacity(truths.len());
    for (k, truth) in truths.iter().enumerate() {
        let s_idx: u64 = truth.subject_id[1..].parse().unwrap_or(0);
        let mut subj = stream(seed, Stream::Synthetic, &[2, s_idx]);
        let subject_scale = subj.random_range(0.8..1.2);
        let alpha_shift = subj.random_range(-1.0..1.0);
        let mut rng = stream(seed, Stream::Synthetic, &[3, k as u64]);
        let mut files = TrialFiles::default();
        let stem = format!("{}_{}", truth.subject_id, truth.trial_id);
        for m in Modality::ALL {
            let channels = match m {
                Modality::Ecg => vec![ecg_signal(spec, truth, subject_scale, &mut rng)],
                Modality::Eeg => eeg_signal(spec, truth, alpha_shift, &mut rng),
            };
            let rel = Path::new("signals").join(format!("{stem}_{m}.f32"));
            write_signal(&out.join(&rel), &channels, spec.sample_rate)?;
            files.set(m, rel);
        }
        let rating = |high: Option<bool>, rng: &mut Rng| {
            high.map(|h| {
                let base = if h { 7.5 } else { 2.5 };
                base + rng.random_range(-1.0..1.0)
            })
        };
        entries.push(ManifestEntry {
            subject_id: truth.subject_id.clone(),
            trial_id: truth.trial_id.clone(),
            arousal: rating(truth.arousal_high, &mut rng),
            valence: rating(truth.valence_high, &mut rng),
            files,
        });
    }
    let manifest = Manifest {
        name: spec.name.clone(),
        sample_rate: spec.sample_rate,
        modalities: Modality::ALL.to_vec(),
        entries,
        root: out.to_path_buf(),
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    let truth = SyntheticTruth {
        spec: spec.clone(),
        seed,
        trials: truths,
    };
    let text = toml::to_string(&truth).map_err(|e| Error::Config(e.to_string()))?;
    let tp = out.join(TRUTH_FILE);
    fs::write(&tp, text).map_err(|e| Error::io(&tp, e))?;
    Ok(manifest)
}
