//! Synthetic labeled datasets for both sensor modalities: motif-based
//! signal synthesis, templated captions, QA pairs for the consistency
//! metric, and the JSON-lines on-disk format.
//!
//! Generation is deterministic: sample `id` seeds its own RNG stream, so
//! parallel generation and regeneration of any id subset reproduce the
//! same bytes.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Modality, SensorSequence};
use crate::metrics::QaItem;
use crate::parallel;
use crate::rng::stream_seed;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Record {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid generation spec: {0}")]
    BadSpec(String),
    #[error("caption needs at least one action label")]
    NoActions,
}

/// One synthesizable activity: a base oscillation plus two harmonics.
#[derive(Debug, Clone, Copy)]
pub struct ActionMotif {
    pub label: &'static str,
    pub freq_hz: f64,
    pub amplitude: f64,
    /// Relative amplitudes of the 2f and 3f harmonics.
    pub harmonics: [f64; 2],
}

/// Motif catalog. Base frequencies are pairwise separated by at least 20%
/// so a frequency projection can always tell two motifs apart.
pub const MOTIFS: [ActionMotif; 8] = [
    ActionMotif { label: "walk", freq_hz: 2.5, amplitude: 1.0, harmonics: [0.35, 0.15] },
    ActionMotif { label: "run", freq_hz: 3.2, amplitude: 1.4, harmonics: [0.35, 0.15] },
    ActionMotif { label: "sit", freq_hz: 1.0, amplitude: 0.8, harmonics: [0.35, 0.15] },
    ActionMotif { label: "stand", freq_hz: 0.8, amplitude: 0.6, harmonics: [0.35, 0.15] },
    ActionMotif { label: "wave", freq_hz: 2.0, amplitude: 1.0, harmonics: [0.35, 0.15] },
    ActionMotif { label: "drink", freq_hz: 1.6, amplitude: 0.7, harmonics: [0.35, 0.15] },
    ActionMotif { label: "write", freq_hz: 1.25, amplitude: 0.5, harmonics: [0.35, 0.15] },
    ActionMotif { label: "jump", freq_hz: 4.0, amplitude: 1.2, harmonics: [0.35, 0.15] },
];

pub fn motif_index(label: &str) -> Option<usize> {
    MOTIFS.iter().position(|m| m.label == label)
}

/// Body placements for the six IMU devices, in device order.
pub const IMU_PLACEMENTS: [&str; 6] = [
    "phone_pocket_left",
    "phone_pocket_right",
    "watch_wrist_left",
    "watch_wrist_right",
    "earbuds",
    "glasses",
];

/// Tx-Rx links for the three Wi-Fi devices.
pub const WIFI_LINKS: [&str; 3] = ["link_a", "link_b", "link_c"];

pub fn placement_catalog(modality: Modality) -> &'static [&'static str] {
    match modality {
        Modality::Imu => &IMU_PLACEMENTS,
        Modality::Wifi => &WIFI_LINKS,
    }
}

/// Per-motif amplitude gain per IMU placement (rows in `MOTIFS` order,
/// columns in `IMU_PLACEMENTS` order). Wrist devices dominate hand motions,
/// pocket devices dominate locomotion.
pub const IMU_GAINS: [[f64; 6]; 8] = [
    [1.0, 1.0, 0.6, 0.6, 0.3, 0.3], // walk
    [1.2, 1.2, 0.8, 0.8, 0.5, 0.5], // run
    [0.8, 0.8, 0.4, 0.4, 0.2, 0.2], // sit
    [0.7, 0.7, 0.3, 0.3, 0.2, 0.2], // stand
    [0.1, 0.1, 1.2, 0.9, 0.1, 0.1], // wave
    [0.1, 0.1, 1.0, 0.3, 0.2, 0.3], // drink
    [0.1, 0.1, 0.9, 0.2, 0.1, 0.1], // write
    [1.1, 1.1, 0.7, 0.7, 0.8, 0.9], // jump
];

/// Per-motif amplitude gain per Wi-Fi link (rows in `MOTIFS` order).
pub const WIFI_GAINS: [[f64; 3]; 8] = [
    [1.0, 0.8, 0.6], // walk
    [1.2, 1.0, 0.8], // run
    [0.5, 0.4, 0.3], // sit
    [0.4, 0.3, 0.2], // stand
    [0.7, 0.9, 0.5], // wave
    [0.5, 0.6, 0.4], // drink
    [0.4, 0.5, 0.3], // write
    [1.3, 1.1, 0.9], // jump
];

/// The shortest clip must still fill one default encoder patch.
pub const MIN_CLIP_SAMPLES: usize = 25;

/// Everything that determines a generated dataset. Identical specs produce
/// byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub modality: Modality,
    pub n_samples: usize,
    pub seed: u64,
    pub rate_hz: f64,
    pub actions_min: usize,
    pub actions_max: usize,
    pub duration_min_s: f64,
    pub duration_max_s: f64,
    pub devices: usize,
    pub channels: usize,
    pub noise_sigma: f64,
    /// Placement (or link) id per device, indexing the catalog.
    pub placement_ids: Vec<usize>,
    /// Per-motif per-device amplitude gain, rows in `MOTIFS` order.
    pub gains: Vec<Vec<f64>>,
}

impl GenSpec {
    pub fn imu(n_samples: usize, seed: u64) -> Self {
        Self {
            modality: Modality::Imu,
            n_samples,
            seed,
            rate_hz: 50.0,
            actions_min: 3,
            actions_max: 6,
            duration_min_s: 3.0,
            duration_max_s: 8.0,
            devices: 6,
            channels: 6,
            noise_sigma: 0.05,
            placement_ids: (0..6).collect(),
            gains: IMU_GAINS.iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn wifi(n_samples: usize, seed: u64) -> Self {
        Self {
            modality: Modality::Wifi,
            n_samples,
            seed,
            rate_hz: 50.0,
            actions_min: 3,
            actions_max: 6,
            duration_min_s: 3.0,
            duration_max_s: 8.0,
            devices: 3,
            channels: 30,
            noise_sigma: 0.1,
            placement_ids: (0..3).collect(),
            gains: WIFI_GAINS.iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::BadSpec(msg));
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return bad(format!("rate_hz must be positive, got {}", self.rate_hz));
        }
        if self.actions_min < 1 || self.actions_min > self.actions_max {
            return bad(format!(
                "actions range [{}, {}] is empty",
                self.actions_min, self.actions_max
            ));
        }
        if !(self.duration_min_s > 0.0 && self.duration_min_s <= self.duration_max_s) {
            return bad(format!(
                "duration range [{}, {}] is empty",
                self.duration_min_s, self.duration_max_s
            ));
        }
        if self.devices == 0 || self.channels == 0 {
            return bad("devices and channels must be at least 1".into());
        }
        if self.placement_ids.len() != self.devices {
            return bad(format!(
                "placement_ids has {} entries for {} devices",
                self.placement_ids.len(),
                self.devices
            ));
        }
        let catalog = placement_catalog(self.modality).len();
        if let Some(&p) = self.placement_ids.iter().find(|&&p| p >= catalog) {
            return bad(format!("placement id {p} outside catalog of {catalog}"));
        }
        if self.gains.len() != MOTIFS.len() {
            return bad(format!("gain table needs {} rows", MOTIFS.len()));
        }
        for (i, row) in self.gains.iter().enumerate() {
            if row.len() != self.devices {
                return bad(format!("gain row {i} has {} entries", row.len()));
            }
            if row.iter().any(|g| !g.is_finite() || *g < 0.0) {
                return bad(format!("gain row {i} has a negative or non-finite entry"));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        let min_action = ((self.duration_min_s * self.rate_hz).round() as usize).max(1);
        if self.actions_min * min_action < MIN_CLIP_SAMPLES {
            return bad(format!(
                "shortest clip is {} samples, below the minimum {}",
                self.actions_min * min_action,
                MIN_CLIP_SAMPLES
            ));
        }
        Ok(())
    }
}

/// One labeled interval, in seconds from clip start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpan {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// A fully labeled clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub sensor: SensorSequence,
    pub caption: String,
    pub actions: Vec<ActionSpan>,
    pub qa: Vec<QaItem>,
}

/// One segment to synthesize: a motif index into `MOTIFS` and a length in
/// samples.
#[derive(Debug, Clone, Copy)]
pub struct ActionSeg {
    pub motif: usize,
    pub len: usize,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Mixing stream tag; sample streams use ids, which stay below this.
const MIX_STREAM: u64 = u64::MAX;

/// Fixed per-link channel mixing matrices (multipath stand-in), row-major
/// C x C, derived from the spec seed only: M = I + 0.3 R with R uniform in
/// (-1, 1).
pub fn mixing_matrices(spec: &GenSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, MIX_STREAM));
    let c = spec.channels;
    (0..spec.devices)
        .map(|_| {
            (0..c * c)
                .map(|idx| {
                    let r = rng.gen_range(-1.0..1.0);
                    if idx / c == idx % c {
                        1.0 + 0.3 * r
                    } else {
                        0.3 * r
                    }
                })
                .collect()
        })
        .collect()
}

/// Renders the action segments into a [D, C, L] clip: per segment each
/// device/channel carries gain-scaled sinusoids of the motif frequency and
/// its harmonics with random phases and a +-10% amplitude jitter; Wi-Fi
/// clips are then channel-mixed per link; Gaussian noise comes last.
pub fn synth_signal(
    actions: &[ActionSeg],
    spec: &GenSpec,
    rng: &mut ChaCha8Rng,
) -> Result<SensorSequence, DataError> {
    spec.validate()?;
    if actions.is_empty() {
        return Err(DataError::NoActions);
    }
    if let Some(seg) = actions.iter().find(|s| s.motif >= MOTIFS.len() || s.len == 0) {
        return Err(DataError::BadSpec(format!(
            "bad action segment: motif {} len {}",
            seg.motif, seg.len
        )));
    }
    let (d, c) = (spec.devices, spec.channels);
    let l: usize = actions.iter().map(|s| s.len).sum();
    let mut values = vec![0f64; d * c * l];

    let mut t0 = 0usize;
    for seg in actions {
        let motif = MOTIFS[seg.motif];
        for dev in 0..d {
            let gain = spec.gains[seg.motif][dev];
            for ch in 0..c {
                let phases = [
                    rng.gen_range(0.0..TAU),
                    rng.gen_range(0.0..TAU),
                    rng.gen_range(0.0..TAU),
                ];
                let jitter = rng.gen_range(0.9..=1.1);
                let amp = motif.amplitude * gain * jitter;
                let base = (dev * c + ch) * l;
                for t in 0..seg.len {
                    let w = TAU * motif.freq_hz * (t0 + t) as f64 / spec.rate_hz;
                    values[base + t0 + t] += amp
                        * ((w + phases[0]).sin()
                            + motif.harmonics[0] * (2.0 * w + phases[1]).sin()
                            + motif.harmonics[1] * (3.0 * w + phases[2]).sin());
                }
            }
        }
        t0 += seg.len;
    }

    if spec.modality == Modality::Wifi {
        let mats = mixing_matrices(spec);
        let mut col = vec![0f64; c];
        for dev in 0..d {
            let m = &mats[dev];
            for t in 0..l {
                for (j, slot) in col.iter_mut().enumerate() {
                    *slot = values[(dev * c + j) * l + t];
                }
                for i in 0..c {
                    let row = &m[i * c..(i + 1) * c];
                    values[(dev * c + i) * l + t] =
                        row.iter().zip(&col).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        for v in values.iter_mut() {
            *v += spec.noise_sigma * gauss(rng);
        }
    }

    Ok(SensorSequence {
        modality: spec.modality,
        devices: d,
        channels: c,
        len: l,
        sample_rate_hz: spec.rate_hz,
        placement_ids: spec.placement_ids.clone(),
        values: values.into_iter().map(|v| v as f32).collect(),
    })
}

/// Caption template: fixed subject, regular "+s" conjugation.
pub fn render_caption<S: AsRef<str>>(labels: &[S]) -> Result<String, DataError> {
    let v = |s: &S| s.as_ref().to_string();
    match labels {
        [] => Err(DataError::NoActions),
        [only] => Ok(format!("The user {}s.", v(only))),
        [first, second] => Ok(format!("The user {}s and then {}s.", v(first), v(second))),
        [first, mid @ .., last] => {
            let mut out = format!("The user {}s", v(first));
            for label in mid {
                out.push_str(&format!(", then {}s", v(label)));
            }
            out.push_str(&format!(", and finally {}s.", v(last)));
            Ok(out)
        }
    }
}

fn make_qa(labels: &[&str], rng: &mut ChaCha8Rng) -> Vec<QaItem> {
    let n = labels.len();
    let k = rng.gen_range(1..=n);
    vec![
        QaItem {
            q: "how many actions did the user perform?".into(),
            a: n.to_string(),
        },
        QaItem {
            q: "what was the first action?".into(),
            a: labels[0].into(),
        },
        QaItem {
            q: "what was the last action?".into(),
            a: labels[n - 1].into(),
        },
        QaItem {
            q: format!("what was action number {k}?"),
            a: labels[k - 1].into(),
        },
    ]
}

/// Generates one sample on its own RNG stream. Action durations are
/// rounded to whole samples so the spans exactly tile [0, L/rate].
pub fn gen_sample(spec: &GenSpec, id: u64) -> Result<Sample, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, id));
    let n_actions = rng.gen_range(spec.actions_min..=spec.actions_max);
    let mut segs = Vec::with_capacity(n_actions);
    for _ in 0..n_actions {
        let motif = rng.gen_range(0..MOTIFS.len());
        let dur = rng.gen_range(spec.duration_min_s..=spec.duration_max_s);
        let len = ((dur * spec.rate_hz).round() as usize).max(1);
        segs.push(ActionSeg { motif, len });
    }

    let mut actions = Vec::with_capacity(n_actions);
    let mut cum = 0usize;
    for seg in &segs {
        actions.push(ActionSpan {
            label: MOTIFS[seg.motif].label.to_string(),
            start_s: cum as f64 / spec.rate_hz,
            end_s: (cum + seg.len) as f64 / spec.rate_hz,
        });
        cum += seg.len;
    }

    let sensor = synth_signal(&segs, spec, &mut rng)?;
    let labels: Vec<&str> = segs.iter().map(|s| MOTIFS[s.motif].label).collect();
    let caption = render_caption(&labels)?;
    let qa = make_qa(&labels, &mut rng);
    Ok(Sample {
        id,
        sensor,
        caption,
        actions,
        qa,
    })
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic 80/20 split of ids 0..n: the floor(n/5) ids with the
/// smallest FNV-1a hashes form the test set. Both lists come back sorted.
pub fn split_ids(n: usize) -> (Vec<u64>, Vec<u64>) {
    let mut ranked: Vec<u64> = (0..n as u64).collect();
    ranked.sort_by_key(|&id| (fnv1a(&id.to_le_bytes()), id));
    let n_test = n / 5;
    let mut test = ranked[..n_test].to_vec();
    let mut train = ranked[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Generates the full dataset (parallel over samples) and splits it.
pub fn gen_dataset(spec: &GenSpec) -> Result<(Vec<Sample>, Vec<Sample>), DataError> {
    spec.validate()?;
    if spec.n_samples < 2 {
        return Err(DataError::BadSpec(format!(
            "need at least 2 samples, got {}",
            spec.n_samples
        )));
    }
    let samples: Vec<Sample> = parallel::pool().install(|| {
        (0..spec.n_samples as u64)
            .into_par_iter()
            .map(|id| gen_sample(spec, id))
            .collect::<Result<_, _>>()
    })?;
    let (_, test_ids) = split_ids(spec.n_samples);
    let test_set: HashSet<u64> = test_ids.into_iter().collect();
    let (test, train): (Vec<Sample>, Vec<Sample>) =
        samples.into_iter().partition(|s| test_set.contains(&s.id));
    Ok((train, test))
}

/// Adapter hook for real recordings: converts each external record into a
/// `Sample` with the provided mapping, stopping at the first failure. No
/// parser for any concrete external format ships here.
pub fn adapt_external<R, F>(records: impl IntoIterator<Item = R>, f: F) -> Result<Vec<Sample>, DataError>
where
    F: FnMut(R) -> Result<Sample, DataError>,
{
    records.into_iter().map(f).collect()
}

/// On-disk record: one JSON object per line with the signal as nested
/// [D][C][L] arrays.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: u64,
    modality: Modality,
    placement_ids: Vec<usize>,
    sample_rate_hz: f64,
    signal: Vec<Vec<Vec<f32>>>,
    caption: String,
    actions: Vec<ActionSpan>,
    qa: Vec<QaItem>,
}

impl SampleRecord {
    fn from_sample(s: &Sample) -> Self {
        let seq = &s.sensor;
        let signal = (0..seq.devices)
            .map(|d| {
                (0..seq.channels)
                    .map(|c| {
                        let base = (d * seq.channels + c) * seq.len;
                        seq.values[base..base + seq.len].to_vec()
                    })
                    .collect()
            })
            .collect();
        Self {
            id: s.id,
            modality: seq.modality,
            placement_ids: seq.placement_ids.clone(),
            sample_rate_hz: seq.sample_rate_hz,
            signal,
            caption: s.caption.clone(),
            actions: s.actions.clone(),
            qa: s.qa.clone(),
        }
    }

    fn into_sample(self) -> Result<Sample, String> {
        let d = self.signal.len();
        if d == 0 {
            return Err("field signal: no devices".into());
        }
        let c = self.signal[0].len();
        if c == 0 {
            return Err("field signal: no channels".into());
        }
        let l = self.signal[0][0].len();
        if l == 0 {
            return Err("field signal: no timesteps".into());
        }
        let mut values = Vec::with_capacity(d * c * l);
        for (di, dev) in self.signal.iter().enumerate() {
            if dev.len() != c {
                return Err(format!("field signal: device {di} has {} channels, expected {c}", dev.len()));
            }
            for (ci, ch) in dev.iter().enumerate() {
                if ch.len() != l {
                    return Err(format!(
                        "field signal: device {di} channel {ci} has {} timesteps, expected {l}",
                        ch.len()
                    ));
                }
                values.extend_from_slice(ch);
            }
        }
        if self.placement_ids.len() != d {
            return Err(format!(
                "field placement_ids: {} entries for {d} devices",
                self.placement_ids.len()
            ));
        }
        Ok(Sample {
            id: self.id,
            sensor: SensorSequence {
                modality: self.modality,
                devices: d,
                channels: c,
                len: l,
                sample_rate_hz: self.sample_rate_hz,
                placement_ids: self.placement_ids,
                values,
            },
            caption: self.caption,
            actions: self.actions,
            qa: self.qa,
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<(), DataError> {
    let mut out = String::new();
    for s in samples {
        let rec = SampleRecord::from_sample(s);
        out.push_str(&serde_json::to_string(&rec).expect("record serialization is infallible"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads a JSON-lines sample file; an empty file yields an empty dataset.
/// Malformed lines and schema violations report the path, the 1-based line
/// number, and the offending field.
pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut samples = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |msg: String| DataError::Record {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
        samples.push(rec.into_sample().map_err(record_err)?);
    }
    Ok(samples)
}

/// Split membership plus the spec that generated the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: GenSpec,
    pub train_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_dataset(
    dir: &Path,
    spec: &GenSpec,
    train: &[Sample],
    test: &[Sample],
) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_jsonl(&dir.join(TRAIN_FILE), train)?;
    write_jsonl(&dir.join(TEST_FILE), test)?;
    let manifest = Manifest {
        spec: spec.clone(),
        train_ids: train.iter().map(|s| s.id).collect(),
        test_ids: test.iter().map(|s| s.id).collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    fs::write(&path, body + "\n").map_err(io_err(&path))
}

#[derive(Debug)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub manifest: Option<Manifest>,
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let train = read_jsonl(&dir.join(TRAIN_FILE))?;
    let test = read_jsonl(&dir.join(TEST_FILE))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        let body = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        Some(serde_json::from_str(&body).map_err(|e| DataError::Record {
            path: manifest_path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?)
    } else {
        None
    };
    Ok(Dataset {
        train,
        test,
        manifest,
    })
}

/// Signal power at one frequency via the Goertzel recurrence.
pub fn goertzel_power(x: &[f32], rate_hz: f64, freq_hz: f64) -> f64 {
    let omega = TAU * freq_hz / rate_hz;
    let coeff = 2.0 * omega.cos();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for &v in x {
        let s0 = v as f64 + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    s1 * s1 + s2 * s2 - coeff * s1 * s2
}

/// The motif whose base frequency carries the most total power across all
/// device channels. A nearest-frequency classifier for single-action clips.
pub fn dominant_motif(seq: &SensorSequence) -> &'static str {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (m, motif) in MOTIFS.iter().enumerate() {
        let mut power = 0.0;
        for dc in 0..seq.devices * seq.channels {
            let ch = &seq.values[dc * seq.len..(dc + 1) * seq.len];
            power += goertzel_power(ch, seq.sample_rate_hz, motif.freq_hz);
        }
        if power > best.1 {
            best = (m, power);
        }
    }
    MOTIFS[best.0].label
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::answerer::{caption_action_labels, Answerer, BuiltinAnswerer};

    fn quiet_imu(seed: u64) -> GenSpec {
        GenSpec {
            noise_sigma: 0.0,
            ..GenSpec::imu(4, seed)
        }
    }

    #[test]
    fn motif_frequencies_stay_separated() {
        let mut freqs: Vec<f64> = MOTIFS.iter().map(|m| m.freq_hz).collect();
        freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in freqs.windows(2) {
            assert!(w[1] / w[0] >= 1.2, "{} vs {}", w[0], w[1]);
        }
        let labels: HashSet<&str> = MOTIFS.iter().map(|m| m.label).collect();
        assert_eq!(labels.len(), MOTIFS.len());
    }

    #[test]
    fn caption_templates_render_each_arity() {
        assert_eq!(render_caption(&["walk"]).unwrap(), "The user walks.");
        assert_eq!(
            render_caption(&["walk", "sit"]).unwrap(),
            "The user walks and then sits."
        );
        assert_eq!(
            render_caption(&["walk", "sit", "drink"]).unwrap(),
            "The user walks, then sits, and finally drinks."
        );
        assert_eq!(
            render_caption(&["jump", "wave", "write", "stand"]).unwrap(),
            "The user jumps, then waves, then writes, and finally stands."
        );
        assert!(matches!(
            render_caption::<&str>(&[]),
            Err(DataError::NoActions)
        ));
    }

    #[test]
    fn captions_parse_back_to_their_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=6 {
            for _ in 0..20 {
                let labels: Vec<&str> = (0..n)
                    .map(|_| MOTIFS[rng.gen_range(0..MOTIFS.len())].label)
                    .collect();
                let caption = render_caption(&labels).unwrap();
                assert_eq!(caption_action_labels(&caption), labels, "{caption}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GenSpec::imu(4, 99);
        let a = gen_sample(&spec, 2).unwrap();
        let b = gen_sample(&spec, 2).unwrap();
        assert_eq!(a, b);
        let c = gen_sample(&spec, 3).unwrap();
        assert_ne!(a.sensor.values, c.sensor.values);
    }

    #[test]
    fn noiseless_single_action_clips_classify_perfectly() {
        for modality in [Modality::Imu, Modality::Wifi] {
            let mut spec = match modality {
                Modality::Imu => quiet_imu(5),
                Modality::Wifi => GenSpec {
                    noise_sigma: 0.0,
                    ..GenSpec::wifi(4, 5)
                },
            };
            spec.actions_min = 1;
            spec.actions_max = 1;
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for (m, motif) in MOTIFS.iter().enumerate() {
                for rep in 0..5 {
                    let len = 150 + 25 * rep;
                    let seq = synth_signal(&[ActionSeg { motif: m, len }], &spec, &mut rng)
                        .unwrap();
                    assert_eq!(dominant_motif(&seq), motif.label, "rep {rep}");
                }
            }
        }
    }

    #[test]
    fn goertzel_finds_the_driving_frequency() {
        let rate = 50.0;
        let x: Vec<f32> = (0..400)
            .map(|t| (TAU * 2.5 * t as f64 / rate).sin() as f32)
            .collect();
        let at_f = goertzel_power(&x, rate, 2.5);
        let off_f = goertzel_power(&x, rate, 1.0);
        assert!(at_f > 20.0 * off_f, "{at_f} vs {off_f}");
    }

    #[test]
    fn zero_gain_devices_carry_nothing_but_noise() {
        let mut spec = quiet_imu(7);
        for row in spec.gains.iter_mut() {
            row[2] = 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = synth_signal(&[ActionSeg { motif: 0, len: 200 }], &spec, &mut rng).unwrap();
        let c = seq.channels;
        let dead = &seq.values[2 * c * seq.len..3 * c * seq.len];
        assert!(dead.iter().all(|&v| v == 0.0));
        let live = &seq.values[..c * seq.len];
        assert!(live.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn wifi_mixing_is_linear_in_the_clean_signal() {
        // mixing preserves the driving frequency, so classification held
        // above; here check the matrices are reproducible and near-identity
        let spec = GenSpec::wifi(4, 123);
        let a = mixing_matrices(&spec);
        let b = mixing_matrices(&spec);
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for m in &a {
            assert_eq!(m.len(), 30 * 30);
            for i in 0..30 {
                assert!((m[i * 30 + i] - 1.0).abs() <= 0.3);
            }
        }
        let other = mixing_matrices(&GenSpec::wifi(4, 124));
        assert_ne!(a, other);
    }

    #[test]
    fn action_spans_tile_the_clip_exactly() {
        let spec = GenSpec::imu(4, 21);
        for id in 0..6 {
            let s = gen_sample(&spec, id).unwrap();
            assert_eq!(s.actions[0].start_s, 0.0);
            for w in s.actions.windows(2) {
                assert_eq!(w[0].end_s, w[1].start_s);
            }
            let l = s.sensor.len;
            assert_eq!(
                s.actions.last().unwrap().end_s,
                l as f64 / s.sensor.sample_rate_hz
            );
            let n = s.actions.len();
            assert!((spec.actions_min..=spec.actions_max).contains(&n));
        }
    }

    #[test]
    fn qa_ground_truth_matches_the_caption() {
        let spec = GenSpec::imu(50, 3);
        let mut answerer = BuiltinAnswerer;
        for id in 0..50 {
            let s = gen_sample(&spec, id).unwrap();
            let labels: Vec<String> = s.actions.iter().map(|a| a.label.clone()).collect();
            assert_eq!(s.caption, render_caption(&labels).unwrap());
            assert_eq!(s.qa.len(), 4);
            assert_eq!(s.qa[0].a, labels.len().to_string());
            assert_eq!(s.qa[1].a, labels[0]);
            assert_eq!(s.qa[2].a, labels[labels.len() - 1]);
            for item in &s.qa {
                let got = answerer.answer(&s.caption, &item.q).unwrap();
                assert_eq!(got, item.a, "q={} caption={}", item.q, s.caption);
            }
        }
    }

    #[test]
    fn split_is_80_20_and_deterministic() {
        let (train, test) = split_ids(100);
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        let all: HashSet<u64> = train.iter().chain(test.iter()).copied().collect();
        assert_eq!(all.len(), 100);
        let (train2, test2) = split_ids(100);
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn both_splits_cover_every_motif() {
        let mut spec = GenSpec::imu(200, 8);
        spec.rate_hz = 25.0;
        spec.duration_min_s = 1.0;
        spec.duration_max_s = 2.0;
        let (train, test) = gen_dataset(&spec).unwrap();
        assert_eq!(train.len(), 160);
        assert_eq!(test.len(), 40);
        for (name, split) in [("train", &train), ("test", &test)] {
            let seen: HashSet<&str> = split
                .iter()
                .flat_map(|s| s.actions.iter().map(|a| a.label.as_str()))
                .collect();
            assert_eq!(seen.len(), MOTIFS.len(), "{name} split missing a motif");
        }
    }

    #[test]
    fn dataset_round_trips_through_jsonl() {
        let mut spec = GenSpec::imu(10, 42);
        spec.rate_hz = 25.0;
        spec.duration_min_s = 1.0;
        spec.duration_max_s = 2.0;
        let (train, test) = gen_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &spec, &train, &test).unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.train, train);
        assert_eq!(ds.test, test);
        let manifest = ds.manifest.unwrap();
        assert_eq!(manifest.spec, spec);
        assert_eq!(manifest.train_ids.len(), 8);
        assert_eq!(manifest.test_ids.len(), 2);

        // regenerating writes byte-identical files
        let dir2 = tempfile::tempdir().unwrap();
        let (train2, test2) = gen_dataset(&spec).unwrap();
        write_dataset(dir2.path(), &spec, &train2, &test2).unwrap();
        for name in [TRAIN_FILE, TEST_FILE, MANIFEST_FILE] {
            let a = fs::read(dir.path().join(name)).unwrap();
            let b = fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn jsonl_errors_carry_line_numbers_and_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");

        let spec = GenSpec {
            rate_hz: 25.0,
            duration_min_s: 1.0,
            duration_max_s: 2.0,
            ..GenSpec::imu(2, 0)
        };
        let sample = gen_sample(&spec, 0).unwrap();
        let mut rec = serde_json::to_value(SampleRecord::from_sample(&sample)).unwrap();
        rec.as_object_mut().unwrap().remove("caption");
        let good = serde_json::to_string(&SampleRecord::from_sample(&sample)).unwrap();
        fs::write(&path, format!("{good}\n{rec}\n")).unwrap();
        let err = read_jsonl(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "{msg}");
        assert!(msg.contains("caption"), "{msg}");

        fs::write(&path, "{not json\n").unwrap();
        let err = read_jsonl(&path).unwrap_err();
        assert!(matches!(err, DataError::Record { line: 1, .. }), "{err}");

        fs::write(&path, "").unwrap();
        assert!(read_jsonl(&path).unwrap().is_empty());
    }

    #[test]
    fn bad_specs_are_rejected() {
        let base = GenSpec::imu(4, 0);
        let cases: Vec<(GenSpec, &str)> = vec![
            (GenSpec { rate_hz: 0.0, ..base.clone() }, "rate"),
            (GenSpec { actions_min: 0, ..base.clone() }, "actions"),
            (GenSpec { actions_min: 7, ..base.clone() }, "actions"),
            (GenSpec { duration_min_s: 0.0, ..base.clone() }, "duration"),
            (GenSpec { noise_sigma: -1.0, ..base.clone() }, "noise"),
            (GenSpec { placement_ids: vec![0], ..base.clone() }, "placement"),
            (GenSpec { placement_ids: vec![9; 6], ..base.clone() }, "placement"),
            (GenSpec { gains: vec![vec![1.0; 6]; 3], ..base.clone() }, "gain"),
            (
                GenSpec {
                    rate_hz: 1.0,
                    duration_min_s: 1.0,
                    actions_min: 1,
                    ..base.clone()
                },
                "below the minimum",
            ),
        ];
        for (spec, needle) in cases {
            let err = spec.validate().unwrap_err().to_string();
            assert!(err.contains(needle), "{err} (wanted {needle})");
        }
        assert!(gen_dataset(&GenSpec::imu(1, 0)).is_err());
    }

    #[test]
    fn adapter_hook_maps_external_records() {
        let spec = GenSpec {
            rate_hz: 25.0,
            duration_min_s: 1.0,
            duration_max_s: 2.0,
            ..GenSpec::imu(2, 4)
        };
        let out = adapt_external(0u64..2, |id| gen_sample(&spec, id)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].id, 1);
    }
}
