//! Windows, streams, fold splitting and the synthetic stand-in dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, tag};

/// Samples per window (1 s at 50 Hz).
pub const WINDOW_LEN: usize = 50;
/// 18 activities plus the NULL class.
pub const NUM_CLASSES: usize = 19;
/// Class index reserved for NULL.
pub const NULL_CLASS: usize = 0;

/// One tri-axial accelerometer reading in g.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Sample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Sample {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Sample { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Sample {
    fn from(a: [f64; 3]) -> Self {
        Sample::new(a[0], a[1], a[2])
    }
}

impl From<Sample> for [f64; 3] {
    fn from(s: Sample) -> Self {
        s.to_array()
    }
}

/// Limb location of a wearable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sensor {
    LA,
    RA,
    LL,
    RL,
}

impl Sensor {
    pub const ALL: [Sensor; 4] = [Sensor::LA, Sensor::RA, Sensor::LL, Sensor::RL];

    pub fn as_str(self) -> &'static str {
        match self {
            Sensor::LA => "LA",
            Sensor::RA => "RA",
            Sensor::LL => "LL",
            Sensor::RL => "RL",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sensor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LA" => Ok(Sensor::LA),
            "RA" => Ok(Sensor::RA),
            "LL" => Ok(Sensor::LL),
            "RL" => Ok(Sensor::RL),
            other => Err(Error::invalid(format!(
                "unknown sensor '{other}', expected one of LA, RA, LL, RL"
            ))),
        }
    }
}

/// A labelled or unlabelled 50-sample segment from one sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub id: String,
    pub subject: String,
    pub sensor: Sensor,
    pub samples: Vec<Sample>,
    #[serde(default)]
    pub label: Option<usize>,
}

impl Window {
    /// Checks the file-level invariants: 50 finite samples, label in range.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.samples.len() != WINDOW_LEN {
            return Err(format!(
                "window '{}' has {} samples, expected {WINDOW_LEN}",
                self.id,
                self.samples.len()
            ));
        }
        if let Some(t) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(format!("window '{}' has a non-finite sample at t={t}", self.id));
        }
        match self.label {
            Some(l) if l >= NUM_CLASSES => Err(format!(
                "window '{}' has label {l}, expected 0..{}",
                self.id,
                NUM_CLASSES - 1
            )),
            _ => Ok(()),
        }
    }
}

/// A continuous recording with one label per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stream {
    pub subject: String,
    pub sensor: Sensor,
    pub samples: Vec<Sample>,
    pub labels: Vec<usize>,
}

/// Cuts a stream into windows starting at `0, stride, 2·stride, …`.
///
/// Each window's label is the majority of its per-sample labels, ties going
/// to the lowest class index. A stream shorter than `window_len` yields no
/// windows. Window ids are `"{subject}:{offset}"` so that simultaneous windows
/// of different sensors share an id.
pub fn segment(stream: &Stream, window_len: usize, stride: usize) -> Result<Vec<Window>> {
    if window_len == 0 || stride == 0 {
        return Err(Error::invalid("window_len and stride must be at least 1"));
    }
    if stream.labels.len() != stream.samples.len() {
        return Err(Error::invalid(format!(
            "stream has {} samples but {} labels",
            stream.samples.len(),
            stream.labels.len()
        )));
    }
    if let Some(&bad) = stream.labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(Error::invalid(format!("stream label {bad} out of range")));
    }
    let total = stream.samples.len();
    if total < window_len {
        return Ok(Vec::new());
    }
    let count = (total - window_len) / stride + 1;
    let windows = (0..count)
        .map(|i| {
            let start = i * stride;
            let span = start..start + window_len;
            Window {
                id: format!("{}:{}", stream.subject, start),
                subject: stream.subject.clone(),
                sensor: stream.sensor,
                samples: stream.samples[span.clone()].to_vec(),
                label: Some(majority_label(&stream.labels[span])),
            }
        })
        .collect();
    Ok(windows)
}

fn majority_label(labels: &[usize]) -> usize {
    let mut counts = [0usize; NUM_CLASSES];
    for &l in labels {
        counts[l] += 1;
    }
    // max_by_key keeps the last maximum, so scan in reverse to favour low indices.
    (0..NUM_CLASSES)
        .rev()
        .max_by_key(|&c| counts[c])
        .unwrap_or(NULL_CLASS)
}

/// One subject-exclusive train/validation split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub held_out: Vec<String>,
    pub training: Vec<String>,
}

impl FoldSplit {
    /// Partitions windows into (training, validation) by subject.
    pub fn split<'a>(&self, windows: &'a [Window]) -> (Vec<&'a Window>, Vec<&'a Window>) {
        let held: BTreeSet<&str> = self.held_out.iter().map(String::as_str).collect();
        windows.iter().partition(|w| !held.contains(w.subject.as_str()))
    }
}

/// Splits subjects into `k` subject-exclusive folds.
///
/// Subjects are deduplicated, sorted, shuffled with `seed` and dealt
/// round-robin, so 22 subjects into 5 folds gives held-out sizes 5,5,4,4,4.
pub fn make_folds(subjects: &[String], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let all = shuffled_subjects(subjects, seed);
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if all.len() < k {
        return Err(Error::invalid(format!(
            "cannot split {} subjects into {k} folds",
            all.len()
        )));
    }
    let mut held: Vec<Vec<String>> = vec![Vec::new(); k];
    for (i, s) in all.iter().enumerate() {
        held[i % k].push(s.clone());
    }
    Ok(build_folds(&all, held))
}

/// Like [`make_folds`] but each fold holds out exactly `per_fold` subjects,
/// leaving the remainder in every training set.
pub fn make_holdout_folds(
    subjects: &[String],
    k: usize,
    per_fold: usize,
    seed: u64,
) -> Result<Vec<FoldSplit>> {
    let all = shuffled_subjects(subjects, seed);
    if k < 2 || per_fold == 0 {
        return Err(Error::invalid("need k >= 2 folds of at least one subject"));
    }
    if k * per_fold > all.len() {
        return Err(Error::invalid(format!(
            "{k} folds x {per_fold} held-out subjects exceeds {} subjects",
            all.len()
        )));
    }
    let held = all.chunks(per_fold).take(k).map(<[String]>::to_vec).collect();
    Ok(build_folds(&all, held))
}

fn shuffled_subjects(subjects: &[String], seed: u64) -> Vec<String> {
    let mut all: Vec<String> = subjects
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    all.shuffle(&mut substream(seed, &[tag::FOLDS]));
    all
}

fn build_folds(all: &[String], held: Vec<Vec<String>>) -> Vec<FoldSplit> {
    held.into_iter()
        .enumerate()
        .map(|(fold, mut held_out)| {
            held_out.sort();
            let mut training: Vec<String> =
                all.iter().filter(|s| !held_out.contains(s)).cloned().collect();
            training.sort();
            FoldSplit {
                fold,
                held_out,
                training,
            }
        })
        .collect()
}

/// Distinct subjects in first-seen order.
pub fn subjects_of(windows: &[Window]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    windows
        .iter()
        .filter(|w| seen.insert(w.subject.as_str()))
        .map(|w| w.subject.clone())
        .collect()
}

fn read_jsonl<T, V>(path: &Path, validate: V) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned,
    V: Fn(&T) -> std::result::Result<(), String>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        validate(&record).map_err(|message| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSON Lines window file. Line numbers in errors are 1-based.
pub fn read_windows(path: impl AsRef<Path>) -> Result<Vec<Window>> {
    read_jsonl(path.as_ref(), Window::validate)
}

pub fn write_windows(windows: &[Window], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(windows, path.as_ref())
}

pub fn read_streams(path: impl AsRef<Path>) -> Result<Vec<Stream>> {
    read_jsonl(path.as_ref(), |s: &Stream| {
        if s.labels.len() != s.samples.len() {
            return Err(format!(
                "stream has {} samples but {} labels",
                s.samples.len(),
                s.labels.len()
            ));
        }
        if !s.samples.iter().all(Sample::is_finite) {
            return Err("stream contains non-finite samples".into());
        }
        match s.labels.iter().find(|&&l| l >= NUM_CLASSES) {
            Some(l) => Err(format!("stream label {l} out of range")),
            None => Ok(()),
        }
    })
}

pub fn write_streams(streams: &[Stream], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(streams, path.as_ref())
}

/// Parameters of the synthetic sinusoid-bank dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_per_class: usize,
    /// Standard deviation of additive Gaussian noise, in g.
    pub noise: f64,
    pub seed: u64,
    /// Windows are dealt round-robin to this many subjects.
    pub n_subjects: usize,
}

impl SynthConfig {
    pub fn new(n_classes: usize, n_per_class: usize, noise: f64, seed: u64) -> Self {
        SynthConfig {
            n_classes,
            n_per_class,
            noise,
            seed,
            n_subjects: 10,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(2..=NUM_CLASSES).contains(&self.n_classes) {
            return Err(Error::invalid(format!(
                "n_classes must be in 2..={NUM_CLASSES}, got {}",
                self.n_classes
            )));
        }
        if self.n_subjects == 0 {
            return Err(Error::invalid("n_subjects must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be finite and non-negative"));
        }
        Ok(())
    }
}

const SAMPLE_RATE_HZ: f64 = 50.0;

/// Per-axis waveform of one class on one sensor: gravity offset plus two tones.
#[derive(Clone, Copy, Debug)]
struct AxisBank {
    offset: f64,
    tones: [(f64, f64, f64); 2], // (amplitude g, frequency Hz, phase rad)
}

impl AxisBank {
    fn draw(rng: &mut impl Rng) -> Self {
        let tau = std::f64::consts::TAU;
        AxisBank {
            offset: rng.gen_range(-1.0..1.0),
            tones: [
                (
                    rng.gen_range(0.3..1.0),
                    rng.gen_range(0.3..4.0),
                    rng.gen_range(0.0..tau),
                ),
                (
                    rng.gen_range(0.05..0.4),
                    rng.gen_range(4.0..12.0),
                    rng.gen_range(0.0..tau),
                ),
            ],
        }
    }

    fn value(&self, t: usize, gain: f64, phase_shift: f64) -> f64 {
        let secs = t as f64 / SAMPLE_RATE_HZ;
        self.offset
            + gain
                * self
                    .tones
                    .iter()
                    .map(|&(a, f, p)| a * (std::f64::consts::TAU * f * secs + p + phase_shift).sin())
                    .sum::<f64>()
    }
}

/// Synthetic single-sensor (LA) dataset of `n_classes · n_per_class` windows.
pub fn synth_dataset(n_classes: usize, n_per_class: usize, noise: f64, seed: u64) -> Result<Vec<Window>> {
    synth_sensors(
        &SynthConfig::new(n_classes, n_per_class, noise, seed),
        &[(Sensor::LA, noise)],
    )
}

/// Synthetic multi-sensor dataset.
///
/// Every sensor gets its own class-specific sinusoid bank and its own noise
/// level, while windows with the same index share id, subject and label across
/// sensors so that they can be fused. Per-window variation comes from a
/// random gain in [0.9, 1.1], a phase shift in ±0.2 rad and a gravity drift
/// of ±0.2 g per axis.
pub fn synth_sensors(cfg: &SynthConfig, sensors: &[(Sensor, f64)]) -> Result<Vec<Window>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(sensors.len() * cfg.n_classes * cfg.n_per_class);
    for &(sensor, noise) in sensors {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::invalid("sensor noise must be finite and non-negative"));
        }
        let banks: Vec<[AxisBank; 3]> = (0..cfg.n_classes)
            .map(|c| {
                let mut rng = substream(cfg.seed, &[tag::SYNTH, 0, sensor.index() as u64, c as u64]);
                [AxisBank::draw(&mut rng), AxisBank::draw(&mut rng), AxisBank::draw(&mut rng)]
            })
            .collect();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        for (c, bank) in banks.iter().enumerate() {
            for j in 0..cfg.n_per_class {
                let index = c * cfg.n_per_class + j;
                let mut rng = substream(
                    cfg.seed,
                    &[tag::SYNTH, 1, sensor.index() as u64, index as u64],
                );
                let gain = rng.gen_range(0.9..1.1);
                let shift = rng.gen_range(-0.2..0.2);
                let drift: [f64; 3] = [
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                ];
                let samples = (0..WINDOW_LEN)
                    .map(|t| {
                        let mut v = [0.0; 3];
                        for k in 0..3 {
                            v[k] = bank[k].value(t, gain, shift)
                                + drift[k]
                                + noise * normal.sample(&mut rng);
                        }
                        Sample::from(v)
                    })
                    .collect();
                out.push(Window {
                    id: format!("w{index:06}"),
                    subject: format!("S{:02}", j % cfg.n_subjects),
                    sensor,
                    samples,
                    label: Some(c),
                });
            }
        }
    }
    Ok(out)
}

/// Counts labelled windows per class.
pub fn class_counts(windows: &[Window], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for l in windows.iter().filter_map(|w| w.label) {
        if l < n_classes {
            counts[l] += 1;
        }
    }
    counts
}

/// Groups windows by sensor, keeping order within each group.
pub fn by_sensor(windows: &[Window]) -> BTreeMap<Sensor, Vec<Window>> {
    let mut map: BTreeMap<Sensor, Vec<Window>> = BTreeMap::new();
    for w in windows {
        map.entry(w.sensor).or_default().push(w.clone());
    }
    map
}
