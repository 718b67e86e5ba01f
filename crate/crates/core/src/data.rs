//! Piano-roll corpora: JSON ingestion, fixed-length chunking with front
//! padding, splitting, and a synthetic memory task.
//!
//! On disk a dataset is a JSON object with `train`, `valid` and `test` lists.
//! Each entry is a sequence, each sequence a list of frames, and each frame a
//! list of active note indices in `[0, 88)` (MIDI pitch minus 21).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SequenceBatch;
use crate::rng;

/// Piano keys per frame.
pub const NOTES: usize = 88;
/// MIDI pitch of the lowest key (A0).
pub const MIDI_OFFSET: u8 = 21;

/// Sorted, duplicate-free active note indices.
pub type Frame = Vec<u8>;
pub type Sequence = Vec<Frame>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PianoRollDataset {
    #[serde(default)]
    pub train: Vec<Sequence>,
    #[serde(default)]
    pub valid: Vec<Sequence>,
    #[serde(default)]
    pub test: Vec<Sequence>,
}

/// Unvalidated on-disk form; wide integers so out-of-range notes can be reported.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    #[serde(default)]
    train: Vec<Vec<Vec<i64>>>,
    #[serde(default)]
    valid: Vec<Vec<Vec<i64>>>,
    #[serde(default)]
    test: Vec<Vec<Vec<i64>>>,
}

fn validate_split(name: &str, raw: Vec<Vec<Vec<i64>>>) -> Result<Vec<Sequence>> {
    raw.into_iter()
        .enumerate()
        .map(|(s, seq)| {
            seq.into_iter()
                .enumerate()
                .map(|(f, frame)| {
                    let mut out = Vec::with_capacity(frame.len());
                    for note in frame {
                        if !(0..NOTES as i64).contains(&note) {
                            return Err(Error::data(format!(
                                "{name} sequence {s}, frame {f}: note {note} outside [0, {NOTES})"
                            )));
                        }
                        out.push(note as u8);
                    }
                    out.sort_unstable();
                    out.dedup();
                    Ok(out)
                })
                .collect()
        })
        .collect()
}

impl PianoRollDataset {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawDataset = serde_json::from_str(text).map_err(|e| Error::data(format!("malformed dataset: {e}")))?;
        Ok(PianoRollDataset {
            train: validate_split("train", raw.train)?,
            valid: validate_split("valid", raw.valid)?,
            test: validate_split("test", raw.test)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn splits(&self) -> [(&'static str, &[Sequence]); 3] {
        [("train", &self.train), ("valid", &self.valid), ("test", &self.test)]
    }

    pub fn manifest(&self) -> Manifest {
        let splits = self
            .splits()
            .into_iter()
            .map(|(name, seqs)| (name.to_string(), SplitStats::of(seqs)))
            .collect();
        Manifest { notes: NOTES, midi_offset: MIDI_OFFSET, splits }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub sequences: usize,
    pub frames: usize,
    pub active_notes: usize,
    pub min_note: Option<u8>,
    pub max_note: Option<u8>,
}

impl SplitStats {
    fn of(seqs: &[Sequence]) -> Self {
        let notes = || seqs.iter().flatten().flatten().copied();
        SplitStats {
            sequences: seqs.len(),
            frames: seqs.iter().map(Vec::len).sum(),
            active_notes: notes().count(),
            min_note: notes().min(),
            max_note: notes().max(),
        }
    }
}

/// Counts recorded alongside every run for reproducibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub notes: usize,
    pub midi_offset: u8,
    pub splits: BTreeMap<String, SplitStats>,
}

/// A fixed-length training window: `pad_prefix` silent frames, then `frames`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub frames: Vec<Frame>,
    pub pad_prefix: usize,
}

impl Chunk {
    pub fn span(&self) -> usize {
        self.pad_prefix + self.frames.len()
    }
}

#[derive(Debug, Clone)]
pub struct ChunkedData {
    pub len: usize,
    pub train: Vec<Chunk>,
    pub valid: Vec<Chunk>,
    /// Test pieces are never cut.
    pub test: Vec<Sequence>,
}

/// Cuts one sequence into consecutive windows of `len` frames; a window
/// shorter than `len` is padded with silent frames at the front.
pub fn chunk_sequence(seq: &[Frame], len: usize) -> Vec<Chunk> {
    seq.chunks(len)
        .map(|w| Chunk {
            frames: w.to_vec(),
            pad_prefix: len - w.len(),
        })
        .collect()
}

pub fn chunk(dataset: &PianoRollDataset, len: usize) -> Result<ChunkedData> {
    if len == 0 {
        return Err(Error::contract("chunk length must be >= 1"));
    }
    let cut = |seqs: &[Sequence]| seqs.iter().flat_map(|s| chunk_sequence(s, len)).collect();
    Ok(ChunkedData {
        len,
        train: cut(&dataset.train),
        valid: cut(&dataset.valid),
        test: dataset.test.clone(),
    })
}

fn fill_frame(frames: &mut Array3<f64>, k: usize, t: usize, frame: &[u8]) {
    for &n in frame {
        frames[[k, t, n as usize]] = 1.0;
    }
}

/// Stacks equal-length chunks into a batch.
pub fn batch_from_chunks(chunks: &[&Chunk]) -> Result<SequenceBatch> {
    let steps = chunks.iter().map(|c| c.span()).max().unwrap_or(1).max(1);
    let mut frames = Array3::zeros((chunks.len(), steps, NOTES));
    for (k, c) in chunks.iter().enumerate() {
        for (i, f) in c.frames.iter().enumerate() {
            fill_frame(&mut frames, k, c.pad_prefix + i, f);
        }
    }
    SequenceBatch::new(
        frames,
        chunks.iter().map(|c| c.frames.len()).collect(),
        chunks.iter().map(|c| c.pad_prefix).collect(),
    )
}

/// Stacks whole sequences of differing length; shorter ones are back-filled
/// with silent frames that the loss ignores.
pub fn batch_from_sequences(seqs: &[&Sequence]) -> Result<SequenceBatch> {
    let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(1).max(1);
    let mut frames = Array3::zeros((seqs.len(), steps, NOTES));
    for (k, s) in seqs.iter().enumerate() {
        for (t, f) in s.iter().enumerate() {
            fill_frame(&mut frames, k, t, f);
        }
    }
    SequenceBatch::new(frames, seqs.iter().map(|s| s.len()).collect(), vec![0; seqs.len()])
}

/// Seeded shuffle followed by a 60/20/20 cut.
pub fn split(mut sequences: Vec<Sequence>, seed: u64) -> PianoRollDataset {
    sequences.shuffle(&mut rng::seeded(seed));
    let n = sequences.len();
    let n_train = (n as f64 * 0.6).round() as usize;
    let n_valid = ((n as f64 * 0.2).round() as usize).min(n - n_train);
    let test = sequences.split_off(n_train + n_valid);
    let valid = sequences.split_off(n_train);
    PianoRollDataset { train: sequences, valid, test }
}

/// Chords below `NOISE_LOW`; independent noise notes from `NOISE_LOW` up.
pub const CHORD_LOW: u8 = 24;
pub const NOISE_LOW: u8 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_sequences: usize,
    pub steps: usize,
    /// Frame `t` repeats the chord of frame `t - motif_gap`.
    pub motif_gap: usize,
    pub chord_size: usize,
    /// Activation probability of each noise note in each frame.
    pub noise_rate: f64,
}

impl SyntheticConfig {
    pub fn new(seed: u64, n_sequences: usize, steps: usize, motif_gap: usize) -> Self {
        SyntheticConfig {
            seed,
            n_sequences,
            steps,
            motif_gap,
            chord_size: 3,
            noise_rate: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.motif_gap == 0 || self.motif_gap >= self.steps {
            return Err(Error::contract(format!(
                "motif_gap must be in [1, steps), got {} with {} steps",
                self.motif_gap, self.steps
            )));
        }
        if self.chord_size > (NOISE_LOW - CHORD_LOW) as usize {
            return Err(Error::contract(format!("chord_size {} too large", self.chord_size)));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::contract(format!("noise_rate must be in [0, 1], got {}", self.noise_rate)));
        }
        Ok(())
    }

    /// Per-frame entropy (nats) of the noise register: the loss of a
    /// predictor that knows every chord and the noise rate exactly.
    pub fn noise_entropy(&self) -> f64 {
        let p = self.noise_rate;
        let h = if p <= 0.0 || p >= 1.0 {
            0.0
        } else {
            -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
        };
        (NOTES - NOISE_LOW as usize) as f64 * h
    }
}

/// Generates sequences whose chord at `t` equals the chord at
/// `t - motif_gap`, plus independent noise notes, then splits them 60/20/20.
pub fn synthesize(cfg: &SyntheticConfig) -> Result<PianoRollDataset> {
    cfg.validate()?;
    let mut r = rng::seeded(cfg.seed);
    let register = (NOISE_LOW - CHORD_LOW) as usize;
    let mut sequences = Vec::with_capacity(cfg.n_sequences);
    for _ in 0..cfg.n_sequences {
        let mut chords: Vec<Frame> = Vec::with_capacity(cfg.steps);
        for t in 0..cfg.steps {
            let chord = if t < cfg.motif_gap {
                let mut c: Frame = rand::seq::index::sample(&mut r, register, cfg.chord_size)
                    .into_iter()
                    .map(|i| CHORD_LOW + i as u8)
                    .collect();
                c.sort_unstable();
                c
            } else {
                chords[t - cfg.motif_gap].clone()
            };
            chords.push(chord);
        }
        let seq = chords
            .into_iter()
            .map(|mut frame| {
                for n in NOISE_LOW..NOTES as u8 {
                    if r.random::<f64>() < cfg.noise_rate {
                        frame.push(n);
                    }
                }
                frame
            })
            .collect();
        sequences.push(seq);
    }
    Ok(split(sequences, cfg.seed ^ 0x9e37_79b9_7f4a_7c15))
}
