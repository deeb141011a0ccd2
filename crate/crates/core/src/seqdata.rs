//! Labeled flip sequences, their file formats, seeded random streams and
//! the train/test splitter shared by every other module.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of flips per sequence.
pub const DEFAULT_LENGTH: usize = 200;

/// Origin of a flip sequence. The declaration order is the tie-break order
/// used by the likelihood discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Real,
    Simulator,
    #[serde(rename = "MOM")]
    Mom,
    #[serde(rename = "GAN")]
    Gan,
    Handwritten,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Real,
        Label::Simulator,
        Label::Mom,
        Label::Gan,
        Label::Handwritten,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "Real",
            Label::Simulator => "Simulator",
            Label::Mom => "MOM",
            Label::Gan => "GAN",
            Label::Handwritten => "Handwritten",
        }
    }

    /// Small stable integer code, used by the C interface.
    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Label> {
        Label::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .iter()
            .copied()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown label {s:?}")))
    }
}

/// A labeled binary sequence; `1` is heads and `0` is tails.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub label: Label,
    flips: Vec<u8>,
}

impl SequenceRecord {
    pub fn new(id: impl Into<String>, label: Label, flips: Vec<u8>) -> Result<Self> {
        let id = id.into();
        if let Some(pos) = flips.iter().position(|&b| b > 1) {
            return Err(Error::InvalidArgument(format!(
                "sequence {id}: flip {pos} is {}, expected 0 or 1",
                flips[pos]
            )));
        }
        if flips.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "sequence {id}: needs at least 2 flips, got {}",
                flips.len()
            )));
        }
        Ok(SequenceRecord { id, label, flips })
    }

    pub fn flips(&self) -> &[u8] {
        &self.flips
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    pub fn flip_string(&self) -> String {
        self.flips.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }
}

/// On-disk sequence formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SeqFormat {
    /// One sequence per line of `0`/`1` characters.
    Lines,
    /// Header `id,label,sequence`.
    Csv,
}

impl SeqFormat {
    pub fn from_path(path: &Path) -> SeqFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => SeqFormat::Csv,
            _ => SeqFormat::Lines,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            SeqFormat::Lines => "txt",
            SeqFormat::Csv => "csv",
        }
    }
}

const CSV_HEADER: &str = "id,label,sequence";

fn parse_flips(path: &Path, line: usize, col_offset: usize, text: &str) -> Result<Vec<u8>> {
    text.chars()
        .enumerate()
        .map(|(i, c)| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                column: col_offset + i + 1,
                message: format!("unexpected character {other:?}, expected '0' or '1'"),
            }),
        })
        .collect()
}

fn make_record(path: &Path, line: usize, id: String, label: Label, flips: Vec<u8>) -> Result<SequenceRecord> {
    SequenceRecord::new(id, label, flips).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        column: 1,
        message: e.to_string(),
    })
}

/// Load sequences from `path`. `lines` records get ids `line-<n>` and the
/// given default label.
pub fn load_sequences(path: &Path, format: SeqFormat, default_label: Label) -> Result<Vec<SequenceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    match format {
        SeqFormat::Lines => {
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.trim_end_matches('\r');
                if line.trim().is_empty() {
                    continue;
                }
                let flips = parse_flips(path, idx + 1, 0, line)?;
                records.push(make_record(path, idx + 1, format!("line-{}", idx + 1), default_label, flips)?);
            }
        }
        SeqFormat::Csv => {
            let mut lines = text.lines().enumerate();
            match lines.next() {
                None => return Err(Error::EmptyDataset(path.display().to_string())),
                Some((_, header)) if header.trim_end_matches('\r').trim() == CSV_HEADER => {}
                Some((_, header)) => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: 1,
                        column: 1,
                        message: format!("expected header {CSV_HEADER:?}, found {header:?}"),
                    })
                }
            }
            for (idx, raw) in lines {
                let line = raw.trim_end_matches('\r');
                if line.trim().is_empty() {
                    continue;
                }
                let lineno = idx + 1;
                let fields: Vec<&str> = line.splitn(3, ',').collect();
                if fields.len() != 3 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno,
                        column: line.len() + 1,
                        message: "expected 3 fields: id,label,sequence".into(),
                    });
                }
                let label = fields[1].parse::<Label>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    column: fields[0].len() + 2,
                    message: e.to_string(),
                })?;
                let offset = fields[0].len() + fields[1].len() + 2;
                let flips = parse_flips(path, lineno, offset, fields[2])?;
                records.push(make_record(path, lineno, fields[0].to_string(), label, flips)?);
            }
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok(records)
}

/// Write sequences to `path`. The `lines` format drops ids and labels.
pub fn save_sequences(records: &[SequenceRecord], path: &Path, format: SeqFormat) -> Result<()> {
    let mut out = String::new();
    if format == SeqFormat::Csv {
        out.push_str(CSV_HEADER);
        out.push('\n');
    }
    for rec in records {
        match format {
            SeqFormat::Lines => {}
            SeqFormat::Csv => {
                if rec.id.contains([',', '\n', '\r']) {
                    return Err(Error::InvalidArgument(format!(
                        "sequence id {:?} cannot be written to CSV",
                        rec.id
                    )));
                }
                out.push_str(&rec.id);
                out.push(',');
                out.push_str(rec.label.as_str());
                out.push(',');
            }
        }
        out.push_str(&rec.flip_string());
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Deterministic random stream identified by `(seed, stream)`.
///
/// Backed by ChaCha8 with the stream id mapped onto the cipher's stream
/// parameter, so draws are identical across platforms and distinct stream
/// ids never overlap.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Independent child stream keyed by `id`. Depends only on this stream's
    /// identity, not on how many values have been drawn from it.
    pub fn child(&self, id: u64) -> RngStream {
        let derived = splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x5EED)));
        RngStream::new(derived, id)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SequenceRecord>,
    pub test: Vec<SequenceRecord>,
    pub ratio: f64,
}

/// Number of training items for `total` records at `ratio`.
pub fn train_count(total: usize, ratio: f64) -> usize {
    ((ratio * total as f64).round() as usize).min(total)
}

/// Seeded Fisher-Yates permutation of indices, split at `round(ratio * n)`.
pub fn split_indices(n: usize, ratio: f64, rng: &mut RngStream) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} outside (0, 1)")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 records to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let test = idx.split_off(train_count(n, ratio));
    Ok((idx, test))
}

pub fn split_train_test(records: &[SequenceRecord], ratio: f64, rng: &mut RngStream) -> Result<DatasetSplit> {
    let (train, test) = split_indices(records.len(), ratio, rng)?;
    Ok(DatasetSplit {
        train: train.into_iter().map(|i| records[i].clone()).collect(),
        test: test.into_iter().map(|i| records[i].clone()).collect(),
        ratio,
    })
}

/// Fair i.i.d. coin sequences labeled `Real`, with ids `real-<i>`.
pub fn generate_real(count: usize, length: usize, rng: &mut RngStream) -> Result<Vec<SequenceRecord>> {
    if count < 1 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    if length < 2 {
        return Err(Error::InvalidArgument(format!("length must be at least 2, got {length}")));
    }
    (0..count)
        .map(|i| {
            let flips = (0..length).map(|_| rng.gen::<bool>() as u8).collect();
            SequenceRecord::new(format!("real-{i:04}"), Label::Real, flips)
        })
        .collect()
}
