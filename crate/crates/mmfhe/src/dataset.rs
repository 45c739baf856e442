//! IDX and CSV readers, normalisation, splits and party partitions.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Feature rows with one label per row and an optional grouping column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub labels: Vec<u32>,
    /// Party hint per row, filled by CSV input with a group column.
    pub groups: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Divide255,
    Zscore,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Partition {
    /// Party 0 holds odd labels, party 1 even labels.
    OddEven,
    /// One party per listed label set.
    ClassRanges(Vec<Vec<u32>>),
    /// One party per distinct value of the group column.
    ByColumn,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn classes(&self) -> Vec<u32> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx.iter()),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: self.groups.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect()),
        }
    }

    /// Rows carrying `label`.
    pub fn class_rows(&self, label: u32) -> DMatrix<f64> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
        self.x.select_rows(idx.iter())
    }

    /// Seeded uniform subsample of `n` rows, in their original order.
    pub fn subsample(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        idx.sort_unstable();
        self.select(&idx)
    }

    /// Seeded split into `(train, test)` with `train_frac` of the rows in the first part.
    pub fn split(&self, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&train_frac) {
            return Err(Error::input(format!("train fraction {train_frac} outside [0, 1]")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (train_frac * self.len() as f64).round() as usize;
        let (mut a, mut b) = (idx[..cut].to_vec(), idx[cut..].to_vec());
        a.sort_unstable();
        b.sort_unstable();
        Ok((self.select(&a), self.select(&b)))
    }

    pub fn normalize(&mut self, how: Normalization) {
        match how {
            Normalization::None => {}
            Normalization::Divide255 => self.x /= 255.0,
            Normalization::Zscore => {
                let n = self.x.nrows() as f64;
                for mut col in self.x.column_iter_mut() {
                    let mean = col.sum() / n;
                    col.add_scalar_mut(-mean);
                    let sd = (col.norm_squared() / n).sqrt();
                    if sd > 0.0 {
                        col /= sd;
                    }
                }
            }
        }
    }

    /// Splits the rows among parties.
    pub fn partition(&self, how: &Partition) -> Result<Vec<Dataset>> {
        let sets: Vec<Vec<usize>> = match how {
            Partition::OddEven => vec![
                (0..self.len()).filter(|&i| self.labels[i] % 2 == 1).collect(),
                (0..self.len()).filter(|&i| self.labels[i] % 2 == 0).collect(),
            ],
            Partition::ClassRanges(ranges) => {
                let mut seen = BTreeSet::new();
                for r in ranges {
                    for l in r {
                        if !seen.insert(*l) {
                            return Err(Error::input(format!("label {l} assigned to two parties")));
                        }
                    }
                }
                if let Some(l) = self.classes().into_iter().find(|l| !seen.contains(l)) {
                    return Err(Error::input(format!("label {l} assigned to no party")));
                }
                ranges
                    .iter()
                    .map(|r| (0..self.len()).filter(|&i| r.contains(&self.labels[i])).collect())
                    .collect()
            }
            Partition::ByColumn => {
                let groups = self.groups.as_ref().ok_or_else(|| Error::input("dataset has no group column"))?;
                let keys: BTreeSet<u32> = groups.iter().copied().collect();
                keys.iter().map(|k| (0..self.len()).filter(|&i| groups[i] == *k).collect()).collect()
            }
        };
        if let Some(k) = sets.iter().position(|s| s.is_empty()) {
            return Err(Error::input(format!("party {k} receives no samples")));
        }
        Ok(sets.iter().map(|s| self.select(s)).collect())
    }
}

/// Parses `odd-even`, `by-column` or `class-ranges:0-4,5-9` (also `1|3|5,0|2`).
pub fn parse_partition(s: &str) -> Result<Partition> {
    match s {
        "odd-even" => Ok(Partition::OddEven),
        "by-column" => Ok(Partition::ByColumn),
        _ => {
            let spec = s
                .strip_prefix("class-ranges:")
                .ok_or_else(|| Error::input(format!("unknown partition '{s}'")))?;
            let mut parties = Vec::new();
            for part in spec.split(',') {
                let mut labels = Vec::new();
                for item in part.split('|') {
                    let bad = || Error::input(format!("bad label range '{item}'"));
                    if let Some((a, b)) = item.split_once('-') {
                        let (a, b): (u32, u32) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                        if a > b {
                            return Err(bad());
                        }
                        labels.extend(a..=b);
                    } else {
                        labels.push(item.parse().map_err(|_| bad())?);
                    }
                }
                parties.push(labels);
            }
            Ok(Partition::ClassRanges(parties))
        }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses an unsigned-byte IDX file into its dimensions and payload.
pub fn parse_idx(bytes: &[u8], expect_rank: u8) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::input("IDX magic mismatch"));
    }
    if bytes[2] != 0x08 {
        return Err(Error::input(format!("IDX element type 0x{:02x} unsupported (need unsigned byte)", bytes[2])));
    }
    if bytes[3] != expect_rank {
        return Err(Error::input(format!("IDX magic mismatch: rank {} where {expect_rank} expected", bytes[3])));
    }
    let header = 4 + 4 * expect_rank as usize;
    if bytes.len() < header {
        return Err(Error::input("IDX header truncated"));
    }
    let dims: Vec<usize> = (0..expect_rank as usize).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count {
        return Err(Error::input(format!("IDX payload has {} bytes, header promises {count}", bytes.len() - header)));
    }
    Ok((dims, &bytes[header..]))
}

/// Reads an IDX image/label pair; each image is flattened row-major.
pub fn read_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_all(images)?;
    let lab = read_all(labels)?;
    let (dims, pixels) = parse_idx(&img, 3)?;
    let (ldims, lvals) = parse_idx(&lab, 1)?;
    if dims[0] != ldims[0] {
        return Err(Error::input(format!("{} images but {} labels", dims[0], ldims[0])));
    }
    let d = dims[1] * dims[2];
    let x = DMatrix::from_row_iterator(dims[0], d, pixels.iter().map(|&v| v as f64));
    Ok(Dataset { x, labels: lvals.iter().map(|&v| v as u32).collect(), groups: None })
}

/// Reads a headerless RFC 4180 CSV. `label_col` holds an unsigned class label;
/// `group_col`, if any, an unsigned party hint. Other columns are features.
pub fn read_csv(path: &Path, label_col: usize, group_col: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut width = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::input(format!("ragged CSV: row {} has {} fields", line + 1, rec.len())));
        }
        let field = |c: usize| rec.get(c).map(str::trim).ok_or_else(|| Error::input(format!("row {} lacks column {c}", line + 1)));
        let int = |c: usize| -> Result<u32> {
            field(c)?.parse().map_err(|_| Error::input(format!("row {}: column {c} is not a label", line + 1)))
        };
        labels.push(int(label_col)?);
        if let Some(g) = group_col {
            groups.push(int(g)?);
        }
        for c in 0..rec.len() {
            if c != label_col && Some(c) != group_col {
                let v: f64 = field(c)?
                    .parse()
                    .map_err(|_| Error::input(format!("row {}: column {c} is not numeric", line + 1)))?;
                feats.push(v);
            }
        }
    }
    let rows = labels.len();
    if rows == 0 {
        return Err(Error::input(format!("{} holds no rows", path.display())));
    }
    let d = feats.len() / rows;
    Ok(Dataset {
        x: DMatrix::from_row_slice(rows, d, &feats),
        labels,
        groups: group_col.map(|_| groups),
    })
}
