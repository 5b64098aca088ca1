//! Datasets and client partitioning.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{shuffle, SampleStream};

/// Dense row-major features with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u32>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u32>, dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::LengthMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} not below class count {num_classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }
}

/// Reads `label,feature,...` rows. A first row whose label does not parse
/// as an integer is treated as a header.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let data_err = |message: String| Error::Data {
        path: path.to_owned(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_owned(),
                source,
            },
            other => data_err(format!("{other:?}")),
        })?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data_err(e.to_string()))?;
        let mut fields = record.iter();
        let Some(first) = fields.next() else { continue };
        let label: u32 = match first.parse() {
            Ok(l) => l,
            Err(_) if row == 0 => continue,
            Err(_) => return Err(data_err(format!("row {}: bad label {first:?}", row + 1))),
        };
        let before = features.len();
        for f in fields {
            features.push(
                f.parse::<f64>()
                    .map_err(|_| data_err(format!("row {}: bad feature {f:?}", row + 1)))?,
            );
        }
        let width = features.len() - before;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => return Err(data_err(format!("row {}: {width} features, expected {d}", row + 1))),
            _ => {}
        }
        labels.push(label);
    }
    let dim = dim.filter(|&d| d > 0).ok_or_else(|| data_err("no data rows".into()))?;
    let num_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    Dataset::new(features, labels, dim, num_classes)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn idx_header(bytes: &[u8], path: &Path, expect_dims: u8) -> Result<(Vec<usize>, usize)> {
    let bad = |message: String| Error::Data {
        path: path.to_owned(),
        message,
    };
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(bad("not an unsigned-byte IDX file".into()));
    }
    if bytes[3] != expect_dims {
        return Err(bad(format!("expected {expect_dims} dimensions, found {}", bytes[3])));
    }
    let header = 4 + 4 * expect_dims as usize;
    if bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let dims: Vec<usize> = (0..expect_dims as usize)
        .map(|k| u32::from_be_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count {
        return Err(bad(format!("expected {} bytes, found {}", header + count, bytes.len())));
    }
    Ok((dims, header))
}

/// Loads an IDX image/label pair (the MNIST format). Pixels are scaled to
/// `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_file(images)?;
    let lab = read_file(labels)?;
    let (idims, ioff) = idx_header(&img, images, 3)?;
    let (ldims, loff) = idx_header(&lab, labels, 1)?;
    if idims[0] != ldims[0] {
        return Err(Error::Data {
            path: labels.to_owned(),
            message: format!("{} labels for {} images", ldims[0], idims[0]),
        });
    }
    let features = img[ioff..].iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels_v: Vec<u32> = lab[loff..].iter().map(|&b| u32::from(b)).collect();
    let num_classes = labels_v.iter().max().map_or(0, |&m| m as usize + 1).max(10);
    Dataset::new(features, labels_v, idims[1] * idims[2], num_classes)
}

/// Two-class linearly separable data. Points are standard normal, labelled
/// by the sign of a random unit direction, then pushed `margin` away from
/// the separating hyperplane.
pub fn synthetic_separable(n: usize, dim: usize, margin: f64, stream: &mut SampleStream) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidParameter(
            "synthetic set needs n >= 1 and dim >= 1".into(),
        ));
    }
    let mut dir: Vec<f64> = (0..dim).map(|_| stream.next_gaussian()).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x: Vec<f64> = (0..dim).map(|_| stream.next_gaussian()).collect();
        let proj: f64 = x.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let side = if proj >= 0.0 { 1.0 } else { -1.0 };
        x.iter_mut().zip(&dir).for_each(|(v, d)| *v += side * margin * d);
        labels.push(u32::from(side > 0.0));
        features.extend(x);
    }
    Dataset::new(features, labels, dim, 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    Iid,
    NonIid,
}

/// Per-client index lists into a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct DataPartition {
    pub shards: Vec<Vec<usize>>,
    pub c_max: Option<usize>,
}

/// Splits `labels.len()` examples among `num_clients` clients.
///
/// `Iid` shuffles and deals equal shares (the first `n mod N` clients get
/// one extra). `NonIid` draws `j_n ~ U{10..100}` per client, sizes shards
/// proportionally and fills each from at most `c_max` classes, drawing
/// without replacement from shuffled per-class pools.
pub fn partition_data(
    labels: &[u32],
    num_classes: usize,
    num_clients: usize,
    mode: SplitMode,
    c_max: Option<usize>,
    stream: &mut SampleStream,
) -> Result<DataPartition> {
    if num_clients == 0 {
        return Err(Error::InvalidParameter("need at least one client".into()));
    }
    if labels.is_empty() {
        return Err(Error::InvalidParameter("cannot partition an empty dataset".into()));
    }
    if c_max == Some(0) {
        return Err(Error::InvalidParameter("c_max must be >= 1".into()));
    }
    let n = labels.len();
    let shards = match mode {
        SplitMode::Iid => {
            let mut idx: Vec<usize> = (0..n).collect();
            shuffle(&mut idx, stream);
            let (base, extra) = (n / num_clients, n % num_clients);
            let mut shards = Vec::with_capacity(num_clients);
            let mut at = 0;
            for c in 0..num_clients {
                let size = base + usize::from(c < extra);
                shards.push(idx[at..at + size].to_vec());
                at += size;
            }
            shards
        }
        SplitMode::NonIid => non_iid(labels, num_classes, num_clients, c_max, stream),
    };
    if let Some(c) = shards.iter().position(Vec::is_empty) {
        return Err(Error::InvalidParameter(format!(
            "client {c} received no data; use fewer clients or a larger dataset"
        )));
    }
    Ok(DataPartition { shards, c_max })
}

fn non_iid(
    labels: &[u32],
    num_classes: usize,
    num_clients: usize,
    c_max: Option<usize>,
    stream: &mut SampleStream,
) -> Vec<Vec<usize>> {
    let weights: Vec<u64> = (0..num_clients).map(|_| 10 + stream.next_below(91)).collect();
    let total: u64 = weights.iter().sum();
    let n = labels.len() as u64;

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l as usize].push(i);
    }
    for pool in &mut pools {
        shuffle(pool, stream);
    }
    let cap = c_max.unwrap_or(num_classes).min(num_classes);

    let mut shards = Vec::with_capacity(num_clients);
    for &w in &weights {
        let size = (n * w / total) as usize;
        let mut classes: Vec<usize> = (0..num_classes).filter(|&c| !pools[c].is_empty()).collect();
        shuffle(&mut classes, stream);
        classes.truncate(cap);
        let mut shard = Vec::with_capacity(size);
        while shard.len() < size {
            let before = shard.len();
            for &c in &classes {
                if shard.len() == size {
                    break;
                }
                if let Some(i) = pools[c].pop() {
                    shard.push(i);
                }
            }
            if shard.len() == before {
                break;
            }
        }
        shard.sort_unstable();
        shards.push(shard);
    }
    shards
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use std::collections::BTreeSet;
    use std::io::Write;

    fn stream() -> SampleStream {
        StreamKey::new(1).with("data", 0).stream()
    }

    fn labels(n: usize, classes: u32) -> Vec<u32> {
        (0..n as u32).map(|i| i % classes).collect()
    }

    #[test]
    fn single_client_gets_everything() {
        let p = partition_data(&labels(50, 3), 3, 1, SplitMode::Iid, None, &mut stream()).unwrap();
        let mut all = p.shards[0].clone();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn iid_shards_are_equal_and_disjoint() {
        let p = partition_data(&labels(1000, 10), 10, 10, SplitMode::Iid, None, &mut stream()).unwrap();
        assert!(p.shards.iter().all(|s| s.len() == 100));
        let union: BTreeSet<_> = p.shards.iter().flatten().collect();
        assert_eq!(union.len(), 1000);
    }

    #[test]
    fn non_iid_respects_class_cap() {
        let y = labels(2000, 10);
        let p = partition_data(&y, 10, 10, SplitMode::NonIid, Some(2), &mut stream()).unwrap();
        let mut seen = BTreeSet::new();
        for shard in &p.shards {
            let classes: BTreeSet<_> = shard.iter().map(|&i| y[i]).collect();
            assert!(classes.len() <= 2);
            for &i in shard {
                assert!(seen.insert(i), "index {i} in two shards");
            }
        }
        assert!(partition_data(&y, 10, 10, SplitMode::NonIid, Some(0), &mut stream()).is_err());
    }

    #[test]
    fn non_iid_sizes_follow_weights() {
        let y = labels(10_000, 10);
        let p = partition_data(&y, 10, 5, SplitMode::NonIid, None, &mut stream()).unwrap();
        let sizes: Vec<usize> = p.shards.iter().map(Vec::len).collect();
        let total: usize = sizes.iter().sum();
        assert!(total > 10_000 - 5 && total <= 10_000);
        assert!(sizes.iter().all(|&s| s >= 10_000 * 10 / (100 * 5) - 1));
    }

    #[test]
    fn csv_round_trip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "label,a,b").unwrap();
        writeln!(f, "1, 0.5, 2").unwrap();
        writeln!(f, "0,-1,3.25").unwrap();
        let d = load_csv(f.path()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.features(1), &[-1.0, 3.25]);
        assert_eq!(d.labels(), &[1, 0]);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "1,0.5\n0,1,2").unwrap();
        assert!(matches!(load_csv(bad.path()), Err(Error::Data { .. })));
        assert!(matches!(
            load_csv(Path::new("/nonexistent/x.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 1];
        img.extend([0, 255, 51, 0]);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        fs::write(dir.path().join("i"), &img).unwrap();
        fs::write(dir.path().join("l"), &lab).unwrap();
        let d = load_idx(&dir.path().join("i"), &dir.path().join("l")).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.features(0), &[0.0, 1.0]);
        assert_eq!(d.features(1), &[0.2, 0.0]);
        assert_eq!(d.labels(), &[7, 3]);
        fs::write(dir.path().join("l"), &lab[..9]).unwrap();
        assert!(load_idx(&dir.path().join("i"), &dir.path().join("l")).is_err());
    }

    #[test]
    fn synthetic_is_separable_with_margin() {
        let d = synthetic_separable(400, 20, 0.5, &mut stream()).unwrap();
        assert_eq!(d.len(), 400);
        let ones = d.labels().iter().filter(|&&l| l == 1).count();
        assert!(ones > 120 && ones < 280);
    }
}
