//! Datasets, loaders, non-IID partitioning and mini-batch sampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{DataError, Error, Result, RngStream};

const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

/// A labelled classification dataset with row-major dense features.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    num_features: usize,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, num_features: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::config("datasets need at least one feature"));
        }
        if classes < 2 {
            return Err(Error::config(format!("need at least two classes, got {classes}")));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::DimensionMismatch { expected: labels.len() * num_features, got: features.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::UnknownLabel(bad.to_string()).into());
        }
        Ok(Self { features, num_features, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    /// A copy holding the rows at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            num_features: self.num_features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Same features with labels replaced by `f(label)`.
    pub fn map_labels(&self, f: impl Fn(usize) -> usize) -> Result<Dataset> {
        let labels = self.labels.iter().map(|&l| f(l)).collect();
        Dataset::new(self.features.clone(), self.num_features, labels, self.classes)
    }

    /// Randomly splits into `(first, rest)` where `first` has `n_first` rows.
    pub fn split(&self, n_first: usize, rng: &mut RngStream) -> Result<(Dataset, Dataset)> {
        if n_first > self.len() {
            return Err(Error::config(format!("cannot take {n_first} rows from {}", self.len())));
        }
        let order = index::sample(rng, self.len(), self.len()).into_vec();
        Ok((self.subset(&order[..n_first]), self.subset(&order[n_first..])))
    }

    /// Uniform sample of `n` rows without replacement (all rows when `n` is
    /// at least the dataset size).
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Dataset {
        let n = n.min(self.len());
        let picked = index::sample(rng, self.len(), n).into_vec();
        self.subset(&picked)
    }

    /// Writes the dataset as CSV: one header row, features `f0..`, then the
    /// integer label column.
    pub fn write_csv(&self, path: &Path, label_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(DataError::from)?;
        let mut header: Vec<String> = (0..self.num_features).map(|j| format!("f{j}")).collect();
        header.push(label_column.to_string());
        w.write_record(&header).map_err(DataError::from)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(DataError::from)?;
        }
        w.flush().map_err(DataError::from)?;
        Ok(())
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> std::result::Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated { expected: offset + 4, found: bytes.len() })
}

/// Raw IDX image file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<IdxImages, DataError> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::BadMagic { expected: IDX_IMAGE_MAGIC, found: magic });
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(DataError::Truncated { expected, found: bytes.len() });
    }
    Ok(IdxImages { count, rows, cols, pixels: bytes[16..expected].to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, DataError> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(DataError::BadMagic { expected: IDX_LABEL_MAGIC, found: magic });
    }
    let count = read_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(DataError::Truncated { expected, found: bytes.len() });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Builds a dataset from parsed IDX payloads. Pixels are scaled to `[0, 1]`
/// and each image is flattened row-major. The class count is the largest
/// label plus one (at least two).
pub fn dataset_from_idx(images: &IdxImages, labels: &[u8]) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(DataError::CountMismatch { images: images.count, labels: labels.len() }.into());
    }
    let q = images.rows * images.cols;
    let features = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().copied().max().map_or(2, |l| (l + 1).max(2));
    Dataset::new(features, q, labels, classes)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let read = |p: &Path| fs::read(p).map_err(|source| Error::Io { path: p.to_path_buf(), source });
    let images = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path)?)?;
    dataset_from_idx(&images, &labels)
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte` from a directory and
/// returns `(train, test)` with a common class count.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
    let test = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
    let classes = train.classes.max(test.classes);
    Ok((Dataset { classes, ..train }, Dataset { classes, ..test }))
}

/// Loads a headered numeric CSV.
///
/// Features are min-max scaled per column to `[0, 1]`; constant columns
/// become zero. Integer labels in `0..classes` are used as-is, otherwise the
/// distinct label strings are sorted and numbered in order.
pub fn load_csv(path: &Path, label_column: &str, classes: usize) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(DataError::from)?;
    let header = reader.headers().map_err(DataError::from)?.clone();
    let label_idx = header
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| DataError::MissingColumn(label_column.to_string()))?;
    let q = header.len() - 1;

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(DataError::from)?;
        if rec.len() != header.len() {
            return Err(DataError::Ragged { row, expected: header.len(), found: rec.len() }.into());
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                raw_labels.push(cell.trim().to_string());
                continue;
            }
            let v: f64 = cell.trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                DataError::NonNumeric { row, column: header[j].to_string(), value: cell.to_string() }
            })?;
            features.push(v);
        }
    }

    let labels = map_labels(&raw_labels, classes)?;
    min_max_scale(&mut features, q);
    Dataset::new(features, q, labels, classes)
}

fn map_labels(raw: &[String], classes: usize) -> Result<Vec<usize>> {
    let numeric: Option<Vec<usize>> = raw.iter().map(|s| s.parse::<usize>().ok().filter(|&l| l < classes)).collect();
    if let Some(labels) = numeric {
        return Ok(labels);
    }
    let mut distinct: Vec<&str> = raw.iter().map(String::as_str).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() > classes {
        return Err(DataError::UnknownLabel(distinct[classes].to_string()).into());
    }
    Ok(raw.iter().map(|s| distinct.binary_search(&s.as_str()).expect("label present")).collect())
}

fn min_max_scale(features: &mut [f64], q: usize) {
    if features.is_empty() {
        return;
    }
    for j in 0..q {
        let column = features.iter().skip(j).step_by(q);
        let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        for v in features.iter_mut().skip(j).step_by(q) {
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }
}

/// Gaussian clusters together with their true centres.
#[derive(Clone, Debug)]
pub struct SyntheticBlobs {
    pub dataset: Dataset,
    pub centers: Vec<Vec<f64>>,
}

/// `classes` isotropic Gaussian clusters of `per_class` points each.
///
/// Centres are drawn uniformly from `[-1, 1]^q`, rejecting draws closer than
/// 0.5 to an earlier centre, so clusters are linearly separable when
/// `spread` is small. Rows are ordered class by class.
pub fn synth_blobs(classes: usize, per_class: usize, q: usize, spread: f64, rng: &mut RngStream) -> Result<SyntheticBlobs> {
    if classes < 2 || q == 0 {
        return Err(Error::config(format!("synth_blobs needs L >= 2 and q >= 1 (L={classes}, q={q})")));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::config(format!("spread must be finite and non-negative, got {spread}")));
    }
    const MIN_SEPARATION: f64 = 0.5;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while centers.len() < classes {
        let mut candidate: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..=1.0)).collect();
        for _ in 0..1000 {
            let far = centers.iter().all(|c| {
                c.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= MIN_SEPARATION
            });
            if far {
                break;
            }
            candidate = (0..q).map(|_| rng.random_range(-1.0..=1.0)).collect();
        }
        centers.push(candidate);
    }

    let mut features = Vec::with_capacity(classes * per_class * q);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (l, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &mu in center {
                let z: f64 = StandardNormal.sample(rng);
                features.push(mu + spread * z);
            }
            labels.push(l);
        }
    }
    Ok(SyntheticBlobs { dataset: Dataset::new(features, q, labels, classes)?, centers })
}

/// Assignment of every training instance to exactly one device.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    devices: usize,
}

impl Partition {
    pub fn from_assignment(assignment: Vec<usize>, devices: usize) -> Result<Self> {
        if devices == 0 {
            return Err(Error::config("a partition needs at least one device"));
        }
        if let Some(&bad) = assignment.iter().find(|&&d| d >= devices) {
            return Err(Error::config(format!("device {bad} out of range for {devices} devices")));
        }
        Ok(Self { assignment, devices })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    /// Instance indices held by each device, ascending.
    pub fn shards(&self) -> Vec<Vec<usize>> {
        let mut shards = vec![Vec::new(); self.devices];
        for (i, &d) in self.assignment.iter().enumerate() {
            shards[d].push(i);
        }
        shards
    }
}

/// Non-IID split: devices form `L` equal groups, device `i` belonging to
/// group `i mod L`; an instance with label `l` goes to group `l` with
/// probability `p` and otherwise to one of the other `L - 1` groups
/// uniformly. The device within the group is uniform.
///
/// Interleaving keeps any prefix of device ids spread across the groups.
pub fn partition_noniid(dataset: &Dataset, devices: usize, p: f64, rng: &mut RngStream) -> Result<Partition> {
    let classes = dataset.classes();
    if devices == 0 || devices % classes != 0 {
        return Err(Error::config(format!(
            "device count {devices} must be a positive multiple of the class count {classes}"
        )));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::config(format!("non-IID degree must lie in (0, 1], got {p}")));
    }
    let group_size = devices / classes;
    let assignment = dataset
        .labels()
        .iter()
        .map(|&label| {
            let group = if rng.random::<f64>() < p {
                label
            } else {
                // uniform over the other L - 1 groups
                let k = rng.random_range(0..classes - 1);
                if k >= label {
                    k + 1
                } else {
                    k
                }
            };
            rng.random_range(0..group_size) * classes + group
        })
        .collect();
    Partition::from_assignment(assignment, devices)
}

/// Dataset row indices forming one mini-batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Uniform sample without replacement of `min(batch_size, shard.len())`
/// instances from a device shard.
pub fn sample_batch(shard: &[usize], batch_size: usize, rng: &mut RngStream) -> Result<Batch> {
    if shard.is_empty() {
        return Err(Error::Empty("device shard"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let amount = batch_size.min(shard.len());
    let indices = index::sample(rng, shard.len(), amount).into_iter().map(|i| shard[i]).collect();
    Ok(Batch { indices })
}

/// Writes an IDX label file; used by tests and tooling.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&IDX_LABEL_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)
}

/// Writes an IDX image file; used by tests and tooling.
pub fn write_idx_images(path: &Path, images: &IdxImages) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    for v in [IDX_IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        f.write_all(&v.to_be_bytes())?;
    }
    f.write_all(&images.pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_bytes(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGE_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    fn label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = IDX_LABEL_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_images_and_labels() {
        let mut payload = vec![0u8; 2 * 28 * 28];
        payload[5] = 255;
        let images = parse_idx_images(&image_bytes(2, 28, 28, &payload)).unwrap();
        assert_eq!((images.count, images.rows, images.cols), (2, 28, 28));
        let labels = parse_idx_labels(&label_bytes(&[7, 3])).unwrap();
        assert_eq!(labels, vec![7, 3]);
        let ds = dataset_from_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_features(), 784);
        assert_eq!(ds.labels(), &[7, 3]);
        assert_eq!(ds.row(0)[5], 1.0);
        assert_eq!(ds.row(0)[4], 0.0);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let mut wrong = image_bytes(1, 2, 2, &[0; 4]);
        wrong[3] = 0x01;
        assert!(matches!(parse_idx_images(&wrong), Err(DataError::BadMagic { found: 0x801, .. })));
        assert!(matches!(parse_idx_labels(&image_bytes(1, 1, 1, &[0])), Err(DataError::BadMagic { .. })));
        assert!(matches!(
            parse_idx_images(&image_bytes(2, 2, 2, &[0; 5])),
            Err(DataError::Truncated { expected: 24, found: 21 })
        ));
        assert!(matches!(parse_idx_labels(&[0, 0]), Err(DataError::Truncated { .. })));
        let images = parse_idx_images(&image_bytes(2, 1, 1, &[0, 0])).unwrap();
        assert!(matches!(
            dataset_from_idx(&images, &[1, 2, 3]),
            Err(Error::Data(DataError::CountMismatch { images: 2, labels: 3 }))
        ));
    }

    #[test]
    fn csv_with_string_labels_and_constant_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bc.csv");
        let mut text = String::from("id_const,diagnosis");
        for j in 0..29 {
            text.push_str(&format!(",x{j}"));
        }
        text.push('\n');
        for (row, label) in ["M", "B", "M"].iter().enumerate() {
            text.push_str(&format!("4.2,{label}"));
            for j in 0..29 {
                text.push_str(&format!(",{}", (row * 7 + j) as f64 * 0.5));
            }
            text.push('\n');
        }
        fs::write(&path, text).unwrap();
        let ds = load_csv(&path, "diagnosis", 2).unwrap();
        assert_eq!((ds.len(), ds.num_features(), ds.classes()), (3, 30, 2));
        assert_eq!(ds.labels(), &[1, 0, 1]);
        for i in 0..3 {
            assert_eq!(ds.row(i)[0], 0.0);
        }
        assert_eq!(ds.row(0)[1], 0.0);
        assert_eq!(ds.row(2)[1], 1.0);
        assert_eq!(ds.row(1)[1], 0.5);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "a,label\n1.0,0\nfoo,1\n").unwrap();
        assert!(matches!(load_csv(&path, "label", 2), Err(Error::Data(DataError::NonNumeric { row: 1, .. }))));
        fs::write(&path, "a,label\n1.0,x\n2.0,y\n3.0,z\n").unwrap();
        assert!(matches!(load_csv(&path, "label", 2), Err(Error::Data(DataError::UnknownLabel(ref s))) if s == "z"));
        assert!(matches!(load_csv(&path, "nope", 2), Err(Error::Data(DataError::MissingColumn(_)))));
    }

    #[test]
    fn blobs_are_deterministic_and_sized() {
        let a = synth_blobs(2, 10, 2, 0.01, &mut RngStream::new(1, "blobs")).unwrap();
        let b = synth_blobs(2, 10, 2, 0.01, &mut RngStream::new(1, "blobs")).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.dataset.len(), 20);
        assert!(synth_blobs(1, 10, 2, 0.1, &mut RngStream::new(1, "blobs")).is_err());
    }

    #[test]
    fn blob_class_means_follow_centres() {
        let spread = 0.5;
        let blobs = synth_blobs(3, 100, 5, spread, &mut RngStream::new(11, "blobs")).unwrap();
        let ds = &blobs.dataset;
        for (l, center) in blobs.centers.iter().enumerate() {
            for (j, &mu) in center.iter().enumerate() {
                let rows: Vec<f64> = (0..ds.len()).filter(|&i| ds.label(i) == l).map(|i| ds.row(i)[j]).collect();
                let mean = rows.iter().sum::<f64>() / rows.len() as f64;
                assert!((mean - mu).abs() < 3.0 * spread / 10.0, "class {l} coord {j}: {mean} vs {mu}");
            }
        }
    }

    #[test]
    fn blob_classes_are_linearly_separable() {
        // the perpendicular bisector of the two centres separates the points
        let blobs = synth_blobs(2, 10, 2, 0.01, &mut RngStream::new(5, "blobs")).unwrap();
        let (c0, c1) = (&blobs.centers[0], &blobs.centers[1]);
        let normal: Vec<f64> = c1.iter().zip(c0).map(|(a, b)| a - b).collect();
        let mid: Vec<f64> = c1.iter().zip(c0).map(|(a, b)| 0.5 * (a + b)).collect();
        for i in 0..blobs.dataset.len() {
            let side: f64 = blobs.dataset.row(i).iter().zip(&mid).zip(&normal).map(|((x, m), n)| (x - m) * n).sum();
            assert_eq!(side > 0.0, blobs.dataset.label(i) == 1);
        }
    }

    fn labelled(labels: Vec<usize>, classes: usize) -> Dataset {
        let n = labels.len();
        Dataset::new(vec![0.0; n], 1, labels, classes).unwrap()
    }

    #[test]
    fn partition_requires_divisible_devices() {
        let ds = labelled(vec![0, 1, 2], 3);
        assert!(partition_noniid(&ds, 4, 0.5, &mut RngStream::new(0, "p")).is_err());
        assert!(partition_noniid(&ds, 3, 0.0, &mut RngStream::new(0, "p")).is_err());
    }

    #[test]
    fn partition_p_one_keeps_labels_in_their_group() {
        let ds = labelled((0..1000).map(|i| i % 4).collect(), 4);
        let part = partition_noniid(&ds, 8, 1.0, &mut RngStream::new(2, "p")).unwrap();
        for (i, &d) in part.assignment().iter().enumerate() {
            assert_eq!(d % 4, ds.label(i));
        }
    }

    #[test]
    fn partition_frequency_matches_p() {
        let ds = labelled(vec![0; 10_000], 2);
        let part = partition_noniid(&ds, 4, 0.8, &mut RngStream::new(3, "p")).unwrap();
        let share = part.assignment().iter().filter(|&&d| d % 2 == 0).count() as f64 / 10_000.0;
        assert!((share - 0.8).abs() < 0.02, "share {share}");
    }

    #[test]
    fn partition_p_one_over_l_is_uniform_over_groups() {
        let ds = labelled(vec![1; 30_000], 3);
        let part = partition_noniid(&ds, 6, 1.0 / 3.0, &mut RngStream::new(4, "p")).unwrap();
        for g in 0..3 {
            let share = part.assignment().iter().filter(|&&d| d % 3 == g).count() as f64 / 30_000.0;
            assert!((share - 1.0 / 3.0).abs() < 0.02, "group {g}: {share}");
        }
    }

    #[test]
    fn partition_conserves_instances() {
        let ds = labelled((0..500).map(|i| i % 5).collect(), 5);
        let part = partition_noniid(&ds, 10, 0.5, &mut RngStream::new(9, "p")).unwrap();
        let mut all: Vec<usize> = part.shards().into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn batch_clamps_and_errors() {
        let shard = vec![10, 11, 12, 13, 14];
        let mut rng = RngStream::new(0, "batch");
        let mut b = sample_batch(&shard, 32, &mut rng).unwrap().indices;
        b.sort_unstable();
        assert_eq!(b, shard);
        let one = sample_batch(&shard, 1, &mut rng).unwrap();
        assert_eq!(one.len(), 1);
        assert!(shard.contains(&one.indices[0]));
        assert!(sample_batch(&[], 4, &mut rng).is_err());
    }

    #[test]
    fn batch_frequency_is_uniform() {
        let shard: Vec<usize> = (0..10).collect();
        let mut rng = RngStream::new(1, "batch");
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            let b = sample_batch(&shard, 2, &mut rng).unwrap();
            assert_ne!(b.indices[0], b.indices[1]);
            for i in b.indices {
                counts[i] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.2).abs() < 0.02, "frequency {f}");
        }
    }
}
