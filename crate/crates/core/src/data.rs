//! MNIST ingestion and the preprocessing pipeline:
//! class filter, area-average downsampling, binarization, conflict removal,
//! and basis-state encoding.
//!
//! Files are read from a local directory only. Expected names are the
//! standard ones, optionally with a `.gz` suffix:
//! `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
//! `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::circuit::validate_dim;
use crate::error::{invalid, QnnError, Result};
use crate::qml::LabeledInput;
use crate::statevec::StateVector;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub pixels: Vec<u8>,
    pub label: u8,
}

impl RawImage {
    pub fn new(pixels: Vec<u8>, label: u8) -> Result<Self> {
        if pixels.len() != PIXELS {
            return invalid(format!("image has {} pixels, expected {PIXELS}", pixels.len()));
        }
        Ok(Self { pixels, label })
    }
}

/// Locates `name` or `name.gz` in `dir`.
fn find_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(QnnError::NotFound(plain))
}

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => QnnError::NotFound(path.to_owned()),
        _ => QnnError::Io(e),
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| QnnError::CorruptData {
            path: path.to_owned(),
            offset: 0,
            reason: format!("gzip stream: {e}"),
        })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> QnnError {
        QnnError::CorruptData { path: self.path.to_owned(), offset: self.pos as u64, reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(self.corrupt(format!("truncated: need {n} bytes, {} remain", self.bytes.len() - self.pos))),
        }
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let found = self.u32_be()?;
        if found != magic {
            self.pos -= 4;
            return Err(self.corrupt(format!("bad magic {found:#010x}, expected {magic:#010x}")));
        }
        Ok(())
    }
}

/// Parses an IDX image file body into 28x28 images (labels left at 0).
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<Vec<u8>>> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    cur.expect_magic(IMAGE_MAGIC)?;
    let count = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    if rows != SIDE || cols != SIDE {
        cur.pos -= 8;
        return Err(cur.corrupt(format!("image size {rows}x{cols}, expected {SIDE}x{SIDE}")));
    }
    (0..count).map(|_| cur.take(PIXELS).map(<[u8]>::to_vec)).collect()
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    cur.expect_magic(LABEL_MAGIC)?;
    let count = cur.u32_be()? as usize;
    let labels = cur.take(count)?.to_vec();
    if let Some(i) = labels.iter().position(|&l| l > 9) {
        cur.pos = 8 + i;
        return Err(cur.corrupt(format!("label {} is not a digit", labels[i])));
    }
    Ok(labels)
}

fn load_pair(dir: &Path, images: &str, labels: &str) -> Result<Vec<RawImage>> {
    let image_path = find_file(dir, images)?;
    let label_path = find_file(dir, labels)?;
    let pixels = parse_idx_images(&read_maybe_gz(&image_path)?, &image_path)?;
    let labels = parse_idx_labels(&read_maybe_gz(&label_path)?, &label_path)?;
    if pixels.len() != labels.len() {
        return Err(QnnError::CorruptData {
            path: label_path,
            offset: 4,
            reason: format!("{} labels for {} images", labels.len(), pixels.len()),
        });
    }
    Ok(pixels.into_iter().zip(labels).map(|(pixels, label)| RawImage { pixels, label }).collect())
}

/// Loads the train and test splits from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Vec<RawImage>, Vec<RawImage>)> {
    let train = load_pair(dir, TRAIN_IMAGES, TRAIN_LABELS)?;
    let test = load_pair(dir, TEST_IMAGES, TEST_LABELS)?;
    Ok((train, test))
}

/// Serializes images in IDX format (uncompressed).
pub fn write_idx_images(images: &[RawImage], mut out: impl Write) -> Result<()> {
    out.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    out.write_all(&(images.len() as u32).to_be_bytes())?;
    out.write_all(&(SIDE as u32).to_be_bytes())?;
    out.write_all(&(SIDE as u32).to_be_bytes())?;
    for img in images {
        out.write_all(&img.pixels)?;
    }
    Ok(())
}

pub fn write_idx_labels(images: &[RawImage], mut out: impl Write) -> Result<()> {
    out.write_all(&LABEL_MAGIC.to_be_bytes())?;
    out.write_all(&(images.len() as u32).to_be_bytes())?;
    out.write_all(&images.iter().map(|i| i.label).collect::<Vec<_>>())?;
    Ok(())
}

/// Keeps images labelled `label_a` (mapped to `+1`) or `label_b` (`-1`).
pub fn filter_binary(images: &[RawImage], label_a: u8, label_b: u8) -> Result<Vec<(&RawImage, i8)>> {
    if label_a == label_b {
        return invalid(format!("class labels must differ, got {label_a} twice"));
    }
    let kept: Vec<_> = images
        .iter()
        .filter_map(|img| match img.label {
            l if l == label_a => Some((img, 1)),
            l if l == label_b => Some((img, -1)),
            _ => None,
        })
        .collect();
    if kept.is_empty() {
        return invalid(format!("no images labelled {label_a} or {label_b}"));
    }
    Ok(kept)
}

/// A `dim x dim` grid of bits, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitGrid {
    dim: usize,
    bits: Vec<bool>,
}

impl BitGrid {
    pub fn new(dim: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dim * dim {
            return invalid(format!("{} bits do not fill a {dim}x{dim} grid", bits.len()));
        }
        Ok(Self { dim, bits })
    }

    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return invalid("grid rows must form a square");
        }
        Self::new(dim, rows.iter().flat_map(|r| r.iter().map(|&b| b != 0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Pixels as `+1`/`-1` features (`b -> 2b - 1`).
    pub fn signed_features(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()
    }

    /// Packs the bits into an integer, first pixel most significant.
    pub fn packed(&self) -> u64 {
        self.bits.iter().fold(0, |acc, &b| (acc << 1) | u64::from(b))
    }

    pub fn from_packed(dim: usize, packed: u64) -> Self {
        let n = dim * dim;
        Self { dim, bits: (0..n).map(|i| packed >> (n - 1 - i) & 1 == 1).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinarizedImage {
    pub grid: BitGrid,
    pub label: i8,
}

/// Per-axis overlap weights of source pixels with each output cell.
fn axis_weights(dim: usize) -> Vec<[f64; SIDE]> {
    let cell = SIDE as f64 / dim as f64;
    (0..dim)
        .map(|r| {
            let (lo, hi) = (r as f64 * cell, (r + 1) as f64 * cell);
            let mut w = [0.0; SIDE];
            for (i, wi) in w.iter_mut().enumerate() {
                *wi = ((i + 1) as f64).min(hi) - (i as f64).max(lo);
                *wi = wi.max(0.0);
            }
            w
        })
        .collect()
}

/// Area-average pools a 28x28 image to `dim x dim` on the `[0, 1]` scale.
pub fn downsample(image: &RawImage, dim: usize) -> Vec<f64> {
    let weights = axis_weights(dim);
    let area = (SIDE as f64 / dim as f64).powi(2);
    let mut pooled = Vec::with_capacity(dim * dim);
    for wr in &weights {
        for wc in &weights {
            let mut acc = 0.0;
            for (i, &wi) in wr.iter().enumerate().filter(|(_, w)| **w > 0.0) {
                let row = &image.pixels[i * SIDE..(i + 1) * SIDE];
                let row_sum: f64 =
                    row.iter().zip(wc).filter(|(_, w)| **w > 0.0).map(|(&p, &wj)| wj * (f64::from(p) / 255.0)).sum();
                acc += wi * row_sum;
            }
            pooled.push(acc / area);
        }
    }
    pooled
}

/// Downsamples then sets a bit iff the pooled value is strictly above
/// `threshold`.
pub fn downsample_binarize(image: &RawImage, dim: usize, threshold: f64) -> Result<BitGrid> {
    validate_dim(dim, true)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return invalid(format!("threshold must lie in (0, 1), got {threshold}"));
    }
    BitGrid::new(dim, downsample(image, dim).into_iter().map(|v| v > threshold).collect())
}

/// What [`dedup_conflicts`] did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub input: usize,
    pub output: usize,
    /// Grids seen with both labels.
    pub conflicting_groups: usize,
    /// Conflicting grids with equal label counts, removed entirely.
    pub tied_groups_dropped: usize,
    /// Samples removed (duplicates, minority labels, ties).
    pub samples_removed: usize,
    /// Group size behind each output sample, parallel to the output list.
    pub multiplicity: Vec<usize>,
}

/// Collapses identical grids to one sample each, resolving mixed labels by
/// majority vote and dropping ties. Output keeps first-occurrence order.
pub fn dedup_conflicts(samples: &[BinarizedImage]) -> (Vec<BinarizedImage>, DedupReport) {
    let mut index: HashMap<&BitGrid, usize> = HashMap::new();
    // (first sample index, +1 count, -1 count)
    let mut groups: Vec<(usize, usize, usize)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let g = *index.entry(&s.grid).or_insert_with(|| {
            groups.push((i, 0, 0));
            groups.len() - 1
        });
        if s.label > 0 {
            groups[g].1 += 1;
        } else {
            groups[g].2 += 1;
        }
    }

    let mut report = DedupReport { input: samples.len(), ..Default::default() };
    let mut out = Vec::with_capacity(groups.len());
    for (first, plus, minus) in groups {
        if plus > 0 && minus > 0 {
            report.conflicting_groups += 1;
        }
        let label = match plus.cmp(&minus) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => -1,
            std::cmp::Ordering::Equal => {
                report.tied_groups_dropped += 1;
                continue;
            }
        };
        out.push(BinarizedImage { grid: samples[first].grid.clone(), label });
        report.multiplicity.push(plus + minus);
    }
    report.output = out.len();
    report.samples_removed = report.input - report.output;
    (out, report)
}

/// Basis state with data qubit `i` set to pixel `i` (row-major) and the
/// readout (last qubit) set to 1.
pub fn encode_to_input_state(grid: &BitGrid) -> Result<StateVector> {
    let mut bits = grid.bits().to_vec();
    bits.push(true);
    StateVector::basis_state(bits.len(), &bits)
}

pub fn encode_sample(sample: &BinarizedImage) -> Result<LabeledInput> {
    LabeledInput::new(encode_to_input_state(&sample.grid)?, sample.label)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub labels: (u8, u8),
    pub dim: usize,
    pub threshold: f64,
    pub dedup: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { labels: (3, 6), dim: 4, threshold: 0.5, dedup: true }
    }
}

/// Sample counts after each pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub train_loaded: usize,
    pub test_loaded: usize,
    pub train_filtered: usize,
    pub test_filtered: usize,
    pub train_final: usize,
    pub test_final: usize,
    pub dedup: Option<DedupReport>,
}

impl Provenance {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "train: loaded {} -> filtered {} -> final {}\ntest:  loaded {} -> filtered {} -> final {}\n",
            self.train_loaded,
            self.train_filtered,
            self.train_final,
            self.test_loaded,
            self.test_filtered,
            self.test_final
        );
        if let Some(d) = &self.dedup {
            s.push_str(&format!(
                "dedup: {} distinct grids kept, {} conflicting groups, {} ties dropped, {} samples removed\n",
                d.output, d.conflicting_groups, d.tied_groups_dropped, d.samples_removed
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub config: PipelineConfig,
    pub train: Vec<BinarizedImage>,
    pub test: Vec<BinarizedImage>,
    pub provenance: Provenance,
}

fn binarize_all(images: &[(&RawImage, i8)], dim: usize, threshold: f64) -> Result<Vec<BinarizedImage>> {
    images
        .iter()
        .map(|(img, label)| Ok(BinarizedImage { grid: downsample_binarize(img, dim, threshold)?, label: *label }))
        .collect()
}

/// Runs filter, downsample/binarize and (train only) dedup.
pub fn prepare_split(train: &[RawImage], test: &[RawImage], config: PipelineConfig) -> Result<DatasetSplit> {
    validate_dim(config.dim, true)?;
    let (a, b) = config.labels;
    let train_f = filter_binary(train, a, b)?;
    let test_f = filter_binary(test, a, b)?;
    let mut train_bin = binarize_all(&train_f, config.dim, config.threshold)?;
    let test_bin = binarize_all(&test_f, config.dim, config.threshold)?;

    let mut provenance = Provenance {
        train_loaded: train.len(),
        test_loaded: test.len(),
        train_filtered: train_f.len(),
        test_filtered: test_f.len(),
        ..Default::default()
    };
    if config.dedup {
        let (kept, report) = dedup_conflicts(&train_bin);
        train_bin = kept;
        provenance.dedup = Some(report);
    }
    if train_bin.is_empty() {
        return invalid("no training samples survive preprocessing");
    }
    provenance.train_final = train_bin.len();
    provenance.test_final = test_bin.len();
    Ok(DatasetSplit { config, train: train_bin, test: test_bin, provenance })
}

/// Magic prefix of the binary dataset cache.
pub const CACHE_MAGIC: &[u8; 8] = b"QNNDS001";

impl DatasetSplit {
    /// Binary cache layout (all integers little-endian):
    ///
    /// ```text
    /// magic    8 bytes  "QNNDS001"
    /// dim      u32
    /// n_train  u32
    /// n_test   u32
    /// samples  n_train + n_test records: label i8, bits u64 (packed, first pixel MSB)
    /// config   u32 length + JSON PipelineConfig
    /// prov     u32 length + JSON Provenance
    /// ```
    pub fn write_cache(&self, mut out: impl Write) -> Result<()> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&(self.config.dim as u32).to_le_bytes())?;
        out.write_all(&(self.train.len() as u32).to_le_bytes())?;
        out.write_all(&(self.test.len() as u32).to_le_bytes())?;
        for s in self.train.iter().chain(&self.test) {
            out.write_all(&s.label.to_le_bytes())?;
            out.write_all(&s.grid.packed().to_le_bytes())?;
        }
        for json in [serde_json::to_vec(&self.config), serde_json::to_vec(&self.provenance)] {
            let json = json.map_err(|e| QnnError::InvalidState(e.to_string()))?;
            out.write_all(&(json.len() as u32).to_le_bytes())?;
            out.write_all(&json)?;
        }
        Ok(())
    }

    pub fn read_cache(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut cur = Cursor { path, bytes, pos: 0 };
        if cur.take(8)? != CACHE_MAGIC {
            cur.pos = 0;
            return Err(cur.corrupt("not a dataset cache"));
        }
        let u32_le = |cur: &mut Cursor| -> Result<usize> {
            let b = cur.take(4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        };
        let dim = u32_le(&mut cur)?;
        let n_train = u32_le(&mut cur)?;
        let n_test = u32_le(&mut cur)?;
        let mut samples = Vec::with_capacity(n_train + n_test);
        for _ in 0..n_train + n_test {
            let label = cur.take(1)?[0] as i8;
            let packed = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
            samples.push(BinarizedImage { grid: BitGrid::from_packed(dim, packed), label });
        }
        let len = u32_le(&mut cur)?;
        let config: PipelineConfig =
            serde_json::from_slice(cur.take(len)?).map_err(|e| cur.corrupt(format!("config: {e}")))?;
        let len = u32_le(&mut cur)?;
        let provenance: Provenance =
            serde_json::from_slice(cur.take(len)?).map_err(|e| cur.corrupt(format!("provenance: {e}")))?;
        let test = samples.split_off(n_train);
        Ok(Self { config, train: samples, test, provenance })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(value: u8, label: u8) -> RawImage {
        RawImage::new(vec![value; PIXELS], label).unwrap()
    }

    fn checkerboard() -> RawImage {
        let pixels = (0..PIXELS).map(|i| if (i / SIDE + i % SIDE).is_multiple_of(2) { 255 } else { 0 }).collect();
        RawImage::new(pixels, 0).unwrap()
    }

    fn sample(rows: &[&[u8]], label: i8) -> BinarizedImage {
        BinarizedImage { grid: BitGrid::from_rows(rows).unwrap(), label }
    }

    #[test]
    fn constant_images() {
        for dim in 2..=4 {
            assert!(downsample_binarize(&uniform(0, 0), dim, 0.5).unwrap().bits().iter().all(|b| !b));
            assert!(downsample_binarize(&uniform(255, 0), dim, 0.5).unwrap().bits().iter().all(|&b| b));
        }
    }

    #[test]
    fn checkerboard_pools_to_exactly_half() {
        let img = checkerboard();
        assert_eq!(downsample(&img, 2), vec![0.5; 4]);
        assert!(downsample_binarize(&img, 2, 0.5).unwrap().bits().iter().all(|b| !b));
        assert!(downsample_binarize(&img, 2, 0.49).unwrap().bits().iter().all(|&b| b));
    }

    #[test]
    fn fractional_cells_weight_by_overlap() {
        // Only pixel row/col 9 set: it straddles cells 0 and 1 of the 3x3 grid
        // (boundary at 28/3 = 9.333).
        let mut pixels = vec![0; PIXELS];
        pixels[9 * SIDE + 9] = 255;
        let pooled = downsample(&RawImage::new(pixels, 0).unwrap(), 3);
        let area = (28.0f64 / 3.0).powi(2);
        let a = 28.0 / 3.0 - 9.0;
        let b = 1.0 - a;
        let expected = [a * a, a * b, 0.0, b * a, b * b, 0.0, 0.0, 0.0, 0.0].map(|w| w / area);
        for (p, e) in pooled.iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
        // Total mass is preserved.
        let weights = axis_weights(3);
        for i in 0..SIDE {
            let s: f64 = weights.iter().map(|w| w[i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn binarize_rejects_bad_arguments() {
        assert!(downsample_binarize(&uniform(0, 0), 6, 0.5).is_err());
        assert!(downsample_binarize(&uniform(0, 0), 2, 1.0).is_err());
        assert!(downsample_binarize(&uniform(0, 0), 2, 0.0).is_err());
    }

    #[test]
    fn filter_maps_labels() {
        let imgs = vec![uniform(0, 3), uniform(0, 5), uniform(0, 6), uniform(0, 3)];
        let kept = filter_binary(&imgs, 3, 6).unwrap();
        assert_eq!(kept.iter().map(|(_, l)| *l).collect::<Vec<_>>(), vec![1, -1, 1]);
        assert!(filter_binary(&imgs, 3, 3).is_err());
        assert!(filter_binary(&imgs, 7, 8).is_err());
    }

    #[test]
    fn dedup_examples() {
        let distinct = vec![sample(&[&[1, 0], &[0, 0]], 1), sample(&[&[0, 1], &[0, 0]], -1)];
        let (out, report) = dedup_conflicts(&distinct);
        assert_eq!(out, distinct);
        assert_eq!(report.samples_removed, 0);

        let g: &[&[u8]] = &[&[1, 1], &[0, 1]];
        let (out, report) = dedup_conflicts(&[sample(g, 1), sample(g, 1), sample(g, -1)]);
        assert_eq!(out, vec![sample(g, 1)]);
        assert_eq!(report.multiplicity, vec![3]);
        assert_eq!(report.conflicting_groups, 1);

        let (out, report) = dedup_conflicts(&[sample(g, 1), sample(g, -1)]);
        assert!(out.is_empty());
        assert_eq!(report.tied_groups_dropped, 1);
    }

    #[test]
    fn encoding_examples() {
        let grid = BitGrid::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        let state = encode_to_input_state(&grid).unwrap();
        assert_eq!(state.as_basis_index(), Some(0b10011));
        let zero = BitGrid::new(2, vec![false; 4]).unwrap();
        assert_eq!(encode_to_input_state(&zero).unwrap().as_basis_index(), Some(0b00001));
        assert!((state.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn encoding_round_trips_every_2x2_grid() {
        for packed in 0..16u64 {
            let grid = BitGrid::from_packed(2, packed);
            let idx = encode_to_input_state(&grid).unwrap().as_basis_index().unwrap();
            let bits = crate::statevec::index_bits(idx, 5);
            assert!(bits[4]);
            assert_eq!(BitGrid::new(2, bits[..4].to_vec()).unwrap(), grid);
            assert_eq!(grid.packed(), packed);
        }
    }

    #[test]
    fn idx_errors() {
        let p = Path::new("mem");
        let mut bytes = Vec::new();
        write_idx_labels(&[uniform(0, 3), uniform(0, 6)], &mut bytes).unwrap();
        assert_eq!(parse_idx_labels(&bytes, p).unwrap(), vec![3, 6]);
        match parse_idx_labels(&bytes[..9], p) {
            Err(QnnError::CorruptData { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("expected corrupt data, got {other:?}"),
        }
        match parse_idx_images(&bytes, p) {
            Err(QnnError::CorruptData { offset: 0, reason, .. }) => assert!(reason.contains("magic")),
            other => panic!("expected bad magic, got {other:?}"),
        }
        let mut imgs = Vec::new();
        write_idx_images(&[uniform(7, 0)], &mut imgs).unwrap();
        assert_eq!(&imgs[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_idx_images(&imgs, p).unwrap(), vec![vec![7; PIXELS]]);
        assert!(parse_idx_images(&imgs[..imgs.len() - 1], p).is_err());
    }
}
