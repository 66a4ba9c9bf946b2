//! Raw vibration records, fixed-length segmentation and dataset manifests.
//!
//! Two on-disk formats are supported: CSV with one value per line (an
//! optional single header line is skipped) and a bare stream of
//! little-endian `f64` values. A [`DatasetManifest`] lists record files,
//! the fault label for each and how many segments to cut from it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};

/// Sampling rate assumed when neither the manifest nor the caller supplies one.
pub const DEFAULT_SAMPLING_RATE_HZ: f64 = 12_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    Csv,
    RawF64Le,
}

/// One channel of raw vibration readings.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    samples: Vec<f64>,
    sampling_rate_hz: f64,
    channel_id: String,
}

impl RawRecord {
    pub fn new(samples: Vec<f64>, sampling_rate_hz: f64, channel_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("record has no samples".into()));
        }
        if !(sampling_rate_hz > 0.0 && sampling_rate_hz.is_finite()) {
            return Err(Error::Config(format!(
                "sampling rate must be positive, got {sampling_rate_hz}"
            )));
        }
        Ok(Self {
            samples,
            sampling_rate_hz,
            channel_id: channel_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn channel_id(&self) -> &str {
        &self.channel_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_sampling_rate(mut self, sampling_rate_hz: f64) -> Result<Self> {
        if !(sampling_rate_hz > 0.0 && sampling_rate_hz.is_finite()) {
            return Err(Error::Config(format!(
                "sampling rate must be positive, got {sampling_rate_hz}"
            )));
        }
        self.sampling_rate_hz = sampling_rate_hz;
        Ok(self)
    }
}

/// A health-condition class such as `NO`, `IF`, `OF` or `BF`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaultLabel {
    pub class_id: u32,
    pub class_name: String,
}

impl FaultLabel {
    pub fn new(class_id: u32, class_name: impl Into<String>) -> Self {
        Self {
            class_id,
            class_name: class_name.into(),
        }
    }
}

/// Reads every value of a record file in file order.
///
/// The channel id is taken from the file stem and the sampling rate defaults
/// to [`DEFAULT_SAMPLING_RATE_HZ`]; use [`RawRecord::with_sampling_rate`] to
/// override it.
pub fn load_record(path: impl AsRef<Path>, format: RecordFormat) -> Result<RawRecord> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::EmptyInput(format!("{} is empty", path.display())));
    }
    let samples = match format {
        RecordFormat::Csv => parse_csv(path, &bytes)?,
        RecordFormat::RawF64Le => parse_raw_f64_le(path, &bytes)?,
    };
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} contains no samples",
            path.display()
        )));
    }
    let channel = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RawRecord::new(samples, DEFAULT_SAMPLING_RATE_HZ, channel)
}

fn parse_csv(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: Location::Byte(e.valid_up_to() as u64),
        message: "invalid UTF-8".into(),
    })?;
    let mut out = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        // A single header line is allowed when it starts with a non-numeric character.
        if idx == 0 && !starts_numeric(line) {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            location: Location::Line(idx + 1),
            message: format!("cannot parse {line:?} as a number"),
        })?;
        out.push(value);
    }
    Ok(out)
}

fn starts_numeric(line: &str) -> bool {
    matches!(
        line.chars().next(),
        Some(c) if c.is_ascii_digit() || matches!(c, '-' | '+' | '.')
    )
}

fn parse_raw_f64_le(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            location: Location::Byte((bytes.len() - bytes.len() % 8) as u64),
            message: format!("trailing {} bytes do not form a float64", bytes.len() % 8),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Writes values as consecutive little-endian float64s.
pub fn write_raw_f64_le(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes values as CSV, one per line.
pub fn write_csv(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::with_capacity(values.len() * 20);
    for v in values {
        text.push_str(&format!("{v}\n"));
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Cuts `segment_count` non-overlapping windows of `segment_len` samples from
/// the start of the record. Samples past the last window are dropped.
pub fn segment(record: &RawRecord, segment_len: usize, segment_count: usize) -> Result<Vec<Vec<f64>>> {
    if segment_len == 0 || segment_count == 0 {
        return Err(Error::Config(
            "segment_len and segment_count must be positive".into(),
        ));
    }
    let required = segment_len
        .checked_mul(segment_count)
        .ok_or_else(|| Error::Config("segment_len * segment_count overflows".into()))?;
    if required > record.len() {
        return Err(Error::Length {
            required,
            available: record.len(),
        });
    }
    Ok(record.samples[..required]
        .chunks_exact(segment_len)
        .map(<[f64]>::to_vec)
        .collect())
}

/// Fixed-length signal segments, each tagged with a fault label.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub segments: Vec<Vec<f64>>,
    pub labels: Vec<FaultLabel>,
    pub sampling_rate_hz: f64,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDecl {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub format: RecordFormat,
    pub label_id: u32,
    pub segment_len: usize,
    pub segment_count: usize,
}

/// Dataset composition: which files, which labels, how many segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub labels: Vec<LabelDecl>,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_rate_hz: Option<f64>,
    /// Directory that relative entry paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest = Self::from_json_str(&text)
            .map_err(|e| e.context(format!("manifest {}", path.display())))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf);
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for l in &self.labels {
            if !ids.insert(l.id) {
                return Err(Error::Config(format!("duplicate label id {}", l.id)));
            }
            if !names.insert(l.name.as_str()) {
                return Err(Error::Config(format!("duplicate label name {:?}", l.name)));
            }
        }
        if let Some(rate) = self.sampling_rate_hz {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::Config(format!("sampling rate must be positive, got {rate}")));
            }
        }
        for (i, e) in self.entries.iter().enumerate() {
            if !ids.contains(&e.label_id) {
                return Err(Error::Config(format!(
                    "entry {i} ({}) uses undeclared label id {}",
                    e.path.display(),
                    e.label_id
                )));
            }
            if e.segment_len == 0 || e.segment_count == 0 {
                return Err(Error::Config(format!(
                    "entry {i} ({}) needs positive segment_len and segment_count",
                    e.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn label_map(&self) -> BTreeMap<u32, FaultLabel> {
        self.labels
            .iter()
            .map(|l| (l.id, FaultLabel::new(l.id, l.name.clone())))
            .collect()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        match &self.base_dir {
            Some(base) if entry.path.is_relative() => base.join(&entry.path),
            _ => entry.path.clone(),
        }
    }
}

/// Loads and segments every manifest entry, in entry order then segment order.
pub fn build_dataset(manifest: &DatasetManifest) -> Result<SegmentSet> {
    manifest.validate()?;
    let labels = manifest.label_map();
    let rate = manifest.sampling_rate_hz.unwrap_or(DEFAULT_SAMPLING_RATE_HZ);

    let per_entry: Vec<Result<Vec<Vec<f64>>>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let path = manifest.resolve(entry);
            let record = load_record(&path, entry.format)
                .map_err(|e| e.context(format!("loading {}", path.display())))?;
            segment(&record, entry.segment_len, entry.segment_count)
                .map_err(|e| e.context(format!("segmenting {}", path.display())))
        })
        .collect();

    let mut out = SegmentSet {
        segments: Vec::new(),
        labels: Vec::new(),
        sampling_rate_hz: rate,
    };
    for (entry, segments) in manifest.entries.iter().zip(per_entry) {
        let segments = segments?;
        let label = &labels[&entry.label_id];
        out.labels.extend(std::iter::repeat_n(label.clone(), segments.len()));
        out.segments.extend(segments);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("manifest {:?} has no entries", manifest.name)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, contents: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, contents).unwrap();
        p
    }

    #[test]
    fn csv_echoes_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", b"1.0\n2.0\n3.0");
        let r = load_record(&p, RecordFormat::Csv).unwrap();
        assert_eq!(r.samples(), &[1.0, 2.0, 3.0]);
        assert_eq!(r.channel_id(), "a");
    }

    #[test]
    fn csv_skips_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "h.csv", b"accel\n-1.5\n.25\n");
        let r = load_record(&p, RecordFormat::Csv).unwrap();
        assert_eq!(r.samples(), &[-1.5, 0.25]);
    }

    #[test]
    fn csv_bad_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.csv", b"1.0\nabc");
        match load_record(&p, RecordFormat::Csv).unwrap_err() {
            Error::Parse { location, .. } => assert_eq!(location, Location::Line(2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn raw_f64_reads_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.bin");
        write_raw_f64_le(&p, &[0.5, -0.5, 0.0]).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 24);
        let r = load_record(&p, RecordFormat::RawF64Le).unwrap();
        assert_eq!(r.samples(), &[0.5, -0.5, 0.0]);
    }

    #[test]
    fn raw_f64_truncated_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.bin", &[0u8; 11]);
        match load_record(&p, RecordFormat::RawF64Le).unwrap_err() {
            Error::Parse { location, .. } => assert_eq!(location, Location::Byte(8)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.csv", b"");
        assert!(matches!(
            load_record(&p, RecordFormat::Csv),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn segment_exhaustive_split() {
        let r = RawRecord::new((0..10).map(f64::from).collect(), 1.0, "x").unwrap();
        let s = segment(&r, 5, 2).unwrap();
        assert_eq!(s, vec![vec![0., 1., 2., 3., 4.], vec![5., 6., 7., 8., 9.]]);
    }

    #[test]
    fn segment_full_scale() {
        let r = RawRecord::new(vec![0.0; 12_000 * 100], 12_000.0, "x").unwrap();
        let s = segment(&r, 12_000, 100).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.iter().all(|w| w.len() == 12_000));
    }

    #[test]
    fn segment_too_short() {
        let r = RawRecord::new(vec![0.0; 9], 1.0, "x").unwrap();
        match segment(&r, 5, 2).unwrap_err() {
            Error::Length {
                required,
                available,
            } => assert_eq!((required, available), (10, 9)),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn manifest_json(entries: &str) -> String {
        format!(
            r#"{{"name":"t","labels":[{{"id":0,"name":"NO"}},{{"id":1,"name":"IF"}},{{"id":2,"name":"OF"}},{{"id":3,"name":"BF"}}],"entries":[{entries}]}}"#
        )
    }

    #[test]
    fn build_dataset_four_classes() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for id in 0..4u32 {
            let name = format!("c{id}.bin");
            let values: Vec<f64> = (0..1000).map(|i| f64::from(id) * 1e4 + f64::from(i)).collect();
            write_raw_f64_le(dir.path().join(&name), &values).unwrap();
            entries.push(format!(
                r#"{{"path":"{name}","format":"raw_f64_le","label_id":{id},"segment_len":10,"segment_count":100}}"#
            ));
        }
        let mpath = dir.path().join("m.json");
        fs::write(&mpath, manifest_json(&entries.join(","))).unwrap();
        let m = DatasetManifest::load(&mpath).unwrap();
        let ds = build_dataset(&m).unwrap();
        assert_eq!(ds.len(), 400);
        assert_eq!(ds.labels[0].class_name, "NO");
        assert_eq!(ds.labels[399].class_name, "BF");
        assert_eq!(ds.segments[100][0], 1e4);
        let again = build_dataset(&DatasetManifest::load(&mpath).unwrap()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn build_dataset_singleton() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "one.csv", b"1\n2\n3\n");
        let mpath = dir.path().join("m.json");
        fs::write(
            &mpath,
            manifest_json(r#"{"path":"one.csv","format":"csv","label_id":1,"segment_len":3,"segment_count":1}"#),
        )
        .unwrap();
        let ds = build_dataset(&DatasetManifest::load(&mpath).unwrap()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels[0], FaultLabel::new(1, "IF"));
    }

    #[test]
    fn build_dataset_missing_file_names_path() {
        let m = DatasetManifest::from_json_str(&manifest_json(
            r#"{"path":"/nonexistent/zz.csv","format":"csv","label_id":0,"segment_len":3,"segment_count":1}"#,
        ))
        .unwrap();
        let err = build_dataset(&m).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/zz.csv"), "{err}");
        assert_eq!(err.kind(), "io");
    }

    #[test]
    fn manifest_rejects_undeclared_label() {
        let err = DatasetManifest::from_json_str(&manifest_json(
            r#"{"path":"a.csv","format":"csv","label_id":9,"segment_len":3,"segment_count":1}"#,
        ))
        .unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    proptest! {
        #[test]
        fn segment_is_lossless_on_prefix(
            data in proptest::collection::vec(-1e3f64..1e3, 1..300),
            len in 1usize..20,
            count in 1usize..20,
        ) {
            let r = RawRecord::new(data.clone(), 1.0, "p").unwrap();
            match segment(&r, len, count) {
                Ok(segs) => {
                    prop_assert_eq!(segs.len(), count);
                    let flat: Vec<f64> = segs.concat();
                    prop_assert_eq!(&flat[..], &data[..len * count]);
                }
                Err(Error::Length { .. }) => prop_assert!(len * count > data.len()),
                Err(e) => prop_assert!(false, "unexpected {e:?}"),
            }
        }
    }
}
