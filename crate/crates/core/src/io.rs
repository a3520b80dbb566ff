//! Dataset ingestion: JSON-lines manifests, `ZEDF` binary feature files,
//! frame pooling and stratified fold splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"ZEDF";
pub const FEATURE_VERSION: u16 = 1;
pub const FEATURE_HEADER_LEN: usize = 14;

/// One event category and its article text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: usize,
    pub name: String,
    pub article: String,
}

/// One video: label, title and the location of its features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub event_id: usize,
    pub title: String,
    pub feature_path: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ManifestLine {
    Event {
        event_id: usize,
        name: String,
        article: String,
    },
    Video {
        video_id: String,
        event_id: usize,
        title: String,
        feature_path: PathBuf,
    },
}

/// Events and videos of one dataset, referentially checked.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub events: Vec<EventRecord>,
    pub videos: Vec<VideoRecord>,
}

impl Manifest {
    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    /// Checks event ids are `0..M` without gaps, articles are non-empty,
    /// video ids are unique and every video points at a defined event.
    /// Events are re-sorted by id.
    pub fn validate(&mut self) -> Result<()> {
        self.events.sort_by_key(|e| e.event_id);
        for (i, e) in self.events.iter().enumerate() {
            if e.event_id != i {
                return Err(Error::invalid(format!(
                    "event ids must be 0..{} without gaps; found {} at position {}",
                    self.events.len(),
                    e.event_id,
                    i
                )));
            }
            if e.article.trim().is_empty() {
                return Err(Error::invalid(format!("event {} has an empty article", e.event_id)));
            }
        }
        let mut seen = HashSet::new();
        for v in &self.videos {
            if !seen.insert(v.video_id.as_str()) {
                return Err(Error::DuplicateVideo(v.video_id.clone()));
            }
            if v.event_id >= self.events.len() {
                return Err(Error::DanglingEvent { video_id: v.video_id.clone(), event_id: v.event_id });
            }
        }
        Ok(())
    }
}

/// Reads a JSON-lines manifest. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = Manifest::default();
    let mut event_ids = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest { line: lineno, message: e.to_string() })?;
        match parsed {
            ManifestLine::Event { event_id, name, article } => {
                if !event_ids.insert(event_id) {
                    return Err(Error::Manifest {
                        line: lineno,
                        message: format!("duplicate event id {event_id}"),
                    });
                }
                manifest.events.push(EventRecord { event_id, name, article });
            }
            ManifestLine::Video { video_id, event_id, title, feature_path } => {
                manifest.videos.push(VideoRecord { video_id, event_id, title, feature_path });
            }
        }
    }
    manifest.validate()?;
    Ok(manifest)
}

/// Writes events first, then videos, one JSON object per line.
pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in &manifest.events {
        let line = ManifestLine::Event {
            event_id: e.event_id,
            name: e.name.clone(),
            article: e.article.clone(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    for v in &manifest.videos {
        let line = ManifestLine::Video {
            video_id: v.video_id.clone(),
            event_id: v.event_id,
            title: v.title.clone(),
            feature_path: v.feature_path.clone(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Dense row-major single-precision matrix as stored in `ZEDF` files.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(format!("{rows}x{cols} matrix needs {} values, got {}", rows * cols, data.len())));
        }
        if let Some(offset) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { offset });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows_f64(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).iter().map(|&v| f64::from(v)).collect()).collect()
    }
}

pub fn encode_features(matrix: &FeatureMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * matrix.data.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(matrix.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(matrix.cols as u32).to_le_bytes());
    for v in &matrix.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < FEATURE_HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(Error::Truncated { expected: FEATURE_HEADER_LEN, actual: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != FEATURE_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let expected = FEATURE_HEADER_LEN + rows * cols * 4;
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, actual: bytes.len() });
    }
    let data: Vec<f32> = bytes[FEATURE_HEADER_LEN..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(rows, cols, data)
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

pub fn write_feature_file(matrix: &FeatureMatrix, path: &Path) -> Result<()> {
    if let Some(offset) = matrix.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { offset });
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_features(matrix)).map_err(|e| Error::io(path, e))
}

/// Average-pools frame-level features into a single video-level vector.
pub fn pool_frames(frames: &FeatureMatrix) -> Result<Vec<f64>> {
    if frames.rows == 0 {
        return Err(Error::invalid("cannot pool a feature matrix with zero rows"));
    }
    let mut acc = vec![0.0f64; frames.cols];
    for i in 0..frames.rows {
        for (a, &v) in acc.iter_mut().zip(frames.row(i)) {
            *a += f64::from(v);
        }
    }
    let n = frames.rows as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Loads and pools the features of one video; relative paths resolve
/// against `base_dir` (normally the manifest's directory).
pub fn load_video_feature(base_dir: &Path, video: &VideoRecord) -> Result<Vec<f64>> {
    let path = if video.feature_path.is_absolute() {
        video.feature_path.clone()
    } else {
        base_dir.join(&video.feature_path)
    };
    pool_frames(&read_feature_file(&path)?)
}

/// Per-event stratified fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: BTreeMap<String, usize>,
    pub folds: usize,
    pub seed: u64,
}

impl FoldAssignment {
    /// Indices into `videos` split by membership of fold `fold`.
    pub fn split(&self, videos: &[VideoRecord], fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..videos.len()).partition(|&i| self.fold_of[&videos[i].video_id] != fold)
    }
}

/// Shuffles each event's videos with a seeded RNG and deals them round-robin
/// into `folds` folds. The starting fold rotates between events so global fold
/// sizes stay balanced too.
pub fn split_folds(videos: &[VideoRecord], folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    let mut by_event: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for v in videos {
        by_event.entry(v.event_id).or_default().push(&v.video_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = BTreeMap::new();
    let mut offset = 0usize;
    for (event, mut ids) in by_event {
        if ids.len() < folds {
            log::warn!("event {event} has {} videos, fewer than {folds} folds", ids.len());
        }
        ids.shuffle(&mut rng);
        for (i, id) in ids.iter().enumerate() {
            fold_of.insert((*id).to_string(), (offset + i) % folds);
        }
        offset = (offset + ids.len()) % folds;
    }
    Ok(FoldAssignment { fold_of, folds, seed })
}

/// Counts videos per (event, fold).
pub fn fold_sizes(videos: &[VideoRecord], assignment: &FoldAssignment) -> HashMap<usize, Vec<usize>> {
    let mut sizes: HashMap<usize, Vec<usize>> = HashMap::new();
    for v in videos {
        let entry = sizes.entry(v.event_id).or_insert_with(|| vec![0; assignment.folds]);
        entry[assignment.fold_of[&v.video_id]] += 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(id: &str, event: usize) -> VideoRecord {
        VideoRecord {
            video_id: id.into(),
            event_id: event,
            title: String::new(),
            feature_path: PathBuf::from(format!("{id}.zedf")),
        }
    }

    fn write_lines(dir: &Path, lines: &[&str]) -> PathBuf {
        let path = dir.join("m.jsonl");
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn manifest_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            dir.path(),
            &[
                r#"{"kind":"event","event_id":0,"name":"a","article":"alpha text"}"#,
                r#"{"kind":"event","event_id":1,"name":"b","article":"beta text"}"#,
                r#"{"kind":"video","video_id":"v0","event_id":0,"title":"x","feature_path":"v0.zedf"}"#,
                r#"{"kind":"video","video_id":"v1","event_id":1,"title":"","feature_path":"v1.zedf"}"#,
                r#"{"kind":"video","video_id":"v2","event_id":1,"title":"y","feature_path":"v2.zedf"}"#,
            ],
        );
        let m = load_manifest(&path).unwrap();
        assert_eq!((m.events.len(), m.videos.len()), (2, 3));
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), &[]);
        let m = load_manifest(&path).unwrap();
        assert!(m.events.is_empty() && m.videos.is_empty());
    }

    #[test]
    fn dangling_event_reference() {
        let dir = tempfile::tempdir().unwrap();
        let mut lines: Vec<String> = (0..5)
            .map(|i| format!(r#"{{"kind":"event","event_id":{i},"name":"e","article":"text"}}"#))
            .collect();
        lines.push(r#"{"kind":"video","video_id":"v","event_id":7,"title":"","feature_path":"v"}"#.into());
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let err = load_manifest(&write_lines(dir.path(), &refs)).unwrap_err();
        assert!(matches!(err, Error::DanglingEvent { event_id: 7, .. }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            dir.path(),
            &[r#"{"kind":"event","event_id":0,"name":"a","article":"t"}"#, "{not json"],
        );
        assert!(matches!(load_manifest(&path).unwrap_err(), Error::Manifest { line: 2, .. }));
    }

    #[test]
    fn unknown_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), &[r#"{"kind":"event","event_id":0,"name":"a","article":"t","x":1}"#]);
        assert!(matches!(load_manifest(&path).unwrap_err(), Error::Manifest { line: 1, .. }));
    }

    #[test]
    fn duplicate_video_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            dir.path(),
            &[
                r#"{"kind":"event","event_id":0,"name":"a","article":"t"}"#,
                r#"{"kind":"video","video_id":"v","event_id":0,"title":"","feature_path":"v"}"#,
                r#"{"kind":"video","video_id":"v","event_id":0,"title":"","feature_path":"v"}"#,
            ],
        );
        assert!(matches!(load_manifest(&path).unwrap_err(), Error::DuplicateVideo(_)));
    }

    #[test]
    fn manifest_write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest {
            events: vec![EventRecord { event_id: 0, name: "a".into(), article: "some text".into() }],
            videos: vec![video("v0", 0), video("v1", 0)],
        };
        m.validate().unwrap();
        let path = dir.path().join("out.jsonl");
        write_manifest(&m, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn decode_single_row() {
        let mut bytes = b"ZEDF".to_vec();
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_features(&bytes).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 3));
        assert_eq!(m.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_matrix_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.zedf");
        write_feature_file(&FeatureMatrix::new(0, 0, vec![]).unwrap(), &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 14);
        assert_eq!(read_feature_file(&path).unwrap().rows(), 0);
    }

    #[test]
    fn identity_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.zedf");
        let eye = FeatureMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        write_feature_file(&eye, &path).unwrap();
        assert_eq!(read_feature_file(&path).unwrap(), eye);
    }

    #[test]
    fn truncated_payload() {
        let m = FeatureMatrix::new(2, 2, vec![1.0; 4]).unwrap();
        let bytes = encode_features(&m);
        let err = decode_features(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 30, actual: 27 }));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_features(&FeatureMatrix::new(1, 1, vec![1.0]).unwrap());
        bytes[0] = b'X';
        assert!(matches!(decode_features(&bytes).unwrap_err(), Error::BadMagic(_)));
    }

    #[test]
    fn non_finite_payload_reports_offset() {
        let mut bytes = encode_features(&FeatureMatrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        bytes[FEATURE_HEADER_LEN + 8..FEATURE_HEADER_LEN + 12].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_features(&bytes).unwrap_err(), Error::NonFiniteValue { offset: 2 }));
    }

    #[test]
    fn nan_rejected_before_writing() {
        assert!(FeatureMatrix::new(1, 2, vec![f32::NAN, 0.0]).is_err());
        // Bypass the constructor to check the writer's own guard.
        let m = FeatureMatrix { rows: 1, cols: 2, data: vec![0.0, f32::NAN] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.zedf");
        assert!(matches!(write_feature_file(&m, &path).unwrap_err(), Error::NonFiniteValue { offset: 1 }));
        assert!(!path.exists());
    }

    #[test]
    fn pooling() {
        let constant = FeatureMatrix::new(3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(pool_frames(&constant).unwrap(), vec![1.0, 2.0]);
        let two = FeatureMatrix::new(2, 2, vec![0.0, 0.0, 2.0, 4.0]).unwrap();
        assert_eq!(pool_frames(&two).unwrap(), vec![1.0, 2.0]);
        let one = FeatureMatrix::new(1, 3, vec![0.5, -1.5, 7.0]).unwrap();
        assert_eq!(pool_frames(&one).unwrap(), vec![0.5, -1.5, 7.0]);
        assert!(pool_frames(&FeatureMatrix::new(0, 3, vec![]).unwrap()).is_err());
    }

    #[test]
    fn folds_exactly_balanced() {
        let videos: Vec<_> = (0..10).map(|i| video(&format!("v{i}"), 0)).collect();
        let a = split_folds(&videos, 5, 11).unwrap();
        assert_eq!(fold_sizes(&videos, &a)[&0], vec![2; 5]);
        assert_eq!(a, split_folds(&videos, 5, 11).unwrap());
    }

    #[test]
    fn folds_within_one() {
        let videos: Vec<_> = (0..7).map(|i| video(&format!("v{i}"), 0)).collect();
        let a = split_folds(&videos, 5, 3).unwrap();
        let mut sizes = fold_sizes(&videos, &a)[&0].clone();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![2, 2, 1, 1, 1]);
    }

    #[test]
    fn too_few_folds() {
        assert!(split_folds(&[video("a", 0)], 1, 0).is_err());
    }

    #[test]
    fn small_event_still_assigned() {
        let videos = vec![video("a", 0), video("b", 0)];
        let a = split_folds(&videos, 5, 0).unwrap();
        assert_eq!(a.fold_of.len(), 2);
        assert_ne!(a.fold_of["a"], a.fold_of["b"]);
    }
}
