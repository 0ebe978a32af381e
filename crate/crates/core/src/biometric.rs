//! Face embeddings, cosine matching, false-match-rate calibration and the
//! identity-leakage audit.
//!
//! Matchers are pluggable through [`EmbeddingProvider`]. The crate ships a
//! deterministic [`ToyProvider`] and a [`FileProvider`] that serves vectors
//! computed elsewhere (for example by a real face-recognition network).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Unit-norm feature vector tagged with the provider that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Vec<f64>,
    provider_id: String,
}

impl Embedding {
    /// Normalises `vector` to unit length. A zero vector maps to the first
    /// basis vector `e0`.
    pub fn new(mut vector: Vec<f64>, provider_id: impl Into<String>) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::Provider("embedding must have at least one dimension".into()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Provider("embedding contains non-finite values".into()));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            vector.fill(0.0);
            vector[0] = 1.0;
        } else {
            for v in &mut vector {
                *v /= norm;
            }
        }
        Ok(Self {
            vector,
            provider_id: provider_id.into(),
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Source of embeddings. `source` is the on-disk path of the image when it
/// has one; file-backed providers key on it.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, image: &Image, source: Option<&Path>) -> Result<Embedding>;
}

pub const TOY_PROVIDER_ID: &str = "toy-gray16";
pub const TOY_GRID: usize = 16;

/// 16×16 box-downsampled luma, mean-subtracted and L2-normalised (256-d).
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyProvider;

impl EmbeddingProvider for ToyProvider {
    fn id(&self) -> &str {
        TOY_PROVIDER_ID
    }

    fn embed(&self, image: &Image, _source: Option<&Path>) -> Result<Embedding> {
        let (h, w, _) = image.shape();
        if h % TOY_GRID != 0 || w % TOY_GRID != 0 {
            return Err(Error::Provider(format!(
                "toy provider needs sides divisible by {TOY_GRID}, got {h}x{w}"
            )));
        }
        let gray = image.to_gray();
        let (bh, bw) = (h / TOY_GRID, w / TOY_GRID);
        let mut cells = vec![0.0; TOY_GRID * TOY_GRID];
        for y in 0..h {
            for x in 0..w {
                cells[(y / bh) * TOY_GRID + x / bw] += gray.get(y, x, 0);
            }
        }
        let area = (bh * bw) as f64;
        for c in &mut cells {
            *c /= area;
        }
        let mean = cells.iter().sum::<f64>() / cells.len() as f64;
        for c in &mut cells {
            *c -= mean;
        }
        Embedding::new(cells, TOY_PROVIDER_ID)
    }
}

/// Precomputed embeddings keyed by image path.
#[derive(Debug, Clone)]
pub struct FileProvider {
    provider_id: String,
    dim: usize,
    table: HashMap<PathBuf, Embedding>,
}

impl FileProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let file = read_embedding_file(path)?;
        let table = file
            .records
            .into_iter()
            .map(|(p, v)| Ok((p, Embedding::new(v, file.provider_id.clone())?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            provider_id: file.provider_id,
            dim: file.dim,
            table,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn embeddings(&self) -> impl Iterator<Item = (&PathBuf, &Embedding)> {
        self.table.iter()
    }
}

impl EmbeddingProvider for FileProvider {
    fn id(&self) -> &str {
        &self.provider_id
    }

    fn embed(&self, _image: &Image, source: Option<&Path>) -> Result<Embedding> {
        let source = source.ok_or_else(|| {
            Error::Provider(format!("provider `{}` needs an image path to look up", self.provider_id))
        })?;
        self.table
            .get(source)
            .cloned()
            .ok_or_else(|| Error::Provider(format!("no embedding for {}", source.display())))
    }
}

/// Cosine similarity of two unit embeddings from the same provider.
pub fn match_score(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.provider_id != b.provider_id {
        return Err(Error::Provider(format!(
            "cannot compare `{}` with `{}` embeddings",
            a.provider_id, b.provider_id
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::Provider(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    Ok(a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum())
}

/// Decision threshold calibrated on impostor comparisons.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MatchThreshold {
    pub tau: f64,
    pub fmr_target: f64,
    pub impostor_count: usize,
    pub provider_id: String,
}

impl MatchThreshold {
    /// A comparison is a match when its score is strictly above `tau`.
    pub fn accepts(&self, score: f64) -> bool {
        score > self.tau
    }
}

/// Margin below the lowest impostor score used when every score is admitted.
const ADMIT_ALL_MARGIN: f64 = 1e-9;

/// Smallest observed impostor score `τ` whose strict exceedance rate is at
/// most `fmr`. At `fmr = 1` the threshold sits just below the minimum.
pub fn calibrate_threshold(impostor_scores: &[f64], fmr: f64, provider_id: &str) -> Result<MatchThreshold> {
    if impostor_scores.is_empty() {
        return Err(Error::Calibration("no impostor scores to calibrate on".into()));
    }
    if !(fmr > 0.0 && fmr <= 1.0) {
        return Err(Error::Calibration(format!("fmr {fmr} outside (0, 1]")));
    }
    if impostor_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Calibration("impostor scores contain non-finite values".into()));
    }
    let n = impostor_scores.len();
    let mut sorted = impostor_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let allowed = (fmr * n as f64 + 1e-9).floor() as usize;
    let tau = if allowed >= n {
        sorted[n - 1] - ADMIT_ALL_MARGIN
    } else {
        sorted[allowed]
    };
    Ok(MatchThreshold {
        tau,
        fmr_target: fmr,
        impostor_count: n,
        provider_id: provider_id.to_string(),
    })
}

/// Fraction of `scores` strictly above `tau`.
pub fn achieved_fmr(scores: &[f64], tau: f64) -> f64 {
    scores.iter().filter(|s| **s > tau).count() as f64 / scores.len() as f64
}

/// Mean of the top `n%` cross-set similarity scores, per requested percent.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LeakageRow {
    pub percent: f64,
    pub count: usize,
    pub mean_score: f64,
}

pub const DEFAULT_LEAKAGE_PERCENTS: [f64; 3] = [0.1, 1.0, 5.0];

pub fn leakage_audit(train: &[Embedding], test: &[Embedding], percents: &[f64]) -> Result<Vec<LeakageRow>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Audit("both embedding sets must be nonempty".into()));
    }
    if let Some(p) = percents.iter().find(|p| !(**p > 0.0 && **p <= 100.0)) {
        return Err(Error::Audit(format!("percent {p} outside (0, 100]")));
    }
    let mut scores = Vec::with_capacity(train.len() * test.len());
    for a in test {
        for b in train {
            scores.push(match_score(a, b)?);
        }
    }
    scores.sort_by(|a, b| b.total_cmp(a));
    Ok(percents
        .iter()
        .map(|&p| {
            let count = ((p / 100.0 * scores.len() as f64).ceil() as usize).clamp(1, scores.len());
            let mean_score = scores[..count].iter().sum::<f64>() / count as f64;
            LeakageRow {
                percent: p,
                count,
                mean_score,
            }
        })
        .collect())
}

const EMBEDDING_MAGIC: &[u8; 4] = b"DMEB";
const EMBEDDING_VERSION: u32 = 1;

/// Contents of an embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub provider_id: String,
    pub dim: usize,
    pub records: Vec<(PathBuf, Vec<f64>)>,
}

/// Layout (little-endian): magic `DMEB`, `u32` version, `u32`-prefixed
/// provider id, `u32` dimension, `u32` count, then per record a
/// `u32`-prefixed UTF-8 path and `dimension` `f32` values.
pub fn write_embedding_file(path: &Path, file: &EmbeddingFile) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io);
    put(EMBEDDING_MAGIC)?;
    put(&EMBEDDING_VERSION.to_le_bytes())?;
    put(&(file.provider_id.len() as u32).to_le_bytes())?;
    put(file.provider_id.as_bytes())?;
    put(&(file.dim as u32).to_le_bytes())?;
    put(&(file.records.len() as u32).to_le_bytes())?;
    for (p, v) in &file.records {
        if v.len() != file.dim {
            return Err(Error::Format(format!(
                "record {} has {} values, header says {}",
                p.display(),
                v.len(),
                file.dim
            )));
        }
        let s = p.to_str().ok_or_else(|| Error::Format(format!("non-UTF-8 path {}", p.display())))?;
        put(&(s.len() as u32).to_le_bytes())?;
        put(s.as_bytes())?;
        for x in v {
            put(&(*x as f32).to_le_bytes())?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingFile> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let bad = |reason: &str| Error::Parse {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != EMBEDDING_MAGIC {
        return Err(bad("not an embedding file"));
    }
    let u32_at = |r: &mut BufReader<File>| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
        Ok(u32::from_le_bytes(b))
    };
    let version = u32_at(&mut r)?;
    if version != EMBEDDING_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let id_len = u32_at(&mut r)? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id).map_err(|_| bad("truncated provider id"))?;
    let provider_id = String::from_utf8(id).map_err(|_| bad("provider id is not UTF-8"))?;
    let dim = u32_at(&mut r)? as usize;
    let count = u32_at(&mut r)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(&mut r)? as usize;
        let mut p = vec![0u8; len];
        r.read_exact(&mut p).map_err(|_| bad("truncated path"))?;
        let p = String::from_utf8(p).map_err(|_| bad("path is not UTF-8"))?;
        let mut raw = vec![0u8; 4 * dim];
        r.read_exact(&mut raw).map_err(|_| bad("truncated vector"))?;
        let v = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        records.push((PathBuf::from(p), v));
    }
    Ok(EmbeddingFile {
        provider_id,
        dim,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
        let v = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        Embedding::new(v, "test").unwrap()
    }

    fn basis(i: usize, dim: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Embedding::new(v, "test").unwrap()
    }

    #[test]
    fn toy_embedding_is_deterministic_and_unit() {
        let img = Image::from_fn(64, 64, 3, |y, x, c| ((x * y + c) % 17) as f64 / 16.0).unwrap();
        let a = ToyProvider.embed(&img, None).unwrap();
        let b = ToyProvider.embed(&img, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 256);
        let norm: f64 = a.vector().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn toy_constant_image_falls_back_to_e0() {
        let img = Image::filled(32, 32, 3, 0.4).unwrap();
        let e = ToyProvider.embed(&img, None).unwrap();
        assert_eq!(e.vector()[0], 1.0);
        assert!(e.vector()[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn toy_rejects_indivisible_shapes() {
        let img = Image::filled(20, 32, 1, 0.4).unwrap();
        assert!(matches!(ToyProvider.embed(&img, None), Err(Error::Provider(_))));
    }

    #[test]
    fn match_score_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_unit(&mut rng, 32);
        assert!((match_score(&e, &e).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(match_score(&basis(0, 8), &basis(3, 8)).unwrap(), 0.0);
        for _ in 0..20 {
            let (a, b) = (random_unit(&mut rng, 16), random_unit(&mut rng, 16));
            let mut brute = 0.0;
            for i in 0..16 {
                brute += a.vector()[i] * b.vector()[i];
            }
            assert!((match_score(&a, &b).unwrap() - brute).abs() < 1e-12);
            assert_eq!(match_score(&a, &b).unwrap(), match_score(&b, &a).unwrap());
        }
        let other = Embedding::new(vec![1.0; 32], "other").unwrap();
        assert!(matches!(match_score(&e, &other), Err(Error::Provider(_))));
    }

    #[test]
    fn calibration_worked_examples() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let t = calibrate_threshold(&scores, 0.1, "p").unwrap();
        assert_eq!(t.tau, 0.9);
        assert_eq!(achieved_fmr(&scores, t.tau), 0.1);

        let all = calibrate_threshold(&scores, 1.0, "p").unwrap();
        assert!(all.tau < 0.1);
        assert_eq!(achieved_fmr(&scores, all.tau), 1.0);

        let same = vec![0.37; 12];
        for fmr in [0.001, 0.1, 0.5, 0.99] {
            assert_eq!(calibrate_threshold(&same, fmr, "p").unwrap().tau, 0.37);
        }
        assert!(matches!(calibrate_threshold(&[], 0.1, "p"), Err(Error::Calibration(_))));
        assert!(calibrate_threshold(&scores, 0.0, "p").is_err());
    }

    #[test]
    fn leakage_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let train: Vec<Embedding> = (0..50).map(|_| random_unit(&mut rng, 8)).collect();
        let test = train[..5].to_vec();
        let rows = leakage_audit(&train, &test, &DEFAULT_LEAKAGE_PERCENTS).unwrap();
        assert!((rows[0].mean_score - 1.0).abs() < 1e-12);
        assert!(rows[0].mean_score >= rows[1].mean_score && rows[1].mean_score >= rows[2].mean_score);

        let a: Vec<Embedding> = (0..4).map(|i| basis(i, 8)).collect();
        let b: Vec<Embedding> = (4..8).map(|i| basis(i, 8)).collect();
        for row in leakage_audit(&a, &b, &DEFAULT_LEAKAGE_PERCENTS).unwrap() {
            assert_eq!(row.mean_score, 0.0);
            assert_eq!(row.count, 1);
        }
        assert!(matches!(leakage_audit(&[], &b, &[1.0]), Err(Error::Audit(_))));
    }

    #[test]
    fn embedding_file_round_trip_and_provider() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let file = EmbeddingFile {
            provider_id: "arcface-ext".into(),
            dim: 3,
            records: vec![
                (PathBuf::from("a.png"), vec![1.0, 0.0, 0.0]),
                (PathBuf::from("b/c.png"), vec![0.0, 0.5, 0.5]),
            ],
        };
        write_embedding_file(&path, &file).unwrap();
        assert_eq!(read_embedding_file(&path).unwrap(), file);
        let provider = FileProvider::load(&path).unwrap();
        assert_eq!(provider.id(), "arcface-ext");
        let img = Image::filled(4, 4, 1, 0.0).unwrap();
        let e = provider.embed(&img, Some(Path::new("b/c.png"))).unwrap();
        assert!((e.vector()[1] - 0.5f64.sqrt()).abs() < 1e-7);
        assert!(provider.embed(&img, Some(Path::new("zzz.png"))).is_err());
        assert!(provider.embed(&img, None).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn calibration_monotone_and_bounded(
                scores in prop::collection::vec(-1.0f64..1.0, 1..200),
                f1 in 0.001f64..1.0,
                f2 in 0.001f64..1.0,
            ) {
                let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
                let t_lo = calibrate_threshold(&scores, lo, "p").unwrap();
                let t_hi = calibrate_threshold(&scores, hi, "p").unwrap();
                prop_assert!(t_lo.tau >= t_hi.tau);
                prop_assert!(achieved_fmr(&scores, t_lo.tau) <= lo + 1e-9);
                prop_assert!(achieved_fmr(&scores, t_hi.tau) <= hi + 1e-9);
            }
        }
    }
}
