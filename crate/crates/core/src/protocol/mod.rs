//! Identity registries, the three train/test scenarios, pair sampling, morph
//! manifests and the toy-face corpus.

pub mod toyface;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::morphing::{self, LandmarkRecord, Landmarks};
use crate::seeding;
use toyface::ToyFaceParams;

pub const GENERATOR_VERSION: &str = concat!("demorph-toyfaces/", env!("CARGO_PKG_VERSION"));
pub const REGISTRY_FILE: &str = "registry.json";
pub const LANDMARK_FILE: &str = "landmarks.txt";
/// Toy resolutions must be multiples of this (codec factor 8, matcher grid 16).
pub const RESOLUTION_STEP: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub identity_id: String,
    pub images: Vec<PathBuf>,
    pub landmarks: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

/// A set of identities whose relative paths resolve against `root`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub generator_version: String,
    pub resolution: usize,
    pub seed: u64,
    pub identities: Vec<IdentityRecord>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Registry {
    pub fn new(resolution: usize, seed: u64, identities: Vec<IdentityRecord>, root: PathBuf) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &identities {
            if r.images.is_empty() {
                return Err(Error::validation("identities", format!("{} has no images", r.identity_id)));
            }
            if !seen.insert(r.identity_id.as_str()) {
                return Err(Error::validation("identities", format!("duplicate identity {}", r.identity_id)));
            }
        }
        Ok(Self {
            generator_version: GENERATOR_VERSION.to_string(),
            resolution,
            seed,
            identities,
            root,
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.identities.iter().map(|r| r.identity_id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&IdentityRecord> {
        self.identities.iter().find(|r| r.identity_id == id)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    /// Loads the first image of `id` with its landmarks.
    pub fn load_face(&self, id: &str) -> Result<(Image, Landmarks)> {
        let rec = self
            .get(id)
            .ok_or_else(|| Error::validation("identity", format!("unknown identity {id}")))?;
        let image_path = self.resolve(&rec.images[0]);
        let image = Image::load_png(&image_path)?;
        let lm_path = self.resolve(&rec.landmarks);
        let records = morphing::read_landmark_file(&lm_path)?;
        let entry = records
            .iter()
            .find(|r| r.image == rec.images[0])
            .ok_or_else(|| Error::Parse {
                path: lm_path.clone(),
                reason: format!("no landmarks for {}", rec.images[0].display()),
            })?;
        let (h, w, _) = image.shape();
        Ok((image, entry.landmarks(h, w)?))
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(REGISTRY_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads a registry file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reg: Registry = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        reg.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(reg)
    }
}

pub fn identity_name(index: usize) -> String {
    format!("id_{index:05}")
}

/// Seed of the `index`-th toy identity of a corpus generated with `seed`.
pub fn toy_identity_seed(seed: u64, index: usize) -> u64 {
    seeding::derive_seed(seed, index as u64)
}

pub fn check_toy_resolution(resolution: usize) -> Result<()> {
    if resolution == 0 || !resolution.is_multiple_of(RESOLUTION_STEP) {
        return Err(Error::validation(
            "resolution",
            format!("must be a positive multiple of {RESOLUTION_STEP}, got {resolution}"),
        ));
    }
    Ok(())
}

/// Renders the `index`-th face of a toy corpus without touching the disk.
pub fn toy_face(seed: u64, index: usize, resolution: usize) -> Result<(Image, Landmarks)> {
    check_toy_resolution(resolution)?;
    let params = ToyFaceParams::from_seed(toy_identity_seed(seed, index));
    Ok((params.render(resolution)?, params.landmarks(resolution)?))
}

/// Writes `count` toy identities (one PNG each, a shared landmark file and
/// `registry.json`) into `out_dir`.
pub fn gen_toy_faces(count: usize, resolution: usize, seed: u64, out_dir: &Path) -> Result<Registry> {
    check_toy_resolution(resolution)?;
    let faces_dir = out_dir.join("faces");
    std::fs::create_dir_all(&faces_dir).map_err(|e| Error::io(&faces_dir, e))?;
    let landmarks: Vec<LandmarkRecord> = (0..count)
        .into_par_iter()
        .map(|i| {
            let (image, lm) = toy_face(seed, i, resolution)?;
            let rel = PathBuf::from("faces").join(format!("{}.png", identity_name(i)));
            image.save_png(out_dir.join(&rel))?;
            Ok(LandmarkRecord {
                image: rel,
                points: lm.points().to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    morphing::write_landmark_file(&out_dir.join(LANDMARK_FILE), &landmarks)?;
    let identities = landmarks
        .iter()
        .enumerate()
        .map(|(i, r)| IdentityRecord {
            identity_id: identity_name(i),
            images: vec![r.image.clone()],
            landmarks: PathBuf::from(LANDMARK_FILE),
            split: None,
        })
        .collect();
    let reg = Registry::new(resolution, seed, identities, out_dir.to_path_buf())?;
    reg.save(out_dir)?;
    Ok(reg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scenario {
    /// Shared identity pool; no pair of identities is used on both sides.
    SharedIdentities = 1,
    /// Train pairs inside half Y1; test pairs take one identity from each half.
    PartiallyUnseen = 2,
    /// Train pairs inside Y1, test pairs inside Y2.
    Disjoint = 3,
}

impl TryFrom<u8> for Scenario {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Scenario::SharedIdentities),
            2 => Ok(Scenario::PartiallyUnseen),
            3 => Ok(Scenario::Disjoint),
            _ => Err(Error::validation("scenario", format!("must be 1, 2 or 3, got {v}"))),
        }
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s as u8
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Train => "train",
            Side::Test => "test",
        })
    }
}

/// Unordered identity pair stored with `a < b`.
pub type Pair = (String, String);

fn canonical(a: &str, b: &str) -> Pair {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Result of [`make_scenario_split`]. `train_ids` and `test_ids` list the
/// identities each side may draw from; [`ScenarioSplit::admits`] is the full
/// pair constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSplit {
    pub scenario: Scenario,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// First half of the pool for scenarios 2 and 3, empty for scenario 1.
    pub y1: Vec<String>,
    /// Second half of the pool for scenarios 2 and 3, empty for scenario 1.
    pub y2: Vec<String>,
}

/// Fraction of all pairs reserved for testing in scenario 1.
const SHARED_TEST_BUCKETS: u64 = 4;

impl ScenarioSplit {
    fn in_set(set: &[String], id: &str) -> bool {
        set.binary_search_by(|s| s.as_str().cmp(id)).is_ok()
    }

    /// Scenario 1 assigns each unordered pair to one side by a seeded hash.
    fn shared_pair_is_test(&self, a: &str, b: &str) -> bool {
        let (a, b) = canonical(a, b);
        let mut h = self.seed;
        for byte in a.bytes().chain([0u8]).chain(b.bytes()) {
            h = seeding::derive_seed(h, byte as u64);
        }
        h.is_multiple_of(SHARED_TEST_BUCKETS)
    }

    /// Whether the pair `(a, b)` may be used on `side`.
    pub fn admits(&self, side: Side, a: &str, b: &str) -> bool {
        if a == b {
            return false;
        }
        match (self.scenario, side) {
            (Scenario::SharedIdentities, side) => {
                Self::in_set(&self.train_ids, a)
                    && Self::in_set(&self.train_ids, b)
                    && self.shared_pair_is_test(a, b) == (side == Side::Test)
            }
            (_, Side::Train) => Self::in_set(&self.y1, a) && Self::in_set(&self.y1, b),
            (Scenario::PartiallyUnseen, Side::Test) => {
                Self::in_set(&self.y1, a) != Self::in_set(&self.y1, b)
                    && Self::in_set(&self.test_ids, a)
                    && Self::in_set(&self.test_ids, b)
            }
            (Scenario::Disjoint, Side::Test) => Self::in_set(&self.y2, a) && Self::in_set(&self.y2, b),
        }
    }

    pub fn ids(&self, side: Side) -> &[String] {
        match side {
            Side::Train => &self.train_ids,
            Side::Test => &self.test_ids,
        }
    }

    /// Every admissible pair for `side`, sorted.
    pub fn legal_pairs(&self, side: Side) -> Vec<Pair> {
        let ids = self.ids(side);
        let mut out = Vec::new();
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                if self.admits(side, a, b) {
                    out.push(canonical(a, b));
                }
            }
        }
        out
    }
}

pub const MIN_SPLIT_IDENTITIES: usize = 4;

/// Partitions `identities` for the given scenario. The result depends only
/// on the identity set and the seed, not on input order.
pub fn make_scenario_split(identities: &[String], scenario: Scenario, seed: u64) -> Result<ScenarioSplit> {
    let pool: BTreeSet<&String> = identities.iter().collect();
    if pool.len() != identities.len() {
        return Err(Error::Split("identity list contains duplicates".into()));
    }
    if pool.len() < MIN_SPLIT_IDENTITIES {
        return Err(Error::Split(format!(
            "need at least {MIN_SPLIT_IDENTITIES} identities, got {}",
            pool.len()
        )));
    }
    let sorted: Vec<String> = pool.into_iter().cloned().collect();
    if scenario == Scenario::SharedIdentities {
        return Ok(ScenarioSplit {
            scenario,
            seed,
            train_ids: sorted.clone(),
            test_ids: sorted,
            y1: Vec::new(),
            y2: Vec::new(),
        });
    }
    let mut shuffled = sorted.clone();
    shuffled.shuffle(&mut seeding::rng(seed, 0x7370_6c69));
    let half = shuffled.len() / 2;
    let mut y1 = shuffled[..half].to_vec();
    let mut y2 = shuffled[half..].to_vec();
    y1.sort();
    y2.sort();
    let test_ids = match scenario {
        Scenario::PartiallyUnseen => sorted,
        _ => y2.clone(),
    };
    Ok(ScenarioSplit {
        scenario,
        seed,
        train_ids: y1.clone(),
        test_ids,
        y1,
        y2,
    })
}

/// Draws `count` distinct admissible pairs uniformly without replacement.
pub fn sample_pairs(split: &ScenarioSplit, side: Side, count: usize, seed: u64) -> Result<Vec<Pair>> {
    let mut legal = split.legal_pairs(side);
    if count > legal.len() {
        return Err(Error::Sampling {
            requested: count,
            max: legal.len(),
        });
    }
    let mut rng = seeding::rng(seed, side as u64 + 1);
    let (chosen, _) = legal.partial_shuffle(&mut rng, count);
    Ok(chosen.to_vec())
}

/// Sampled pairs for both sides plus the split they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPlan {
    pub registry: PathBuf,
    pub split: ScenarioSplit,
    pub train: Vec<Pair>,
    pub test: Vec<Pair>,
}

impl PairPlan {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub morph_path: PathBuf,
    pub id_a: String,
    pub id_b: String,
    pub image_a: PathBuf,
    pub image_b: PathBuf,
    pub landmarks: PathBuf,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    scenario: Scenario,
    side: Side,
    generator_version: String,
}

/// Morph dataset description. On disk: a header object on the first line,
/// then one record object per line. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub scenario: Scenario,
    pub side: Side,
    pub generator_version: String,
    pub records: Vec<ManifestRecord>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let header = ManifestHeader {
            scenario: self.scenario,
            side: self.side,
            generator_version: self.generator_version.clone(),
        };
        let enc = |e: serde_json::Error| Error::Format(e.to_string());
        let mut out = serde_json::to_string(&header).map_err(enc)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).map_err(enc)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: origin.to_path_buf(),
            reason: format!("line {line}: {reason}"),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let header: ManifestHeader = serde_json::from_str(first).map_err(|e| err(1, e.to_string()))?;
        let records = lines
            .map(|(i, l)| {
                let r: ManifestRecord = serde_json::from_str(l).map_err(|e| err(i + 1, e.to_string()))?;
                if r.id_a == r.id_b {
                    return Err(err(i + 1, format!("self-pair {}", r.id_a)));
                }
                Ok(r)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            scenario: header.scenario,
            side: header.side,
            generator_version: header.generator_version,
            records,
            root: origin.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    /// Checks the pair invariant and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if r.id_a == r.id_b {
                return Err(Error::validation("manifest", format!("self-pair {}", r.id_a)));
            }
            for p in [&r.morph_path, &r.image_a, &r.image_b, &r.landmarks] {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by manifest"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Relative path from `base` to `target` when `target` lies under `base`,
/// falling back to `../` hops for siblings.
fn relative_to(target: &Path, base: &Path) -> PathBuf {
    let t: Vec<_> = target.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c);
    }
    out
}

/// Generates one morph per pair and writes the PNGs, a morph landmark file and
/// `<side>.jsonl` into `out_dir`. Output is byte-identical for a fixed seed.
pub fn build_morph_dataset(
    registry: &Registry,
    pairs: &[Pair],
    alpha: f64,
    scenario: Scenario,
    side: Side,
    out_dir: &Path,
    seed: u64,
) -> Result<Manifest> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::validation("alpha", format!("must lie in [0, 1], got {alpha}")));
    }
    for (a, b) in pairs {
        if a == b {
            return Err(Error::validation("pairs", format!("self-pair {a}")));
        }
    }
    let morph_dir = out_dir.join(format!("{side}_morphs"));
    std::fs::create_dir_all(&morph_dir).map_err(|e| Error::io(&morph_dir, e))?;
    let out_abs = std::path::absolute(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let needed: BTreeSet<&String> = pairs.iter().flat_map(|(a, b)| [a, b]).collect();
    let faces: HashMap<&String, (Image, Landmarks)> = needed
        .into_par_iter()
        .map(|id| Ok((id, registry.load_face(id)?)))
        .collect::<Result<_>>()?;

    let landmark_rel = PathBuf::from(format!("{side}_landmarks.txt"));
    let outputs: Vec<(ManifestRecord, LandmarkRecord)> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, (a, b))| {
            let (ia, la) = &faces[a];
            let (ib, lb) = &faces[b];
            let (m, lm) = morphing::morph(ia, la, ib, lb, alpha)?;
            let rel = PathBuf::from(format!("{side}_morphs")).join(format!("m{k:05}_{a}_{b}.png"));
            m.save_png(out_dir.join(&rel))?;
            let image_of = |id: &String| -> Result<PathBuf> {
                let rec = registry.get(id).expect("loaded above");
                let abs = std::path::absolute(registry.resolve(&rec.images[0]))
                    .map_err(|e| Error::io(&rec.images[0], e))?;
                Ok(relative_to(&abs, &out_abs))
            };
            Ok((
                ManifestRecord {
                    morph_path: rel.clone(),
                    id_a: a.clone(),
                    id_b: b.clone(),
                    image_a: image_of(a)?,
                    image_b: image_of(b)?,
                    landmarks: landmark_rel.clone(),
                    alpha,
                    seed: seeding::derive_seed(seed, k as u64),
                },
                LandmarkRecord {
                    image: rel,
                    points: lm.points().to_vec(),
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (records, lm_records): (Vec<_>, Vec<_>) = outputs.into_iter().unzip();
    morphing::write_landmark_file(&out_dir.join(&landmark_rel), &lm_records)?;
    let manifest = Manifest {
        scenario,
        side,
        generator_version: GENERATOR_VERSION.to_string(),
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join(format!("{side}.jsonl")))?;
    Ok(manifest)
}
