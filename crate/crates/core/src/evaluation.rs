//! Demorphing metrics: separation and restoration constraints, restoration
//! accuracy and TMR at calibrated thresholds, biometrically weighted image
//! quality, the morph-replication diagnostic and report assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biometric::{calibrate_threshold, match_score, Embedding, EmbeddingProvider, MatchThreshold};
use crate::demorpher::{demorph_batch, DemorphCheckpoint};
use crate::error::{Error, Result};
use crate::imaging::{psnr, ssim, Image};
use crate::latentcodec::Compressor;
use crate::protocol::Manifest;

/// SSIM above which two outputs count as a copy of each other.
pub const REPLICATION_DELTA: f64 = 0.98;
pub const DEFAULT_FMR_TARGETS: [f64; 3] = [0.1, 0.01, 0.001];
/// FMR whose threshold is the default restoration bound `ε`.
pub const EPSILON_FMR: f64 = 0.01;
/// Impostor exceedance rate whose threshold is the default separation bound `θ`.
pub const THETA_FMR: f64 = 0.05;

/// Embeddings of the five images involved in one demorphing.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultEmbeddings {
    pub morph: Embedding,
    pub outputs: (Embedding, Embedding),
    pub truths: (Embedding, Embedding),
}

impl ResultEmbeddings {
    pub fn provider_id(&self) -> &str {
        self.morph.provider_id()
    }

    fn check_provider(&self) -> Result<()> {
        let id = self.provider_id();
        let all = [&self.outputs.0, &self.outputs.1, &self.truths.0, &self.truths.1];
        match all.iter().find(|e| e.provider_id() != id) {
            Some(e) => Err(Error::Provider(format!(
                "result mixes `{id}` and `{}` embeddings",
                e.provider_id()
            ))),
            None => Ok(()),
        }
    }
}

/// One demorphed morph together with its ground truth.
#[derive(Debug, Clone)]
pub struct DemorphResult {
    pub morph_id: String,
    pub morph: Image,
    pub outputs: (Image, Image),
    pub ground_truths: (Image, Image),
    pub embeddings: ResultEmbeddings,
}

impl DemorphResult {
    pub fn new(
        morph_id: impl Into<String>,
        morph: Image,
        outputs: (Image, Image),
        ground_truths: (Image, Image),
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self> {
        let embeddings = ResultEmbeddings {
            morph: provider.embed(&morph, None)?,
            outputs: (provider.embed(&outputs.0, None)?, provider.embed(&outputs.1, None)?),
            truths: (
                provider.embed(&ground_truths.0, None)?,
                provider.embed(&ground_truths.1, None)?,
            ),
        };
        Ok(Self {
            morph_id: morph_id.into(),
            morph,
            outputs,
            ground_truths,
            embeddings,
        })
    }

    /// The same result with the stored ground-truth order reversed.
    pub fn with_truths_swapped(&self) -> Self {
        let mut r = self.clone();
        std::mem::swap(&mut r.ground_truths.0, &mut r.ground_truths.1);
        std::mem::swap(&mut r.embeddings.truths.0, &mut r.embeddings.truths.1);
        r
    }

    /// `[[B(o1,i1), B(o1,i2)], [B(o2,i1), B(o2,i2)]]`.
    pub fn cross_scores(&self) -> Result<[[f64; 2]; 2]> {
        let e = &self.embeddings;
        e.check_provider()?;
        let (o, i) = (&e.outputs, &e.truths);
        Ok([
            [match_score(&o.0, &i.0)?, match_score(&o.0, &i.1)?],
            [match_score(&o.1, &i.0)?, match_score(&o.1, &i.1)?],
        ])
    }
}

/// `B(o1, o2) < θ`: the outputs look like different people.
pub fn check_separation(r: &DemorphResult, theta: f64) -> Result<bool> {
    r.embeddings.check_provider()?;
    Ok(match_score(&r.embeddings.outputs.0, &r.embeddings.outputs.1)? < theta)
}

/// `min_j max_k B(o_j, i_k) > ε`: every output resembles some ground truth.
pub fn check_restoration(r: &DemorphResult, epsilon: f64) -> Result<bool> {
    let s = r.cross_scores()?;
    Ok(s[0][0].max(s[0][1]).min(s[1][0].max(s[1][1])) > epsilon)
}

/// Output-to-truth assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// `o1 ↔ i1`, `o2 ↔ i2`.
    Identity,
    /// `o1 ↔ i2`, `o2 ↔ i1`.
    Crossed,
}

impl Pairing {
    /// Truth index assigned to output `j`.
    pub fn truth_of(self, j: usize) -> usize {
        match self {
            Pairing::Identity => j,
            Pairing::Crossed => 1 - j,
        }
    }
}

/// The pairing with the larger score sum, and its two genuine scores in
/// output order. A tied sum is broken by the larger minimum score.
pub fn assign(r: &DemorphResult) -> Result<(Pairing, [f64; 2])> {
    let s = r.cross_scores()?;
    let ident = [s[0][0], s[1][1]];
    let cross = [s[0][1], s[1][0]];
    let key = |p: [f64; 2]| (p[0] + p[1], p[0].min(p[1]));
    let (ks, kc) = (key(ident), key(cross));
    let take_cross = kc.0 > ks.0 || (kc.0 == ks.0 && kc.1 > ks.1);
    Ok(if take_cross {
        (Pairing::Crossed, cross)
    } else {
        (Pairing::Identity, ident)
    })
}

fn check_tau(results: &[DemorphResult], tau: &MatchThreshold) -> Result<()> {
    if results.is_empty() {
        return Err(Error::validation("results", "need at least one demorphed morph"));
    }
    for r in results {
        if r.embeddings.provider_id() != tau.provider_id {
            return Err(Error::Provider(format!(
                "threshold calibrated for `{}`, results embedded with `{}`",
                tau.provider_id,
                r.embeddings.provider_id()
            )));
        }
    }
    Ok(())
}

/// Fraction of morphs whose two assigned genuine scores both exceed `τ`.
pub fn restoration_accuracy(results: &[DemorphResult], tau: &MatchThreshold) -> Result<f64> {
    check_tau(results, tau)?;
    let mut restored = 0usize;
    for r in results {
        let (_, s) = assign(r)?;
        if tau.accepts(s[0]) && tau.accepts(s[1]) {
            restored += 1;
        }
    }
    Ok(restored as f64 / results.len() as f64)
}

/// Fraction of the individual assigned genuine comparisons above `τ`.
pub fn tmr_at_fmr(results: &[DemorphResult], tau: &MatchThreshold) -> Result<f64> {
    check_tau(results, tau)?;
    let mut hits = 0usize;
    for r in results {
        let (_, s) = assign(r)?;
        hits += s.iter().filter(|v| tau.accepts(**v)).count();
    }
    Ok(hits as f64 / (2 * results.len()) as f64)
}

/// Image-quality measure weighted by match scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Iqa {
    Ssim,
    Psnr,
}

impl Iqa {
    pub fn measure(self, a: &Image, b: &Image) -> Result<f64> {
        match self {
            Iqa::Ssim => ssim(a, b),
            Iqa::Psnr => psnr(a, b),
        }
    }
}

/// Max over the two pairings of `Σ_j clamp(B(o_j, i_k), 0, 1) · iqa(o_j, i_k)`.
pub fn bw_iqa(r: &DemorphResult, iqa: Iqa) -> Result<f64> {
    let s = r.cross_scores()?;
    let (o, i) = (&r.outputs, &r.ground_truths);
    let q = [
        [iqa.measure(&o.0, &i.0)?, iqa.measure(&o.0, &i.1)?],
        [iqa.measure(&o.1, &i.0)?, iqa.measure(&o.1, &i.1)?],
    ];
    Ok(bw_from(&s, &q))
}

fn bw_from(s: &[[f64; 2]; 2], q: &[[f64; 2]; 2]) -> f64 {
    let w = |v: f64| v.clamp(0.0, 1.0);
    let ident = w(s[0][0]) * q[0][0] + w(s[1][1]) * q[1][1];
    let cross = w(s[0][1]) * q[0][1] + w(s[1][0]) * q[1][0];
    // adding zero folds a signed zero so the result ignores pairing order
    ident.max(cross) + 0.0
}

/// Mean of [`bw_iqa`] over morphs.
pub fn bw_dataset(results: &[DemorphResult], iqa: Iqa) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::validation("results", "need at least one demorphed morph"));
    }
    let mut sum = 0.0;
    for r in results {
        sum += bw_iqa(r, iqa)?;
    }
    Ok(sum / results.len() as f64)
}

/// `ssim(o1, o2) > δ` and `ssim(o1, x) > δ`: the morph came back twice.
pub fn is_replication(r: &DemorphResult, delta: f64) -> Result<bool> {
    Ok(ssim(&r.outputs.0, &r.outputs.1)? > delta && ssim(&r.outputs.0, &r.morph)? > delta)
}

pub fn replication_rate(results: &[DemorphResult], delta: f64) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::validation("results", "need at least one demorphed morph"));
    }
    let mut n = 0usize;
    for r in results {
        if is_replication(r, delta)? {
            n += 1;
        }
    }
    Ok(n as f64 / results.len() as f64)
}

/// Anything that turns a morph into two face images. Stubs see the ground
/// truth; real models must ignore it.
pub trait Demorpher: Sync {
    fn name(&self) -> String;
    fn demorph_batch(&self, morphs: &[&Image], truths: &[(&Image, &Image)]) -> Result<Vec<(Image, Image)>>;
}

/// A trained checkpoint with its codec.
pub struct TrainedDemorpher<'a> {
    pub codec: &'a dyn Compressor,
    pub ckpt: &'a DemorphCheckpoint,
}

impl Demorpher for TrainedDemorpher<'_> {
    fn name(&self) -> String {
        format!("demorpher:{}", &self.ckpt.weights_hash()[..12])
    }

    fn demorph_batch(&self, morphs: &[&Image], _truths: &[(&Image, &Image)]) -> Result<Vec<(Image, Image)>> {
        demorph_batch(morphs, self.codec, self.ckpt)
    }
}

/// Returns the two ground-truth images.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthStub;

impl Demorpher for GroundTruthStub {
    fn name(&self) -> String {
        "stub:ground-truth".into()
    }

    fn demorph_batch(&self, _morphs: &[&Image], truths: &[(&Image, &Image)]) -> Result<Vec<(Image, Image)>> {
        Ok(truths.iter().map(|(a, b)| ((*a).clone(), (*b).clone())).collect())
    }
}

/// Returns the morph as both outputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReplicationStub;

impl Demorpher for ReplicationStub {
    fn name(&self) -> String {
        "stub:replication".into()
    }

    fn demorph_batch(&self, morphs: &[&Image], _truths: &[(&Image, &Image)]) -> Result<Vec<(Image, Image)>> {
        Ok(morphs.iter().map(|m| ((*m).clone(), (*m).clone())).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub fmr: f64,
    pub tau: f64,
    pub impostor_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowScores {
    pub o1_i1: f64,
    pub o1_i2: f64,
    pub o2_i1: f64,
    pub o2_i2: f64,
    pub o1_o2: f64,
}

/// Per-morph values; every aggregate is the mean of one of these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub morph_id: String,
    pub pairing: Pairing,
    /// Mean PSNR of the outputs against their assigned truths.
    pub psnr: f64,
    /// Mean SSIM of the outputs against their assigned truths.
    pub ssim: f64,
    pub scores: RowScores,
    pub bw_ssim: f64,
    pub bw_psnr: f64,
    pub replicated: bool,
    pub separated: bool,
    pub restoration_constraint: bool,
    /// Keyed by FMR target.
    pub restored: BTreeMap<String, bool>,
    /// Fraction of the two assigned comparisons above τ, keyed by FMR target.
    pub tmr: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub psnr: f64,
    pub ssim: f64,
    pub restoration_accuracy: BTreeMap<String, f64>,
    pub tmr: BTreeMap<String, f64>,
    pub bw_ssim: f64,
    pub bw_psnr: f64,
    pub replication_rate: f64,
    pub separation_rate: f64,
    pub restoration_constraint_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub provider: String,
    pub demorpher: String,
    pub thresholds: Vec<ThresholdEntry>,
    pub theta: f64,
    pub epsilon: f64,
    pub aggregates: Aggregates,
    pub rows: Vec<ReportRow>,
}

/// Key used for an FMR target in report maps.
pub fn fmr_key(fmr: f64) -> String {
    format!("{fmr}")
}

impl EvalReport {
    /// Recomputes every aggregate from the rows.
    pub fn aggregate(rows: &[ReportRow], fmr_targets: &[f64]) -> Aggregates {
        let n = rows.len().max(1) as f64;
        let mean = |f: &dyn Fn(&ReportRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let mut ra = BTreeMap::new();
        let mut tmr = BTreeMap::new();
        for &fmr in fmr_targets {
            let k = fmr_key(fmr);
            ra.insert(k.clone(), mean(&|r| flag(r.restored[&k])));
            tmr.insert(k.clone(), mean(&|r| r.tmr[&k]));
        }
        Aggregates {
            psnr: mean(&|r| r.psnr),
            ssim: mean(&|r| r.ssim),
            restoration_accuracy: ra,
            tmr,
            bw_ssim: mean(&|r| r.bw_ssim),
            bw_psnr: mean(&|r| r.bw_psnr),
            replication_rate: mean(&|r| flag(r.replicated)),
            separation_rate: mean(&|r| flag(r.separated)),
            restoration_constraint_rate: mean(&|r| flag(r.restoration_constraint)),
        }
    }

    pub fn fmr_targets(&self) -> Vec<f64> {
        self.thresholds.iter().map(|t| t.fmr).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Computes one report row.
pub fn report_row(
    r: &DemorphResult,
    thresholds: &[MatchThreshold],
    theta: f64,
    epsilon: f64,
    delta: f64,
) -> Result<ReportRow> {
    let s = r.cross_scores()?;
    let (pairing, genuine) = assign(r)?;
    let outs = [&r.outputs.0, &r.outputs.1];
    let truths = [&r.ground_truths.0, &r.ground_truths.1];
    let mut q_ssim = [[0.0; 2]; 2];
    let mut q_psnr = [[0.0; 2]; 2];
    for j in 0..2 {
        for k in 0..2 {
            q_ssim[j][k] = ssim(outs[j], truths[k])?;
            q_psnr[j][k] = psnr(outs[j], truths[k])?;
        }
    }
    let assigned = |q: &[[f64; 2]; 2]| 0.5 * (q[0][pairing.truth_of(0)] + q[1][pairing.truth_of(1)]);
    let mut restored = BTreeMap::new();
    let mut tmr = BTreeMap::new();
    for t in thresholds {
        let k = fmr_key(t.fmr_target);
        let hits = genuine.iter().filter(|v| t.accepts(**v)).count();
        restored.insert(k.clone(), hits == 2);
        tmr.insert(k, hits as f64 / 2.0);
    }
    let o1_o2 = match_score(&r.embeddings.outputs.0, &r.embeddings.outputs.1)?;
    Ok(ReportRow {
        morph_id: r.morph_id.clone(),
        pairing,
        psnr: assigned(&q_psnr),
        ssim: assigned(&q_ssim),
        scores: RowScores {
            o1_i1: s[0][0],
            o1_i2: s[0][1],
            o2_i1: s[1][0],
            o2_i2: s[1][1],
            o1_o2,
        },
        bw_ssim: bw_from(&s, &q_ssim),
        bw_psnr: bw_from(&s, &q_psnr),
        replicated: is_replication(r, delta)?,
        separated: o1_o2 < theta,
        restoration_constraint: s[0][0].max(s[0][1]).min(s[1][0].max(s[1][1])) > epsilon,
        restored,
        tmr,
    })
}

/// Knobs of [`evaluate_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub fmr_targets: Vec<f64>,
    /// Separation bound; defaults to the impostor threshold at [`THETA_FMR`].
    pub theta: Option<f64>,
    /// Restoration bound; defaults to `τ` at [`EPSILON_FMR`].
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub dataset: Option<String>,
    /// Number of leading results kept for the comparison grid.
    pub keep_results: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            fmr_targets: DEFAULT_FMR_TARGETS.to_vec(),
            theta: None,
            epsilon: None,
            delta: REPLICATION_DELTA,
            dataset: None,
            keep_results: 8,
        }
    }
}

/// Impostor scores between the distinct ground-truth identities of a
/// manifest, in a fixed order.
pub fn gallery_impostor_scores(manifest: &Manifest, provider: &dyn EmbeddingProvider) -> Result<Vec<f64>> {
    let mut gallery: BTreeMap<String, BTreeSet<PathBuf>> = BTreeMap::new();
    for r in &manifest.records {
        gallery.entry(r.id_a.clone()).or_default().insert(r.image_a.clone());
        gallery.entry(r.id_b.clone()).or_default().insert(r.image_b.clone());
    }
    let entries: Vec<(usize, PathBuf)> = gallery
        .values()
        .enumerate()
        .flat_map(|(k, paths)| paths.iter().map(move |p| (k, p.clone())))
        .collect();
    let embeddings: Vec<Embedding> = entries
        .par_iter()
        .map(|(_, p)| {
            let full = manifest.resolve(p);
            provider.embed(&Image::load_png(&full)?, Some(&full))
        })
        .collect::<Result<_>>()?;
    let mut scores = Vec::new();
    for a in 0..entries.len() {
        for b in a + 1..entries.len() {
            if entries[a].0 != entries[b].0 {
                scores.push(match_score(&embeddings[a], &embeddings[b])?);
            }
        }
    }
    if scores.is_empty() {
        return Err(Error::Calibration("manifest has fewer than two identities".into()));
    }
    Ok(scores)
}

/// Full evaluation of a demorpher over a manifest. Also returns the first
/// `opts.keep_results` results for visual inspection.
pub fn evaluate_with(
    manifest: &Manifest,
    demorpher: &dyn Demorpher,
    provider: &dyn EmbeddingProvider,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<DemorphResult>)> {
    if manifest.records.is_empty() {
        return Err(Error::validation("manifest", "contains no morphs"));
    }
    if opts.fmr_targets.is_empty() {
        return Err(Error::validation("fmr", "need at least one FMR target"));
    }
    manifest.validate()?;
    let impostors = gallery_impostor_scores(manifest, provider)?;
    let pid = provider.id();
    let thresholds: Vec<MatchThreshold> = opts
        .fmr_targets
        .iter()
        .map(|&f| calibrate_threshold(&impostors, f, pid))
        .collect::<Result<_>>()?;
    let theta = match opts.theta {
        Some(t) => t,
        None => calibrate_threshold(&impostors, THETA_FMR, pid)?.tau,
    };
    let epsilon = match opts.epsilon {
        Some(e) => e,
        None => calibrate_threshold(&impostors, EPSILON_FMR, pid)?.tau,
    };

    const CHUNK: usize = 32;
    let mut rows = Vec::with_capacity(manifest.records.len());
    let mut kept = Vec::new();
    for recs in manifest.records.chunks(CHUNK) {
        let load = |p: &Path| Image::load_png(manifest.resolve(p));
        let loaded: Vec<(Image, Image, Image)> = recs
            .par_iter()
            .map(|r| Ok((load(&r.morph_path)?, load(&r.image_a)?, load(&r.image_b)?)))
            .collect::<Result<_>>()?;
        let morphs: Vec<&Image> = loaded.iter().map(|t| &t.0).collect();
        let truths: Vec<(&Image, &Image)> = loaded.iter().map(|t| (&t.1, &t.2)).collect();
        let outputs = demorpher.demorph_batch(&morphs, &truths)?;
        if outputs.len() != recs.len() {
            return Err(Error::Config(format!(
                "demorpher returned {} results for {} morphs",
                outputs.len(),
                recs.len()
            )));
        }
        let results: Vec<DemorphResult> = recs
            .par_iter()
            .zip(loaded.into_par_iter().zip(outputs.into_par_iter()))
            .map(|(rec, ((x, a, b), out))| DemorphResult::new(morph_id(rec), x, out, (a, b), provider))
            .collect::<Result<_>>()?;
        let chunk_rows: Vec<ReportRow> = results
            .par_iter()
            .map(|r| report_row(r, &thresholds, theta, epsilon, opts.delta))
            .collect::<Result<_>>()?;
        rows.extend(chunk_rows);
        kept.extend(results.into_iter().take(opts.keep_results.saturating_sub(kept.len())));
    }
    let aggregates = EvalReport::aggregate(&rows, &opts.fmr_targets);
    let report = EvalReport {
        dataset: opts.dataset.clone().unwrap_or_else(|| dataset_label(manifest)),
        provider: pid.to_string(),
        demorpher: demorpher.name(),
        thresholds: thresholds
            .iter()
            .map(|t| ThresholdEntry {
                fmr: t.fmr_target,
                tau: t.tau,
                impostor_count: t.impostor_count,
            })
            .collect(),
        theta,
        epsilon,
        aggregates,
        rows,
    };
    Ok((report, kept))
}

/// [`evaluate_with`] for a trained checkpoint.
pub fn evaluate_dataset(
    manifest: &Manifest,
    codec: &dyn Compressor,
    ckpt: &DemorphCheckpoint,
    provider: &dyn EmbeddingProvider,
    fmr_targets: &[f64],
) -> Result<EvalReport> {
    let opts = EvalOptions {
        fmr_targets: fmr_targets.to_vec(),
        keep_results: 0,
        ..EvalOptions::default()
    };
    Ok(evaluate_with(manifest, &TrainedDemorpher { codec, ckpt }, provider, &opts)?.0)
}

fn morph_id(r: &crate::protocol::ManifestRecord) -> String {
    r.morph_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| r.morph_path.display().to_string())
}

fn dataset_label(m: &Manifest) -> String {
    format!("scenario{}-{}", m.scenario as u8, m.side)
}

/// Gap between grid cells, in pixels.
const GRID_GAP: usize = 2;

/// One row per result: morph, both truths, then both outputs in assigned order.
pub fn comparison_grid(results: &[DemorphResult]) -> Result<Image> {
    let first = results
        .first()
        .ok_or_else(|| Error::validation("results", "need at least one result for the grid"))?;
    let (h, w, c) = first.morph.shape();
    let cols = 5;
    let gh = results.len() * h + (results.len() + 1) * GRID_GAP;
    let gw = cols * w + (cols + 1) * GRID_GAP;
    let mut grid = Image::filled(gh, gw, c, 1.0)?;
    for (ri, r) in results.iter().enumerate() {
        let (pairing, _) = assign(r)?;
        let truths = [&r.ground_truths.0, &r.ground_truths.1];
        let outs = [&r.outputs.0, &r.outputs.1];
        // outputs reordered so each sits under its assigned truth
        let out_for = |k: usize| if pairing.truth_of(0) == k { outs[0] } else { outs[1] };
        let cells = [&r.morph, truths[0], truths[1], out_for(0), out_for(1)];
        for (ci, img) in cells.iter().enumerate() {
            if img.shape() != (h, w, c) {
                return Err(Error::Dimension(format!(
                    "grid cell {:?} differs from {:?}",
                    img.shape(),
                    (h, w, c)
                )));
            }
            let (y0, x0) = (GRID_GAP + ri * (h + GRID_GAP), GRID_GAP + ci * (w + GRID_GAP));
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        grid.set(y0 + y, x0 + x, ch, img.get(y, x, ch));
                    }
                }
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biometric::ToyProvider;
    use crate::protocol::toy_face;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit(v: Vec<f64>) -> Embedding {
        Embedding::new(v, "t").unwrap()
    }

    fn blank() -> Image {
        Image::filled(16, 16, 3, 0.5).unwrap()
    }

    /// A result whose images are all blank and whose embeddings are given.
    fn synthetic(o1: Vec<f64>, o2: Vec<f64>, i1: Vec<f64>, i2: Vec<f64>) -> DemorphResult {
        DemorphResult {
            morph_id: "m".into(),
            morph: blank(),
            outputs: (blank(), blank()),
            ground_truths: (blank(), blank()),
            embeddings: ResultEmbeddings {
                morph: unit(vec![1.0, 0.0, 0.0]),
                outputs: (unit(o1), unit(o2)),
                truths: (unit(i1), unit(i2)),
            },
        }
    }

    fn tau(t: f64) -> MatchThreshold {
        MatchThreshold {
            tau: t,
            fmr_target: 0.1,
            impostor_count: 1,
            provider_id: "t".into(),
        }
    }

    #[test]
    fn separation_and_restoration_basics() {
        let same = synthetic(vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]);
        for theta in [-1.0, 0.0, 0.5, 1.0] {
            assert!(!check_separation(&same, theta).unwrap());
        }
        let orth = synthetic(vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]);
        assert!(check_separation(&orth, 0.5).unwrap());
        assert!(check_restoration(&orth, 0.99).unwrap());
        let off = synthetic(vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]);
        assert!(!check_restoration(&off, 0.0).unwrap());
    }

    #[test]
    fn provider_mismatch_is_an_error() {
        let mut r = synthetic(vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]);
        r.embeddings.outputs.1 = Embedding::new(vec![0.0, 1.0], "other").unwrap();
        assert!(check_separation(&r, 0.5).is_err());
        assert!(check_restoration(&r, 0.5).is_err());
        let ok = synthetic(vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]);
        let mut other = tau(0.5);
        other.provider_id = "other".into();
        assert!(restoration_accuracy(&[ok], &other).is_err());
    }

    #[test]
    fn accuracy_and_tmr_counting() {
        let perfect = synthetic(vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]);
        let half = synthetic(vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]);
        let none = synthetic(vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]);
        let t = tau(0.5);
        assert_eq!(restoration_accuracy(std::slice::from_ref(&perfect), &t).unwrap(), 1.0);
        assert_eq!(assign(&perfect).unwrap().0, Pairing::Crossed);
        assert_eq!(restoration_accuracy(std::slice::from_ref(&none), &t).unwrap(), 0.0);
        assert_eq!(tmr_at_fmr(std::slice::from_ref(&half), &t).unwrap(), 0.5);
        assert_eq!(restoration_accuracy(&[perfect, half, none], &t).unwrap(), 1.0 / 3.0);
        assert!(restoration_accuracy(&[], &t).is_err());
    }

    #[test]
    fn bw_of_perfect_outputs_is_two() {
        let (a, _) = toy_face(1, 0, 32).unwrap();
        let (b, _) = toy_face(1, 1, 32).unwrap();
        let r = DemorphResult::new("m", a.clone(), (a.clone(), b.clone()), (a, b), &ToyProvider).unwrap();
        assert!((bw_iqa(&r, Iqa::Ssim).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(replication_rate(&[r], REPLICATION_DELTA).unwrap(), 0.0);
    }

    fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_result(seed: u64) -> DemorphResult {
        let mut rng = crate::seeding::rng(seed, 11);
        let mut r = synthetic(
            random_unit(&mut rng, 4),
            random_unit(&mut rng, 4),
            random_unit(&mut rng, 4),
            random_unit(&mut rng, 4),
        );
        let noisy = |rng: &mut rand_chacha::ChaCha8Rng| {
            Image::from_fn(16, 16, 3, |_, _, _| rng.random::<f64>()).unwrap()
        };
        r.outputs = (noisy(&mut rng), noisy(&mut rng));
        r.ground_truths = (noisy(&mut rng), noisy(&mut rng));
        r
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn restoration_matches_brute_force(seed in any::<u64>(), eps in -1.0f64..1.0) {
            let r = random_result(seed);
            let e = &r.embeddings;
            let outs = [&e.outputs.0, &e.outputs.1];
            let truths = [&e.truths.0, &e.truths.1];
            let mut min_over_j = f64::INFINITY;
            for o in outs {
                let mut best = f64::NEG_INFINITY;
                for i in truths {
                    best = best.max(match_score(o, i).unwrap());
                }
                min_over_j = min_over_j.min(best);
            }
            prop_assert_eq!(check_restoration(&r, eps).unwrap(), min_over_j > eps);
        }

        #[test]
        fn metrics_ignore_truth_order(seed in any::<u64>(), t in -1.0f64..1.0) {
            let r = random_result(seed);
            let s = r.with_truths_swapped();
            let th = tau(t);
            prop_assert_eq!(
                restoration_accuracy(std::slice::from_ref(&r), &th).unwrap().to_bits(),
                restoration_accuracy(std::slice::from_ref(&s), &th).unwrap().to_bits()
            );
            prop_assert_eq!(
                tmr_at_fmr(std::slice::from_ref(&r), &th).unwrap().to_bits(),
                tmr_at_fmr(std::slice::from_ref(&s), &th).unwrap().to_bits()
            );
            for iqa in [Iqa::Ssim, Iqa::Psnr] {
                prop_assert_eq!(bw_iqa(&r, iqa).unwrap().to_bits(), bw_iqa(&s, iqa).unwrap().to_bits());
            }
        }

        #[test]
        fn bw_is_the_larger_pairing_sum(seed in any::<u64>()) {
            let r = random_result(seed);
            let e = &r.embeddings;
            let outs = [(&e.outputs.0, &r.outputs.0), (&e.outputs.1, &r.outputs.1)];
            let truths = [(&e.truths.0, &r.ground_truths.0), (&e.truths.1, &r.ground_truths.1)];
            let term = |j: usize, k: usize| {
                match_score(outs[j].0, truths[k].0).unwrap().clamp(0.0, 1.0) * ssim(outs[j].1, truths[k].1).unwrap()
            };
            let expected = (term(0, 0) + term(1, 1)).max(term(0, 1) + term(1, 0));
            prop_assert!((bw_iqa(&r, Iqa::Ssim).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn report_rows_reaggregate() {
        let results: Vec<DemorphResult> = (0..12).map(random_result).collect();
        let thresholds: Vec<MatchThreshold> = [0.1, 0.01].iter().map(|&f| MatchThreshold { fmr_target: f, tau: f * 5.0, ..tau(0.0) }).collect();
        let rows: Vec<ReportRow> = results.iter().map(|r| report_row(r, &thresholds, 0.3, 0.2, REPLICATION_DELTA).unwrap()).collect();
        let agg = EvalReport::aggregate(&rows, &[0.1, 0.01]);
        let ra = restoration_accuracy(&results, &thresholds[0]).unwrap();
        assert!((agg.restoration_accuracy["0.1"] - ra).abs() < 1e-12);
        let tmr = tmr_at_fmr(&results, &thresholds[1]).unwrap();
        assert!((agg.tmr["0.01"] - tmr).abs() < 1e-12);
        assert!((agg.bw_ssim - bw_dataset(&results, Iqa::Ssim).unwrap()).abs() < 1e-12);
        assert!((agg.bw_psnr - bw_dataset(&results, Iqa::Psnr).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn grid_has_five_columns() {
        let results: Vec<DemorphResult> = (0..3).map(random_result).collect();
        let g = comparison_grid(&results).unwrap();
        assert_eq!(g.shape(), (3 * 16 + 4 * GRID_GAP, 5 * 16 + 6 * GRID_GAP, 3));
        assert!(comparison_grid(&[]).is_err());
    }
}
