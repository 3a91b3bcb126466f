//! File-backed phantom catalog.
//!
//! ```text
//! <root>/
//!   patients.json  config.toml  taxonomy.json  reviews.log
//!   scans/<scan_id>/{volume.lvol, volume.lvol.json, scan.json, volumes.csv, qc.json}
//!   scans/<scan_id>/previews/{x,y,z}.png
//!   phantoms/<phantom_id>/{manifest.json, <structure_id>.ply, voxel_<mm>mm.lvol}
//!   qc/{state.json, funnel.json, models.json}
//! ```
//!
//! `qc/state.json` holds the cascade outcome before any review. Current
//! statuses are that state with the append-only `reviews.log` applied, so
//! replaying the log always reproduces them.

mod manifest;
mod preview;
mod summary;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::grid::{read_label_grid, write_label_grid, GridFormat, GridTemplate, VoxelGrid};
use crate::mesh::{export_mesh, laplacian_smooth, marching_cubes, read_ply, MeshFormat};
use crate::patient::PatientRecord;
use crate::qc::{
    apply_reviews, run_qc_pipeline, FinalStatus, FunnelReport, QcOutcome, Review, Verdict,
    VolumeModel,
};
use crate::taxonomy::Taxonomy;
use crate::volumetry::{structure_volumes, VolumeTable};
use crate::voxelize::{assemble_phantom, voxelize_mesh};

pub use manifest::{
    filter_manifests, PatientSnapshot, PhantomFilter, PhantomManifest, StructureEntry,
    VoxelPhantom, PIPELINE_VERSION,
};
pub use preview::{encode_png, label_color, max_label_projection, write_previews, Axis};
pub use summary::{
    demographics, volume_stats, AgeBin, DemographicsSummary, HabitusCell, HabitusHistogram,
    Moments, VolumeStat, AGE_BIN_YEARS, HEIGHT_BIN_M, WEIGHT_BIN_KG,
};

pub const RATING_RANGE: std::ops::RangeInclusive<u8> = 1..=5;

/// One ingested scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_id: String,
    pub patient_id: String,
    /// File the grid was ingested from, if any.
    pub source: Option<String>,
    /// Relative to the catalog root.
    pub grid_path: String,
    pub template: GridTemplate,
    pub volumes: VolumeTable,
    pub ingested_at: DateTime<Utc>,
}

/// One line of `reviews.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewEvent {
    pub scan_id: String,
    #[serde(flatten)]
    pub review: Review,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub verdict: Verdict,
    pub rating: u8,
    pub reviewer: String,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcSummary {
    pub zero_volume_fraction: Option<f64>,
    pub discrepant_pairs: usize,
    pub flagged_ids: Vec<u16>,
    pub skull_flag: bool,
    pub mean_p_out: Option<f64>,
}

impl From<&QcOutcome> for QcSummary {
    fn from(o: &QcOutcome) -> Self {
        QcSummary {
            zero_volume_fraction: o.zero_volume.as_ref().map(|z| z.fraction),
            discrepant_pairs: o.symmetry.as_ref().map_or(0, |s| s.discrepant_pairs.len()),
            flagged_ids: o
                .statistical
                .as_ref()
                .map(|s| s.flagged_ids.clone())
                .unwrap_or_default(),
            skull_flag: o.statistical.as_ref().is_some_and(|s| s.skull_flag),
            mean_p_out: o.mean_p_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingReview {
    pub scan_id: String,
    pub patient_id: String,
    /// Preview PNGs relative to the catalog root.
    pub previews: BTreeMap<Axis, String>,
    pub qc: QcSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QcState {
    base: BTreeMap<String, QcOutcome>,
    warnings: Vec<String>,
}

/// Which meshes to build.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshRequest {
    /// Phantoms to mesh; `None` means every accepted phantom.
    pub phantoms: Option<Vec<String>>,
    /// Single structure; `None` means every structure present.
    pub structure: Option<u16>,
    pub lambda: f64,
    pub iterations: usize,
}

#[derive(Debug)]
pub struct Catalog {
    root: PathBuf,
    config: PipelineConfig,
    taxonomy: Taxonomy,
    patients: BTreeMap<String, PatientRecord>,
    scans: BTreeMap<String, ScanRecord>,
    qc: Option<QcState>,
    events: Vec<ReviewEvent>,
    outcomes: BTreeMap<String, QcOutcome>,
    manifests: BTreeMap<String, PhantomManifest>,
}

impl Catalog {
    /// Creates an empty catalog. Fails if `root` already holds one.
    pub fn init(root: impl AsRef<Path>, config: PipelineConfig, taxonomy: Taxonomy) -> Result<Catalog> {
        let root = root.as_ref().to_path_buf();
        config.validate()?;
        if root.join("patients.json").exists() {
            return Err(Error::Conflict(format!(
                "{} already holds a catalog",
                root.display()
            )));
        }
        for sub in ["scans", "phantoms", "qc"] {
            let d = root.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        write_atomic(&root.join("config.toml"), config.to_toml().as_bytes())?;
        write_atomic(&root.join("taxonomy.json"), taxonomy.to_json().as_bytes())?;
        let log = root.join("reviews.log");
        if !log.exists() {
            std::fs::write(&log, b"").map_err(|e| Error::io(&log, e))?;
        }
        write_json(&root.join("patients.json"), &Vec::<PatientRecord>::new())?;
        Ok(Catalog {
            root,
            config,
            taxonomy,
            patients: BTreeMap::new(),
            scans: BTreeMap::new(),
            qc: None,
            events: Vec::new(),
            outcomes: BTreeMap::new(),
            manifests: BTreeMap::new(),
        })
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Catalog> {
        let root = root.as_ref().to_path_buf();
        if !root.join("patients.json").exists() {
            return Err(Error::NotFound(format!("no catalog at {}", root.display())));
        }
        let config = PipelineConfig::load(&root.join("config.toml"))?;
        let tax_path = root.join("taxonomy.json");
        let text = std::fs::read_to_string(&tax_path).map_err(|e| Error::io(&tax_path, e))?;
        let taxonomy = Taxonomy::from_json(&text)?;
        let patients: Vec<PatientRecord> = read_json(&root.join("patients.json"))?;
        let patients = patients
            .into_iter()
            .map(|p| (p.patient_id.clone(), p))
            .collect();

        let mut scans = BTreeMap::new();
        for dir in list_dirs(&root.join("scans"))? {
            let rec: ScanRecord = read_json(&dir.join("scan.json"))?;
            scans.insert(rec.scan_id.clone(), rec);
        }
        let mut manifests = BTreeMap::new();
        for dir in list_dirs(&root.join("phantoms"))? {
            let path = dir.join("manifest.json");
            if path.exists() {
                let m: PhantomManifest = read_json(&path)?;
                manifests.insert(m.phantom_id.clone(), m);
            }
        }
        let state = root.join("qc").join("state.json");
        let qc = if state.exists() {
            Some(read_json(&state)?)
        } else {
            None
        };
        let events = read_log(&root.join("reviews.log"))?;
        let mut cat = Catalog {
            root,
            config,
            taxonomy,
            patients,
            scans,
            qc,
            events,
            outcomes: BTreeMap::new(),
            manifests,
        };
        cat.refresh();
        Ok(cat)
    }

    /// Opens the catalog at `root`, creating it with defaults if absent.
    pub fn open_or_init(root: impl AsRef<Path>) -> Result<Catalog> {
        if root.as_ref().join("patients.json").exists() {
            Catalog::open(root)
        } else {
            Catalog::init(root, PipelineConfig::default(), Taxonomy::bundled())
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn patients(&self) -> &BTreeMap<String, PatientRecord> {
        &self.patients
    }

    pub fn scans(&self) -> &BTreeMap<String, ScanRecord> {
        &self.scans
    }

    pub fn scan(&self, scan_id: &str) -> Result<&ScanRecord> {
        self.scans
            .get(scan_id)
            .ok_or_else(|| Error::NotFound(format!("scan {scan_id}")))
    }

    /// Current outcomes, reviews applied. Empty until QC has run.
    pub fn outcomes(&self) -> &BTreeMap<String, QcOutcome> {
        &self.outcomes
    }

    pub fn manifests(&self) -> &BTreeMap<String, PhantomManifest> {
        &self.manifests
    }

    pub fn manifest(&self, phantom_id: &str) -> Result<&PhantomManifest> {
        self.manifests
            .get(phantom_id)
            .ok_or_else(|| Error::NotFound(format!("phantom {phantom_id}")))
    }

    pub fn review_events(&self) -> &[ReviewEvent] {
        &self.events
    }

    pub fn qc_warnings(&self) -> &[String] {
        self.qc.as_ref().map_or(&[], |q| &q.warnings)
    }

    pub fn funnel(&self) -> Result<FunnelReport> {
        let qc = self.require_qc()?;
        Ok(FunnelReport::from_outcomes(&self.outcomes, qc.warnings.clone()))
    }

    fn require_qc(&self) -> Result<&QcState> {
        self.qc
            .as_ref()
            .ok_or_else(|| Error::Conflict("qc has not been run on this catalog".into()))
    }

    fn scan_dir(&self, scan_id: &str) -> PathBuf {
        self.root.join("scans").join(scan_id)
    }

    fn phantom_dir(&self, phantom_id: &str) -> PathBuf {
        self.root.join("phantoms").join(phantom_id)
    }

    /// Stores the grid, its volumes and previews, and links the scan to
    /// `patient` (whose own `scans` list is ignored). Nothing is written when
    /// the scan ID is taken.
    pub fn ingest_scan(
        &mut self,
        scan_id: &str,
        grid: &VoxelGrid,
        patient: &PatientRecord,
        source: Option<&str>,
    ) -> Result<ScanRecord> {
        validate_id(scan_id)?;
        patient.validate()?;
        if self.scans.contains_key(scan_id) || self.scan_dir(scan_id).exists() {
            return Err(Error::Conflict(format!("scan {scan_id} already ingested")));
        }
        if let Some(owner) = self
            .patients
            .values()
            .find(|p| p.patient_id != patient.patient_id && p.scans.iter().any(|s| s == scan_id))
        {
            return Err(Error::Conflict(format!(
                "scan {scan_id} already belongs to patient {}",
                owner.patient_id
            )));
        }
        let volumes = structure_volumes(grid, &self.taxonomy);
        let record = ScanRecord {
            scan_id: scan_id.to_string(),
            patient_id: patient.patient_id.clone(),
            source: source.map(str::to_string),
            grid_path: format!("scans/{scan_id}/volume.lvol"),
            template: *grid.template(),
            volumes,
            ingested_at: Utc::now(),
        };

        let tmp = self.root.join("scans").join(format!(".{scan_id}.tmp"));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        write_label_grid(grid, tmp.join("volume.lvol"), true)?;
        write_atomic(
            &tmp.join("volumes.csv"),
            record.volumes.to_csv(&self.taxonomy).as_bytes(),
        )?;
        write_previews(grid, &tmp.join("previews"))?;
        write_json(&tmp.join("scan.json"), &record)?;
        let dir = self.scan_dir(scan_id);
        std::fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;

        let entry = self
            .patients
            .entry(patient.patient_id.clone())
            .or_insert_with(|| PatientRecord {
                scans: Vec::new(),
                ..patient.clone()
            });
        let scans = std::mem::take(&mut entry.scans);
        *entry = PatientRecord {
            scans,
            ..patient.clone()
        };
        entry.scans.push(scan_id.to_string());
        self.save_patients()?;
        self.scans.insert(scan_id.to_string(), record.clone());
        Ok(record)
    }

    fn save_patients(&self) -> Result<()> {
        let list: Vec<&PatientRecord> = self.patients.values().collect();
        write_json(&self.root.join("patients.json"), &list)
    }

    /// Full grid of an ingested scan.
    pub fn load_grid(&self, scan_id: &str) -> Result<VoxelGrid> {
        let rec = self.scan(scan_id)?;
        read_label_grid(self.root.join(&rec.grid_path), GridFormat::RawSidecar)
    }

    /// Runs the QC cascade over every ingested scan and rewrites all
    /// outcomes, manifests and the funnel. Existing review verdicts are kept.
    /// A supplied config replaces the stored one.
    pub fn run_qc(&mut self, config: Option<PipelineConfig>, jobs: usize) -> Result<FunnelReport> {
        if let Some(c) = config {
            c.validate()?;
            write_atomic(&self.root.join("config.toml"), c.to_toml().as_bytes())?;
            self.config = c;
        }
        if self.scans.is_empty() {
            return Err(Error::Conflict("catalog has no scans".into()));
        }
        let patients: Vec<PatientRecord> = self.patients.values().cloned().collect();
        let volumes: BTreeMap<String, VolumeTable> = self
            .scans
            .iter()
            .map(|(k, v)| (k.clone(), v.volumes.clone()))
            .collect();
        let run = run_qc_pipeline(
            &patients,
            &volumes,
            &self.taxonomy,
            &self.config,
            &BTreeMap::new(),
            jobs,
        )?;
        let state = QcState {
            base: run.outcomes,
            warnings: run.warnings,
        };
        write_json(&self.root.join("qc").join("state.json"), &state)?;
        write_json(&self.root.join("qc").join("models.json"), &run.models)?;
        self.qc = Some(state);
        self.refresh();
        let all: BTreeSet<String> = self.outcomes.keys().cloned().collect();
        self.persist(&all)?;
        self.funnel()
    }

    /// Fitted population models from the last QC run.
    pub fn models(&self) -> Result<Vec<VolumeModel>> {
        self.require_qc()?;
        read_json(&self.root.join("qc").join("models.json"))
    }

    fn review_map(events: &[ReviewEvent]) -> BTreeMap<String, Review> {
        events
            .iter()
            .map(|e| (e.scan_id.clone(), e.review.clone()))
            .collect()
    }

    /// Recomputes current outcomes and manifests in memory.
    fn refresh(&mut self) {
        let Some(qc) = &self.qc else {
            self.outcomes.clear();
            return;
        };
        let mut outcomes = qc.base.clone();
        apply_reviews(
            &mut outcomes,
            &Self::review_map(&self.events),
            self.config.review.required,
        );
        self.outcomes = outcomes;
        let mut manifests = BTreeMap::new();
        for (sid, o) in &self.outcomes {
            let Some(rec) = self.scans.get(sid) else { continue };
            let Some(patient) = self.patients.get(&rec.patient_id) else { continue };
            let old = self.manifests.get(sid);
            let structures = rec
                .volumes
                .counts()
                .iter()
                .filter(|&(_, &c)| c > 0)
                .map(|(&id, _)| {
                    let mesh_path = old
                        .and_then(|m| m.structure(id))
                        .and_then(|e| e.mesh_path.clone())
                        .filter(|p| self.root.join(p).exists());
                    StructureEntry {
                        id,
                        name: self.taxonomy.name(id).unwrap_or("").to_string(),
                        volume_ml: rec.volumes.volume_ml(id),
                        mesh_path,
                        mask: format!("{}#label={id}", rec.grid_path),
                    }
                })
                .collect();
            manifests.insert(
                sid.clone(),
                PhantomManifest {
                    phantom_id: sid.clone(),
                    scan_id: sid.clone(),
                    patient: PatientSnapshot::from(patient),
                    structures,
                    qc: o.clone(),
                    review_rating: o.review.as_ref().map(|r| r.rating),
                    voxel_phantoms: old.map(|m| m.voxel_phantoms.clone()).unwrap_or_default(),
                    smoothing: old.and_then(|m| m.smoothing),
                    pipeline_version: PIPELINE_VERSION.to_string(),
                    created_at: old.map_or_else(Utc::now, |m| m.created_at),
                },
            );
        }
        self.manifests = manifests;
    }

    /// Writes outcomes and manifests of `scan_ids` plus the funnel.
    fn persist(&self, scan_ids: &BTreeSet<String>) -> Result<()> {
        for sid in scan_ids {
            if let Some(o) = self.outcomes.get(sid) {
                write_json(&self.scan_dir(sid).join("qc.json"), o)?;
            }
            if let Some(m) = self.manifests.get(sid) {
                self.write_manifest(m)?;
            }
        }
        write_json(&self.root.join("qc").join("funnel.json"), &self.funnel()?)
    }

    fn write_manifest(&self, m: &PhantomManifest) -> Result<()> {
        let dir = self.phantom_dir(&m.phantom_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_json(&dir.join("manifest.json"), m)
    }

    /// Records a verdict for a scan awaiting review, appends it to the log
    /// and re-runs deduplication.
    pub fn submit_review(&mut self, scan_id: &str, req: &ReviewRequest) -> Result<QcOutcome> {
        self.submit_review_at(scan_id, req, Utc::now())
    }

    pub fn submit_review_at(
        &mut self,
        scan_id: &str,
        req: &ReviewRequest,
        timestamp: DateTime<Utc>,
    ) -> Result<QcOutcome> {
        if !RATING_RANGE.contains(&req.rating) {
            return Err(Error::InvalidArgument(format!(
                "rating must be in 1..=5, got {}",
                req.rating
            )));
        }
        if req.reviewer.trim().is_empty() {
            return Err(Error::InvalidArgument("reviewer must not be empty".into()));
        }
        self.scan(scan_id)?;
        self.require_qc()?;
        let status = self
            .outcomes
            .get(scan_id)
            .map(|o| o.final_status)
            .ok_or_else(|| Error::Conflict(format!("scan {scan_id} has no qc outcome")))?;
        if status != FinalStatus::PendingReview {
            return Err(Error::Conflict(format!(
                "scan {scan_id} is not pending review (status {})",
                status.as_str()
            )));
        }
        let event = ReviewEvent {
            scan_id: scan_id.to_string(),
            review: Review {
                verdict: req.verdict,
                rating: req.rating,
                reviewer: req.reviewer.clone(),
                timestamp,
                notes: req.notes.clone(),
            },
        };
        append_log(&self.root.join("reviews.log"), &event)?;
        self.events.push(event);
        self.refresh();
        let patient = &self.scans[scan_id].patient_id;
        let siblings: BTreeSet<String> = self.patients[patient].scans.iter().cloned().collect();
        self.persist(&siblings)?;
        Ok(self.outcomes[scan_id].clone())
    }

    /// Statuses obtained by replaying `reviews.log` from disk, one verdict at
    /// a time, on top of the pre-review QC state. Each event must find its
    /// scan pending, exactly as when it was submitted.
    pub fn replay_log(&self) -> Result<BTreeMap<String, FinalStatus>> {
        let qc = self.require_qc()?;
        let events = read_log(&self.root.join("reviews.log"))?;
        let mut outcomes = qc.base.clone();
        let mut reviews = BTreeMap::new();
        apply_reviews(&mut outcomes, &reviews, self.config.review.required);
        for (line, e) in events.iter().enumerate() {
            let status = outcomes.get(&e.scan_id).map(|o| o.final_status);
            if status != Some(FinalStatus::PendingReview) {
                return Err(Error::Catalog(format!(
                    "review log line {}: scan {} was not pending",
                    line + 1,
                    e.scan_id
                )));
            }
            reviews.insert(e.scan_id.clone(), e.review.clone());
            apply_reviews(&mut outcomes, &reviews, self.config.review.required);
        }
        Ok(outcomes
            .into_iter()
            .map(|(k, o)| (k, o.final_status))
            .collect())
    }

    /// Scan IDs whose stored `qc.json` status disagrees with a log replay.
    pub fn verify_log(&self) -> Result<Vec<String>> {
        let replayed = self.replay_log()?;
        let mut bad = Vec::new();
        for (sid, status) in &replayed {
            let stored: QcOutcome = read_json(&self.scan_dir(sid).join("qc.json"))?;
            if stored.final_status != *status {
                bad.push(sid.clone());
            }
        }
        Ok(bad)
    }

    pub fn pending_reviews(&self) -> Vec<PendingReview> {
        self.outcomes
            .values()
            .filter(|o| o.final_status == FinalStatus::PendingReview)
            .map(|o| PendingReview {
                scan_id: o.scan_id.clone(),
                patient_id: o.patient_id.clone(),
                previews: Axis::ALL
                    .into_iter()
                    .map(|a| (a, format!("scans/{}/previews/{}.png", o.scan_id, a.as_str())))
                    .collect(),
                qc: QcSummary::from(o),
            })
            .collect()
    }

    pub fn preview_path(&self, phantom_id: &str, axis: Axis) -> Result<PathBuf> {
        self.scan(phantom_id)?;
        let p = self
            .scan_dir(phantom_id)
            .join("previews")
            .join(format!("{}.png", axis.as_str()));
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::NotFound(format!("preview {}", p.display())))
        }
    }

    pub fn query_phantoms(&self, filter: &PhantomFilter) -> Result<Vec<&PhantomManifest>> {
        filter_manifests(&self.manifests, filter)
    }

    fn accepted(&self) -> Vec<&PhantomManifest> {
        self.manifests
            .values()
            .filter(|m| m.status() == FinalStatus::Accepted)
            .collect()
    }

    pub fn demographics_summary(&self) -> Result<DemographicsSummary> {
        demographics(&self.accepted())
    }

    pub fn volume_summary(&self) -> Result<Vec<VolumeStat>> {
        volume_stats(&self.accepted(), &self.taxonomy)
    }

    pub fn mesh_path(&self, phantom_id: &str, structure_id: u16) -> Result<PathBuf> {
        let m = self.manifest(phantom_id)?;
        let entry = m.structure(structure_id).ok_or_else(|| {
            Error::NotFound(format!("structure {structure_id} in phantom {phantom_id}"))
        })?;
        let rel = entry.mesh_path.as_ref().ok_or_else(|| {
            Error::NotFound(format!(
                "no mesh for structure {structure_id} of phantom {phantom_id}"
            ))
        })?;
        Ok(self.root.join(rel))
    }

    /// Extracts, smooths and exports PLY meshes. Returns the written paths.
    pub fn extract_meshes(&mut self, req: &MeshRequest, jobs: usize) -> Result<Vec<PathBuf>> {
        self.require_qc()?;
        let targets: Vec<String> = match &req.phantoms {
            Some(ids) => {
                for id in ids {
                    self.manifest(id)?;
                }
                ids.clone()
            }
            None => self.accepted().iter().map(|m| m.phantom_id.clone()).collect(),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        let mut written = Vec::new();
        for pid in targets {
            let grid = self.load_grid(&pid)?;
            let bounds = grid.label_bounds();
            let ids: Vec<u16> = match req.structure {
                Some(id) => {
                    if !bounds.contains_key(&id) {
                        return Err(Error::NotFound(format!(
                            "structure {id} is empty in phantom {pid}"
                        )));
                    }
                    vec![id]
                }
                None => bounds.keys().copied().filter(|id| self.taxonomy.contains(*id)).collect(),
            };
            let dir = self.phantom_dir(&pid);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let paths: Vec<(u16, PathBuf)> = pool.install(|| {
                ids.par_iter()
                    .map(|&id| {
                        let (lo, hi) = bounds[&id];
                        let mask = grid.crop(lo, hi)?.extract_mask(id);
                        let mesh = marching_cubes(&mask)?;
                        let mesh = laplacian_smooth(&mesh, req.lambda, req.iterations)?;
                        let path = dir.join(format!("{id}.ply"));
                        export_mesh(&mesh, MeshFormat::PlyBinary, &path)?;
                        Ok((id, path))
                    })
                    .collect::<Result<_>>()
            })?;
            let m = self.manifests.get_mut(&pid).expect("checked above");
            for (id, path) in &paths {
                if let Some(e) = m.structures.iter_mut().find(|e| e.id == *id) {
                    e.mesh_path = Some(format!("phantoms/{pid}/{id}.ply"));
                }
                written.push(path.clone());
            }
            m.smoothing = Some((req.lambda, req.iterations));
            let m = m.clone();
            self.write_manifest(&m)?;
        }
        Ok(written)
    }

    /// Rasterises a phantom's meshes onto an isotropic grid covering the
    /// source scan and stores the assembled label grid. Larger structures are
    /// painted first so contained ones win overlaps.
    pub fn voxelize_phantom(&mut self, phantom_id: &str, spacing_mm: f64) -> Result<PathBuf> {
        if !(spacing_mm.is_finite() && spacing_mm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be positive, got {spacing_mm}"
            )));
        }
        let m = self.manifest(phantom_id)?.clone();
        let src = self.scan(phantom_id)?.template;
        let meshed: Vec<&StructureEntry> =
            m.structures.iter().filter(|e| e.mesh_path.is_some()).collect();
        if meshed.is_empty() {
            return Err(Error::Conflict(format!(
                "phantom {phantom_id} has no meshes; run mesh extraction first"
            )));
        }
        let mut dims = [0usize; 3];
        let mut origin = [0.0; 3];
        for k in 0..3 {
            let extent = src.dims[k] as f64 * src.spacing_mm[k];
            dims[k] = ((extent / spacing_mm).ceil() as usize).max(1);
            origin[k] = src.origin_mm[k] - 0.5 * src.spacing_mm[k] + 0.5 * spacing_mm;
        }
        let tpl = GridTemplate::new(dims, [spacing_mm; 3], origin)?;
        let masks: Vec<(u16, VoxelGrid)> = meshed
            .par_iter()
            .map(|e| {
                let mesh = read_ply(&self.root.join(e.mesh_path.as_ref().expect("filtered")))?;
                Ok((e.id, voxelize_mesh(&mesh, &tpl)?))
            })
            .collect::<Result<_>>()?;
        let mut priority: Vec<&StructureEntry> = meshed.clone();
        priority.sort_by(|a, b| b.volume_ml.total_cmp(&a.volume_ml).then(a.id.cmp(&b.id)));
        let order: Vec<u16> = priority.iter().map(|e| e.id).collect();
        let grid = assemble_phantom(&masks, &order)?;
        let name = format!("voxel_{spacing_mm}mm.lvol");
        let path = self.phantom_dir(phantom_id).join(&name);
        write_label_grid(&grid, &path, true)?;
        let rel = format!("phantoms/{phantom_id}/{name}");
        let m = self.manifests.get_mut(phantom_id).expect("checked above");
        m.voxel_phantoms.retain(|v| v.path != rel);
        m.voxel_phantoms.push(VoxelPhantom {
            spacing_mm,
            path: rel,
        });
        let m = m.clone();
        self.write_manifest(&m)?;
        Ok(path)
    }
}

fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "scan id {id:?} must be non-empty ASCII letters, digits, '-', '_' or '.'"
        )))
    }
}

fn list_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let rd = match std::fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.path().is_dir() && !hidden {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Catalog(format!("{}: {e}", path.display())))
}

fn append_log(path: &Path, event: &ReviewEvent) -> Result<()> {
    let mut line = serde_json::to_string(event)?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(line.as_bytes())
        .and_then(|_| f.sync_data())
        .map_err(|e| Error::io(path, e))
}

fn read_log(path: &Path) -> Result<Vec<ReviewEvent>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::Catalog(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::Sex;

    fn patient(id: &str) -> PatientRecord {
        PatientRecord {
            patient_id: id.into(),
            sex: Sex::Female,
            age_years: 50.0,
            height_m: Some(1.6),
            weight_kg: Some(64.0),
            race: "asian".into(),
            scans: vec![],
        }
    }

    fn grid() -> VoxelGrid {
        let mut g = VoxelGrid::new([6, 6, 6], [2.0; 3], [0.0; 3], vec![0; 216]).unwrap();
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    g.set(x, y, z, 67);
                }
            }
        }
        g.set(4, 4, 4, 70);
        g
    }

    #[test]
    fn ingest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cat = Catalog::init(dir.path(), PipelineConfig::default(), Taxonomy::bundled()).unwrap();
        let rec = cat.ingest_scan("s1", &grid(), &patient("p1"), None).unwrap();
        assert_eq!(rec.volumes.count(67), 27);
        let re = Catalog::open(dir.path()).unwrap();
        assert_eq!(re.scan("s1").unwrap(), &rec);
        assert_eq!(re.load_grid("s1").unwrap().labels(), grid().labels());
        for a in ["x", "y", "z"] {
            assert!(dir.path().join(format!("scans/s1/previews/{a}.png")).exists());
        }
    }

    #[test]
    fn duplicate_scan_leaves_catalog_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let mut cat = Catalog::init(dir.path(), PipelineConfig::default(), Taxonomy::bundled()).unwrap();
        cat.ingest_scan("s1", &grid(), &patient("p1"), None).unwrap();
        let before = std::fs::read(dir.path().join("patients.json")).unwrap();
        let err = cat.ingest_scan("s1", &grid(), &patient("p2"), None).unwrap_err();
        assert_eq!(err.code(), "conflict");
        assert_eq!(std::fs::read(dir.path().join("patients.json")).unwrap(), before);
        assert_eq!(cat.patients().len(), 1);
    }

    #[test]
    fn scans_accumulate_per_patient() {
        let dir = tempfile::tempdir().unwrap();
        let mut cat = Catalog::init(dir.path(), PipelineConfig::default(), Taxonomy::bundled()).unwrap();
        for s in ["a", "b", "c"] {
            cat.ingest_scan(s, &grid(), &patient("p1"), None).unwrap();
        }
        let re = Catalog::open(dir.path()).unwrap();
        assert_eq!(re.patients()["p1"].scans, vec!["a", "b", "c"]);
    }

    #[test]
    fn rejects_unsafe_ids() {
        for id in ["", "../x", ".hidden", "a/b"] {
            assert!(validate_id(id).is_err(), "{id}");
        }
        assert!(validate_id("S0001_v2.1").is_ok());
    }

    #[test]
    fn init_refuses_existing_catalog() {
        let dir = tempfile::tempdir().unwrap();
        Catalog::init(dir.path(), PipelineConfig::default(), Taxonomy::bundled()).unwrap();
        assert!(Catalog::init(dir.path(), PipelineConfig::default(), Taxonomy::bundled()).is_err());
    }
}
