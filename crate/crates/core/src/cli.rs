//! Command-line front end. Errors go to stderr as one JSON object
//! `{"error": code, "message": text}` and the process exits nonzero.

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::catalog::{Catalog, MeshRequest, ReviewRequest};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::grid::{read_label_grid, GridFormat};
use crate::patient::load_patient_metadata;
use crate::qc::Verdict;
use crate::synth::{SynthConfig, SyntheticCohort};
use crate::taxonomy::Taxonomy;
use crate::volumetry::structure_volumes;

#[derive(Debug, Parser)]
#[command(name = "phantomforge", version, about = "Quality-controlled phantoms from label volumes")]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CatalogArg {
    /// Catalog directory.
    #[arg(long, env = "PHANTOMFORGE_CATALOG")]
    pub catalog: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add label volumes to a catalog, creating it if needed.
    Ingest {
        /// Raw (`.lvol`) or NIfTI volumes; the file stem is the scan ID.
        #[arg(required = true)]
        volumes: Vec<PathBuf>,
        /// Patient metadata, JSON records or CSV rows.
        #[arg(long)]
        meta: PathBuf,
        /// Taxonomy JSON for a new catalog.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[command(flatten)]
        catalog: CatalogArg,
    },
    /// Quality-control cascade.
    #[command(subcommand)]
    Qc(QcCommand),
    /// Surface meshes.
    #[command(subcommand)]
    Mesh(MeshCommand),
    /// Rasterise a phantom's meshes back into a label grid.
    Voxelize {
        #[command(flatten)]
        catalog: CatalogArg,
        #[arg(long)]
        phantom: String,
        /// Isotropic voxel size in mm.
        #[arg(long)]
        spacing: f64,
    },
    /// Demographics and volume summaries of accepted phantoms, as JSON.
    Stats {
        #[command(flatten)]
        catalog: CatalogArg,
    },
    /// Review queue.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// HTTP API (and optional UI bundle).
    Serve {
        #[command(flatten)]
        catalog: CatalogArg,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory of a built UI to serve at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Write a seeded synthetic cohort (grids plus patients.json).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        scans: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// No planted defects or duplicate patients.
        #[arg(long)]
        clean: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum QcCommand {
    /// Run the cascade over every scan and print the funnel.
    Run {
        #[command(flatten)]
        catalog: CatalogArg,
        /// TOML or JSON pipeline configuration; replaces the stored one.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the current funnel as a table followed by JSON.
    Report {
        #[command(flatten)]
        catalog: CatalogArg,
    },
}

#[derive(Debug, Subcommand)]
pub enum MeshCommand {
    /// Marching cubes plus Laplacian smoothing, exported as PLY.
    Extract {
        #[command(flatten)]
        catalog: CatalogArg,
        /// Phantoms to mesh; default every accepted phantom.
        #[arg(long)]
        phantom: Vec<String>,
        #[arg(long)]
        structure: Option<u16>,
        /// Smoothing weight; default from the catalog config.
        #[arg(long)]
        lambda: Option<f64>,
        /// Smoothing iterations; default from the catalog config.
        #[arg(long)]
        iters: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// List scans awaiting review, as JSON.
    Pending {
        #[command(flatten)]
        catalog: CatalogArg,
    },
    /// Record a verdict.
    Submit {
        #[command(flatten)]
        catalog: CatalogArg,
        scan_id: String,
        #[arg(long)]
        verdict: Verdict,
        #[arg(long)]
        rating: u8,
        #[arg(long)]
        reviewer: String,
        #[arg(long, default_value = "")]
        notes: String,
    },
    /// Replay the review log and compare with stored statuses.
    Verify {
        #[command(flatten)]
        catalog: CatalogArg,
    },
}

/// Parses `args`, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": e.code(), "message": e.to_string()}));
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let jobs = cli.jobs;
    if jobs > 0 {
        // Already-initialised pools are fine: callers in tests run many commands.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match cli.command {
        Command::Ingest {
            volumes,
            meta,
            taxonomy,
            catalog,
        } => ingest(&catalog.catalog, &volumes, &meta, taxonomy.as_deref()),
        Command::Qc(QcCommand::Run { catalog, config }) => {
            let mut cat = Catalog::open(&catalog.catalog)?;
            let config = config.as_deref().map(PipelineConfig::load).transpose()?;
            let funnel = cat.run_qc(config, jobs)?;
            print!("{}", funnel.to_table());
            Ok(())
        }
        Command::Qc(QcCommand::Report { catalog }) => {
            let cat = Catalog::open(&catalog.catalog)?;
            let funnel = cat.funnel()?;
            print!("{}", funnel.to_table());
            println!("{}", serde_json::to_string_pretty(&funnel)?);
            Ok(())
        }
        Command::Mesh(MeshCommand::Extract {
            catalog,
            phantom,
            structure,
            lambda,
            iters,
        }) => {
            let mut cat = Catalog::open(&catalog.catalog)?;
            let smoothing = &cat.config().smoothing;
            let req = MeshRequest {
                phantoms: (!phantom.is_empty()).then_some(phantom),
                structure,
                lambda: lambda.unwrap_or(smoothing.lambda),
                iterations: iters.unwrap_or(smoothing.iterations),
            };
            let paths = cat.extract_meshes(&req, jobs)?;
            println!("wrote {} meshes", paths.len());
            Ok(())
        }
        Command::Voxelize {
            catalog,
            phantom,
            spacing,
        } => {
            let mut cat = Catalog::open(&catalog.catalog)?;
            let path = cat.voxelize_phantom(&phantom, spacing)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Stats { catalog } => {
            let cat = Catalog::open(&catalog.catalog)?;
            let out = serde_json::json!({
                "demographics": cat.demographics_summary()?,
                "volumes": cat.volume_summary()?,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Command::Review(ReviewCommand::Pending { catalog }) => {
            let cat = Catalog::open(&catalog.catalog)?;
            println!("{}", serde_json::to_string_pretty(&cat.pending_reviews())?);
            Ok(())
        }
        Command::Review(ReviewCommand::Submit {
            catalog,
            scan_id,
            verdict,
            rating,
            reviewer,
            notes,
        }) => {
            let mut cat = Catalog::open(&catalog.catalog)?;
            let req = ReviewRequest {
                verdict,
                rating,
                reviewer,
                notes,
            };
            let o = cat.submit_review(&scan_id, &req)?;
            println!("{} {}", o.scan_id, o.final_status.as_str());
            Ok(())
        }
        Command::Review(ReviewCommand::Verify { catalog }) => {
            let cat = Catalog::open(&catalog.catalog)?;
            let bad = cat.verify_log()?;
            if bad.is_empty() {
                println!("review log replay matches {} stored outcomes", cat.outcomes().len());
                Ok(())
            } else {
                Err(Error::Catalog(format!("replay disagrees for scans {bad:?}")))
            }
        }
        Command::Serve {
            catalog,
            port,
            host,
            ui,
        } => {
            let cat = Catalog::open(&catalog.catalog)?;
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::InvalidArgument(format!("runtime: {e}")))?;
            rt.block_on(crate::server::serve(cat, SocketAddr::new(host, port), ui))
        }
        Command::Synth {
            out,
            scans,
            seed,
            clean,
        } => {
            let cfg = if clean {
                SynthConfig::clean(scans, seed)
            } else {
                SynthConfig {
                    scans,
                    seed,
                    ..SynthConfig::default()
                }
            };
            let cohort = SyntheticCohort::generate(&cfg, &Taxonomy::bundled())?;
            cohort.write_to(&out)?;
            println!("wrote {} scans to {}", cohort.counts.len(), out.display());
            Ok(())
        }
    }
}

/// Scan ID from a volume path: the file name minus `.lvol`, `.nii` or
/// `.nii.gz`.
pub fn scan_id_from_path(path: &Path) -> Result<String> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad volume path {}", path.display())))?;
    let stem = [".nii.gz", ".nii", ".lvol"]
        .iter()
        .find_map(|ext| name.strip_suffix(ext))
        .unwrap_or(name);
    Ok(stem.to_string())
}

fn ingest(root: &Path, volumes: &[PathBuf], meta: &Path, taxonomy: Option<&Path>) -> Result<()> {
    let patients = load_patient_metadata(meta)?;
    let mut cat = if root.join("patients.json").exists() {
        if taxonomy.is_some() {
            return Err(Error::Conflict(
                "--taxonomy only applies when creating a catalog".into(),
            ));
        }
        Catalog::open(root)?
    } else {
        let tax = crate::taxonomy::load_taxonomy(taxonomy)?;
        Catalog::init(root, PipelineConfig::default(), tax)?
    };
    let (mut added, mut unchanged) = (0, 0);
    for path in volumes {
        let scan_id = scan_id_from_path(path)?;
        let patient = patients
            .iter()
            .find(|p| p.scans.contains(&scan_id))
            .ok_or_else(|| Error::NotFound(format!("no metadata lists scan {scan_id}")))?;
        let grid = read_label_grid(path, GridFormat::from_path(path))?;
        if let Ok(existing) = cat.scan(&scan_id) {
            let same = existing.patient_id == patient.patient_id
                && existing.volumes == structure_volumes(&grid, cat.taxonomy());
            if !same {
                return Err(Error::Conflict(format!(
                    "scan {scan_id} already ingested with different content"
                )));
            }
            unchanged += 1;
            continue;
        }
        let source = path.to_string_lossy();
        cat.ingest_scan(&scan_id, &grid, patient, Some(&source))?;
        added += 1;
    }
    println!("ingested {added} scans ({unchanged} already present)");
    Ok(())
}
