//! Turns organ meshes back into a labelled voxel phantom at a coarser
//! resolution and compares it with the source segmentation.

use phantomforge::grid::GridTemplate;
use phantomforge::mesh::{laplacian_smooth, marching_cubes};
use phantomforge::synth::{SynthConfig, SyntheticCohort};
use phantomforge::taxonomy::Taxonomy;
use phantomforge::volumetry::{dice, structure_volumes};
use phantomforge::voxelize::{assemble_phantom, voxelize_mesh};

fn main() -> phantomforge::Result<()> {
    let tax = Taxonomy::bundled();
    let cohort = SyntheticCohort::generate(&SynthConfig::clean(1, 4), &tax)?;
    let scan = cohort.scan_ids().next().unwrap().to_string();
    let src = cohort.render(&scan)?;
    let tpl = *src.template();

    let mut masks = Vec::new();
    for (id, (lo, hi)) in src.label_bounds() {
        // Meshing the bounding box alone is much cheaper than the full grid.
        let mesh = marching_cubes(&src.extract_mask(id).crop(lo, hi)?)?;
        let mesh = laplacian_smooth(&mesh, 0.3, 5)?;
        masks.push((id, voxelize_mesh(&mesh, &tpl)?));
    }
    let priority: Vec<u16> = masks.iter().map(|(id, _)| *id).collect();
    let phantom = assemble_phantom(&masks, &priority)?;
    println!("{} structures re-voxelized on the source grid", masks.len());
    println!("whole-body dice vs source: {:.4}", dice(&src, &phantom)?);

    let a = structure_volumes(&src, &tax);
    let b = structure_volumes(&phantom, &tax);
    let mut worst: Vec<(u16, f64)> = a
        .volumes()
        .filter(|(_, v)| *v > 0.0)
        .map(|(id, v)| (id, (b.volume_ml(id) - v) / v))
        .collect();
    worst.sort_by(|x, y| y.1.abs().total_cmp(&x.1.abs()));
    println!("largest relative volume changes after smoothing:");
    for (id, rel) in worst.iter().take(5) {
        println!("  {:<24} {:+.1}%", tax.name(*id).unwrap(), rel * 100.0);
    }

    // Coarser output grid covering the same field of view.
    let coarse = GridTemplate::new(
        [0, 1, 2].map(|k| tpl.dims[k] / 2),
        [0, 1, 2].map(|k| tpl.spacing_mm[k] * 2.0),
        tpl.origin_mm,
    )?;
    let (id, _) = masks[0];
    let lo_res = voxelize_mesh(&marching_cubes(&src.extract_mask(id))?, &coarse)?;
    let n = lo_res.labels().iter().filter(|&&v| v != 0).count();
    println!("{} at 2x spacing: {n} voxels", tax.name(id).unwrap());
    Ok(())
}
