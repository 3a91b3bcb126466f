//! Writes a label grid in both raw layouts, reads it back, and tallies
//! volumes slice by slice without loading the whole grid.
//!
//! ```text
//! cargo run --example grid_io
//! ```

use phantomforge::grid::{read_label_grid, write_label_grid, GridFormat, GridTemplate, VoxelGrid};
use phantomforge::taxonomy::Taxonomy;
use phantomforge::volumetry::structure_volumes_streaming;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tax = Taxonomy::bundled();
    let liver = tax.by_name("liver").unwrap().id;
    let gallbladder = tax.by_name("gallbladder").unwrap().id;
    let tpl = GridTemplate::new([48, 40, 32], [1.5, 1.5, 2.0], [-36.0, -30.0, 0.0])?;
    let mut grid = VoxelGrid::zeros(tpl)?;
    // A liver block with a small gallbladder beside it.
    for z in 4..28 {
        for y in 6..30 {
            for x in 4..30 {
                grid.set(x, y, z, liver);
            }
        }
    }
    for z in 10..16 {
        for y in 12..18 {
            for x in 32..38 {
                grid.set(x, y, z, gallbladder);
            }
        }
    }

    let dir = std::env::temp_dir().join("phantomforge-grid-io");
    std::fs::create_dir_all(&dir)?;
    for (name, compress) in [("plain.lvol", false), ("packed.lvol.gz", true)] {
        let path = dir.join(name);
        write_label_grid(&grid, &path, compress)?;
        let back = read_label_grid(&path, GridFormat::from_path(&path))?;
        assert_eq!(back.labels(), grid.labels());
        let size = std::fs::metadata(&path)?.len();
        println!("{name}: {size} bytes, round trip exact");

        let vt = structure_volumes_streaming(&path, &tax)?;
        for (id, ml) in vt.volumes().filter(|(_, ml)| *ml > 0.0) {
            println!("  {:>3} {:<14} {ml:8.2} mL", id, tax.name(id).unwrap_or("?"));
        }
    }
    Ok(())
}
