//! Meshes a voxelized ellipsoid, smooths it and writes PLY, OBJ and STL.

use phantomforge::grid::{GridTemplate, VoxelGrid};
use phantomforge::mesh::{
    check_watertight, export_mesh, laplacian_smooth, marching_cubes, mesh_surface_area, mesh_volume,
    MeshFormat,
};

fn ellipsoid(n: usize, axes: [f64; 3], spacing: f64) -> VoxelGrid {
    let tpl = GridTemplate::new([n; 3], [spacing; 3], [0.0; 3]).unwrap();
    let mut g = VoxelGrid::zeros(tpl).unwrap();
    let c = (n as f64 - 1.0) / 2.0;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let r: f64 = [x, y, z]
                    .iter()
                    .zip(axes)
                    .map(|(&p, a)| ((p as f64 - c) / a).powi(2))
                    .sum();
                if r <= 1.0 {
                    g.set(x, y, z, 1);
                }
            }
        }
    }
    g
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mask = ellipsoid(40, [16.0, 11.0, 8.0], 2.0);
    let exact = 4.0 / 3.0 * std::f64::consts::PI * 32.0 * 22.0 * 16.0;
    let raw = marching_cubes(&mask)?;
    let report = check_watertight(&raw);
    println!(
        "{} vertices, {} triangles, watertight={}, euler={}",
        raw.vertex_count(),
        raw.triangle_count(),
        report.watertight,
        raw.euler_characteristic()
    );
    println!("analytic volume {:.0} mm3", exact);

    for (lambda, iters) in [(0.0, 0), (0.5, 10), (0.5, 50)] {
        let m = laplacian_smooth(&raw, lambda, iters)?;
        println!(
            "  lambda {lambda:.1} x{iters:<3} volume {:9.0} mm3  area {:8.0} mm2",
            mesh_volume(&m),
            mesh_surface_area(&m)
        );
    }

    let smooth = laplacian_smooth(&raw, 0.5, 10)?;
    let dir = std::env::temp_dir().join("phantomforge-meshes");
    std::fs::create_dir_all(&dir)?;
    for (name, fmt) in [
        ("ellipsoid.ply", MeshFormat::PlyBinary),
        ("ellipsoid.obj", MeshFormat::Obj),
        ("ellipsoid.stl", MeshFormat::StlBinary),
    ] {
        let path = dir.join(name);
        export_mesh(&smooth, fmt, &path)?;
        println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    }
    Ok(())
}
