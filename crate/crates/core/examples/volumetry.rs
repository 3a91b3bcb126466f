//! Volumes, zero-volume fraction and Dice overlap for one synthetic scan.

use phantomforge::synth::{SynthConfig, SyntheticCohort};
use phantomforge::taxonomy::Taxonomy;
use phantomforge::volumetry::{dice, structure_volumes, zero_volume_fraction};

fn main() -> phantomforge::Result<()> {
    let tax = Taxonomy::bundled();
    let cohort = SyntheticCohort::generate(&SynthConfig::clean(1, 11), &tax)?;
    let patient = &cohort.patients[0];
    let scan = cohort.scan_ids().next().unwrap().to_string();
    let grid = cohort.render(&scan)?;

    let vt = structure_volumes(&grid, &tax);
    let mut largest: Vec<(u16, f64)> = vt.volumes().collect();
    largest.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("{scan} ({:?}, {} y), largest structures:", patient.sex, patient.age_years.round());
    for (id, ml) in largest.iter().take(8) {
        println!("  {:<24} {ml:9.1} mL", tax.name(*id).unwrap());
    }

    let expected = tax.expected_structures(patient.sex);
    println!("zero-volume fraction: {:.3}", zero_volume_fraction(&vt, &expected)?);

    // Drop one structure and measure how much the overlap suffers.
    let (gone, _) = largest[0];
    let mut edited = grid.clone();
    for v in edited.labels_mut() {
        if *v == gone {
            *v = 0;
        }
    }
    println!("dice after removing {}: {:.4}", tax.name(gone).unwrap(), dice(&grid, &edited)?);
    println!("\nfirst CSV rows:");
    for line in vt.to_csv(&tax).lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
