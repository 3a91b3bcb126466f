//! Fits population volume models and scores new observations.
//!
//! A unimodal cohort gets a median/robust-sigma model; a cohort drawn from two
//! subpopulations gets a Gaussian mixture chosen by BIC. The outlier
//! probability is the mass of the model's highest-density region that
//! excludes the observation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use phantomforge::qc::{fit_volume_model, gmm_fit_em, outlier_probability, ModelConfig};

fn draw(rng: &mut ChaCha8Rng, mu: f64, sd: f64, n: usize) -> Vec<f64> {
    let d = Normal::new(mu, sd).unwrap();
    (0..n).map(|_| d.sample(rng).max(0.0)).collect()
}

fn main() -> phantomforge::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ModelConfig::default();

    let spleen = draw(&mut rng, 220.0, 40.0, 300);
    let mut thyroid = draw(&mut rng, 12.0, 2.0, 150);
    thyroid.extend(draw(&mut rng, 28.0, 3.0, 150));
    // Some cohort members lack the structure entirely.
    thyroid.extend([0.0; 20]);

    let fit = gmm_fit_em(&thyroid.iter().copied().filter(|v| *v > 0.0).collect::<Vec<_>>(), 2)?;
    println!(
        "raw EM, k=2: weights {:.3?} means {:.2?} in {} iterations",
        fit.params.weights, fit.params.means, fit.iterations
    );

    for (name, id, xs, probes) in [
        ("spleen", 1u16, &spleen, [0.0, 220.0, 300.0, 420.0]),
        ("thyroid", 2u16, &thyroid, [0.0, 12.0, 20.0, 45.0]),
    ] {
        let model = fit_volume_model(xs, id, &cfg)?;
        let dip = model.dip.map(|d| d.p_value).unwrap_or(f64::NAN);
        println!(
            "\n{name}: {:?} (dip p = {dip:.3}, zero prevalence {:.3})",
            model.kind, model.zero_prevalence
        );
        for x in probes {
            println!("  p_out({x:6.1}) = {:.4}", outlier_probability(&model, x)?);
        }
    }
    Ok(())
}
