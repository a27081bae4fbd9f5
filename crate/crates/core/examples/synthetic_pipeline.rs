//! End-to-end incremental run on a synthetic mixture, comparing variants.
//!
//! Pass a directory as the first argument to also write run artifacts there.

use uvcil::experiment::{self, ExperimentConfig, Variant};
use uvcil::synthetic::{generate_mixture, MixtureSpec};

fn main() -> uvcil::Result<()> {
    let spec = MixtureSpec {
        num_classes: 20,
        dim: 32,
        per_class_count: 100,
        center_scale: 10.0,
        sigma: 1.0,
        seed: 2024,
    };
    let meta = generate_mixture(&spec)?.metadata;
    println!(
        "separability ratio r = {:.1}",
        meta.separability_ratio.unwrap_or(f64::NAN)
    );

    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    for variant in [Variant::Clu, Variant::CluRbf, Variant::AllInOne] {
        let cfg = ExperimentConfig {
            synthetic: Some(spec),
            variant,
            seed: 1,
            output_dir: out
                .as_ref()
                .map(|d| d.join(format!("{variant:?}").to_lowercase())),
            ..Default::default()
        };
        let rep = experiment::run_experiment(&cfg)?;
        println!(
            "{variant:?}: ACAcc {:.3}, BWF {:?}, FWF {:?}, per-stage {:.3?}",
            rep.acacc, rep.bwf, rep.fwf, rep.stage_cacc
        );
    }
    Ok(())
}
