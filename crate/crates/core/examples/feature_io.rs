//! Write a UVF1 feature file plus manifest, read them back and validate.

use uvcil::features::{self, FeatureSet, Manifest, ManifestEntry, Split};

fn main() -> uvcil::Result<()> {
    let dir = std::env::temp_dir().join("uvcil-feature-io");
    std::fs::create_dir_all(&dir).map_err(|e| uvcil::Error::Validation(e.to_string()))?;

    let set = FeatureSet::new(
        3,
        vec![0.1, 0.2, 0.3, 1.0, 1.1, 1.2],
        vec!["img_a".into(), "img_b".into()],
    )?;
    features::write_feature_set(&set, dir.join("features.uvf1"))?;

    let manifest = Manifest::new(vec![
        ManifestEntry::new("img_a", Some(0), Split::Train),
        ManifestEntry::new("img_b", Some(1), Split::Test),
        ManifestEntry::new("img_c", Some(2), Split::Train),
    ]);
    manifest.save(dir.join("manifest.json"))?;

    let loaded = features::load_feature_set(dir.join("features.uvf1"))?;
    println!(
        "{} vectors of dim {}: {:?}",
        loaded.count(),
        loaded.dim(),
        loaded.ids()
    );
    println!("file size: {} bytes", set.to_bytes().len());

    let report = features::validate_manifest(&Manifest::load(dir.join("manifest.json"))?, &loaded);
    for finding in &report.findings {
        println!("finding: {finding}");
    }

    match FeatureSet::from_bytes(b"NOPE\x01\0\0\0") {
        Err(e) => println!("corrupt input rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
