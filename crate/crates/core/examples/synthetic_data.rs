//! Generate a small synthetic dataset, validate its manifest and look at one
//! record. Usage: `cargo run --example synthetic_data [out_dir]`.

use cause_seg::features::{generate_synthetic_dataset, load_validated, Split, SynthSpec, SyntheticWorld};
use cause_seg::tensor::dot;

fn main() -> cause_seg::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let out = std::env::args().nth(1).map_or_else(|| tmp.path().to_path_buf(), Into::into);
    let spec = SynthSpec {
        n_train: 20,
        n_val: 5,
        ..SynthSpec::default()
    };
    generate_synthetic_dataset(&spec, &out)?;
    let manifest = load_validated(&out.join("manifest.json"))?;
    println!(
        "{} records ({} train) in {}, c = {}, grid {:?}",
        manifest.records.len(),
        manifest.paths(Split::Train).len(),
        out.display(),
        manifest.feature_dim,
        manifest.patch_grid
    );

    let world = SyntheticWorld::new(&spec)?;
    let p = &world.prototypes;
    let s = spec.subconcepts_per_class;
    println!("cosine, same class: {:.3}", dot(p.row(0), p.row(1)));
    println!("cosine, other class: {:.3}", dot(p.row(0), p.row(s)));

    let img = world.render(0);
    let labels = img.record.labels.as_ref().expect("synthetic records carry labels");
    println!(
        "image {}: {}x{} patches, {}x{} label pixels, classes present {:?}",
        img.record.image_id,
        img.record.h,
        img.record.w,
        labels.height,
        labels.width,
        img.patch_class.iter().collect::<std::collections::BTreeSet<_>>()
    );
    Ok(())
}
