//! Fit a concept clusterbook by modularity ascent, then compare it with a
//! k-means++ book on the same patches.

use cause_seg::clusterbook::{concept_ids, fit_clusterbook, fit_clusterbook_kmeanspp, modularity, BookConfig};
use cause_seg::features::{SynthSpec, SyntheticWorld};
use cause_seg::RngStream;

fn main() -> cause_seg::Result<()> {
    let world = SyntheticWorld::new(&SynthSpec::default())?;
    let images: Vec<_> = (0..200).map(|i| world.render(i)).collect();
    let records = || images.iter().map(|i| Ok(i.record.clone()));
    let cfg = BookConfig {
        k: 64,
        ..BookConfig::default()
    };

    let (book, report) = fit_clusterbook(records(), &cfg, &mut RngStream::new(0, "book"))?;
    let trace = &report.modularity_trace;
    println!(
        "modularity over {} steps: {:.4} -> {:.4}",
        trace.len(),
        trace[0],
        trace[trace.len() - 1]
    );
    let kmeans = fit_clusterbook_kmeanspp(records(), &cfg, &mut RngStream::new(0, "book"))?;

    let probe = &images[0].record.features;
    for (name, b) in [("modularity", &book), ("k-means++", &kmeans)] {
        let mut used = vec![false; b.k()];
        for img in &images {
            for id in concept_ids(&img.record.features, b)? {
                used[id] = true;
            }
        }
        let dm = b.distances();
        let positives = (0..b.k() * b.k()).filter(|&i| dm.as_slice()[i] > 0.3).count() - b.k();
        println!(
            "{name:>10}: H(first image) {:.4}, concepts used {}/{}, off-diagonal D_M > 0.3: {positives}",
            modularity(probe, b.prototypes(), cfg.tau_mod)?,
            used.iter().filter(|&&u| u).count(),
            b.k()
        );
    }
    Ok(())
}
