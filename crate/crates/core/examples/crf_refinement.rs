//! Corrupt a ground-truth label map with blocky noise and clean it up with
//! the dense CRF, which pulls labels toward image colour edges.

use cause_seg::eval::{crf_refine, CrfParams};
use cause_seg::features::{LabelMap, SynthSpec, SyntheticWorld, IGNORE};
use cause_seg::RngStream;

fn accuracy(a: &LabelMap, b: &LabelMap) -> f64 {
    let ok = a.values.iter().zip(&b.values).filter(|(x, y)| x == y && **y != IGNORE).count();
    ok as f64 / a.values.len() as f64
}

fn main() -> cause_seg::Result<()> {
    let spec = SynthSpec::default();
    let world = SyntheticWorld::new(&spec)?;
    let img = world.render(3);
    let truth = img.record.labels.clone().expect("labels");
    let rgb = img.record.rgb.clone().expect("rgb");

    // flip random 4x4 pixel blocks to a random class
    let mut rng = RngStream::new(0, "noise");
    let mut noisy = truth.clone();
    for _ in 0..250 {
        let (by, bx) = (rng.index(truth.height / 4), rng.index(truth.width / 4));
        let label = rng.index(spec.n_classes) as u16;
        for y in by * 4..by * 4 + 4 {
            for x in bx * 4..bx * 4 + 4 {
                noisy.values[y * truth.width + x] = label;
            }
        }
    }
    let params = CrfParams {
        tile: Some(16),
        ..CrfParams::default()
    };
    let refined = crf_refine(&rgb, &noisy, spec.n_classes, &params)?;
    println!("pixel accuracy before CRF: {:.4}", accuracy(&noisy, &truth));
    println!("pixel accuracy after CRF:  {:.4}", accuracy(&refined, &truth));
    Ok(())
}
