use crate::error::{Error, Result};
use crate::rng::RngStream;

/// One uniformly drawn position per `window × window` block as the window
/// slides over an `h × w` grid with the given stride. Positions are flat
/// row-major indices, in window order.
pub fn sample_anchors(h: usize, w: usize, window: usize, stride: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("anchor window and stride must be positive".into()));
    }
    if h < window || w < window {
        return Err(Error::InvalidArgument(format!(
            "grid {h}x{w} smaller than anchor window {window}"
        )));
    }
    let mut out = Vec::with_capacity(((h - window) / stride + 1) * ((w - window) / stride + 1));
    for y0 in (0..=h - window).step_by(stride) {
        for x0 in (0..=w - window).step_by(stride) {
            let dy = rng.index(window);
            let dx = rng.index(window);
            out.push((y0 + dy) * w + x0 + dx);
        }
    }
    Ok(out)
}
