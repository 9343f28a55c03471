//! Plane resampling shared by image resize, heatmap upsampling and mask upsampling.
//!
//! All routines use half-pixel centers: output pixel `x` samples the source at
//! `(x + 0.5) * src / dst - 0.5`.

fn source_coord(dst: usize, src: usize, len: usize) -> f64 {
    let c = (dst as f64 + 0.5) * src as f64 / len as f64 - 0.5;
    c.clamp(0.0, (src - 1) as f64)
}

/// Bilinear resampling of a row-major `src_w`x`src_h` plane. Border samples clamp
/// to the edge.
pub(crate) fn bilinear(src: &[f64], src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), src_w * src_h);
    let cols: Vec<(usize, usize, f64)> = (0..dst_w)
        .map(|x| {
            let c = source_coord(x, src_w, dst_w);
            let x0 = c.floor() as usize;
            (x0, (x0 + 1).min(src_w - 1), c - x0 as f64)
        })
        .collect();

    let mut out = Vec::with_capacity(dst_w * dst_h);
    for y in 0..dst_h {
        let c = source_coord(y, src_h, dst_h);
        let y0 = c.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let fy = c - y0 as f64;
        let top = &src[y0 * src_w..(y0 + 1) * src_w];
        let bottom = &src[y1 * src_w..(y1 + 1) * src_w];
        for &(x0, x1, fx) in &cols {
            let upper = top[x0] + (top[x1] - top[x0]) * fx;
            let lower = bottom[x0] + (bottom[x1] - bottom[x0]) * fx;
            out.push(upper + (lower - upper) * fy);
        }
    }
    out
}

/// Nearest-neighbour resampling; preserves the value set of the source.
pub(crate) fn nearest<T: Copy>(src: &[T], src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Vec<T> {
    debug_assert_eq!(src.len(), src_w * src_h);
    let pick = |dst: usize, src: usize, len: usize| -> usize {
        let c = ((dst as f64 + 0.5) * src as f64 / len as f64).floor() as usize;
        c.min(src - 1)
    };
    let cols: Vec<usize> = (0..dst_w).map(|x| pick(x, src_w, dst_w)).collect();
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for y in 0..dst_h {
        let row = pick(y, src_h, dst_h) * src_w;
        out.extend(cols.iter().map(|&x| src[row + x]));
    }
    out
}
