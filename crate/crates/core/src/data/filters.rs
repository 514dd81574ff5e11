//! Fixed preprocessing filters kept as baselines for the learned blocks.

use alloc::vec::Vec;

use super::Image;

/// Zero-sum 3x3 high-pass kernel (divided by 8).
pub const HIGHPASS_KERNEL: [[f32; 3]; 3] = [[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]];

#[inline]
fn clamped(image: &Image, r: isize, c: isize, ch: usize) -> f32 {
    let r = r.clamp(0, image.height() as isize - 1) as usize;
    let c = c.clamp(0, image.width() as isize - 1) as usize;
    image.get(r, c, ch)
}

/// `image - median_window(image)` per channel; borders replicate the edge.
/// `window` must be odd.
pub fn median_residual(image: &Image, window: usize) -> Image {
    let half = (window / 2) as isize;
    let mut buf = Vec::with_capacity(window * window);
    Image::from_fn(image.width(), image.height(), |r, c, ch| {
        buf.clear();
        for dr in -half..=half {
            for dc in -half..=half {
                buf.push(clamped(image, r as isize + dr, c as isize + dc, ch));
            }
        }
        buf.sort_by(f32::total_cmp);
        image.get(r, c, ch) - buf[buf.len() / 2]
    })
}

/// Convolution with [`HIGHPASS_KERNEL`] / 8 applied identically to every
/// channel; borders replicate the edge.
pub fn highpass_filter(image: &Image) -> Image {
    Image::from_fn(image.width(), image.height(), |r, c, ch| {
        let mut acc = 0.0;
        for (i, row) in HIGHPASS_KERNEL.iter().enumerate() {
            for (j, &k) in row.iter().enumerate() {
                acc += k * clamped(image, r as isize + i as isize - 1, c as isize + j as isize - 1, ch);
            }
        }
        acc / 8.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_gives_zero() {
        let img = Image::filled(9, 7, [0.3, 0.6, 0.9]);
        assert!(median_residual(&img, 3).data().iter().all(|&v| v == 0.0));
        assert!(highpass_filter(&img).data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn impulse_residual() {
        let img = Image::from_fn(5, 5, |r, c, _| if (r, c) == (2, 2) { 1.0 } else { 0.0 });
        let res = median_residual(&img, 3);
        for r in 0..5 {
            for c in 0..5 {
                let want = if (r, c) == (2, 2) { 1.0 } else { 0.0 };
                assert_eq!(res.get(r, c, 0), want);
            }
        }
        let hp = highpass_filter(&img);
        assert_eq!(hp.get(2, 2, 1), 1.0);
        assert_eq!(hp.get(1, 1, 1), -0.125);
    }
}
