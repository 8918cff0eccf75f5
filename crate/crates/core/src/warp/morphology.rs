//! Binary morphology with square structuring elements.
//!
//! A `k x k` square is separable, so each pass runs as a row sweep followed
//! by a column sweep using prefix sums.

use crate::types::Mask;

/// Prefix-sum window counts along one line. `get(i)` reads element `i` of
/// the line; returns, for every position, the number of set elements inside
/// `[i - r, i + r]` clipped to the line, and the clipped window length.
fn window_counts(len: usize, r: usize, get: impl Fn(usize) -> bool, out: &mut Vec<(u32, u32)>) {
    out.clear();
    let mut prefix = Vec::with_capacity(len + 1);
    prefix.push(0u32);
    for i in 0..len {
        let last = *prefix.last().unwrap();
        prefix.push(last + get(i) as u32);
    }
    for i in 0..len {
        let lo = i.saturating_sub(r);
        let hi = (i + r + 1).min(len);
        out.push((prefix[hi] - prefix[lo], (hi - lo) as u32));
    }
}

#[derive(Clone, Copy)]
enum Op {
    /// Out-of-image samples count as 0.
    Dilate,
    /// Out-of-image samples count as 1.
    Erode,
}

fn sweep(mask: &Mask, kernel: usize, op: Op) -> Mask {
    let (h, w) = mask.dims();
    let r = kernel / 2;
    let decide = |(ones, len): (u32, u32)| match op {
        Op::Dilate => ones > 0,
        Op::Erode => ones == len,
    };
    let mut rows = Mask::zeros(h, w);
    let mut counts = Vec::new();
    for y in 0..h {
        window_counts(w, r, |x| mask.get(y, x), &mut counts);
        for (x, &c) in counts.iter().enumerate() {
            rows.set(y, x, decide(c));
        }
    }
    let mut out = Mask::zeros(h, w);
    for x in 0..w {
        window_counts(h, r, |y| rows.get(y, x), &mut counts);
        for (y, &c) in counts.iter().enumerate() {
            out.set(y, x, decide(c));
        }
    }
    out
}

/// Binary dilation with a `kernel x kernel` square; pixels outside the image
/// are treated as 0.
pub fn dilate(mask: &Mask, kernel: usize) -> Mask {
    sweep(mask, kernel, Op::Dilate)
}

/// Binary erosion with a `kernel x kernel` square; pixels outside the image
/// are treated as 1.
pub fn erode(mask: &Mask, kernel: usize) -> Mask {
    sweep(mask, kernel, Op::Erode)
}

/// Morphological closing (dilate then erode) with a square of odd side
/// `kernel`.
pub fn close_mask(mask: &Mask, kernel: usize) -> Mask {
    if kernel <= 1 {
        return mask.clone();
    }
    erode(&dilate(mask, kernel), kernel)
}
