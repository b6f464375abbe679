use crate::data::LabelMap;
use crate::models::CLASSES;

/// Structuring element for the per-slice cleanup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Element {
    /// 2x2 block.
    #[default]
    Square2,
    /// 3x3 block.
    Square3,
    /// 3x3 plus sign.
    Cross3,
}

impl Element {
    /// Offsets `(dy, dx)` of the element's pixels.
    pub fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Element::Square2 => &[(0, 0), (0, 1), (1, 0), (1, 1)],
            Element::Square3 => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)],
            Element::Cross3 => &[(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)],
        }
    }
}

fn at(mask: &[bool], h: usize, w: usize, y: isize, x: isize, outside: bool) -> bool {
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        outside
    } else {
        mask[y as usize * w + x as usize]
    }
}

/// Pixels `p` with `p + b` set for every offset `b`. Outside reads as set,
/// so the image border does not eat into the mask.
pub fn erode(mask: &[bool], h: usize, w: usize, el: Element) -> Vec<bool> {
    let off = el.offsets();
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            off.iter().all(|&(dy, dx)| at(mask, h, w, y + dy, x + dx, true))
        })
        .collect()
}

/// Pixels `p` with `p - b` set for some offset `b`; outside reads as clear.
pub fn dilate(mask: &[bool], h: usize, w: usize, el: Element) -> Vec<bool> {
    let off = el.offsets();
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            off.iter().any(|&(dy, dx)| at(mask, h, w, y - dy, x - dx, false))
        })
        .collect()
}

pub fn open(mask: &[bool], h: usize, w: usize, el: Element) -> Vec<bool> {
    dilate(&erode(mask, h, w, el), h, w, el)
}

pub fn close(mask: &[bool], h: usize, w: usize, el: Element) -> Vec<bool> {
    erode(&dilate(mask, h, w, el), h, w, el)
}

/// Most frequent tumor label among the 8 neighbours; ties go to the lower
/// label, no tumor neighbour gives 0.
fn majority_label(labels: &[u8], h: usize, w: usize, y: usize, x: usize) -> u8 {
    let mut votes = [0usize; CLASSES];
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            if (dy, dx) != (0, 0) && yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                votes[labels[yy as usize * w + xx as usize] as usize] += 1;
            }
        }
    }
    let mut best = 0;
    for l in 1..CLASSES {
        if votes[l] > 0 && (best == 0 || votes[l] > votes[best]) {
            best = l;
        }
    }
    best as u8
}

/// Which of the two operators runs first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Order {
    /// Closing, then opening. Fills every single-pixel hole of a solid
    /// region before the opening looks at it.
    #[default]
    CloseOpen,
    /// Opening, then closing. With a 2x2 element a hole diagonal to a
    /// corner takes that corner with it.
    OpenClose,
}

/// Per-slice closing and opening of the tumor mask (labels > 0). Removed
/// pixels become 0; added pixels take the neighbourhood's majority label.
pub fn morph_cleanup_with(m: &LabelMap, el: Element, order: Order) -> LabelMap {
    let [d, h, w] = m.dims();
    let mut out = m.clone();
    for z in 0..d {
        let labels = m.slice(z);
        let mask: Vec<bool> = labels.iter().map(|&l| l > 0).collect();
        let clean = match order {
            Order::CloseOpen => open(&close(&mask, h, w, el), h, w, el),
            Order::OpenClose => close(&open(&mask, h, w, el), h, w, el),
        };
        let dst = out.slice_mut(z);
        for i in 0..h * w {
            dst[i] = match (mask[i], clean[i]) {
                (_, false) => 0,
                (true, true) => labels[i],
                (false, true) => majority_label(labels, h, w, i / w, i % w),
            };
        }
    }
    out
}

pub fn morph_cleanup(m: &LabelMap) -> LabelMap {
    morph_cleanup_with(m, Element::default(), Order::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, f: impl Fn(usize, usize) -> u8) -> LabelMap {
        LabelMap::new([1, h, w], (0..h * w).map(|i| f(i / w, i % w)).collect()).unwrap()
    }

    #[test]
    fn isolated_pixel_removed() {
        let m = map(9, 9, |y, x| u8::from((y, x) == (4, 4)) * 2);
        for el in [Element::Square2, Element::Square3, Element::Cross3] {
            assert!(morph_cleanup_with(&m, el, Order::default()).labels().iter().all(|&l| l == 0));
        }
    }

    #[test]
    fn hole_in_small_square_filled() {
        let m = map(9, 9, |y, x| {
            let inside = (2..7).contains(&y) && (2..7).contains(&x);
            if inside && (y, x) != (4, 4) { 3 } else { 0 }
        });
        let out = morph_cleanup(&m);
        assert_eq!(out.at(0, 4, 4), 3);
        let expected = map(9, 9, |y, x| if (2..7).contains(&y) && (2..7).contains(&x) { 3 } else { 0 });
        assert_eq!(out, expected);
    }

    #[test]
    fn solid_block_unchanged() {
        let m = map(16, 16, |y, x| if (3..13).contains(&y) && (3..13).contains(&x) { 1 + ((y + x) % 4) as u8 } else { 0 });
        assert_eq!(morph_cleanup(&m), m);
        assert_eq!(morph_cleanup_with(&m, Element::Square3, Order::default()), m);
        // The cross rounds off the corners.
        let crossed = morph_cleanup_with(&m, Element::Cross3, Order::default());
        assert_eq!(crossed.at(0, 3, 3), 0);
    }

    #[test]
    fn added_pixel_takes_majority_label() {
        let m = map(12, 12, |y, x| {
            if !((2..10).contains(&y) && (2..10).contains(&x)) || (y, x) == (5, 5) {
                0
            } else if x < 5 {
                4
            } else {
                2
            }
        });
        let out = morph_cleanup(&m);
        // Neighbours of (5,5): three 4s on the left, five 2s elsewhere.
        assert_eq!(out.at(0, 5, 5), 2);
    }

    #[test]
    fn border_does_not_erode() {
        let m = map(6, 6, |_, _| 1);
        assert_eq!(morph_cleanup(&m), m);
    }

    #[test]
    fn every_hole_of_a_block_is_filled() {
        let block = map(14, 14, |y, x| u8::from((2..12).contains(&y) && (2..12).contains(&x)));
        for hole in (3..11).flat_map(|y| (3..11).map(move |x| (y, x))) {
            let mut m = block.clone();
            m.labels_mut()[hole.0 * 14 + hole.1] = 0;
            assert_eq!(morph_cleanup(&m), block, "hole at {hole:?}");
        }
        let mut corner = block.clone();
        corner.labels_mut()[3 * 14 + 3] = 0;
        let opened_first = morph_cleanup_with(&corner, Element::Square2, Order::OpenClose);
        assert_eq!(opened_first.at(0, 2, 2), 0);
    }
}
