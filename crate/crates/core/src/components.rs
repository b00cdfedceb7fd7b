//! 4-connected component labelling (two-pass, union-find).

use crate::image::Mask;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Per-pixel component labels (`0` = background, components numbered from
/// `1` in raster order of their first pixel) and the component count.
pub fn label(mask: &Mask) -> (Vec<usize>, usize) {
    let (w, h) = mask.shape();
    let mut provisional = vec![0usize; w * h];
    let mut parent = vec![0usize];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let left = if x > 0 { provisional[y * w + x - 1] } else { 0 };
            let up = if y > 0 { provisional[(y - 1) * w + x] } else { 0 };
            provisional[y * w + x] = match (left, up) {
                (0, 0) => {
                    parent.push(parent.len());
                    parent.len() - 1
                }
                (l, 0) => l,
                (0, u) => u,
                (l, u) => {
                    union(&mut parent, l, u);
                    l.min(u)
                }
            };
        }
    }
    // Compact roots to 1..=n in raster order of first appearance.
    let mut compact = vec![0usize; parent.len()];
    let mut n = 0;
    let mut labels = vec![0usize; w * h];
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p);
        if compact[root] == 0 {
            n += 1;
            compact[root] = n;
        }
        labels[i] = compact[root];
    }
    (labels, n)
}

/// Components as separate masks, in raster order of their first pixel.
pub fn components(mask: &Mask) -> Vec<Mask> {
    let (w, h) = mask.shape();
    let (labels, n) = label(mask);
    let mut out = vec![Mask::empty(w, h); n];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            out[l - 1].set(i % w, i / w, true);
        }
    }
    out
}

/// Union of `mask` with its 4-neighbourhood dilated `radius` times.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    let (w, h) = mask.shape();
    let mut cur = mask.clone();
    for _ in 0..radius {
        let prev = cur.clone();
        for y in 0..h {
            for x in 0..w {
                if prev.get(x, y) {
                    continue;
                }
                let hit = (x > 0 && prev.get(x - 1, y))
                    || (x + 1 < w && prev.get(x + 1, y))
                    || (y > 0 && prev.get(x, y - 1))
                    || (y + 1 < h && prev.get(x, y + 1));
                if hit {
                    cur.set(x, y, true);
                }
            }
        }
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        Mask::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn u_shape_merges_into_one_component() {
        let m = mask_from(&["#..#", "#..#", "####"]);
        let (_, n) = label(&m);
        assert_eq!(n, 1);
    }

    #[test]
    fn diagonal_pixels_are_not_connected() {
        let m = mask_from(&["#.", ".#"]);
        assert_eq!(label(&m).1, 2);
    }

    #[test]
    fn components_partition_the_mask() {
        let m = mask_from(&["##..#", "....#", "#.#..", "#.###"]);
        let comps = components(&m);
        assert_eq!(comps.len(), 4);
        assert_eq!(comps.iter().map(Mask::count).sum::<usize>(), m.count());
        assert_eq!(comps[0].count(), 2);
    }

    #[test]
    fn dilation_grows_by_manhattan_radius() {
        let m = Mask::from_fn(7, 7, |x, y| x == 3 && y == 3);
        assert_eq!(dilate(&m, 1).count(), 5);
        assert_eq!(dilate(&m, 2).count(), 13);
    }
}
