//! Geometric straightening baseline: locate the bending point on the central
//! axis, cut the image horizontally there, rotate each arm upright about the
//! bend point and stitch them, filling the seam row by row with the row's
//! mean foreground value. Also a parallel thinning pass, which shows the
//! branch artifacts that make skeleton-based axes unreliable.

use crate::backbone::{extract_central_axis_above, smooth_axis, Axis, Point, DEFAULT_SMOOTHING_WINDOW};
use crate::error::{Error, Result};
use crate::imgcore::GrayImage;

/// Rows on each side of a candidate used for the two direction vectors.
pub const BEND_WINDOW: usize = 10;
/// Turning angles below this (degrees) are not a bend.
pub const MIN_BEND_ANGLE: f64 = 5.0;
pub const DEFAULT_THRESHOLD: f32 = 10.0 / 255.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BendAnalysis {
    /// Position of the bend on the axis the analysis was made from.
    pub index: usize,
    pub point: Point,
    /// Degrees between the incoming and outgoing direction vectors.
    pub angle: f64,
    /// Slopes `dx/dy` of the least-squares axis fits of the two arms.
    pub upper_slope: f64,
    pub lower_slope: f64,
}

fn turning_angle(points: &[Point], i: usize, w: usize) -> f64 {
    let (a, b, c) = (points[i - w], points[i], points[i + w]);
    let (v1, v2) = ((b.y - a.y, b.x - a.x), (c.y - b.y, c.x - b.x));
    let cos = (v1.0 * v2.0 + v1.1 * v2.1) / (v1.0.hypot(v1.1) * v2.0.hypot(v2.1));
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Least-squares slope of `x` against `y`; 0 for fewer than two points.
fn fit_slope(points: &[Point]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len() as f64;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let syy: f64 = points.iter().map(|p| (p.y - my).powi(2)).sum();
    let syx: f64 = points.iter().map(|p| (p.y - my) * (p.x - mx)).sum();
    if syy == 0.0 {
        0.0
    } else {
        syx / syy
    }
}

impl BendAnalysis {
    /// Treats axis entry `index` as the bend, whatever its angle.
    pub fn at(axis: &Axis, index: usize) -> Result<Self> {
        let points: Vec<Point> = axis.points().collect();
        if index == 0 || index + 1 >= points.len() {
            return Err(Error::InvalidParameter(format!("bend index {index} is not inside the axis")));
        }
        let angle = if index >= BEND_WINDOW && index + BEND_WINDOW < points.len() {
            turning_angle(&points, index, BEND_WINDOW)
        } else {
            0.0
        };
        Ok(Self {
            index,
            point: points[index],
            angle,
            upper_slope: fit_slope(&points[..=index]),
            lower_slope: fit_slope(&points[index..]),
        })
    }

    /// Rows at or above the bend row belong to the upper arm.
    pub fn in_upper_arm(&self, row: usize) -> bool {
        (row as f64) <= self.point.y
    }
}

/// Single global maximum of the windowed turning angle along `axis`.
pub fn find_bending_point(axis: &Axis) -> Result<BendAnalysis> {
    let needed = 2 * BEND_WINDOW + 1;
    if axis.len() < needed {
        return Err(Error::TooFewRows { found: axis.len(), needed });
    }
    let points: Vec<Point> = axis.points().collect();
    let mut best = (BEND_WINDOW, f64::MIN);
    for i in BEND_WINDOW..points.len() - BEND_WINDOW {
        let a = turning_angle(&points, i, BEND_WINDOW);
        if a > best.1 {
            best = (i, a);
        }
    }
    if best.1 < MIN_BEND_ANGLE {
        return Err(Error::NoSignificantBend { angle: best.1 });
    }
    BendAnalysis::at(axis, best.0)
}

/// Rotates one arm upright about the bend point. `slope` is the arm's
/// `dx/dy`; pixels outside the arm are ignored.
fn upright_arm(img: &GrayImage, bend: &BendAnalysis, upper: bool, slope: f64, threshold: f32) -> Result<GrayImage> {
    let theta = slope.atan();
    let (s, c) = theta.sin_cos();
    let b = bend.point;
    let (w, h) = (img.width(), img.height());
    // every arm pixel must land on the canvas after the rotation
    for r in 0..h {
        if bend.in_upper_arm(r) != upper {
            continue;
        }
        for col in 0..w {
            if img.get(r, col) > threshold {
                let (dy, dx) = (r as f64 - b.y, col as f64 - b.x);
                let (y, x) = (b.y + dy * c + dx * s, b.x - dy * s + dx * c);
                if y < -0.5 || x < -0.5 || y > h as f64 - 0.5 || x > w as f64 - 0.5 {
                    return Err(Error::ExceedsCanvas { width: w, height: h, canvas: w.max(h) });
                }
            }
        }
    }
    let arm = GrayImage::from_fn(w, h, |r, col| if bend.in_upper_arm(r) == upper { img.get(r, col) } else { 0.0 });
    Ok(GrayImage::from_fn(w, h, |r, col| {
        let (dy, dx) = (r as f64 - b.y, col as f64 - b.x);
        arm.sample_bilinear(b.y + dy * c - dx * s, b.x + dy * s + dx * c)
    }))
}

/// Fills background pixels between the outermost foreground pixels of each
/// row with the mean of that row's foreground values; wholly empty rows
/// inside the foreground span take the mean of their nearest filled
/// neighbours across the interpolated extent. Returns the number of pixels
/// written.
pub fn fill_row_gaps(img: &mut GrayImage, threshold: f32) -> usize {
    let (w, h) = (img.width(), img.height());
    let mut rows: Vec<Option<(usize, usize, f32)>> = Vec::with_capacity(h);
    for r in 0..h {
        let row = img.row(r);
        let first = row.iter().position(|&v| v > threshold);
        let last = row.iter().rposition(|&v| v > threshold);
        rows.push(first.zip(last).map(|(l, rt)| {
            let fg: Vec<f32> = row.iter().copied().filter(|&v| v > threshold).collect();
            (l, rt, fg.iter().sum::<f32>() / fg.len() as f32)
        }));
    }
    let mut filled = 0;
    for r in 0..h {
        if let Some((l, rt, mean)) = rows[r] {
            for c in l..=rt {
                if img.get(r, c) <= threshold {
                    img.set(r, c, mean);
                    filled += 1;
                }
            }
        }
    }
    let known: Vec<usize> = (0..h).filter(|&r| rows[r].is_some()).collect();
    for pair in known.windows(2) {
        let (ra, rb) = (pair[0], pair[1]);
        let (la, ra_r, ma) = rows[ra].unwrap();
        let (lb, rb_r, mb) = rows[rb].unwrap();
        for r in ra + 1..rb {
            let t = (r - ra) as f64 / (rb - ra) as f64;
            let l = (la as f64 + t * (lb as f64 - la as f64)).round() as usize;
            let rt = (ra_r as f64 + t * (rb_r as f64 - ra_r as f64)).round() as usize;
            let mean = (ma + mb) / 2.0;
            for c in l..=rt.min(w - 1) {
                img.set(r, c, mean);
                filled += 1;
            }
        }
    }
    filled
}

/// Cut-rotate-stitch straightening for a known bend. The result is
/// re-centred on the canvas by an integer translation.
pub fn stitch_straighten(img: &GrayImage, bend: &BendAnalysis, threshold: f32) -> Result<GrayImage> {
    let upper = upright_arm(img, bend, true, bend.upper_slope, threshold)?;
    let lower = upright_arm(img, bend, false, bend.lower_slope, threshold)?;
    let mut joined = GrayImage::from_fn(img.width(), img.height(), |r, c| upper.get(r, c).max(lower.get(r, c)));
    fill_row_gaps(&mut joined, threshold);
    Ok(recentre(&joined, threshold))
}

fn recentre(img: &GrayImage, threshold: f32) -> GrayImage {
    match img.bounding_box(threshold) {
        Some((t, b, l, r)) => {
            let dy = (img.height() as isize - 1 - (t + b) as isize) / 2;
            let dx = (img.width() as isize - 1 - (l + r) as isize) / 2;
            img.translated(dy, dx)
        }
        None => img.clone(),
    }
}

/// Settings for [`geometric_straighten`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoParams {
    pub threshold: f32,
    pub window: usize,
}

impl Default for GeoParams {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, window: DEFAULT_SMOOTHING_WINDOW }
    }
}

/// Full baseline: axis, bend detection, stitching. A chromosome without a
/// significant bend is returned re-centred but otherwise untouched.
pub fn geometric_straighten(img: &GrayImage, params: &GeoParams) -> Result<GrayImage> {
    let axis = smooth_axis(&extract_central_axis_above(img, params.threshold)?, params.window)?;
    match find_bending_point(&axis) {
        Ok(bend) => stitch_straighten(img, &bend, params.threshold),
        Err(Error::NoSignificantBend { angle }) => {
            log::info!("no significant bend (max turning angle {angle:.1} deg); leaving the image upright");
            Ok(recentre(img, params.threshold))
        }
        Err(e) => Err(e),
    }
}

const OFFSETS: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

/// Binary mask as a 0/1 image.
fn binarize(img: &GrayImage, threshold: f32) -> Vec<bool> {
    img.data().iter().map(|&v| v > threshold).collect()
}

/// Two-subiteration parallel thinning (Guo-Hall) iterated to a fixed point.
/// Returns a binary image with skeleton pixels at 1.
pub fn thin(img: &GrayImage, threshold: f32) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    let mut on = binarize(img, threshold);
    if !on.iter().any(|&b| b) {
        return Err(Error::NoForeground);
    }
    let at = |on: &[bool], r: usize, c: usize, (dy, dx): (isize, isize)| -> bool {
        let (y, x) = (r as isize + dy, c as isize + dx);
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && on[y as usize * w + x as usize]
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for r in 0..h {
                for c in 0..w {
                    if !on[r * w + c] {
                        continue;
                    }
                    // p2..p9 clockwise from north
                    let p: Vec<bool> = OFFSETS.iter().map(|&o| at(&on, r, c, o)).collect();
                    let (p2, p3, p4, p5, p6, p7, p8, p9) = (p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]);
                    let crossings = (!p2 && (p3 || p4)) as u8
                        + (!p4 && (p5 || p6)) as u8
                        + (!p6 && (p7 || p8)) as u8
                        + (!p8 && (p9 || p2)) as u8;
                    let n1 = (p9 || p2) as u8 + (p3 || p4) as u8 + (p5 || p6) as u8 + (p7 || p8) as u8;
                    let n2 = (p2 || p3) as u8 + (p4 || p5) as u8 + (p6 || p7) as u8 + (p8 || p9) as u8;
                    let n = n1.min(n2);
                    let m = if pass == 0 { (p6 || p7 || !p9) && p8 } else { (p2 || p3 || !p5) && p4 };
                    if crossings == 1 && (2..=3).contains(&n) && !m {
                        remove.push(r * w + c);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                on[i] = false;
            }
        }
        if !changed {
            break;
        }
    }
    GrayImage::from_vec(w, h, on.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect())
}

/// Skeleton pixels with exactly one 8-neighbour.
pub fn count_endpoints(skeleton: &GrayImage) -> usize {
    let (w, h) = (skeleton.width() as isize, skeleton.height() as isize);
    let mut count = 0;
    for r in 0..h {
        for c in 0..w {
            if skeleton.get_or_zero(r, c) <= 0.5 {
                continue;
            }
            let n = OFFSETS.iter().filter(|&&(dy, dx)| skeleton.get_or_zero(r + dy, c + dx) > 0.5).count();
            if n == 1 {
                count += 1;
            }
        }
    }
    count
}

/// Number of 8-connected foreground components.
pub fn count_components(img: &GrayImage, threshold: f32) -> usize {
    let (w, h) = (img.width(), img.height());
    let on = binarize(img, threshold);
    let mut seen = vec![false; w * h];
    let mut count = 0;
    for start in 0..w * h {
        if !on[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for (dy, dx) in OFFSETS {
                let (y, x) = (r + dy, c + dx);
                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                    let j = y as usize * w + x as usize;
                    if on[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::AxisRow;
    use proptest::prelude::*;

    fn axis_from(xs: impl Fn(f64) -> f64, rows: std::ops::RangeInclusive<usize>) -> Axis {
        Axis::from_rows(rows.map(|h| AxisRow { h, x: xs(h as f64) }).collect()).unwrap()
    }

    #[test]
    fn v_corner_is_found() {
        let axis = axis_from(|h| 100.0 + (h - 60.0).abs() * 0.8, 20..=100);
        let bend = find_bending_point(&axis).unwrap();
        assert!((bend.point.y - 60.0).abs() <= 2.0, "bend at {}", bend.point.y);
        assert!(bend.angle > 60.0);
    }

    #[test]
    fn straight_axis_has_no_bend() {
        let axis = axis_from(|h| 50.0 + 0.3 * h, 0..=80);
        assert!(matches!(find_bending_point(&axis), Err(Error::NoSignificantBend { .. })));
        assert!(matches!(find_bending_point(&axis_from(|_| 5.0, 0..=15)), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn strongest_of_two_corners_wins() {
        // direction changes of 40 and 25 degrees at rows 50 and 110
        let d0 = 0.0f64;
        let d1 = d0 + 40.0;
        let d2 = d1 - 25.0;
        let slope = |deg: f64| deg.to_radians().tan();
        let x = |h: f64| {
            if h <= 50.0 {
                h * slope(d0)
            } else if h <= 110.0 {
                50.0 * slope(d0) + (h - 50.0) * slope(d1)
            } else {
                50.0 * slope(d0) + 60.0 * slope(d1) + (h - 110.0) * slope(d2)
            }
        };
        let axis = axis_from(|h| 20.0 + x(h), 0..=170);
        let bend = find_bending_point(&axis).unwrap();
        // brute-force scan over every admissible index
        let pts: Vec<Point> = axis.points().collect();
        let scan = (BEND_WINDOW..pts.len() - BEND_WINDOW)
            .max_by(|&a, &b| turning_angle(&pts, a, BEND_WINDOW).total_cmp(&turning_angle(&pts, b, BEND_WINDOW)))
            .unwrap();
        assert_eq!(bend.index, scan);
        assert!((bend.point.y - 50.0).abs() <= 2.0);
        assert!((bend.angle - 40.0).abs() < 1.0);
    }

    #[test]
    fn bend_ignores_intensity_scale() {
        let img = v_shape(256, 40.0, 7.0, 0.9);
        let half = GrayImage::from_fn(256, 256, |r, c| img.get(r, c) * 0.5);
        let axis = |g: &GrayImage| smooth_axis(&extract_central_axis_above(g, 0.0).unwrap(), 11).unwrap();
        assert_eq!(find_bending_point(&axis(&img)).unwrap(), find_bending_point(&axis(&half)).unwrap());
    }

    /// Two bars of `len` px meeting at a right angle at the canvas centre,
    /// opening to the right.
    fn v_shape(canvas: usize, len: f64, width: f64, value: f32) -> GrayImage {
        let corner = Point::new(canvas as f64 / 2.0, canvas as f64 / 2.0 - 20.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let dirs = [(-s, s), (s, s)];
        GrayImage::from_fn(canvas, canvas, |r, c| {
            let (py, px) = (r as f64 - corner.y, c as f64 - corner.x);
            let inside = dirs.iter().any(|&(dy, dx)| {
                let along = py * dy + px * dx;
                let across = (py * dx - px * dy).abs();
                (0.0..len).contains(&along) && across <= width / 2.0
            });
            if inside {
                value
            } else {
                0.0
            }
        })
    }

    #[test]
    fn right_angle_v_doubles_in_height() {
        let img = v_shape(256, 40.0, 9.0, 0.8);
        let out = geometric_straighten(&img, &GeoParams::default()).unwrap();
        let (t, b, ..) = out.bounding_box(DEFAULT_THRESHOLD).unwrap();
        let height = (b - t + 1) as f64;
        assert!((height - 80.0).abs() <= 3.0, "height {height}");
    }

    #[test]
    fn zero_angle_bend_is_identity() {
        let img = GrayImage::from_fn(128, 128, |r, c| {
            if (30..=97).contains(&r) && (58..=69).contains(&c) {
                0.3 + 0.6 * ((r / 6) % 2) as f32
            } else {
                0.0
            }
        });
        let axis = smooth_axis(&extract_central_axis_above(&img, 0.0).unwrap(), 11).unwrap();
        let bend = BendAnalysis::at(&axis, axis.len() / 2).unwrap();
        let out = stitch_straighten(&img, &bend, DEFAULT_THRESHOLD).unwrap();
        let (t0, _, l0, _) = img.bounding_box(0.0).unwrap();
        let (t1, _, l1, _) = out.bounding_box(0.0).unwrap();
        assert!((t0 as isize - t1 as isize).abs() <= 1 && (l0 as isize - l1 as isize).abs() <= 1);
        let aligned = out.translated(t0 as isize - t1 as isize, l0 as isize - l1 as isize);
        let worst = img.data().iter().zip(aligned.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(worst < 1e-5, "max difference {worst}");
    }

    #[test]
    fn gap_fill_uses_row_mean() {
        let mut img = GrayImage::new(10, 3);
        for (c, v) in [(1, 0.2), (2, 0.4), (7, 0.9)] {
            img.set(1, c, v);
        }
        let before: Vec<f32> = img.row(1).iter().copied().filter(|&v| v > DEFAULT_THRESHOLD).collect();
        let mean = before.iter().sum::<f32>() / before.len() as f32;
        let n = fill_row_gaps(&mut img, DEFAULT_THRESHOLD);
        assert_eq!(n, 4);
        for c in 3..=6 {
            assert_eq!(img.get(1, c), mean);
        }
        assert_eq!(img.get(1, 0), 0.0);
        assert_eq!(img.get(1, 8), 0.0);
    }

    #[test]
    fn stitching_keeps_foreground_count() {
        let img = v_shape(256, 40.0, 9.0, 0.8);
        let axis = smooth_axis(&extract_central_axis_above(&img, DEFAULT_THRESHOLD).unwrap(), 11).unwrap();
        let bend = find_bending_point(&axis).unwrap();
        let upper = upright_arm(&img, &bend, true, bend.upper_slope, DEFAULT_THRESHOLD).unwrap();
        let lower = upright_arm(&img, &bend, false, bend.lower_slope, DEFAULT_THRESHOLD).unwrap();
        let joined = GrayImage::from_fn(256, 256, |r, c| upper.get(r, c).max(lower.get(r, c)));
        // counted at half intensity, where bilinear resampling neither grows
        // nor shrinks a flat shape
        let before = img.count_above(0.4) as f64;
        let after = joined.count_above(0.4) as f64;
        assert!((after / before - 1.0).abs() < 0.05, "{before} -> {after}");
    }

    #[test]
    fn arms_that_leave_the_canvas_are_rejected() {
        let img = v_shape(64, 40.0, 5.0, 0.8);
        let axis = smooth_axis(&extract_central_axis_above(&img, 0.0).unwrap(), 11).unwrap();
        let bend = find_bending_point(&axis).unwrap();
        assert!(matches!(stitch_straighten(&img, &bend, DEFAULT_THRESHOLD), Err(Error::ExceedsCanvas { .. })));
    }

    #[test]
    fn bar_thins_to_a_line() {
        let img = GrayImage::from_fn(20, 40, |r, c| if (5..35).contains(&r) && (8..11).contains(&c) { 1.0 } else { 0.0 });
        let sk = thin(&img, 0.5).unwrap();
        let sk = &sk;
        let cols: Vec<usize> = (0..40).flat_map(|r| (0..20).filter(move |&c| sk.get(r, c) > 0.5)).collect();
        assert!(cols.iter().all(|&c| c == 9), "{cols:?}");
        for r in 7..33 {
            assert_eq!((0..20).filter(|&c| sk.get(r, c) > 0.5).count(), 1, "row {r}");
        }
    }

    #[test]
    fn single_pixel_is_fixed() {
        let mut img = GrayImage::new(5, 5);
        img.set(2, 2, 1.0);
        assert_eq!(thin(&img, 0.5).unwrap(), img);
        assert!(matches!(thin(&GrayImage::new(5, 5), 0.5), Err(Error::NoForeground)));
    }

    #[test]
    fn wide_blob_skeleton_branches() {
        // a thick body whose two chromatids separate at both tips
        let img = GrayImage::from_fn(64, 128, |r, c| {
            let x = (c as f64 - 32.0).abs();
            let tip = !(34..=94).contains(&r);
            if (20..=108).contains(&r) && x < 12.0 && !(tip && x < 3.0) {
                0.8
            } else {
                0.0
            }
        });
        let sk = thin(&img, DEFAULT_THRESHOLD).unwrap();
        assert!(count_endpoints(&sk) > 2, "{} endpoints", count_endpoints(&sk));
    }

    fn blob_strategy() -> impl Strategy<Value = GrayImage> {
        prop::collection::vec(prop::bool::weighted(0.55), 18 * 18).prop_map(|bits| {
            // grow the random mask a little so it forms thick shapes
            let base = GrayImage::from_fn(18, 18, |r, c| bits[r * 18 + c] as u8 as f32);
            GrayImage::from_fn(18, 18, |r, c| {
                let (r, c) = (r as isize, c as isize);
                let n = (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (dy, dx))).filter(|&(dy, dx)| base.get_or_zero(r + dy, c + dx) > 0.5).count();
                if n >= 5 {
                    1.0
                } else {
                    0.0
                }
            })
        })
    }

    proptest! {
        #[test]
        fn thinning_is_idempotent_and_keeps_components(img in blob_strategy()) {
            prop_assume!(img.count_above(0.5) > 0);
            let once = thin(&img, 0.5).unwrap();
            prop_assert_eq!(thin(&once, 0.5).unwrap(), once.clone());
            prop_assert_eq!(count_components(&once, 0.5), count_components(&img, 0.5));
        }
    }
}
