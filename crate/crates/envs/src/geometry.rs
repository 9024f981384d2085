pub type Point = [f64; 2];

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn lerp(a: Point, b: Point, s: f64) -> Point {
    let s = s.clamp(0.0, 1.0);
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s]
}

/// Index of the nearest point, lowest index on ties.
pub fn nearest(points: &[Point], p: Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &q) in points.iter().enumerate() {
        let d = dist(p, q);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Centres of a `cols x rows` grid of equal cells covering `width x height`.
pub fn grid_centres(cols: usize, rows: usize, width: f64, height: f64) -> Vec<Point> {
    let (cw, ch) = (width / cols as f64, height / rows as f64);
    let mut out = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            out.push([(c as f64 + 0.5) * cw, (r as f64 + 0.5) * ch]);
        }
    }
    out
}
