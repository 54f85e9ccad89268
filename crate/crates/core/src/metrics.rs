//! Hypervolume of objective sets (all objectives maximized).

/// Componentwise minimum over all points of all sets, minus 1.
pub fn reference_point<'a>(sets: impl IntoIterator<Item = &'a [[f64; 3]]>) -> Option<[f64; 3]> {
    let mut r: Option<[f64; 3]> = None;
    for p in sets.into_iter().flatten() {
        let cur = r.get_or_insert(*p);
        for k in 0..3 {
            cur[k] = cur[k].min(p[k]);
        }
    }
    r.map(|m| m.map(|v| v - 1.0))
}

/// Area dominated by `pts` in 2D relative to `r`.
fn area_2d(pts: &mut [[f64; 2]], r: [f64; 2]) -> f64 {
    pts.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
    let mut area = 0.0;
    let mut best_y = r[1];
    for p in pts.iter() {
        if p[0] <= r[0] {
            break;
        }
        if p[1] > best_y {
            area += (p[0] - r[0]) * (p[1] - best_y);
            best_y = p[1];
        }
    }
    area
}

/// Exact volume dominated by `points` and bounded below by `reference`.
pub fn hypervolume(points: &[[f64; 3]], reference: [f64; 3]) -> f64 {
    let mut pts: Vec<[f64; 3]> = points
        .iter()
        .copied()
        .filter(|p| (0..3).all(|k| p[k] > reference[k]))
        .collect();
    pts.sort_by(|a, b| b[2].total_cmp(&a[2]));
    let mut volume = 0.0;
    let mut slice: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for i in 0..pts.len() {
        slice.push([pts[i][0], pts[i][1]]);
        let lower = pts.get(i + 1).map_or(reference[2], |p| p[2]);
        let depth = pts[i][2] - lower;
        if depth > 0.0 {
            volume += area_2d(&mut slice, [reference[0], reference[1]]) * depth;
        }
    }
    volume
}
