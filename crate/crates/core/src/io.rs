//! Text and image dumps of fields.

use crate::operator::ScalarField;

/// `x,y,u` rows for every node, interior first.
pub fn field_csv(field: &ScalarField) -> String {
    let d = field.domain();
    let mut s = String::from("x,y,u\n");
    for (k, v) in field.values().iter().enumerate() {
        let p = d.position(k);
        s.push_str(&format!("{:.10e},{:.10e},{:.12e}\n", p[0], p[1], v));
    }
    s
}

/// Binary 8-bit PGM over the lattice bounding box of the domain, values
/// rescaled linearly from [min, max] to [1, 255]; pixels off the domain
/// are 0. Boundary points off the lattice are skipped.
pub fn field_pgm(field: &ScalarField) -> Vec<u8> {
    let d = field.domain();
    let n = d.n_interior();
    let mut pixels: Vec<([i64; 2], f64)> = (0..n).map(|k| (d.interior_index(k), field.values()[k])).collect();
    for (b, p) in d.boundary_points().iter().enumerate() {
        if let Some(idx) = p.lattice {
            pixels.push((idx, field.values()[n + b]));
        }
    }
    let (mut lo, mut hi) = ([i64::MAX; 2], [i64::MIN; 2]);
    for (idx, _) in &pixels {
        for a in 0..2 {
            lo[a] = lo[a].min(idx[a]);
            hi[a] = hi[a].max(idx[a]);
        }
    }
    let w = (hi[0] - lo[0] + 1) as usize;
    let h = (hi[1] - lo[1] + 1) as usize;
    let (min, max) = pixels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let span = if max > min { max - min } else { 1.0 };
    let mut img = vec![0u8; w * h];
    for (idx, v) in pixels {
        let row = (hi[1] - idx[1]) as usize;
        let col = (idx[0] - lo[0]) as usize;
        img[row * w + col] = (1.0 + 254.0 * (v - min) / span).round() as u8;
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img);
    out
}
