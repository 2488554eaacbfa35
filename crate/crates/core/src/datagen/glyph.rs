//! Procedural glyphs: one fixed stroke template per category, jittered by a
//! style seed (translation, scale and stroke thickness).

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::seeds;

type Segment = [(f32, f32); 2];

/// Number of distinct glyph families available.
pub const NUM_TEMPLATES: usize = 16;

fn circle(cx: f32, cy: f32, r: f32, steps: usize) -> Vec<Segment> {
    let pt = |i: usize| {
        let a = i as f32 / steps as f32 * std::f32::consts::TAU;
        (cx + r * a.cos(), cy + r * a.sin())
    };
    (0..steps).map(|i| [pt(i), pt(i + 1)]).collect()
}

/// Stroke templates in unit coordinates, (x, y) with y pointing down.
fn template(category: usize) -> Vec<Segment> {
    let (l, c, r) = (0.15, 0.5, 0.85);
    let (t, m, b) = (0.15, 0.5, 0.85);
    match category {
        0 => vec![[(c, t), (c, b)]],
        1 => vec![[(l, m), (r, m)]],
        2 => vec![[(l, t), (r, b)]],
        3 => vec![[(r, t), (l, b)]],
        4 => vec![[(l, t), (r, b)], [(r, t), (l, b)]],
        5 => vec![[(c, t), (c, b)], [(l, m), (r, m)]],
        6 => vec![
            [(l, t), (r, t)],
            [(r, t), (r, b)],
            [(r, b), (l, b)],
            [(l, b), (l, t)],
        ],
        7 => vec![[(c, t), (r, b)], [(r, b), (l, b)], [(l, b), (c, t)]],
        8 => vec![[(l, t), (l, b)], [(l, b), (r, b)]],
        9 => vec![[(l, t), (r, t)], [(c, t), (c, b)]],
        10 => vec![[(l, t), (r, t)], [(r, t), (l, b)], [(l, b), (r, b)]],
        11 => vec![[(l, t), (l, b)], [(l, b), (r, b)], [(r, b), (r, t)]],
        12 => vec![[(l, t), (l, b)], [(r, t), (r, b)], [(l, m), (r, m)]],
        13 => circle(c, m, 0.35, 16),
        14 => vec![[(l, t), (c, b)], [(c, b), (r, t)]],
        15 => vec![[(l, b), (l, t)], [(l, t), (r, b)], [(r, b), (r, t)]],
        _ => unreachable!("template index checked by caller"),
    }
}

fn segment_distance(p: (f32, f32), seg: &Segment) -> f32 {
    let [(ax, ay), (bx, by)] = *seg;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (ax + t * dx - p.0, ay + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders a `glyph_size x glyph_size` patch (row-major, values in `[0, 1]`).
///
/// The same `(category, style_seed)` pair always yields the same patch.
pub fn render_glyph(category: usize, style_seed: u64, glyph_size: usize) -> Result<Vec<f32>> {
    if category >= NUM_TEMPLATES {
        return Err(invalid(format!(
            "glyph category {category} out of range (0..{NUM_TEMPLATES})"
        )));
    }
    if glyph_size == 0 {
        return Err(invalid("glyph_size must be positive"));
    }
    let mut rng = seeds::rng(seeds::hash64("glyph", &[category as u64, style_seed]));
    let shift_x: f32 = rng.random_range(-0.07..0.07);
    let shift_y: f32 = rng.random_range(-0.07..0.07);
    let scale: f32 = rng.random_range(0.85..1.0);
    let thickness: f32 = rng.random_range(0.09..0.15);

    let strokes: Vec<Segment> = template(category)
        .into_iter()
        .map(|seg| {
            seg.map(|(x, y)| {
                (
                    0.5 + (x - 0.5) * scale + shift_x,
                    0.5 + (y - 0.5) * scale + shift_y,
                )
            })
        })
        .collect();

    let size = glyph_size as f32;
    // Anti-aliasing ramp of roughly one pixel.
    let ramp = 1.0 / size;
    let mut patch = Vec::with_capacity(glyph_size * glyph_size);
    for row in 0..glyph_size {
        for col in 0..glyph_size {
            let p = ((col as f32 + 0.5) / size, (row as f32 + 0.5) / size);
            let d = strokes
                .iter()
                .map(|s| segment_distance(p, s))
                .fold(f32::INFINITY, f32::min);
            let v = 1.0 - (d - thickness / 2.0) / ramp;
            patch.push(v.clamp(0.0, 1.0));
        }
    }
    Ok(patch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = render_glyph(0, 7, 14).unwrap();
        let b = render_glyph(0, 7, 14).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 14 * 14);
        assert_ne!(a, render_glyph(0, 8, 14).unwrap());
    }

    #[test]
    fn values_in_unit_interval() {
        for c in 0..NUM_TEMPLATES {
            for s in 0..5 {
                let g = render_glyph(c, s, 14).unwrap();
                assert!(g.iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(g.iter().any(|&v| v > 0.9), "category {c} has no ink");
            }
        }
    }

    fn differing_fraction(a: &[f32], b: &[f32]) -> f64 {
        let n = a.iter().zip(b).filter(|(x, y)| (**x - **y).abs() > 0.05).count();
        n as f64 / a.len() as f64
    }

    #[test]
    fn neighbouring_categories_differ() {
        let a = render_glyph(0, 7, 14).unwrap();
        let b = render_glyph(1, 7, 14).unwrap();
        let frac = differing_fraction(&a, &b);
        assert!(frac >= 0.10, "only {frac} of pixels differ");
    }

    #[test]
    fn all_template_pairs_distinct() {
        for c1 in 0..NUM_TEMPLATES {
            for c2 in c1 + 1..NUM_TEMPLATES {
                let a = render_glyph(c1, 3, 14).unwrap();
                let b = render_glyph(c2, 3, 14).unwrap();
                assert!(differing_fraction(&a, &b) >= 0.10, "{c1} vs {c2}");
            }
        }
    }

    #[test]
    fn out_of_range_category() {
        assert!(render_glyph(NUM_TEMPLATES, 0, 14).is_err());
    }
}
