//! Marching squares on the cell-centre lattice, plus a bare SVG writer.

use std::fmt::Write as _;

use crate::grid::{GridDomain, IndicatorField, ScalarField};

pub type Polyline = Vec<[f64; 2]>;

/// Isolines of `f` at `level`, with `{f >= level}` on the left. Closed loops
/// repeat their first point at the end. Ambiguous squares connect the
/// corners that are inside.
pub fn isolines(f: &ScalarField, level: f64) -> Vec<Polyline> {
    let dom = &f.domain;
    assert_eq!(dom.dim(), 2, "contours are two-dimensional");
    let (nx, ny) = (dom.cells()[0], dom.cells()[1]);
    let v = &f.values;
    let inside = |x: usize| v[x] >= level;
    // lattice edge ids: 2*idx along +x, 2*idx+1 along +y
    let edge_point = |id: usize| -> [f64; 2] {
        let a = id / 2;
        let b = if id % 2 == 0 { a + 1 } else { a + nx };
        let (pa, pb) = (dom.center_of(a), dom.center_of(b));
        let t = if v[b] == v[a] { 0.5 } else { ((level - v[a]) / (v[b] - v[a])).clamp(0.0, 1.0) };
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };
    let mut next = vec![usize::MAX; 2 * dom.len()];
    let mut has_prev = vec![false; 2 * dom.len()];
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let c = [j * nx + i, j * nx + i + 1, (j + 1) * nx + i + 1, (j + 1) * nx + i];
            // counter-clockwise square edges, edge k runs from corner k to k+1
            let e = [2 * c[0], 2 * c[1] + 1, 2 * c[3], 2 * c[0] + 1];
            let ins = [inside(c[0]), inside(c[1]), inside(c[2]), inside(c[3])];
            let crossings = (0..4).filter(|&k| ins[k] != ins[(k + 1) % 4]).count();
            let mut link = |from: usize, to: usize| {
                next[from] = to;
                has_prev[to] = true;
            };
            if crossings == 2 {
                let exit = (0..4).find(|&k| ins[k] && !ins[(k + 1) % 4]).expect("one exit");
                let entry = (0..4).find(|&k| !ins[k] && ins[(k + 1) % 4]).expect("one entry");
                link(e[exit], e[entry]);
            } else if crossings == 4 {
                // saddle: cut off the two outside corners so the members connect
                for k in (0..4).filter(|&k| !ins[k]) {
                    link(e[(k + 3) % 4], e[k]);
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut used = vec![false; next.len()];
    // open chains first (they start where nothing leads in), then loops
    let starts: Vec<usize> = (0..next.len()).filter(|&k| next[k] != usize::MAX && !has_prev[k]).collect();
    let loops: Vec<usize> = (0..next.len()).filter(|&k| next[k] != usize::MAX && has_prev[k]).collect();
    for s in starts.into_iter().chain(loops) {
        if used[s] {
            continue;
        }
        let mut line = vec![edge_point(s)];
        let mut k = s;
        used[k] = true;
        while next[k] != usize::MAX {
            k = next[k];
            line.push(edge_point(k));
            if used[k] {
                break;
            }
            used[k] = true;
        }
        out.push(line);
    }
    out
}

/// Boundary of a set: the 1/2 isoline of its indicator.
pub fn contour_extract(e: &IndicatorField) -> Vec<Polyline> {
    isolines(&e.as_scalar(), 0.5)
}

pub fn polyline_length(p: &Polyline) -> f64 {
    p.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum()
}

/// One SVG layer: polylines drawn with a stroke colour.
pub struct Layer<'a> {
    pub lines: &'a [Polyline],
    pub stroke: &'a str,
    pub label: &'a str,
}

/// Standalone SVG in physical coordinates (y up), sized to the domain.
pub fn svg_document(dom: &GridDomain, layers: &[Layer]) -> String {
    let (o, ext) = (dom.origin(), dom.extent());
    let px = 600.0 / ext[0].max(ext[1]);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="{} {} {} {}">"#,
        ext[0] * px,
        ext[1] * px,
        o[0],
        -(o[1] + ext[1]),
        ext[0],
        ext[1]
    );
    let _ = writeln!(s, r#"<g transform="scale(1,-1)" fill="none" stroke-width="{}">"#, 1.5 / px);
    for layer in layers {
        let _ = writeln!(s, r#"<g stroke="{}"><title>{}</title>"#, layer.stroke, layer.label);
        for line in layer.lines {
            let mut d = String::new();
            for (i, p) in line.iter().enumerate() {
                let _ = write!(d, "{}{:.6},{:.6}", if i == 0 { "M" } else { " L" }, p[0], p[1]);
            }
            let _ = writeln!(s, r#"<path d="{d}"/>"#);
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, "</g>\n</svg>");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Shape;

    #[test]
    fn single_cell_is_a_diamond() {
        let dom = GridDomain::centered(2, 1.0, 9).unwrap();
        let m = (0..dom.len()).map(|x| x == 4 * 9 + 4).collect();
        let e = IndicatorField::new(&dom, m).unwrap();
        let c = contour_extract(&e);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len(), 5);
        assert_eq!(c[0][0], c[0][4]);
    }

    #[test]
    fn empty_set_has_no_contour() {
        let dom = GridDomain::centered(2, 1.0, 9).unwrap();
        assert!(contour_extract(&IndicatorField::empty(&dom)).is_empty());
    }

    #[test]
    fn ball_length() {
        let r = 0.5;
        let dom = GridDomain::centered(2, 0.7, (1.4 / (r / 50.0)) as usize).unwrap();
        let e = Shape::Ball { center: None, radius: r }.rasterize(&dom).unwrap();
        let c = contour_extract(&e);
        assert_eq!(c.len(), 1);
        let len = polyline_length(&c[0]);
        assert!((len / (2.0 * std::f64::consts::PI * r) - 1.0).abs() < 0.1, "{len}");
    }

    #[test]
    fn diagonal_members_are_joined() {
        let dom = GridDomain::centered(2, 1.0, 8).unwrap();
        let (a, b) = (3 * 8 + 3, 4 * 8 + 4);
        let m = (0..dom.len()).map(|x| x == a || x == b).collect();
        let e = IndicatorField::new(&dom, m).unwrap();
        assert_eq!(contour_extract(&e).len(), 1);
    }
}
