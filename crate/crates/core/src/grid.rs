//! Structured P1 meshes on intervals and rectangles, nodal fields and
//! element-wise derived quantities.
//!
//! All geometry is stored in two-component points; in one dimension the
//! second coordinate is identically zero and element shape gradients carry
//! a zero `y` component, so most loops are written once for both cases.

use std::io::{BufRead, Write};
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Uniform simplicial mesh of an interval (d = 1) or a rectangle (d = 2).
#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    extent: [f64; 2],
    cells: [usize; 2],
    coords: Vec<Point>,
    conn: Vec<usize>,
    shape_grads: Vec<[f64; 2]>,
    measures: Vec<f64>,
    boundary: Vec<bool>,
}

impl Mesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.measures.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn node(&self, i: usize) -> Point {
        self.coords[i]
    }

    /// Node indices of element `e`.
    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.nodes_per_element();
        &self.conn[e * npe..(e + 1) * npe]
    }

    /// Gradients of the P1 hat functions of element `e`, in local node order.
    pub fn shape_gradients(&self, e: usize) -> &[[f64; 2]] {
        let npe = self.nodes_per_element();
        &self.shape_grads[e * npe..(e + 1) * npe]
    }

    pub fn measure(&self, e: usize) -> f64 {
        self.measures[e]
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.boundary[i]).collect()
    }

    pub fn domain_measure(&self) -> f64 {
        self.extent[..self.dim].iter().product()
    }

    /// Smallest edge length along the axes.
    pub fn h_min(&self) -> f64 {
        (0..self.dim)
            .map(|a| self.extent[a] / self.cells[a] as f64)
            .fold(f64::INFINITY, f64::min)
    }

    /// Element average of a nodal quantity.
    pub fn element_average(&self, e: usize, nodal: &[f64]) -> f64 {
        let nodes = self.element(e);
        nodes.iter().map(|&i| nodal[i]).sum::<f64>() / nodes.len() as f64
    }

    /// Nodal values of `f` at every mesh node.
    pub fn interpolate(&self, f: impl Fn(Point) -> f64) -> ScalarField {
        ScalarField(self.coords.iter().map(|&x| f(x)).collect())
    }

    /// Nodal values of a vector function; components beyond `dim` are ignored.
    pub fn interpolate_vector(&self, f: impl Fn(Point) -> [f64; 2]) -> VectorField {
        let mut values = Vec::with_capacity(self.n_nodes() * self.dim);
        for &x in &self.coords {
            let v = f(x);
            values.extend_from_slice(&v[..self.dim]);
        }
        VectorField { dim: self.dim, values }
    }

    /// Degrees of freedom of a vector field (node-major, component-minor)
    /// that sit on the boundary.
    pub fn boundary_dofs(&self) -> Vec<usize> {
        let mut dofs = Vec::new();
        for i in 0..self.n_nodes() {
            if self.boundary[i] {
                for c in 0..self.dim {
                    dofs.push(i * self.dim + c);
                }
            }
        }
        dofs
    }
}

/// Builds a uniform mesh with `n[a]` cells along axis `a`.
///
/// In 2D every rectangular cell is split into two right triangles by the
/// diagonal from its lower-left to its upper-right corner.
pub fn build_mesh(dim: usize, extent: &[f64], n: &[usize]) -> Result<Mesh> {
    if dim != 1 && dim != 2 {
        return Err(Error::Mesh(format!("dimension {dim} not supported (expected 1 or 2)")));
    }
    if extent.len() < dim || n.len() < dim {
        return Err(Error::Mesh(format!("need {dim} extents and cell counts")));
    }
    for a in 0..dim {
        if !(extent[a] > 0.0) || !extent[a].is_finite() {
            return Err(Error::Mesh(format!("extent along axis {a} must be positive, got {}", extent[a])));
        }
        if n[a] < 2 {
            return Err(Error::Mesh(format!("need at least 2 cells along axis {a}, got {}", n[a])));
        }
    }
    if dim == 1 {
        Ok(build_interval(extent[0], n[0]))
    } else {
        Ok(build_rectangle([extent[0], extent[1]], [n[0], n[1]]))
    }
}

fn build_interval(length: f64, n: usize) -> Mesh {
    let h = length / n as f64;
    let coords: Vec<Point> = (0..=n)
        .map(|i| {
            // exact endpoint
            let x = if i == n { length } else { i as f64 * h };
            [x, 0.0]
        })
        .collect();
    let mut conn = Vec::with_capacity(2 * n);
    let mut shape_grads = Vec::with_capacity(2 * n);
    let mut measures = Vec::with_capacity(n);
    for e in 0..n {
        conn.extend_from_slice(&[e, e + 1]);
        let len = coords[e + 1][0] - coords[e][0];
        shape_grads.push([-1.0 / len, 0.0]);
        shape_grads.push([1.0 / len, 0.0]);
        measures.push(len);
    }
    let mut boundary = vec![false; n + 1];
    boundary[0] = true;
    boundary[n] = true;
    Mesh {
        dim: 1,
        extent: [length, 0.0],
        cells: [n, 0],
        coords,
        conn,
        shape_grads,
        measures,
        boundary,
    }
}

fn build_rectangle(extent: [f64; 2], n: [usize; 2]) -> Mesh {
    let (nx, ny) = (n[0], n[1]);
    let hx = extent[0] / nx as f64;
    let hy = extent[1] / ny as f64;
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut boundary = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx { extent[0] } else { i as f64 * hx };
            let y = if j == ny { extent[1] } else { j as f64 * hy };
            coords.push([x, y]);
            boundary.push(i == 0 || i == nx || j == 0 || j == ny);
        }
    }
    let mut conn = Vec::with_capacity(6 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            conn.extend_from_slice(&[a, b, c]);
            conn.extend_from_slice(&[a, c, d]);
        }
    }
    let n_el = conn.len() / 3;
    let mut shape_grads = Vec::with_capacity(3 * n_el);
    let mut measures = Vec::with_capacity(n_el);
    for e in 0..n_el {
        let [p0, p1, p2] = [coords[conn[3 * e]], coords[conn[3 * e + 1]], coords[conn[3 * e + 2]]];
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        measures.push(0.5 * det.abs());
        // grad of barycentric coordinate i: rotated opposite edge / det
        let g = |pa: Point, pb: Point| [(pa[1] - pb[1]) / det, (pb[0] - pa[0]) / det];
        shape_grads.push(g(p1, p2));
        shape_grads.push(g(p2, p0));
        shape_grads.push(g(p0, p1));
    }
    Mesh {
        dim: 2,
        extent,
        cells: n,
        coords,
        conn,
        shape_grads,
        measures,
        boundary,
    }
}

/// One real value per mesh node.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ScalarField(pub Vec<f64>);

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        ScalarField(vec![value; n])
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ScalarField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ScalarField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// `dim` reals per node, stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(dim: usize, n_nodes: usize) -> Self {
        VectorField { dim, values: vec![0.0; dim * n_nodes] }
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.dim).copied().collect()
    }
}

/// Piecewise-constant symmetric `dim x dim` tensors, one per element.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField {
    pub dim: usize,
    pub values: Vec<[[f64; 2]; 2]>,
}

impl SymTensorField {
    pub fn is_symmetric(&self) -> bool {
        self.values.iter().all(|t| t[0][1] == t[1][0])
    }

    /// Frobenius inner product of element tensors.
    pub fn contract(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2], dim: usize) -> f64 {
        let mut s = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                s += a[i][j] * b[i][j];
            }
        }
        s
    }

    /// Squared L2 norm over the mesh.
    pub fn l2_norm_squared(&self, mesh: &Mesh) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(e, t)| mesh.measure(e) * Self::contract(t, t, self.dim))
            .sum()
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { expected, got });
    }
    Ok(())
}

/// Exact element-wise gradient of the P1 interpolant of `field`.
pub fn gradient(field: &[f64], mesh: &Mesh) -> Result<Vec<[f64; 2]>> {
    check_len(mesh.n_nodes(), field.len())?;
    Ok((0..mesh.n_elements()).map(|e| element_gradient(field, mesh, e)).collect())
}

#[inline]
pub(crate) fn element_gradient(field: &[f64], mesh: &Mesh, e: usize) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (&i, dphi) in mesh.element(e).iter().zip(mesh.shape_gradients(e)) {
        g[0] += field[i] * dphi[0];
        g[1] += field[i] * dphi[1];
    }
    g
}

/// Element-wise strain of a vector field on element `e`.
#[inline]
pub(crate) fn element_strain(u: &[f64], dim: usize, mesh: &Mesh, e: usize) -> [[f64; 2]; 2] {
    let mut grad = [[0.0; 2]; 2];
    for (&i, dphi) in mesh.element(e).iter().zip(mesh.shape_gradients(e)) {
        for c in 0..dim {
            let ui = u[i * dim + c];
            for a in 0..dim {
                grad[c][a] += ui * dphi[a];
            }
        }
    }
    let mut eps = [[0.0; 2]; 2];
    for i in 0..dim {
        for j in 0..dim {
            eps[i][j] = 0.5 * (grad[i][j] + grad[j][i]);
        }
    }
    eps
}

/// Element-wise symmetric gradient `(u_{i,j} + u_{j,i}) / 2`.
pub fn symmetric_gradient(u: &VectorField, mesh: &Mesh) -> Result<SymTensorField> {
    check_len(mesh.dim(), u.dim)?;
    check_len(mesh.n_nodes() * mesh.dim(), u.values.len())?;
    let values = (0..mesh.n_elements())
        .map(|e| element_strain(&u.values, mesh.dim(), mesh, e))
        .collect();
    Ok(SymTensorField { dim: mesh.dim(), values })
}

/// Integral of a piecewise-constant (per-element) quantity; exact.
pub fn integrate_elementwise(values: &[f64], mesh: &Mesh) -> Result<f64> {
    check_len(mesh.n_elements(), values.len())?;
    Ok(values.iter().zip(mesh.measures()).map(|(v, m)| v * m).sum())
}

/// Integral of a nodal quantity with lumped (vertex) quadrature.
pub fn integrate_nodal(values: &[f64], mesh: &Mesh) -> Result<f64> {
    check_len(mesh.n_nodes(), values.len())?;
    let npe = mesh.nodes_per_element() as f64;
    let mut s = 0.0;
    for e in 0..mesh.n_elements() {
        let m = mesh.measure(e) / npe;
        for &i in mesh.element(e) {
            s += m * values[i];
        }
    }
    Ok(s)
}

/// Plain-text nodal snapshot: `# fields=<names> time=<t>` header followed by
/// rows `node_index x [y] value...`, all reals with 17 significant digits.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub names: Vec<String>,
    pub coords: Vec<Point>,
    pub columns: Vec<Vec<f64>>,
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_snapshot<W: Write>(
    out: &mut W,
    mesh: &Mesh,
    time: f64,
    fields: &[(&str, &[f64])],
) -> Result<()> {
    for (name, values) in fields {
        if name.contains(char::is_whitespace) || name.contains(',') {
            return Err(Error::Snapshot(format!("field name {name:?} must not contain spaces or commas")));
        }
        check_len(mesh.n_nodes(), values.len())?;
    }
    let names: Vec<&str> = fields.iter().map(|(n, _)| *n).collect();
    writeln!(out, "# fields={} time={} dim={}", names.join(","), fmt17(time), mesh.dim())?;
    for i in 0..mesh.n_nodes() {
        let p = mesh.node(i);
        let mut line = format!("{i} {}", fmt17(p[0]));
        if mesh.dim() == 2 {
            line.push(' ');
            line.push_str(&fmt17(p[1]));
        }
        for (_, values) in fields {
            line.push(' ');
            line.push_str(&fmt17(values[i]));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_snapshot<R: BufRead>(input: R) -> Result<Snapshot> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Snapshot("empty input".into()))??;
    let header = header
        .strip_prefix("# ")
        .ok_or_else(|| Error::Snapshot("missing header".into()))?;
    let (mut names, mut time, mut dim) = (None, None, None);
    for tok in header.split_whitespace() {
        match tok.split_once('=') {
            Some(("fields", v)) => names = Some(v.split(',').filter(|s| !s.is_empty()).map(String::from).collect::<Vec<_>>()),
            Some(("time", v)) => time = v.parse::<f64>().ok(),
            Some(("dim", v)) => dim = v.parse::<usize>().ok(),
            _ => return Err(Error::Snapshot(format!("unexpected header token {tok:?}"))),
        }
    }
    let names = names.ok_or_else(|| Error::Snapshot("header lacks fields".into()))?;
    let time = time.ok_or_else(|| Error::Snapshot("header lacks time".into()))?;
    let dim = dim.ok_or_else(|| Error::Snapshot("header lacks dim".into()))?;
    let mut coords = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 1 + dim + names.len() {
            return Err(Error::Snapshot(format!("row {row}: expected {} columns", 1 + dim + names.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Snapshot(format!("row {row}: {e}")));
        let idx: usize = toks[0].parse().map_err(|e| Error::Snapshot(format!("row {row}: {e}")))?;
        if idx != coords.len() {
            return Err(Error::Snapshot(format!("row {row}: node index {idx} out of order")));
        }
        let x = parse(toks[1])?;
        let y = if dim == 2 { parse(toks[2])? } else { 0.0 };
        coords.push([x, y]);
        for (c, col) in columns.iter_mut().enumerate() {
            col.push(parse(toks[1 + dim + c])?);
        }
    }
    Ok(Snapshot { time, names, coords, columns })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_mesh_layout() {
        let m = build_mesh(1, &[1.0], &[4]).unwrap();
        let xs: Vec<f64> = m.coords().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.n_elements(), 4);
        assert!(m.measures().iter().all(|&h| h == 0.25));
        assert_eq!(m.boundary_nodes(), vec![0, 4]);
    }

    #[test]
    fn square_mesh_layout() {
        let m = build_mesh(2, &[1.0, 1.0], &[2, 2]).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_elements(), 8);
        let total: f64 = m.measures().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(m.boundary_nodes(), vec![0, 1, 2, 3, 5, 6, 7, 8]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_mesh(1, &[1.0], &[1]).is_err());
        assert!(build_mesh(1, &[0.0], &[4]).is_err());
        assert!(build_mesh(2, &[1.0, -1.0], &[3, 3]).is_err());
        assert!(build_mesh(3, &[1.0; 3], &[3; 3]).is_err());
    }

    #[test]
    fn measures_cover_domain() {
        let m = build_mesh(2, &[2.0, 0.7], &[7, 5]).unwrap();
        let total: f64 = m.measures().iter().sum();
        assert!((total - 1.4).abs() <= 1e-12 * 1.4);
        assert!(m.measures().iter().all(|&a| a > 0.0));
        let ones = vec![1.0; m.n_nodes()];
        assert!((integrate_nodal(&ones, &m).unwrap() - 1.4).abs() <= 1e-12 * 1.4);
    }

    #[test]
    fn gradient_reproduces_affine_fields() {
        let m1 = build_mesh(1, &[1.0], &[7]).unwrap();
        let f = m1.interpolate(|p| 2.0 * p[0]);
        for g in gradient(&f, &m1).unwrap() {
            assert!((g[0] - 2.0).abs() < 1e-12 && g[1] == 0.0);
        }
        let c = ScalarField::constant(m1.n_nodes(), 3.0);
        assert!(gradient(&c, &m1).unwrap().iter().all(|g| g[0].abs() < 1e-12));

        let m2 = build_mesh(2, &[1.0, 2.0], &[4, 5]).unwrap();
        let f = m2.interpolate(|p| p[0] + 3.0 * p[1]);
        for g in gradient(&f, &m2).unwrap() {
            assert!((g[0] - 1.0).abs() < 1e-12 && (g[1] - 3.0).abs() < 1e-12);
        }
        assert!(gradient(&[1.0, 2.0], &m2).is_err());
    }

    #[test]
    fn strain_of_simple_motions() {
        let m = build_mesh(2, &[1.0, 1.0], &[3, 3]).unwrap();
        let stretch = m.interpolate_vector(|p| [p[0], 0.0]);
        for t in symmetric_gradient(&stretch, &m).unwrap().values {
            assert!((t[0][0] - 1.0).abs() < 1e-12 && t[0][1].abs() < 1e-12 && t[1][1].abs() < 1e-12);
        }
        let rot = m.interpolate_vector(|p| [-p[1], p[0]]);
        let eps = symmetric_gradient(&rot, &m).unwrap();
        assert!(eps.is_symmetric());
        for t in eps.values {
            assert!(t.iter().flatten().all(|v| v.abs() < 1e-12));
        }
        let m1 = build_mesh(1, &[1.0], &[5]).unwrap();
        let u = m1.interpolate_vector(|p| [p[0], 0.0]);
        for t in symmetric_gradient(&u, &m1).unwrap().values {
            assert!((t[0][0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn integration_rules() {
        let m = build_mesh(2, &[1.0, 1.0], &[4, 4]).unwrap();
        let ones = vec![1.0; m.n_elements()];
        assert!((integrate_elementwise(&ones, &m).unwrap() - 1.0).abs() < 1e-14);
        let sq: f64 = m.measures().iter().map(|a| a * a).sum();
        assert!((integrate_elementwise(m.measures(), &m).unwrap() - sq).abs() < 1e-15);

        // lumped integral of the interior hat function at x = 0.5 is h
        let m1 = build_mesh(1, &[1.0], &[4]).unwrap();
        let mut hat = vec![0.0; 5];
        hat[2] = 1.0;
        assert!((integrate_nodal(&hat, &m1).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let m = build_mesh(2, &[1.0, 1.0], &[3, 2]).unwrap();
        let a: Vec<f64> = (0..m.n_nodes()).map(|i| (i as f64 * 0.1).sin() / 3.0).collect();
        let b: Vec<f64> = (0..m.n_nodes()).map(|i| 1e-300 * i as f64 - 7.25e12).collect();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &m, 0.1 + 0.2, &[("w", &a), ("chi", &b)]).unwrap();
        let snap = read_snapshot(&buf[..]).unwrap();
        assert_eq!(snap.time, 0.1 + 0.2);
        assert_eq!(snap.names, vec!["w", "chi"]);
        assert_eq!(snap.columns[0], a);
        assert_eq!(snap.columns[1], b);
        assert_eq!(snap.coords, m.coords());
    }
}
