//! Assembly of the spatial operators: weighted elastic and viscous forms,
//! enthalpy diffusion, the p-Laplacian residual, thermal coupling and the
//! lumped mass.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{element_gradient, element_strain, Mesh};
use crate::material::{isotropic_density, MaterialModel};

/// Square sparse matrix in compressed row storage. Every row stores its
/// diagonal entry, even when zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed in
    /// input order, so the result is deterministic.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.extend((0..n).map(|i| (i, i, 0.0)));
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix { n, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SparseMatrix {
            n: d.len(),
            row_ptr: (0..=d.len()).collect(),
            col_idx: (0..d.len()).collect(),
            values: d.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.bilinear_form(x, x)
    }

    /// `xᵀ A y`.
    pub fn bilinear_form(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul_vec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    fn same_pattern(&self, other: &SparseMatrix) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    /// `Σ c_k A_k`; falls back to a pattern merge when the patterns differ.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> Result<SparseMatrix> {
        let first = terms.first().ok_or_else(|| Error::Shape { expected: 1, got: 0 })?.1;
        if terms.iter().all(|(_, m)| m.same_pattern(first)) {
            let mut out = first.clone();
            for (k, v) in out.values.iter_mut().enumerate() {
                *v = terms.iter().map(|(c, m)| c * m.values[k]).sum();
            }
            return Ok(out);
        }
        let mut triplets = Vec::new();
        for (c, m) in terms {
            if m.n != first.n {
                return Err(Error::Shape { expected: first.n, got: m.n });
            }
            for i in 0..m.n {
                triplets.extend(m.row(i).map(|(j, v)| (i, j, c * v)));
            }
        }
        Ok(SparseMatrix::from_triplets(first.n, triplets))
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, di) in d.iter().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let k = self.col_idx[r.clone()].binary_search(&i).expect("diagonal stored");
            self.values[r.start + k] += di;
        }
    }

    /// Symmetric elimination of homogeneous Dirichlet dofs: rows and
    /// columns are zeroed and the diagonal set to one.
    pub fn apply_dirichlet(&mut self, dofs: &[usize]) {
        let mut fixed = vec![false; self.n];
        for &d in dofs {
            fixed[d] = true;
        }
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if fixed[i] || fixed[j] {
                    self.values[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        a
    }
}

/// Row-sum lumped P1 mass, `M_i = Σ_{e∋i} |e| / (d+1)`.
pub fn lumped_mass(mesh: &Mesh) -> Vec<f64> {
    let npe = mesh.nodes_per_element() as f64;
    let mut m = vec![0.0; mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let share = mesh.measure(e) / npe;
        for &i in mesh.element(e) {
            m[i] += share;
        }
    }
    m
}

fn check_nodal(mesh: &Mesh, v: &[f64]) -> Result<()> {
    if v.len() != mesh.n_nodes() {
        return Err(Error::Shape { expected: mesh.n_nodes(), got: v.len() });
    }
    Ok(())
}

fn check_vector(mesh: &Mesh, v: &[f64]) -> Result<()> {
    let n = mesh.n_nodes() * mesh.dim();
    if v.len() != n {
        return Err(Error::Shape { expected: n, got: v.len() });
    }
    Ok(())
}

/// Stiffness of `η ↦ l1 ∫ η̄ div u div v + 2 l2 ∫ η̄ ε(u):ε(v)` on vector dofs
/// `node * dim + component`.
pub fn assemble_isotropic(eta: &[f64], mesh: &Mesh, l1: f64, l2: f64) -> Result<SparseMatrix> {
    check_nodal(mesh, eta)?;
    if let Some((node, &value)) = eta.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeWeight { node, value });
    }
    let dim = mesh.dim();
    let blocks: Vec<Vec<(usize, usize, f64)>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let w = mesh.element_average(e, eta) * mesh.measure(e);
            let nodes = mesh.element(e);
            let g = mesh.shape_gradients(e);
            let mut out = Vec::with_capacity(nodes.len() * nodes.len() * dim * dim);
            for (a, &na) in nodes.iter().enumerate() {
                for (b, &nb) in nodes.iter().enumerate() {
                    let dot = g[a][0] * g[b][0] + g[a][1] * g[b][1];
                    for i in 0..dim {
                        for j in 0..dim {
                            let delta = if i == j { dot } else { 0.0 };
                            let v = w * (l1 * g[a][i] * g[b][j] + l2 * (delta + g[a][j] * g[b][i]));
                            out.push((na * dim + i, nb * dim + j, v));
                        }
                    }
                }
            }
            out
        })
        .collect();
    Ok(SparseMatrix::from_triplets(mesh.n_nodes() * dim, blocks.concat()))
}

/// Elastic form `e(η; u, v)` with the Lamé constants of `model`.
pub fn assemble_elastic(eta: &[f64], mesh: &Mesh, model: &MaterialModel) -> Result<SparseMatrix> {
    assemble_isotropic(eta, mesh, model.lambda1, model.lambda2)
}

/// Viscous form `v(η; u, v)` with the viscosity constants of `model`.
pub fn assemble_viscous(eta: &[f64], mesh: &Mesh, model: &MaterialModel) -> Result<SparseMatrix> {
    assemble_isotropic(eta, mesh, model.ell1, model.ell2)
}

/// Scalar stiffness `∫ K̄ ∇w·∇v` with pure Neumann boundary; the kernel is
/// the constants.
pub fn assemble_w_diffusion(k_vals: &[f64], mesh: &Mesh) -> Result<SparseMatrix> {
    check_nodal(mesh, k_vals)?;
    if let Some((node, &value)) = k_vals.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveConductivity { node, value });
    }
    Ok(scalar_stiffness(k_vals, mesh))
}

/// Neumann Laplacian `∫ ∇w·∇v`.
pub fn laplacian(mesh: &Mesh) -> SparseMatrix {
    scalar_stiffness(&vec![1.0; mesh.n_nodes()], mesh)
}

fn scalar_stiffness(k_vals: &[f64], mesh: &Mesh) -> SparseMatrix {
    let blocks: Vec<Vec<(usize, usize, f64)>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let w = mesh.element_average(e, k_vals) * mesh.measure(e);
            let nodes = mesh.element(e);
            let g = mesh.shape_gradients(e);
            let mut out = Vec::with_capacity(nodes.len() * nodes.len());
            for (a, &na) in nodes.iter().enumerate() {
                for (b, &nb) in nodes.iter().enumerate() {
                    out.push((na, nb, w * (g[a][0] * g[b][0] + g[a][1] * g[b][1])));
                }
            }
            out
        })
        .collect();
    SparseMatrix::from_triplets(mesh.n_nodes(), blocks.concat())
}

/// Discrete gradient energy `Φ(χ) = Σ_e |e| φ(∇χ_e)`.
pub fn phi_functional(chi: &[f64], mesh: &Mesh, model: &MaterialModel) -> f64 {
    (0..mesh.n_elements())
        .map(|e| mesh.measure(e) * model.phi(element_gradient(chi, mesh, e)))
        .sum()
}

/// `r_i = Σ_e |e| d(∇χ_e)·∇φ_i`, the gradient of [`phi_functional`].
pub fn p_laplacian_residual(chi: &[f64], mesh: &Mesh, model: &MaterialModel) -> Result<Vec<f64>> {
    check_nodal(mesh, chi)?;
    let mut r = vec![0.0; mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let d = model.flux(element_gradient(chi, mesh, e));
        let m = mesh.measure(e);
        for (&i, g) in mesh.element(e).iter().zip(mesh.shape_gradients(e)) {
            r[i] += m * (d[0] * g[0] + d[1] * g[1]);
        }
    }
    Ok(r)
}

/// Element-wise divergence of a vector field.
pub fn divergence(v: &[f64], mesh: &Mesh) -> Result<Vec<f64>> {
    check_vector(mesh, v)?;
    let dim = mesh.dim();
    Ok((0..mesh.n_elements())
        .map(|e| {
            let eps = element_strain(v, dim, mesh, e);
            (0..dim).map(|i| eps[i][i]).sum()
        })
        .collect())
}

/// Lumped nodal divergence `D_i = Σ_{e∋i} |e|/(d+1) div v_e`.
pub fn divergence_lumped(v: &[f64], mesh: &Mesh) -> Result<Vec<f64>> {
    let div = divergence(v, mesh)?;
    let npe = mesh.nodes_per_element() as f64;
    let mut out = vec![0.0; mesh.n_nodes()];
    for (e, de) in div.iter().enumerate() {
        for &i in mesh.element(e) {
            out[i] += mesh.measure(e) / npe * de;
        }
    }
    Ok(out)
}

/// `-ρ ∫ θ̄ div v`.
pub fn thermal_coupling_apply(theta: &[f64], v: &[f64], mesh: &Mesh, model: &MaterialModel) -> Result<f64> {
    check_nodal(mesh, theta)?;
    if model.rho == 0.0 {
        return Ok(0.0);
    }
    let div = divergence(v, mesh)?;
    let s: f64 = div
        .iter()
        .enumerate()
        .map(|(e, d)| mesh.measure(e) * mesh.element_average(e, theta) * d)
        .sum();
    Ok(-model.rho * s)
}

/// Load vector of `v ↦ ρ ∫ θ̄ div v`, i.e. minus the gradient of
/// [`thermal_coupling_apply`].
pub fn thermal_coupling_vector(theta: &[f64], mesh: &Mesh, rho: f64) -> Result<Vec<f64>> {
    check_nodal(mesh, theta)?;
    let dim = mesh.dim();
    let mut f = vec![0.0; mesh.n_nodes() * dim];
    if rho == 0.0 {
        return Ok(f);
    }
    for e in 0..mesh.n_elements() {
        let w = rho * mesh.measure(e) * mesh.element_average(e, theta);
        for (&a, g) in mesh.element(e).iter().zip(mesh.shape_gradients(e)) {
            for i in 0..dim {
                f[a * dim + i] += w * g[i];
            }
        }
    }
    Ok(f)
}

/// `½ e(η; u, u)` evaluated element by element.
pub fn elastic_energy(eta: &[f64], u: &[f64], mesh: &Mesh, model: &MaterialModel) -> Result<f64> {
    weighted_energy(eta, u, mesh, model.lambda1, model.lambda2)
}

/// `v(η; u, u)` evaluated element by element (no factor ½).
pub fn viscous_form(eta: &[f64], u: &[f64], mesh: &Mesh, model: &MaterialModel) -> Result<f64> {
    Ok(2.0 * weighted_energy(eta, u, mesh, model.ell1, model.ell2)?)
}

fn weighted_energy(eta: &[f64], u: &[f64], mesh: &Mesh, l1: f64, l2: f64) -> Result<f64> {
    check_nodal(mesh, eta)?;
    check_vector(mesh, u)?;
    let dim = mesh.dim();
    Ok((0..mesh.n_elements())
        .map(|e| {
            let eps = element_strain(u, dim, mesh, e);
            0.5 * mesh.measure(e) * mesh.element_average(e, eta) * isotropic_density(l1, l2, &eps, dim)
        })
        .sum())
}

/// Nodal elastic energy density `Σ_{e∋i} |e|/(d+1) · ½ ε:R_e ε / M_i`, the
/// derivative of `½ e(b; u, u)` with respect to the nodal value of `b`
/// divided by the lumped mass.
pub fn elastic_density_nodal(u: &[f64], mesh: &Mesh, model: &MaterialModel) -> Result<Vec<f64>> {
    check_vector(mesh, u)?;
    let dim = mesh.dim();
    let npe = mesh.nodes_per_element() as f64;
    let mass = lumped_mass(mesh);
    let mut out = vec![0.0; mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let eps = element_strain(u, dim, mesh, e);
        let dens = 0.5 * model.elastic_density(&eps, dim);
        for &i in mesh.element(e) {
            out[i] += mesh.measure(e) / npe * dens;
        }
    }
    for (o, m) in out.iter_mut().zip(&mass) {
        *o /= m;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_mesh;
    use crate::material::tests::sample_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meshes() -> Vec<Mesh> {
        vec![build_mesh(1, &[1.0], &[7]).unwrap(), build_mesh(2, &[1.0, 0.7], &[4, 3]).unwrap()]
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    /// Direct element-loop evaluation of `l1 ∫η̄ div u div v + 2 l2 ∫η̄ ε(u):ε(v)`.
    fn form_oracle(eta: &[f64], u: &[f64], v: &[f64], mesh: &Mesh, l1: f64, l2: f64) -> f64 {
        let dim = mesh.dim();
        let mut s = 0.0;
        for e in 0..mesh.n_elements() {
            let eu = element_strain(u, dim, mesh, e);
            let ev = element_strain(v, dim, mesh, e);
            let (mut tu, mut tv, mut ee) = (0.0, 0.0, 0.0);
            for i in 0..dim {
                tu += eu[i][i];
                tv += ev[i][i];
                for j in 0..dim {
                    ee += eu[i][j] * ev[i][j];
                }
            }
            s += mesh.measure(e) * mesh.element_average(e, eta) * (l1 * tu * tv + 2.0 * l2 * ee);
        }
        s
    }

    #[test]
    fn triplets_merge_and_dense() {
        let a = SparseMatrix::from_triplets(2, vec![(0, 1, 1.0), (0, 0, 2.0), (0, 1, 0.5), (1, 0, 1.5)]);
        assert_eq!(a.to_dense(), vec![vec![2.0, 1.5], vec![1.5, 0.0]]);
        assert_eq!(a.mul_vec(&[1.0, 2.0]), vec![5.0, 1.5]);
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn zero_weight_gives_zero_matrix() {
        let model = sample_model();
        for mesh in meshes() {
            let k = assemble_elastic(&vec![0.0; mesh.n_nodes()], &mesh, &model).unwrap();
            assert!(k.to_dense().iter().flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn negative_weight_rejected() {
        let mesh = &meshes()[0];
        let mut eta = vec![1.0; mesh.n_nodes()];
        eta[3] = -0.1;
        assert!(matches!(assemble_elastic(&eta, mesh, &sample_model()), Err(Error::NegativeWeight { node: 3, .. })));
        assert!(assemble_w_diffusion(&eta, mesh).is_err());
    }

    #[test]
    fn one_dimensional_elastic_is_scaled_stiffness() {
        let model = sample_model();
        let mesh = build_mesh(1, &[1.0], &[5]).unwrap();
        let k = assemble_elastic(&vec![1.0; 6], &mesh, &model).unwrap();
        let lap = laplacian(&mesh);
        for i in 0..6 {
            for j in 0..6 {
                assert!((k.get(i, j) - 3.0 * lap.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forms_match_quadrature_oracle() {
        let model = sample_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mesh in meshes() {
            let nd = mesh.n_nodes() * mesh.dim();
            for _ in 0..10 {
                let eta = random_vec(&mut rng, mesh.n_nodes(), 0.0, 2.0);
                let u = random_vec(&mut rng, nd, -1.0, 1.0);
                let v = random_vec(&mut rng, nd, -1.0, 1.0);
                let e = assemble_elastic(&eta, &mesh, &model).unwrap();
                let vis = assemble_viscous(&eta, &mesh, &model).unwrap();
                let oe = form_oracle(&eta, &u, &v, &mesh, 1.0, 1.0);
                let ov = form_oracle(&eta, &u, &v, &mesh, 0.5, 0.5);
                assert!((e.bilinear_form(&u, &v) - oe).abs() <= 1e-12 * oe.abs().max(1.0));
                assert!((vis.bilinear_form(&u, &v) - ov).abs() <= 1e-12 * ov.abs().max(1.0));
                let half = elastic_energy(&eta, &u, &mesh, &model).unwrap();
                assert!((2.0 * half - e.quadratic_form(&u)).abs() <= 1e-12 * half.max(1.0));
                assert!(e.asymmetry() < 1e-12 && vis.asymmetry() < 1e-12);
            }
        }
    }

    #[test]
    fn continuity_bound() {
        let model = sample_model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c2 = 2.0 * model.lambda1 + 2.0 * model.lambda2;
        for mesh in meshes() {
            let nd = mesh.n_nodes() * mesh.dim();
            let lap = laplacian(&mesh);
            let grad_norm = |u: &[f64]| {
                (0..mesh.dim())
                    .map(|c| {
                        let uc: Vec<f64> = u.iter().skip(c).step_by(mesh.dim()).copied().collect();
                        lap.quadratic_form(&uc)
                    })
                    .sum::<f64>()
                    .sqrt()
            };
            for _ in 0..50 {
                let eta = random_vec(&mut rng, mesh.n_nodes(), 0.0, 3.0);
                let u = random_vec(&mut rng, nd, -1.0, 1.0);
                let v = random_vec(&mut rng, nd, -1.0, 1.0);
                let e = assemble_elastic(&eta, &mesh, &model).unwrap();
                let eta_max = eta.iter().copied().fold(0.0, f64::max);
                assert!(e.bilinear_form(&u, &v).abs() <= c2 * eta_max * grad_norm(&u) * grad_norm(&v) + 1e-12);
            }
        }
    }

    #[test]
    fn w_diffusion_hand_assembly() {
        let mesh = build_mesh(1, &[1.0], &[2]).unwrap();
        let a = assemble_w_diffusion(&[1.0; 3], &mesh).unwrap();
        let expected = [[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.get(i, j) - expected[i][j]).abs() < 1e-14);
            }
        }
        for mesh in meshes() {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let k = random_vec(&mut rng, mesh.n_nodes(), 0.5, 2.0);
            let a = assemble_w_diffusion(&k, &mesh).unwrap();
            assert!(a.mul_vec(&vec![1.0; mesh.n_nodes()]).iter().all(|v| v.abs() < 1e-12));
            let w = random_vec(&mut rng, mesh.n_nodes(), -1.0, 1.0);
            let oracle: f64 = (0..mesh.n_elements())
                .map(|e| {
                    let g = element_gradient(&w, &mesh, e);
                    mesh.measure(e) * mesh.element_average(e, &k) * (g[0] * g[0] + g[1] * g[1])
                })
                .sum();
            assert!((a.quadratic_form(&w) - oracle).abs() < 1e-12 * oracle.max(1.0));
        }
    }

    #[test]
    fn p_laplacian_examples() {
        let model = sample_model();
        let mesh = build_mesh(1, &[1.0], &[8]).unwrap();
        let r = p_laplacian_residual(&vec![0.3; 9], &mesh, &model).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        let s = 0.7;
        let chi: Vec<f64> = mesh.coords().iter().map(|p| s * p[0]).collect();
        let r = p_laplacian_residual(&chi, &mesh, &model).unwrap();
        assert!((r[0] + s * s * s).abs() < 1e-14);
        assert!((r[8] - s * s * s).abs() < 1e-14);
        assert!(r[1..8].iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn p_laplacian_is_gradient_of_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = sample_model();
        for mesh in meshes() {
            for flux in [crate::material::FluxKind::Power, crate::material::FluxKind::Regularized] {
                model.flux = flux;
                let chi = random_vec(&mut rng, mesh.n_nodes(), 0.0, 1.0);
                let r = p_laplacian_residual(&chi, &mesh, &model).unwrap();
                for i in 0..mesh.n_nodes() {
                    let h = 1e-6;
                    let (mut a, mut b) = (chi.clone(), chi.clone());
                    a[i] += h;
                    b[i] -= h;
                    let fd = (phi_functional(&a, &mesh, &model) - phi_functional(&b, &mesh, &model)) / (2.0 * h);
                    assert!((fd - r[i]).abs() <= 1e-6 * r[i].abs().max(1e-2), "{fd} vs {}", r[i]);
                }
            }
        }
    }

    #[test]
    fn thermal_coupling_examples() {
        let mut model = sample_model();
        let mesh = build_mesh(2, &[1.0, 1.0], &[4, 4]).unwrap();
        let theta = vec![1.0; mesh.n_nodes()];
        let v = mesh.interpolate_vector(|p| [p[0], 0.0]).values;
        assert_eq!(thermal_coupling_apply(&theta, &v, &mesh, &model).unwrap(), 0.0);
        model.rho = 2.0;
        assert!((thermal_coupling_apply(&theta, &v, &mesh, &model).unwrap() + 2.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let theta = random_vec(&mut rng, mesh.n_nodes(), 0.0, 1.0);
        let v = random_vec(&mut rng, 2 * mesh.n_nodes(), -1.0, 1.0);
        let f = thermal_coupling_vector(&theta, &mesh, model.rho).unwrap();
        let direct = thermal_coupling_apply(&theta, &v, &mesh, &model).unwrap();
        let via_vec: f64 = f.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((direct + via_vec).abs() < 1e-12);
    }

    #[test]
    fn lumped_mass_properties() {
        for mesh in meshes() {
            let m = lumped_mass(&mesh);
            assert!(m.iter().all(|&v| v > 0.0));
            assert!((m.iter().sum::<f64>() - mesh.domain_measure()).abs() < 1e-12);
        }
        let mesh = build_mesh(1, &[1.0], &[4]).unwrap();
        assert!((lumped_mass(&mesh)[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn elastic_density_is_derivative_of_energy() {
        let model = sample_model();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for mesh in meshes() {
            let u = random_vec(&mut rng, mesh.n_nodes() * mesh.dim(), -1.0, 1.0);
            let eta = random_vec(&mut rng, mesh.n_nodes(), 0.5, 1.0);
            let dens = elastic_density_nodal(&u, &mesh, &model).unwrap();
            let m = lumped_mass(&mesh);
            for i in 0..mesh.n_nodes() {
                let mut up = eta.clone();
                up[i] += 0.1;
                let diff = elastic_energy(&up, &u, &mesh, &model).unwrap() - elastic_energy(&eta, &u, &mesh, &model).unwrap();
                assert!((diff / 0.1 - dens[i] * m[i]).abs() < 1e-12 * diff.abs().max(1.0));
            }
        }
    }

    #[test]
    fn dirichlet_elimination_keeps_symmetry() {
        let model = sample_model();
        let mesh = &meshes()[1];
        let mut k = assemble_elastic(&vec![1.0; mesh.n_nodes()], mesh, &model).unwrap();
        let dofs = mesh.boundary_dofs();
        k.apply_dirichlet(&dofs);
        assert!(k.asymmetry() < 1e-14);
        for &d in &dofs {
            assert_eq!(k.get(d, d), 1.0);
            assert!(k.row(d).all(|(j, v)| j == d || v == 0.0));
        }
    }
}
