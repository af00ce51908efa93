use super::operator::GridOperator;
use super::quadrature::{adaptive_trapezoid, tensor, GAUSS2, GAUSS3};
use super::{AxisWindow, Discretization, Grid, PmlProfile, VelocityModel};
use crate::error::{Error, Result};
use num_complex::Complex64 as C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const MAX_ROMBERG_LEVEL: usize = 8;

/// A discretized Helmholtz problem: medium, frequency, PML and scheme.
///
/// Every operator (global, layer or cell) is built by [`assemble`] from the
/// same global coefficients, so rows shared between windows are identical.
#[derive(Clone, Debug)]
pub struct Helmholtz {
    pub model: VelocityModel,
    pub pml: PmlProfile,
    pub disc: Discretization,
}

impl Helmholtz {
    /// Builds a problem at angular frequency `omega`; `strength` defaults to a
    /// 1e-6 round-trip PML attenuation for the fastest wave in the model.
    pub fn new(model: VelocityModel, omega: f64, strength: Option<f64>, disc: Discretization) -> Result<Self> {
        let g = model.grid().clone();
        let strength = strength.unwrap_or_else(|| PmlProfile::strength_for(1e-6, model.c_max()));
        let pml = PmlProfile::new(strength, g.npml, g.h, omega)?;
        if let Discretization::Q1 { smooth_threshold, quad_tol } = disc {
            if !(smooth_threshold > 1.0) {
                return Err(Error::InvalidArgument(format!("smoothness threshold must exceed 1, got {smooth_threshold}")));
            }
            if !(quad_tol > 0.0) {
                return Err(Error::InvalidArgument(format!("quadrature tolerance must be positive, got {quad_tol}")));
            }
        }
        Ok(Self { model, pml, disc })
    }

    pub fn grid(&self) -> &Grid {
        self.model.grid()
    }

    pub fn omega(&self) -> f64 {
        self.pml.omega
    }

    /// Operator on the windowed sub-grid.
    pub fn operator(&self, xw: AxisWindow, zw: AxisWindow) -> Result<GridOperator> {
        assemble(&self.disc, &self.model, &self.pml, xw, zw)
    }

    pub fn global_operator(&self) -> Result<GridOperator> {
        let g = self.grid();
        self.operator(g.x_window(), g.z_window())
    }

    /// Algebraic right-hand side of a nodal source `f` on the extended grid.
    pub fn load_vector(&self, f: &[C64]) -> Result<Vec<C64>> {
        let g = self.grid();
        if f.len() != g.ext_len() {
            return Err(Error::DimensionMismatch { expected: g.ext_len(), got: f.len() });
        }
        match self.disc {
            Discretization::Fd => Ok(f.to_vec()),
            Discretization::Q1 { .. } => Ok(project_q1(&self.pml, g, f)),
        }
    }

    /// Discrete point source at global node (p, q).
    ///
    /// FD: `1/h²` at the node. Q1: the nodal load `h²·δ_h`, i.e. `1/(α_x α_z)`
    /// at the node, so both schemes share the leading-order Green's function.
    pub fn delta_source(&self, p: i64, q: i64) -> Result<Vec<C64>> {
        let g = self.grid();
        let idx = g.index(p, q)?;
        let mut f = vec![ZERO; g.ext_len()];
        f[idx] = match self.disc {
            Discretization::Fd => C64::new(1.0 / (g.h * g.h), 0.0),
            Discretization::Q1 { .. } => {
                let ax = self.pml.alpha_steps(g.x_window().pml_depth(p, 0.0));
                let az = self.pml.alpha_steps(g.z_window().pml_depth(q, 0.0));
                C64::new(1.0, 0.0) / (ax * az)
            }
        };
        Ok(f)
    }
}

/// Assembles the operator on the window `xw × zw` of the global grid.
pub fn assemble(
    disc: &Discretization,
    model: &VelocityModel,
    pml: &PmlProfile,
    xw: AxisWindow,
    zw: AxisWindow,
) -> Result<GridOperator> {
    let g = model.grid();
    if !(g.h > 0.0) {
        return Err(Error::InvalidGrid(format!("non-positive spacing h = {}", g.h)));
    }
    if xw.ext_len() == 0 || zw.ext_len() == 0 {
        return Err(Error::InvalidGrid("empty window".into()));
    }
    match disc {
        Discretization::Fd => Ok(assemble_fd(model, pml, xw, zw)),
        Discretization::Q1 { smooth_threshold, quad_tol } => assemble_q1(model, pml, xw, zw, *smooth_threshold, *quad_tol),
    }
}

/// Five-point scheme; PML rows use `α(p)·(α(p+½)(u₊−u) − α(p−½)(u−u₋))/h²`.
pub fn assemble_fd(model: &VelocityModel, pml: &PmlProfile, xw: AxisWindow, zw: AxisWindow) -> GridOperator {
    let h2 = model.grid().h * model.grid().h;
    let w2 = pml.omega * pml.omega;
    let (nx, nz) = (xw.ext_len(), zw.ext_len());
    let mut op = GridOperator::zeros(nx, nz);
    let ax: Vec<[C64; 3]> = (0..nx).map(|r| axis_alphas(pml, &xw, xw.local(r))).collect();
    let az: Vec<[C64; 3]> = (0..nz).map(|r| axis_alphas(pml, &zw, zw.local(r))).collect();
    for j in 0..nz {
        let q = zw.global(zw.local(j));
        let [a, am, ap] = az[j];
        for i in 0..nx {
            let p = xw.global(xw.local(i));
            let [b, bm, bp] = ax[i];
            let mut center = (b * (bp + bm) + a * (ap + am)) / h2;
            center -= C64::new(w2 * model.m_at(p, q), 0.0);
            op.set(i, j, 0, 0, center);
            op.set(i, j, -1, 0, -b * bm / h2);
            op.set(i, j, 1, 0, -b * bp / h2);
            op.set(i, j, 0, -1, -a * am / h2);
            op.set(i, j, 0, 1, -a * ap / h2);
        }
    }
    op
}

/// (α(k), α(k−½), α(k+½)) along one axis.
fn axis_alphas(pml: &PmlProfile, w: &AxisWindow, k: i64) -> [C64; 3] {
    [
        pml.alpha_steps(w.pml_depth(k, 0.0)),
        pml.alpha_steps(w.pml_depth(k - 1, 0.5)),
        pml.alpha_steps(w.pml_depth(k, 0.5)),
    ]
}

#[inline]
fn shape(a: usize, t: f64) -> f64 {
    if a == 0 {
        1.0 - t
    } else {
        t
    }
}

#[inline]
fn dshape(a: usize) -> f64 {
    if a == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Bilinear elements for the symmetric stretched form
/// `−∇·(Λ∇u) − ω² m u/(α_x α_z) = f/(α_x α_z)`, `Λ = diag(α_x/α_z, α_z/α_x)`.
pub fn assemble_q1(
    model: &VelocityModel,
    pml: &PmlProfile,
    xw: AxisWindow,
    zw: AxisWindow,
    smooth_threshold: f64,
    quad_tol: f64,
) -> Result<GridOperator> {
    let h = model.grid().h;
    let w2 = pml.omega * pml.omega;
    let (nx, nz) = (xw.ext_len(), zw.ext_len());
    let mut op = GridOperator::zeros(nx, nz);
    let lo_x = -(xw.npml as i64);
    let lo_z = -(zw.npml as i64);
    let hi_x = (xw.len + xw.npml) as i64;
    let hi_z = (zw.len + zw.npml) as i64;
    for ez in lo_z..=hi_z {
        for ex in lo_x..=hi_x {
            let alpha_x = |xi: f64| pml.alpha_steps(xw.pml_depth(ex, xi));
            let alpha_z = |eta: f64| pml.alpha_steps(zw.pml_depth(ez, eta));
            let (gx, gz) = (xw.global(ex), zw.global(ez));
            let corner = [model.c_at(gx, gz), model.c_at(gx + 1, gz), model.c_at(gx, gz + 1), model.c_at(gx + 1, gz + 1)];
            let c_at = |xi: f64, eta: f64| {
                corner[0] * (1.0 - xi) * (1.0 - eta) + corner[1] * xi * (1.0 - eta) + corner[2] * (1.0 - xi) * eta + corner[3] * xi * eta
            };

            let stiff = tensor::<16>(&GAUSS2, |xi, eta| {
                let (a, b) = (alpha_x(xi), alpha_z(eta));
                let sx = a / b;
                let sz = b / a;
                let mut out = [ZERO; 16];
                for c in 0..4 {
                    let (cx, cz) = (c & 1, c >> 1);
                    let gcx = dshape(cx) * shape(cz, eta);
                    let gcz = shape(cx, xi) * dshape(cz);
                    for d in 0..4 {
                        let (dx, dz) = (d & 1, d >> 1);
                        let gdx = dshape(dx) * shape(dz, eta);
                        let gdz = shape(dx, xi) * dshape(dz);
                        out[c + 4 * d] = sx * (gcx * gdx) + sz * (gcz * gdz);
                    }
                }
                out
            });

            let mass_integrand = |xi: f64, eta: f64| {
                let c = c_at(xi, eta);
                let weight = C64::new(w2 * h * h / (c * c), 0.0) / (alpha_x(xi) * alpha_z(eta));
                let mut out = [ZERO; 16];
                for a in 0..4 {
                    let pa = shape(a & 1, xi) * shape(a >> 1, eta);
                    for b in 0..4 {
                        out[a + 4 * b] = weight * (pa * shape(b & 1, xi) * shape(b >> 1, eta));
                    }
                }
                out
            };
            let (mut cmin, mut cmax) = (f64::INFINITY, 0.0f64);
            for &(eta, _) in &GAUSS3 {
                for &(xi, _) in &GAUSS3 {
                    let c = c_at(xi, eta);
                    cmin = cmin.min(c);
                    cmax = cmax.max(c);
                }
            }
            let mass = if cmax / cmin < smooth_threshold {
                tensor::<16>(&GAUSS3, mass_integrand)
            } else {
                adaptive_trapezoid(mass_integrand, quad_tol, MAX_ROMBERG_LEVEL)
                    .map_err(|estimate| Error::Quadrature { ex: gx, ez: gz, estimate })?
            };

            for a in 0..4 {
                let (ka, la) = (ex + (a & 1) as i64, ez + (a >> 1) as i64);
                let (Some(ia), Some(ja)) = (xw.array_index(ka), zw.array_index(la)) else { continue };
                for b in 0..4 {
                    let (kb, lb) = (ex + (b & 1) as i64, ez + (b >> 1) as i64);
                    if xw.array_index(kb).is_none() || zw.array_index(lb).is_none() {
                        continue;
                    }
                    op.add(ia, ja, kb - ka, lb - la, stiff[a + 4 * b] - mass[a + 4 * b]);
                }
            }
        }
    }
    Ok(op)
}

/// Classifies the element whose lower-left global node is (p, q).
pub fn element_is_smooth(model: &VelocityModel, p: i64, q: i64, threshold: f64) -> bool {
    let corner = [model.c_at(p, q), model.c_at(p + 1, q), model.c_at(p, q + 1), model.c_at(p + 1, q + 1)];
    let (mut cmin, mut cmax) = (f64::INFINITY, 0.0f64);
    for &(eta, _) in &GAUSS3 {
        for &(xi, _) in &GAUSS3 {
            let c = corner[0] * (1.0 - xi) * (1.0 - eta) + corner[1] * xi * (1.0 - eta) + corner[2] * (1.0 - xi) * eta + corner[3] * xi * eta;
            cmin = cmin.min(c);
            cmax = cmax.max(c);
        }
    }
    cmax / cmin < threshold
}

/// Projection of `f/(α_x α_z)` onto the Q1 basis, `f` interpolated bilinearly.
fn project_q1(pml: &PmlProfile, g: &Grid, f: &[C64]) -> Vec<C64> {
    let (xw, zw) = (g.x_window(), g.z_window());
    let (nx, nz) = (xw.ext_len(), zw.ext_len());
    let h2 = g.h * g.h;
    let mut b = vec![ZERO; nx * nz];
    let value = |k: i64, l: i64| -> C64 {
        match (xw.array_index(k), zw.array_index(l)) {
            (Some(i), Some(j)) => f[i + nx * j],
            _ => ZERO,
        }
    };
    for ez in -(zw.npml as i64)..=(zw.len + zw.npml) as i64 {
        for ex in -(xw.npml as i64)..=(xw.len + xw.npml) as i64 {
            let fc = [value(ex, ez), value(ex + 1, ez), value(ex, ez + 1), value(ex + 1, ez + 1)];
            if fc.iter().all(|v| *v == ZERO) {
                continue;
            }
            let loads = tensor::<4>(&GAUSS3, |xi, eta| {
                let fv = fc[0] * (1.0 - xi) * (1.0 - eta) + fc[1] * xi * (1.0 - eta) + fc[2] * (1.0 - xi) * eta + fc[3] * xi * eta;
                let scaled = fv * h2 / (pml.alpha_steps(xw.pml_depth(ex, xi)) * pml.alpha_steps(zw.pml_depth(ez, eta)));
                let mut out = [ZERO; 4];
                for (a, o) in out.iter_mut().enumerate() {
                    *o = scaled * (shape(a & 1, xi) * shape(a >> 1, eta));
                }
                out
            });
            for (a, load) in loads.iter().enumerate() {
                let (k, l) = (ex + (a & 1) as i64, ez + (a >> 1) as i64);
                if let (Some(i), Some(j)) = (xw.array_index(k), zw.array_index(l)) {
                    b[i + nx * j] += *load;
                }
            }
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{synthetic_model, SyntheticKind};

    fn problem(n: usize, npml: usize, disc: Discretization) -> Helmholtz {
        let g = Grid::new(n, n, 1.0 / (n + 1) as f64, npml).unwrap();
        let m = VelocityModel::constant(g, 1.0).unwrap();
        Helmholtz::new(m, 10.0, Some(20.0), disc).unwrap()
    }

    #[test]
    fn fd_interior_diagonal() {
        let p = problem(8, 3, Discretization::Fd);
        let op = p.global_operator().unwrap();
        let h = p.grid().h;
        let d = op.get(6, 6, 0, 0);
        assert!((d - C64::new(4.0 / (h * h) - 100.0, 0.0)).norm() < 1e-9);
        assert_eq!(op.get(6, 6, 1, 0), C64::new(-1.0 / (h * h), 0.0));
    }

    #[test]
    fn zero_sigma_pml_rows_match_interior_stencil() {
        let g = Grid::new(6, 6, 0.1, 3).unwrap();
        let m = VelocityModel::constant(g, 1.0).unwrap();
        let mut pml = PmlProfile::new(1.0, 3, 0.1, 5.0).unwrap();
        pml.strength = 0.0;
        let op = assemble_fd(&m, &pml, m.grid().x_window(), m.grid().z_window());
        let reference = *op.row(5, 5);
        assert_eq!(*op.row(0, 0), reference);
        assert_eq!(*op.row(1, 11), reference);
    }

    #[test]
    fn q1_is_complex_symmetric_with_pml() {
        let g = Grid::new(7, 6, 0.1, 4).unwrap();
        let m = synthetic_model(SyntheticKind::LayeredInclusions, 2, &g).unwrap();
        let p = Helmholtz::new(m, 12.0, None, Discretization::q1()).unwrap();
        assert!(p.global_operator().unwrap().asymmetry() < 1e-14);
    }

    #[test]
    fn fd_without_pml_is_symmetric() {
        let g = Grid::new(7, 6, 0.1, 0).unwrap();
        let m = synthetic_model(SyntheticKind::RandomSmooth, 2, &g).unwrap();
        let p = Helmholtz::new(m, 12.0, None, Discretization::Fd).unwrap();
        assert_eq!(p.global_operator().unwrap().asymmetry(), 0.0);
    }

    #[test]
    fn element_classification() {
        let g = Grid::new(4, 4, 0.1, 0).unwrap();
        let m = VelocityModel::constant(g.clone(), 2.0).unwrap();
        assert!(element_is_smooth(&m, 1, 1, 1.05));
        let mut c = vec![1.0; g.ext_len()];
        for j in 0..g.ext_nz() {
            for i in 2..g.ext_nx() {
                c[i + g.ext_nx() * j] = 2.0;
            }
        }
        let jump = VelocityModel::new(g, c).unwrap();
        // element spanning nodes 2 and 3 (array 1 and 2) straddles the 2:1 jump
        assert!(!element_is_smooth(&jump, 2, 1, 1.5));
        assert!(element_is_smooth(&jump, 3, 1, 1.5));
    }

    #[test]
    fn plane_wave_residual_is_second_order() {
        // no PML: the residual of exp(iωx) at interior nodes is O(h²ω⁴)
        let omega = 6.0;
        let mut ratios = Vec::new();
        for n in [31usize, 63] {
            let h = 1.0 / (n + 1) as f64;
            let g = Grid::new(n, n, h, 0).unwrap();
            let m = VelocityModel::constant(g.clone(), 1.0).unwrap();
            let p = Helmholtz::new(m, omega, Some(1.0), Discretization::Fd).unwrap();
            let op = p.global_operator().unwrap();
            let u: Vec<C64> = (0..g.ext_len()).map(|k| C64::new(0.0, omega * ((k % n) + 1) as f64 * h).exp()).collect();
            let r = op.apply(&u).unwrap();
            let mut worst: f64 = 0.0;
            for j in 1..n - 1 {
                for i in 1..n - 1 {
                    worst = worst.max(r[i + n * j].norm());
                }
            }
            let bound = omega.powi(4) * h * h / 12.0;
            assert!(worst <= 1.01 * bound, "residual {worst} exceeds {bound}");
            ratios.push(worst);
        }
        assert!((ratios[0] / ratios[1] - 4.0).abs() < 0.2);
    }

    #[test]
    fn delta_source_values() {
        let g = Grid::new(10, 10, 0.1, 2).unwrap();
        let m = VelocityModel::constant(g.clone(), 1.0).unwrap();
        let p = Helmholtz::new(m, 3.0, None, Discretization::Fd).unwrap();
        let d = p.delta_source(3, 5).unwrap();
        let idx = g.index(3, 5).unwrap();
        assert!((d[idx].re - 100.0).abs() < 1e-9);
        assert_eq!(d.iter().filter(|v| **v != ZERO).count(), 1);
        let other = p.delta_source(4, 5).unwrap();
        assert!(d.iter().zip(&other).all(|(a, b)| *a == ZERO || *b == ZERO));
        assert!(p.delta_source(30, 2).is_err());
    }

    #[test]
    fn quadrature_failure_carries_element() {
        let g = Grid::new(4, 4, 0.1, 0).unwrap();
        let mut c = vec![1.0; g.ext_len()];
        c[5] = 4.5;
        let m = VelocityModel::new(g.clone(), c).unwrap();
        let disc = Discretization::Q1 { smooth_threshold: 1.01, quad_tol: 1e-300 };
        let p = Helmholtz::new(m, 3.0, None, disc).unwrap();
        match p.global_operator() {
            Err(Error::Quadrature { .. }) => {}
            other => panic!("expected quadrature error, got {other:?}"),
        }
    }
}
