//! Eigenbasis of the elliptic operators on `(0, 1)` and spectral fields.
//!
//! Dirichlet: `e_k(ξ) = √2 sin(kπξ)`, `k = 1..N`, collocated on the interior
//! grid `ξ_j = j/(M+1)`. Neumann: `e_0 = 1`, `e_k(ξ) = √2 cos(kπξ)`, collocated
//! on the cell midpoints `ξ_j = (j + ½)/M`. On these grids the discrete sine
//! (resp. cosine) transform is orthogonal, so the nodal→spectral map is the
//! scaled transpose of the spectral→nodal map and inverts it exactly on the
//! retained modes whenever `M ≥ N`.
//!
//! Operator `A_i` has eigenvalues `α_{i,k} = d_i (kπ)²` on this basis.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, Error, Result};
use crate::profile::TimeProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

/// Which of the two elliptic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorId {
    A1,
    A2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToNodal,
    ToSpectral,
}

/// A function on `(0,1)` held by its first `N` eigen-coefficients together
/// with its values at the collocation nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
    nodal: Vec<f64>,
}

impl SpectralField {
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn nodal(&self) -> &[f64] {
        &self.nodal
    }

    pub fn mode_count(&self) -> usize {
        self.coeffs.len()
    }

    /// Sup-norm over the collocation nodes.
    pub fn sup_norm(&self) -> f64 {
        self.nodal.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `L²(0,1)` norm (Parseval on the orthonormal basis).
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite()) && self.nodal.iter().all(|v| v.is_finite())
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }
}

/// Eigenpairs, nodes and transform data.
#[derive(Debug, Clone)]
pub struct BasisSpec {
    bc: BoundaryCondition,
    n_modes: usize,
    nodes: Vec<f64>,
    eig1: Vec<f64>,
    eig2: Vec<f64>,
    d: [f64; 2],
    /// `synth[j*N + k] = e_k(ξ_j)`
    synth: Vec<f64>,
    /// `deriv[j*N + k] = e_k'(ξ_j)`
    deriv: Vec<f64>,
    /// `a_k = weight · Σ_j e_k(ξ_j) u_j`
    weight: f64,
}

impl BasisSpec {
    /// Basis with unit diffusivities (`A₁ = A₂ = ∂²_ξ`).
    pub fn new(bc: BoundaryCondition, n_modes: usize, node_count: usize) -> Result<Self> {
        Self::with_diffusivities(bc, n_modes, node_count, 1.0, 1.0)
    }

    pub fn with_diffusivities(
        bc: BoundaryCondition,
        n_modes: usize,
        node_count: usize,
        d1: f64,
        d2: f64,
    ) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::Config("mode count must be at least 1".into()));
        }
        if node_count < n_modes {
            return Err(Error::Config(format!(
                "node_count ({node_count}) < mode count ({n_modes}): transform is underdetermined"
            )));
        }
        if !(d1 > 0.0 && d2 > 0.0) {
            return Err(Error::Config(format!("diffusivities must be positive, got {d1}, {d2}")));
        }
        let m = node_count;
        let (nodes, weight): (Vec<f64>, f64) = match bc {
            BoundaryCondition::Dirichlet => (
                (1..=m).map(|j| j as f64 / (m + 1) as f64).collect(),
                1.0 / (m + 1) as f64,
            ),
            BoundaryCondition::Neumann => ((0..m).map(|j| (j as f64 + 0.5) / m as f64).collect(), 1.0 / m as f64),
        };
        let wavenumber = |k: usize| -> f64 {
            match bc {
                BoundaryCondition::Dirichlet => (k + 1) as f64 * PI,
                BoundaryCondition::Neumann => k as f64 * PI,
            }
        };
        let mut synth = vec![0.0; m * n_modes];
        let mut deriv = vec![0.0; m * n_modes];
        for (j, &xi) in nodes.iter().enumerate() {
            for k in 0..n_modes {
                let w = wavenumber(k);
                let (e, de) = match bc {
                    BoundaryCondition::Dirichlet => (SQRT_2 * (w * xi).sin(), SQRT_2 * w * (w * xi).cos()),
                    BoundaryCondition::Neumann if k == 0 => (1.0, 0.0),
                    BoundaryCondition::Neumann => (SQRT_2 * (w * xi).cos(), -SQRT_2 * w * (w * xi).sin()),
                };
                synth[j * n_modes + k] = e;
                deriv[j * n_modes + k] = de;
            }
        }
        let eig1 = (0..n_modes).map(|k| d1 * wavenumber(k).powi(2)).collect();
        let eig2 = (0..n_modes).map(|k| d2 * wavenumber(k).powi(2)).collect();
        Ok(BasisSpec {
            bc,
            n_modes,
            nodes,
            eig1,
            eig2,
            d: [d1, d2],
            synth,
            deriv,
            weight,
        })
    }

    pub fn boundary_condition(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn mode_count(&self) -> usize {
        self.n_modes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn eigenvalues(&self, op: OperatorId) -> &[f64] {
        match op {
            OperatorId::A1 => &self.eig1,
            OperatorId::A2 => &self.eig2,
        }
    }

    pub fn diffusivity(&self, op: OperatorId) -> f64 {
        match op {
            OperatorId::A1 => self.d[0],
            OperatorId::A2 => self.d[1],
        }
    }

    /// Sup-norm of the `k`-th basis function (`√2` or `1` for the constant mode).
    pub fn basis_sup_norm(&self, k: usize) -> f64 {
        match self.bc {
            BoundaryCondition::Neumann if k == 0 => 1.0,
            _ => SQRT_2,
        }
    }

    /// Spectral → nodal.
    pub fn to_nodal(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.n_modes;
        self.synth
            .chunks_exact(n)
            .map(|row| row.iter().zip(coeffs).map(|(e, a)| e * a).sum())
            .collect()
    }

    /// Nodal → spectral (discrete orthogonal projection).
    pub fn to_spectral(&self, nodal: &[f64]) -> Vec<f64> {
        let n = self.n_modes;
        let mut out = vec![0.0; n];
        for (row, u) in self.synth.chunks_exact(n).zip(nodal) {
            for (o, e) in out.iter_mut().zip(row) {
                *o += e * u;
            }
        }
        for o in &mut out {
            *o *= self.weight;
        }
        out
    }

    /// Raw transform with finiteness and shape checks.
    pub fn transform(&self, values: &[f64], direction: Direction) -> Result<Vec<f64>> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("transform input is not finite".into()));
        }
        match direction {
            Direction::ToNodal => {
                ensure_same_len(self.n_modes, values.len())?;
                Ok(self.to_nodal(values))
            }
            Direction::ToSpectral => {
                ensure_same_len(self.node_count(), values.len())?;
                Ok(self.to_spectral(values))
            }
        }
    }

    pub fn zero(&self) -> SpectralField {
        SpectralField {
            coeffs: vec![0.0; self.n_modes],
            nodal: vec![0.0; self.node_count()],
        }
    }

    /// Field from coefficients.
    pub fn field(&self, coeffs: Vec<f64>) -> Result<SpectralField> {
        ensure_same_len(self.n_modes, coeffs.len())?;
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("field coefficients are not finite".into()));
        }
        Ok(self.field_unchecked(coeffs))
    }

    pub(crate) fn field_unchecked(&self, coeffs: Vec<f64>) -> SpectralField {
        let nodal = self.to_nodal(&coeffs);
        SpectralField { coeffs, nodal }
    }

    /// Field whose coefficients are the projection of the nodal samples; the
    /// cached nodal view is resynthesised from those coefficients.
    pub fn project(&self, nodal: &[f64]) -> Result<SpectralField> {
        ensure_same_len(self.node_count(), nodal.len())?;
        if nodal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("nodal values are not finite".into()));
        }
        Ok(self.field_unchecked(self.to_spectral(nodal)))
    }

    /// Field sampled from a function of `ξ` and projected.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Result<SpectralField> {
        let nodal: Vec<f64> = self.nodes.iter().map(|&xi| f(xi)).collect();
        self.project(&nodal)
    }

    /// Single basis function `e_k` (0-based index).
    pub fn mode(&self, k: usize) -> Result<SpectralField> {
        if k >= self.n_modes {
            return Err(Error::Domain(format!(
                "mode index {k} out of range 0..{}",
                self.n_modes
            )));
        }
        let mut c = vec![0.0; self.n_modes];
        c[k] = 1.0;
        Ok(self.field_unchecked(c))
    }

    fn check(&self, field: &SpectralField) -> Result<()> {
        ensure_same_len(self.n_modes, field.coeffs.len())?;
        ensure_same_len(self.node_count(), field.nodal.len())
    }

    /// `e^{t A_i}`: coefficient `k` multiplied by `exp(−α_{i,k} t)`.
    pub fn apply_semigroup(&self, field: &SpectralField, op: OperatorId, t: f64) -> Result<SpectralField> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("semigroup time must be nonnegative, got {t}")));
        }
        self.check(field)?;
        let eig = self.eigenvalues(op);
        let c = field.coeffs.iter().zip(eig).map(|(a, l)| a * (-l * t).exp()).collect();
        Ok(self.field_unchecked(c))
    }

    /// Evolution operator `U_{α,ε}(t, s) = exp((1/ε)γ(t,s)A₂ − (α/ε)(t−s))`.
    pub fn apply_evolution(
        &self,
        field: &SpectralField,
        profile: &TimeProfile,
        s: f64,
        t: f64,
        alpha: f64,
        eps: f64,
    ) -> Result<SpectralField> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("eps must be positive, got {eps}")));
        }
        if !(alpha >= 0.0) {
            return Err(Error::Domain(format!("alpha must be nonnegative, got {alpha}")));
        }
        self.check(field)?;
        let g = profile.gamma_integral(s, t)?;
        let mut c = field.coeffs.clone();
        self.scale_by_evolution(&mut c, g / eps, alpha * (t - s) / eps);
        Ok(self.field_unchecked(c))
    }

    /// In-place `a_k ← a_k · exp(−g·α_{2,k} − shift)`.
    pub(crate) fn scale_by_evolution(&self, coeffs: &mut [f64], g: f64, shift: f64) {
        for (a, l) in coeffs.iter_mut().zip(&self.eig2) {
            *a *= (-(g * l) - shift).exp();
        }
    }

    /// In-place `a_k ← a_k · exp(−α_{1,k} dt)`.
    pub(crate) fn scale_by_semigroup1(&self, coeffs: &mut [f64], dt: f64) {
        for (a, l) in coeffs.iter_mut().zip(&self.eig1) {
            *a *= (-l * dt).exp();
        }
    }

    /// Nodal values of `∂_ξ X`, computed from the coefficients.
    pub fn derivative_nodal(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.n_modes;
        self.deriv
            .chunks_exact(n)
            .map(|row| row.iter().zip(coeffs).map(|(e, a)| e * a).sum())
            .collect()
    }

    /// Nodal values of `L(t)X = l(t, ξ_j)·∂_ξX(ξ_j)` before re-projection.
    pub fn transport_nodal(&self, field: &SpectralField, profile: &TimeProfile, t: f64) -> Vec<f64> {
        if !profile.has_transport() {
            return vec![0.0; self.node_count()];
        }
        let d = self.derivative_nodal(&field.coeffs);
        d.iter()
            .zip(&self.nodes)
            .map(|(dx, &xi)| profile.transport(t, xi) * dx)
            .collect()
    }

    /// `L(t)X`, re-projected onto the retained modes.
    pub fn apply_transport(&self, field: &SpectralField, profile: &TimeProfile, t: f64) -> Result<SpectralField> {
        self.check(field)?;
        if !field.is_finite() {
            return Err(Error::Numeric("transport input is not finite".into()));
        }
        let nodal = self.transport_nodal(field, profile, t);
        if nodal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("transport overflow at t = {t}")));
        }
        Ok(self.field_unchecked(self.to_spectral(&nodal)))
    }

    /// Sup-norm of `(−A₁)^θ x`, i.e. of the field with coefficients `α_{1,k}^θ a_k`.
    pub fn fractional_power_norm(&self, field: &SpectralField, theta: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Domain(format!("theta must lie in [0,1], got {theta}")));
        }
        self.check(field)?;
        let c: Vec<f64> = field
            .coeffs
            .iter()
            .zip(&self.eig1)
            .map(|(a, l)| if theta == 0.0 { *a } else { a * l.powf(theta) })
            .collect();
        Ok(self.field_unchecked(c).sup_norm())
    }

    /// `a·x + b·y`.
    pub fn lincomb(&self, a: f64, x: &SpectralField, b: f64, y: &SpectralField) -> SpectralField {
        let c = x.coeffs.iter().zip(&y.coeffs).map(|(u, v)| a * u + b * v).collect();
        self.field_unchecked(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(n: usize) -> BasisSpec {
        BasisSpec::new(BoundaryCondition::Dirichlet, n, 2 * n).unwrap()
    }

    #[test]
    fn dirichlet_spectrum() {
        let b = BasisSpec::new(BoundaryCondition::Dirichlet, 3, 3).unwrap();
        let e = b.eigenvalues(OperatorId::A1);
        for (k, v) in e.iter().enumerate() {
            let want = ((k + 1) as f64 * PI).powi(2);
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn underdetermined_transform_rejected() {
        assert!(matches!(
            BasisSpec::new(BoundaryCondition::Dirichlet, 8, 4),
            Err(Error::Config(_))
        ));
        assert!(BasisSpec::new(BoundaryCondition::Dirichlet, 0, 4).is_err());
    }

    #[test]
    fn first_mode_nodal_values() {
        let b = BasisSpec::new(BoundaryCondition::Dirichlet, 1, 5).unwrap();
        let f = b.field(vec![1.0]).unwrap();
        for (v, &xi) in f.nodal().iter().zip(b.nodes()) {
            assert!((v - SQRT_2 * (PI * xi).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_and_nonfinite_transform() {
        let b = basis(4);
        assert_eq!(b.transform(&[0.0; 4], Direction::ToNodal).unwrap(), vec![0.0; 8]);
        assert!(matches!(
            b.transform(&[f64::NAN, 0.0, 0.0, 0.0], Direction::ToNodal),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            b.transform(&[0.0; 3], Direction::ToNodal),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn neumann_roundtrip() {
        let b = BasisSpec::new(BoundaryCondition::Neumann, 6, 9).unwrap();
        let c = vec![0.3, -1.0, 0.5, 0.25, -0.125, 2.0];
        let back = b.to_spectral(&b.to_nodal(&c));
        for (u, v) in c.iter().zip(&back) {
            assert!((u - v).abs() < 1e-12);
        }
        assert_eq!(b.eigenvalues(OperatorId::A2)[0], 0.0);
    }

    #[test]
    fn semigroup_mode_one_factor() {
        let b = basis(4);
        let f = b.mode(0).unwrap();
        let g = b.apply_semigroup(&f, OperatorId::A1, 0.1).unwrap();
        assert!((g.coeffs()[0] - 0.372_708).abs() < 1e-6);
        assert!((g.coeffs()[0] - (-PI * PI * 0.1).exp()).abs() < 1e-15);
        assert!(b.apply_semigroup(&f, OperatorId::A1, -1.0).is_err());
        assert_eq!(b.apply_semigroup(&f, OperatorId::A1, 0.0).unwrap(), f);
    }

    #[test]
    fn evolution_closed_form() {
        let b = basis(4);
        let p = TimeProfile::constant(1.0);
        let f = b.mode(0).unwrap();
        let g = b.apply_evolution(&f, &p, 0.0, 0.01, 1.0, 0.1).unwrap();
        let want = (-0.1 * (PI * PI + 1.0)).exp();
        assert!((g.coeffs()[0] - want).abs() < 1e-12);
        assert!(b.apply_evolution(&f, &p, 0.0, 0.01, 1.0, 0.0).is_err());
    }

    #[test]
    fn transport_of_first_mode() {
        let b = basis(8);
        let p = TimeProfile::new(
            crate::func::ScalarFn::Constant(1.0),
            crate::func::ScalarFn::Constant(1.0),
            1.0,
            1.0,
            1.0,
        )
        .unwrap();
        // X = sin(πξ) = e_1/√2
        let x = b
            .field({
                let mut c = vec![0.0; 8];
                c[0] = 1.0 / SQRT_2;
                c
            })
            .unwrap();
        let nodal = b.transport_nodal(&x, &p, 0.0);
        for (v, &xi) in nodal.iter().zip(b.nodes()) {
            assert!((v - PI * (PI * xi).cos()).abs() < 1e-12);
        }
        let zero = b.apply_transport(&x, &TimeProfile::constant(1.0), 0.0).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
    }

    #[test]
    fn fractional_norm() {
        let b = basis(4);
        let f = b.mode(0).unwrap();
        assert_eq!(b.fractional_power_norm(&f, 0.0).unwrap(), f.sup_norm());
        let one = b.fractional_power_norm(&f, 1.0).unwrap();
        assert!((one - PI * PI * f.sup_norm()).abs() < 1e-12);
        assert!(b.fractional_power_norm(&f, 1.5).is_err());
        assert!(b.fractional_power_norm(&f, -0.1).is_err());
    }
}
