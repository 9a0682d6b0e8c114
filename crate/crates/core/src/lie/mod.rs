//! Matrix Lie groups acting on the plane.
//!
//! A [`GroupSpec`] fixes an ordered basis of a Lie algebra of 3×3 matrices.
//! Algebra elements are handled as coordinate vectors in that basis
//! ([`AlgebraVector`]); group elements are 3×3 matrices tagged with their
//! group ([`GroupElement`]).
//!
//! The right Haar measure pulled back through `exp` has density
//! `det((1 − e^{−ad_{−ξ}}) / ad_{−ξ})` with respect to Lebesgue measure on the
//! coordinates; [`GroupSpec::haar_density`] evaluates it from the truncated
//! power series in `ad`.

mod expm;

use std::fmt;
use std::ops::{Index, Neg};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Matrix3};
use thiserror::Error;

pub use expm::{expm3, logm3, spectral_radius};

/// Coordinates of a point in the plane.
pub type Point = [f64; 2];

/// Default number of terms of the `dexp` series. Sufficient for ‖ξ‖ ≤ 1,
/// where the tail is below 1e-15.
pub const DEXP_TERMS: usize = 20;

/// Homogeneous denominators smaller than this are treated as zero.
const INFINITY_EPS: f64 = 1e-12;
const COORD_RESIDUAL_TOL: f64 = 1e-9;
const HOM_DET_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("expected {expected} algebra coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("algebra coordinates must be finite")]
    NonFinite,
    #[error("matrix logarithm undefined: spectral radius of u - I is {radius:.6}, must be below 1")]
    OutsideLogDomain { radius: f64 },
    #[error("matrix is not in the {kind} algebra (coordinate residual {residual:.3e})")]
    NotInAlgebra { kind: GroupKind, residual: f64 },
    #[error("haar density {value:.3e} is not positive at {xi:?}; region too large for the exponential chart")]
    NonPositiveDensity { value: f64, xi: Vec<f64> },
    #[error("point ({}, {}) is mapped to infinity", .x[0], .x[1])]
    PointAtInfinity { x: Point },
    #[error("singular matrix")]
    Singular,
    #[error("group mismatch: {0} vs {1}")]
    GroupMismatch(GroupKind, GroupKind),
    #[error("invalid {kind} element: {reason}")]
    InvalidElement { kind: GroupKind, reason: String },
    #[error("basis is linearly dependent")]
    DependentBasis,
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupKind {
    Affine,
    Homography,
    TranslationOnly,
    ScalingOnly,
}

impl GroupKind {
    pub fn dim(self) -> usize {
        match self {
            GroupKind::Affine => 6,
            GroupKind::Homography => 8,
            GroupKind::TranslationOnly => 2,
            GroupKind::ScalingOnly => 1,
        }
    }

    /// True when elements act on the plane by homogeneous division.
    pub fn is_projective(self) -> bool {
        matches!(self, GroupKind::Homography)
    }

    pub fn all() -> [GroupKind; 4] {
        [
            GroupKind::Affine,
            GroupKind::Homography,
            GroupKind::TranslationOnly,
            GroupKind::ScalingOnly,
        ]
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            GroupKind::Affine => "affine",
            GroupKind::Homography => "homography",
            GroupKind::TranslationOnly => "translation",
            GroupKind::ScalingOnly => "scaling",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for GroupKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "affine" | "aff" => Ok(GroupKind::Affine),
            "homography" | "hom" => Ok(GroupKind::Homography),
            "translation" | "translation-only" => Ok(GroupKind::TranslationOnly),
            "scaling" | "scaling-only" => Ok(GroupKind::ScalingOnly),
            other => Err(format!("unknown group '{other}'")),
        }
    }
}

fn unit(i: usize, j: usize) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    m[(i, j)] = 1.0;
    m
}

fn builtin_basis(kind: GroupKind) -> Vec<Matrix3<f64>> {
    let third = Matrix3::identity() / 3.0;
    match kind {
        GroupKind::Affine => vec![
            unit(0, 0),
            unit(0, 1),
            unit(0, 2),
            unit(1, 0),
            unit(1, 1),
            unit(1, 2),
        ],
        GroupKind::Homography => vec![
            unit(0, 0) - third,
            unit(0, 1),
            unit(0, 2),
            unit(1, 0),
            unit(1, 1) - third,
            unit(1, 2),
            unit(2, 0),
            unit(2, 1),
        ],
        GroupKind::TranslationOnly => vec![unit(0, 2), unit(1, 2)],
        GroupKind::ScalingOnly => vec![unit(0, 0) + unit(1, 1)],
    }
}

/// Coordinate vector of a Lie-algebra element in a group's ordered basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraVector(Vec<f64>);

impl AlgebraVector {
    pub fn new(coords: Vec<f64>) -> Result<Self, LieError> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(LieError::NonFinite);
        }
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean norm of the coordinates.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Max-norm of the coordinates.
    pub fn max_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|c| c * factor).collect())
    }

    /// The algebra inclusion aff → hom: the six affine coordinates followed by
    /// two zero perspective coordinates.
    pub fn affine_to_homography(&self) -> Result<Self, LieError> {
        if self.dim() != 6 {
            return Err(LieError::DimensionMismatch {
                expected: 6,
                got: self.dim(),
            });
        }
        let mut coords = self.0.clone();
        coords.extend([0.0, 0.0]);
        Ok(Self(coords))
    }
}

impl Neg for &AlgebraVector {
    type Output = AlgebraVector;

    fn neg(self) -> AlgebraVector {
        self.scaled(-1.0)
    }
}

impl Index<usize> for AlgebraVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A matrix Lie group given by an ordered basis of its algebra.
#[derive(Debug, Clone)]
pub struct GroupSpec {
    kind: GroupKind,
    basis: Vec<Matrix3<f64>>,
    /// Left pseudo-inverse of the vectorized basis (dim × 9).
    coord_map: DMatrix<f64>,
}

impl GroupSpec {
    /// The shipped basis for `kind`.
    pub fn new(kind: GroupKind) -> Self {
        Self::from_basis(kind, builtin_basis(kind)).expect("builtin bases are independent")
    }

    /// Shared instance for `kind`.
    pub fn get(kind: GroupKind) -> &'static GroupSpec {
        static SPECS: OnceLock<[GroupSpec; 4]> = OnceLock::new();
        let specs = SPECS.get_or_init(|| GroupKind::all().map(GroupSpec::new));
        match kind {
            GroupKind::Affine => &specs[0],
            GroupKind::Homography => &specs[1],
            GroupKind::TranslationOnly => &specs[2],
            GroupKind::ScalingOnly => &specs[3],
        }
    }

    /// A group with a caller-supplied basis. Elements act on the plane the way
    /// `kind` prescribes.
    pub fn from_basis(kind: GroupKind, basis: Vec<Matrix3<f64>>) -> Result<Self, LieError> {
        let n = basis.len();
        let b = DMatrix::from_fn(9, n, |r, c| basis[c][(r / 3, r % 3)]);
        let gram = b.transpose() * &b;
        let gram_inv = gram.try_inverse().ok_or(LieError::DependentBasis)?;
        // Guard against nearly dependent bases that still invert numerically.
        let sv = b.clone().svd(false, false).singular_values;
        let (smax, smin) = sv
            .iter()
            .fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
        if n == 0 || smin <= 1e-10 * smax {
            return Err(LieError::DependentBasis);
        }
        let coord_map = gram_inv * b.transpose();
        Ok(Self {
            kind,
            basis,
            coord_map,
        })
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Matrix3<f64>] {
        &self.basis
    }

    fn check_dim(&self, xi: &AlgebraVector) -> Result<(), LieError> {
        if xi.dim() != self.dim() {
            return Err(LieError::DimensionMismatch {
                expected: self.dim(),
                got: xi.dim(),
            });
        }
        Ok(())
    }

    /// Basis expansion Σᵢ ξⁱ Bᵢ.
    pub fn to_matrix(&self, xi: &AlgebraVector) -> Result<Matrix3<f64>, LieError> {
        self.check_dim(xi)?;
        Ok(self.expand(xi.as_slice()))
    }

    fn expand(&self, coords: &[f64]) -> Matrix3<f64> {
        self.basis
            .iter()
            .zip(coords)
            .fold(Matrix3::zeros(), |acc, (b, c)| acc + b * *c)
    }

    /// Coordinates of an algebra matrix in this basis, with the residual of
    /// the least-squares fit checked.
    pub fn coordinates(&self, m: &Matrix3<f64>) -> Result<AlgebraVector, LieError> {
        let coords = self.raw_coordinates(m);
        let residual = (m - self.expand(coords.as_slice())).norm();
        if residual > COORD_RESIDUAL_TOL * m.norm().max(1.0) {
            return Err(LieError::NotInAlgebra {
                kind: self.kind,
                residual,
            });
        }
        AlgebraVector::new(coords.as_slice().to_vec())
    }

    fn raw_coordinates(&self, m: &Matrix3<f64>) -> DVector<f64> {
        let v = DVector::from_fn(9, |r, _| m[(r / 3, r % 3)]);
        &self.coord_map * v
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement {
            matrix: Matrix3::identity(),
            kind: self.kind,
        }
    }

    /// Wraps `matrix` as an element of this group after validating it.
    pub fn element(&self, matrix: Matrix3<f64>) -> Result<GroupElement, LieError> {
        GroupElement::new(matrix, self.kind)
    }

    pub fn exp(&self, xi: &AlgebraVector) -> Result<GroupElement, LieError> {
        let a = self.to_matrix(xi)?;
        Ok(GroupElement {
            matrix: expm3(&a),
            kind: self.kind,
        })
    }

    /// Principal-branch logarithm; requires the spectral radius of `u − I`
    /// to be below one.
    pub fn log(&self, u: &GroupElement) -> Result<AlgebraVector, LieError> {
        if u.kind != self.kind {
            return Err(LieError::GroupMismatch(u.kind, self.kind));
        }
        let l = logm3(&u.matrix)?;
        self.coordinates(&l)
    }

    /// Matrix of `ad_ξ = [ξ, ·]` in the basis: column j holds the coordinates
    /// of `[ξ, Bⱼ]`.
    pub fn ad_matrix(&self, xi: &AlgebraVector) -> Result<DMatrix<f64>, LieError> {
        let x = self.to_matrix(xi)?;
        let n = self.dim();
        let mut ad = DMatrix::zeros(n, n);
        for (j, b) in self.basis.iter().enumerate() {
            let bracket = x * b - b * x;
            let coords = self.raw_coordinates(&bracket);
            let residual = (bracket - self.expand(coords.as_slice())).norm();
            if residual > COORD_RESIDUAL_TOL * bracket.norm().max(1.0) {
                return Err(LieError::NotInAlgebra {
                    kind: self.kind,
                    residual,
                });
            }
            ad.set_column(j, &coords);
        }
        Ok(ad)
    }

    /// Σ_{k=0}^{terms} (−1)ᵏ/(k+1)! · ad_ξᵏ, the left-trivialized derivative
    /// of `exp` at ξ.
    pub fn dexp_series(&self, xi: &AlgebraVector, terms: usize) -> Result<DMatrix<f64>, LieError> {
        let ad = self.ad_matrix(xi)?;
        let n = self.dim();
        let eye = DMatrix::<f64>::identity(n, n);
        let coeff = |k: usize| {
            let fact: f64 = (1..=k + 1).map(|i| i as f64).product();
            if k % 2 == 0 {
                1.0 / fact
            } else {
                -1.0 / fact
            }
        };
        let mut acc = &eye * coeff(terms);
        for k in (0..terms).rev() {
            acc = &eye * coeff(k) + &ad * acc;
        }
        Ok(acc)
    }

    /// Density of right Haar measure in exponential coordinates,
    /// `det(dexp_series(−ξ))`. Equals one at ξ = 0.
    pub fn haar_density(&self, xi: &AlgebraVector) -> Result<f64, LieError> {
        let p = self.dexp_series(&-xi, DEXP_TERMS)?;
        let value = p.determinant();
        if !(value > 0.0) {
            return Err(LieError::NonPositiveDensity {
                value,
                xi: xi.as_slice().to_vec(),
            });
        }
        Ok(value)
    }
}

/// An element of one of the shipped matrix groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupElement {
    matrix: Matrix3<f64>,
    kind: GroupKind,
}

impl GroupElement {
    /// Validates the structural invariants of `kind` before wrapping.
    pub fn new(matrix: Matrix3<f64>, kind: GroupKind) -> Result<Self, LieError> {
        let invalid = |reason: String| LieError::InvalidElement { kind, reason };
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite entries".into()));
        }
        match kind {
            GroupKind::Homography => {
                let det = matrix.determinant();
                if (det - 1.0).abs() > HOM_DET_TOL {
                    return Err(invalid(format!("determinant {det} is not 1")));
                }
            }
            _ => {
                if matrix[(2, 0)] != 0.0 || matrix[(2, 1)] != 0.0 || matrix[(2, 2)] != 1.0 {
                    return Err(invalid("bottom row is not (0, 0, 1)".into()));
                }
                let det2 = matrix[(0, 0)] * matrix[(1, 1)] - matrix[(0, 1)] * matrix[(1, 0)];
                if det2 == 0.0 {
                    return Err(invalid("linear part is singular".into()));
                }
                let tol = 1e-12;
                if kind == GroupKind::TranslationOnly
                    && ((matrix[(0, 0)] - 1.0).abs() > tol
                        || (matrix[(1, 1)] - 1.0).abs() > tol
                        || matrix[(0, 1)].abs() > tol
                        || matrix[(1, 0)].abs() > tol)
                {
                    return Err(invalid("linear part is not the identity".into()));
                }
                if kind == GroupKind::ScalingOnly
                    && ((matrix[(0, 0)] - matrix[(1, 1)]).abs() > tol
                        || matrix[(0, 0)] <= 0.0
                        || matrix[(0, 1)].abs() > tol
                        || matrix[(1, 0)].abs() > tol
                        || matrix[(0, 2)].abs() > tol
                        || matrix[(1, 2)].abs() > tol)
                {
                    return Err(invalid("not a positive isotropic scaling".into()));
                }
            }
        }
        Ok(Self { matrix, kind })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.matrix;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(entries: [f64; 9], kind: GroupKind) -> Result<Self, LieError> {
        Self::new(Matrix3::from_row_slice(&entries), kind)
    }

    pub fn multiply(&self, other: &GroupElement) -> Result<GroupElement, LieError> {
        if self.kind != other.kind {
            return Err(LieError::GroupMismatch(self.kind, other.kind));
        }
        Ok(GroupElement {
            matrix: self.matrix * other.matrix,
            kind: self.kind,
        })
    }

    pub fn inverse(&self) -> Result<GroupElement, LieError> {
        let matrix = if self.kind.is_projective() {
            self.matrix.try_inverse().ok_or(LieError::Singular)?
        } else {
            // Block inverse keeps the bottom row exact.
            let m = &self.matrix;
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            if det == 0.0 {
                return Err(LieError::Singular);
            }
            let a = m[(1, 1)] / det;
            let b = -m[(0, 1)] / det;
            let c = -m[(1, 0)] / det;
            let d = m[(0, 0)] / det;
            let (tx, ty) = (m[(0, 2)], m[(1, 2)]);
            Matrix3::new(a, b, -(a * tx + b * ty), c, d, -(c * tx + d * ty), 0.0, 0.0, 1.0)
        };
        Ok(GroupElement {
            matrix,
            kind: self.kind,
        })
    }

    /// Action on the plane: affine maps act directly, homographies by
    /// homogeneous division.
    pub fn act(&self, x: Point) -> Result<Point, LieError> {
        let m = &self.matrix;
        let n1 = m[(0, 0)] * x[0] + m[(0, 1)] * x[1] + m[(0, 2)];
        let n2 = m[(1, 0)] * x[0] + m[(1, 1)] * x[1] + m[(1, 2)];
        if !self.kind.is_projective() {
            return Ok([n1, n2]);
        }
        let w = self.denominator(x);
        if w.abs() < INFINITY_EPS {
            return Err(LieError::PointAtInfinity { x });
        }
        Ok([n1 / w, n2 / w])
    }

    fn denominator(&self, x: Point) -> f64 {
        let m = &self.matrix;
        m[(2, 0)] * x[0] + m[(2, 1)] * x[1] + m[(2, 2)]
    }

    /// Determinant of the derivative of `y ↦ u·y` at `x`.
    pub fn jacobian_det(&self, x: Point) -> Result<f64, LieError> {
        let m = &self.matrix;
        if !self.kind.is_projective() {
            return Ok(m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]);
        }
        let w = self.denominator(x);
        if w.abs() < INFINITY_EPS {
            return Err(LieError::PointAtInfinity { x });
        }
        Ok(m.determinant() / (w * w * w))
    }

    /// The inclusion Aff → Hom, `A ↦ det(A)^{−1/3} A`. Defined for positive
    /// determinant only.
    pub fn include_in_homography(&self) -> Result<GroupElement, LieError> {
        if self.kind.is_projective() {
            return Err(LieError::Domain(
                "element is already a homography".to_string(),
            ));
        }
        let det = self.matrix.determinant();
        if !(det > 0.0) {
            return Err(LieError::Domain(format!(
                "inclusion into the homography group needs det > 0, got {det}"
            )));
        }
        Ok(GroupElement {
            matrix: self.matrix * det.powf(-1.0 / 3.0),
            kind: GroupKind::Homography,
        })
    }

    /// Frobenius distance to another matrix.
    pub fn distance(&self, other: &GroupElement) -> f64 {
        (self.matrix - other.matrix).norm()
    }
}

/// Function form of [`GroupElement::include_in_homography`].
pub fn include_aff_in_hom(u: &GroupElement) -> Result<GroupElement, LieError> {
    u.include_in_homography()
}
