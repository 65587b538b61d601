//! Integral geometry of rectangles and convex polytopes.

use nalgebra::{DMatrix, RealField};

use crate::error::{domain, Error, Result};
use crate::scalar::Real;
use crate::special::{ball_volume, flag_coeff};

/// Axis-aligned box ∏[0, T_i].
#[derive(Debug, Clone, PartialEq)]
pub struct Rectangle<T> {
    sides: Vec<T>,
}

impl<T: Real> Rectangle<T> {
    pub fn new(sides: Vec<T>) -> Result<Self> {
        if sides.is_empty() {
            return Err(domain!("rectangle needs at least one side"));
        }
        if let Some(s) = sides.iter().find(|s| !(**s > T::zero() && s.is_finite())) {
            return Err(domain!("rectangle side lengths must be positive and finite, got {s}"));
        }
        Ok(Rectangle { sides })
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[T] {
        &self.sides
    }

    pub fn volume(&self) -> T {
        self.sides.iter().fold(T::one(), |a, &s| a * s)
    }

    /// ℒ_j for every j = 0..=N.
    pub fn lks(&self) -> Vec<T> {
        elementary_symmetric(&self.sides)
    }

    pub fn lk(&self, j: usize) -> T {
        lk_rectangle(self, j)
    }

    /// Splits along `axis` at `at`, returning the two pieces and their shared face.
    ///
    /// The face is `None` in dimension 1, where it is a point with ℒ_0 = 1.
    pub fn split(&self, axis: usize, at: T) -> Result<(Self, Self, Option<Self>)> {
        if axis >= self.dim() || !(at > T::zero() && at < self.sides[axis]) {
            return Err(domain!("split at {at} on axis {axis} is outside the rectangle"));
        }
        let mut a = self.sides.clone();
        let mut b = self.sides.clone();
        a[axis] = at;
        b[axis] = self.sides[axis] - at;
        let face: Vec<T> =
            self.sides.iter().enumerate().filter(|(i, _)| *i != axis).map(|(_, &s)| s).collect();
        let face = if face.is_empty() { None } else { Some(Rectangle { sides: face }) };
        Ok((Rectangle { sides: a }, Rectangle { sides: b }, face))
    }
}

/// A face of a rectangle through the origin, spanned by the listed axes (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Facet<T> {
    pub axes: Vec<usize>,
    pub measure: T,
}

impl<T> Facet<T> {
    pub fn dimension(&self) -> usize {
        self.axes.len()
    }
}

/// Convex polytope given by its vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolytope<T> {
    vertices: Vec<Vec<T>>,
}

impl<T: Real> ConvexPolytope<T> {
    pub fn new(vertices: Vec<Vec<T>>) -> Result<Self> {
        let Some(first) = vertices.first() else {
            return Err(domain!("polytope needs at least one vertex"));
        };
        let n = first.len();
        if vertices.iter().any(|v| v.len() != n) {
            return Err(domain!("polytope vertices have mixed dimensions"));
        }
        if vertices.iter().flatten().any(|x| !x.is_finite()) {
            return Err(domain!("polytope vertex coordinates must be finite"));
        }
        Ok(ConvexPolytope { vertices })
    }

    /// The 2^N corners of a rectangle.
    pub fn from_rectangle(t: &Rectangle<T>) -> Self {
        let n = t.dim();
        let vertices = (0..1usize << n)
            .map(|mask| {
                (0..n).map(|i| if mask >> i & 1 == 1 { t.sides[i] } else { T::zero() }).collect()
            })
            .collect();
        ConvexPolytope { vertices }
    }

    pub fn vertices(&self) -> &[Vec<T>] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }
}

/// e_0..e_N of the given values.
fn elementary_symmetric<T: Real>(x: &[T]) -> Vec<T> {
    let mut e = vec![T::zero(); x.len() + 1];
    e[0] = T::one();
    for (k, &v) in x.iter().enumerate() {
        for j in (1..=k + 1).rev() {
            e[j] = e[j] + v * e[j - 1];
        }
    }
    e
}

/// The C(N,j) faces of dimension j containing the origin.
pub fn facets_containing_origin<T: Real>(t: &Rectangle<T>, j: usize) -> Result<Vec<Facet<T>>> {
    let n = t.dim();
    if j > n {
        return Err(domain!("facet dimension {j} exceeds N = {n}"));
    }
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << n) {
        if mask.count_ones() as usize != j {
            continue;
        }
        let axes: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let measure = axes.iter().fold(T::one(), |a, &i| a * t.sides[i]);
        out.push(Facet { axes, measure });
    }
    out.sort_by(|a, b| a.axes.cmp(&b.axes));
    Ok(out)
}

/// ℒ_j(T), the degree-j elementary symmetric polynomial of the sides; zero for j > N.
pub fn lk_rectangle<T: Real>(t: &Rectangle<T>, j: usize) -> T {
    if j > t.dim() {
        return T::zero();
    }
    elementary_symmetric(&t.sides)[j]
}

/// Volume of the ρ-tube around a set with curvatures `lks`, sitting in R^{N′}.
pub fn steiner_tube_volume<T: Real>(lks: &[T], rho: T, ambient_dim: usize) -> Result<T> {
    if !(rho >= T::zero()) {
        return Err(domain!("tube radius must be non-negative, got {rho}"));
    }
    if lks.len() > ambient_dim + 1 {
        return Err(domain!(
            "{} curvatures supplied for ambient dimension {ambient_dim}",
            lks.len()
        ));
    }
    let mut v = T::zero();
    for (j, &l) in lks.iter().enumerate() {
        let k = (ambient_dim - j) as u32;
        v = v + ball_volume::<T>(k) * rho.powi(k as i32) * l;
    }
    Ok(v)
}

/// h_M(ω) = max over vertices of ⟨ω, v⟩.
pub fn support_function<T: Real>(m: &ConvexPolytope<T>, direction: &[T]) -> Result<T> {
    if direction.len() != m.dim() {
        return Err(domain!(
            "direction has {} components, polytope lives in R^{}",
            direction.len(),
            m.dim()
        ));
    }
    let mut best = T::neg_infinity();
    for v in &m.vertices {
        let d = v.iter().zip(direction).fold(T::zero(), |a, (&x, &w)| a + x * w);
        best = best.max(d);
    }
    Ok(best)
}

/// Width of M in direction ω: sup⟨ω,t⟩ − inf⟨ω,t⟩ = h_M(ω) + h_M(−ω).
pub fn width<T: Real>(m: &ConvexPolytope<T>, direction: &[T]) -> Result<T> {
    let neg: Vec<T> = direction.iter().map(|&w| -w).collect();
    Ok(support_function(m, direction)? + support_function(m, &neg)?)
}

/// Coefficients [j+k, k]·C_k(u), k = 0..N−j, multiplying ℒ_{j+k}(M).
pub fn crofton_lift<T: Real>(coeffs: &[T], j: usize) -> Result<Vec<T>> {
    if coeffs.is_empty() || j >= coeffs.len() {
        return Err(domain!("lift index {j} outside 0..={}", coeffs.len().saturating_sub(1)));
    }
    let n = coeffs.len() - 1;
    (0..=n - j)
        .map(|k| Ok(flag_coeff::<T>((j + k) as u32, k as u32)? * coeffs[k]))
        .collect()
}

fn check_rank<T: Real + RealField>(a: &DMatrix<T>, m: usize) -> Result<()> {
    let sv = a.clone().singular_values();
    let mut s: Vec<T> = sv.iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    if m < s.len() && s[0] > T::zero() && s[m] >= T::lit(1e-10) * s[0] {
        return Err(Error::Precondition(format!(
            "matrix rank exceeds {m}: singular value {} vs largest {}",
            s[m], s[0]
        )));
    }
    Ok(())
}

/// Returns (det Σ r_j A_j, ∏ r_j^m · det Σ A_j) for square matrices of rank ≤ m.
///
/// The two agree whenever the ranks of the summands add up to the matrix size.
pub fn det_rank_identity_check<T: Real + RealField>(
    matrices: &[DMatrix<T>],
    scalars: &[T],
    m: usize,
) -> Result<(T, T)> {
    let Some(first) = matrices.first() else {
        return Err(domain!("no matrices supplied"));
    };
    let n = first.nrows();
    if matrices.iter().any(|a| a.nrows() != n || a.ncols() != n) {
        return Err(domain!("matrices must all be {n}x{n}"));
    }
    if scalars.len() != matrices.len() {
        return Err(domain!("{} scalars for {} matrices", scalars.len(), matrices.len()));
    }
    for a in matrices {
        check_rank(a, m)?;
    }
    let mut weighted = DMatrix::<T>::zeros(n, n);
    let mut plain = DMatrix::<T>::zeros(n, n);
    let mut prod = T::one();
    for (a, &r) in matrices.iter().zip(scalars) {
        weighted += a * r;
        plain += a;
        prod = prod * num_traits::Float::powi(r, m as i32);
    }
    Ok((weighted.determinant(), prod * plain.determinant()))
}
