//! Max-plus (tropical) semiring and square-matrix algebra.
//!
//! Semiring addition `⊕` is `max`, multiplication `⊗` is `+`, the additive
//! identity is `-inf` and the multiplicative identity is `0`. Matrices are
//! generic over the scalar; [`TimeValue`] is the scalar used by the
//! analysis, `f64`/`f32` are supported for experimentation.

use std::fmt;

use num_traits::Float;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::time::TimeValue;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaxPlusError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare {
        row: usize,
        len: usize,
        expected: usize,
    },
}

/// A scalar of the max-plus semiring.
pub trait MaxPlusScalar: Copy + PartialOrd + fmt::Debug + fmt::Display {
    /// `-inf`: identity of `⊕`, absorbing for `⊗`.
    fn epsilon() -> Self;
    /// `0`: identity of `⊗`.
    fn unit() -> Self;
    /// `+inf`, used to report diverging quantities.
    fn top() -> Self;
    /// `a ⊗ b = a + b`, with `-inf` absorbing even against `+inf`.
    fn otimes(self, rhs: Self) -> Self;

    fn oplus(self, rhs: Self) -> Self {
        if rhs > self {
            rhs
        } else {
            self
        }
    }

    fn is_epsilon(self) -> bool {
        self == Self::epsilon()
    }
}

impl MaxPlusScalar for TimeValue {
    fn epsilon() -> Self {
        TimeValue::NegInf
    }

    fn unit() -> Self {
        TimeValue::ZERO
    }

    fn top() -> Self {
        TimeValue::PosInf
    }

    fn otimes(self, rhs: Self) -> Self {
        if self == TimeValue::NegInf || rhs == TimeValue::NegInf {
            return TimeValue::NegInf;
        }
        self.add_known(rhs)
    }
}

fn float_otimes<F: Float>(a: F, b: F) -> F {
    if a == F::neg_infinity() || b == F::neg_infinity() {
        F::neg_infinity()
    } else {
        a + b
    }
}

macro_rules! float_scalar {
    ($($t:ty),*) => {$(
        impl MaxPlusScalar for $t {
            fn epsilon() -> Self {
                <$t as Float>::neg_infinity()
            }

            fn unit() -> Self {
                0.0
            }

            fn top() -> Self {
                <$t as Float>::infinity()
            }

            fn otimes(self, rhs: Self) -> Self {
                float_otimes(self, rhs)
            }
        }
    )*};
}

float_scalar!(f32, f64);

/// Sign of the heaviest elementary cycle through off-diagonal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CycleClass {
    /// Every cycle has negative weight (or there are no cycles at all).
    AllNegative,
    /// No cycle is positive but at least one has weight exactly zero.
    NonPositiveWithZero,
    /// Some cycle has positive weight.
    HasPositive,
}

impl fmt::Display for CycleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CycleClass::AllNegative => "all cycles negative",
            CycleClass::NonPositiveWithZero => "non-positive cycles, some of weight zero",
            CycleClass::HasPositive => "positive-weight cycle present",
        })
    }
}

/// Dense square matrix over the max-plus semiring, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    n: usize,
    entries: Vec<S>,
}

impl<S: Eq> Eq for Matrix<S> {}

impl<S: MaxPlusScalar> Matrix<S> {
    pub fn filled(n: usize, value: S) -> Self {
        Matrix {
            n,
            entries: vec![value; n * n],
        }
    }

    /// All entries `-inf`.
    pub fn epsilon(n: usize) -> Self {
        Self::filled(n, S::epsilon())
    }

    /// `0` on the diagonal and `-inf` elsewhere.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::epsilon(n);
        for i in 0..n {
            m.set(i, i, S::unit());
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self, MaxPlusError> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for (row, values) in rows.into_iter().enumerate() {
            if values.len() != n {
                return Err(MaxPlusError::NotSquare {
                    row,
                    len: values.len(),
                    expected: n,
                });
            }
            entries.extend(values);
        }
        Ok(Matrix { n, entries })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.entries[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: S) {
        self.entries[i * self.n + j] = value;
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[S]> {
        self.entries.chunks(self.n.max(1)).take(self.n)
    }

    fn check_dim(&self, other: usize) -> Result<(), MaxPlusError> {
        if self.n != other {
            return Err(MaxPlusError::DimensionMismatch {
                left: self.n,
                right: other,
            });
        }
        Ok(())
    }

    /// `(A ⊗ B)[i][j] = max_k (A[i][k] + B[k][j])`.
    pub fn matmul(&self, other: &Matrix<S>) -> Result<Matrix<S>, MaxPlusError> {
        self.check_dim(other.n)?;
        let n = self.n;
        let mut out = Self::epsilon(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a.is_epsilon() {
                    continue;
                }
                for j in 0..n {
                    let v = out.get(i, j).oplus(a.otimes(other.get(k, j)));
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    /// Entrywise max.
    pub fn oplus(&self, other: &Matrix<S>) -> Result<Matrix<S>, MaxPlusError> {
        self.check_dim(other.n)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| a.oplus(b))
            .collect();
        Ok(Matrix { n: self.n, entries })
    }

    /// Max-plus matrix-vector product.
    pub fn mul_vec(&self, v: &[S]) -> Result<Vec<S>, MaxPlusError> {
        self.check_dim(v.len())?;
        Ok(self
            .rows()
            .map(|row| {
                row.iter()
                    .zip(v)
                    .fold(S::epsilon(), |acc, (&a, &x)| acc.oplus(a.otimes(x)))
            })
            .collect())
    }

    /// `self^k`, with `self^0 = I`.
    pub fn pow(&self, k: u32) -> Matrix<S> {
        let mut acc = Self::identity(self.n);
        for _ in 0..k {
            acc = acc.matmul(self).expect("same dimension");
        }
        acc
    }

    /// Truncated Kleene star `I ⊕ A ⊕ A² ⊕ … ⊕ A^(n-1)`.
    ///
    /// This is the least solution of `S = I ⊕ A S` only when no cycle is
    /// positive; see [`Matrix::classify_cycles`].
    pub fn kleene_star(&self) -> Matrix<S> {
        let n = self.n;
        let mut sum = Self::identity(n);
        let mut power = Self::identity(n);
        for _ in 1..n {
            power = power.matmul(self).expect("same dimension");
            sum = sum.oplus(&power).expect("same dimension");
        }
        sum
    }

    /// `A ⊕ A² ⊕ … ⊕ A^n`: heaviest path weights of length 1..=n.
    pub fn plus_closure(&self) -> Matrix<S> {
        let n = self.n;
        let mut power = self.clone();
        let mut sum = self.clone();
        for _ in 1..n {
            power = power.matmul(self).expect("same dimension");
            sum = sum.oplus(&power).expect("same dimension");
        }
        sum
    }

    /// Copy with every diagonal entry replaced by `-inf`.
    pub fn without_diagonal(&self) -> Matrix<S> {
        let mut m = self.clone();
        for i in 0..self.n {
            m.set(i, i, S::epsilon());
        }
        m
    }

    /// Classifies cycles formed by off-diagonal entries.
    ///
    /// The diagonal holds the self-latency convention (`0` in a CAL matrix)
    /// and is not treated as a communication cycle.
    pub fn classify_cycles(&self) -> CycleClass {
        let closure = self.without_diagonal().plus_closure();
        let mut zero = false;
        for i in 0..self.n {
            let w = closure.get(i, i);
            if w > S::unit() {
                return CycleClass::HasPositive;
            }
            if w == S::unit() {
                zero = true;
            }
        }
        if zero {
            CycleClass::NonPositiveWithZero
        } else {
            CycleClass::AllNegative
        }
    }

    pub fn le_entrywise(&self, other: &Matrix<S>) -> bool {
        self.n == other.n && self.entries.iter().zip(&other.entries).all(|(a, b)| a <= b)
    }

    /// Row-major CSV, one matrix row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn mp_matmul<S: MaxPlusScalar>(
    a: &Matrix<S>,
    b: &Matrix<S>,
) -> Result<Matrix<S>, MaxPlusError> {
    a.matmul(b)
}

pub fn mp_oplus<S: MaxPlusScalar>(a: &Matrix<S>, b: &Matrix<S>) -> Result<Matrix<S>, MaxPlusError> {
    a.oplus(b)
}

pub fn kleene_star<S: MaxPlusScalar>(g: &Matrix<S>) -> Matrix<S> {
    g.kleene_star()
}

pub fn classify_cycles<S: MaxPlusScalar>(g: &Matrix<S>) -> CycleClass {
    g.classify_cycles()
}

impl<S: MaxPlusScalar> fmt::Display for Matrix<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<Vec<String>> = self
            .rows()
            .map(|r| r.iter().map(|v| v.to_string()).collect())
            .collect();
        let width = cells
            .iter()
            .flatten()
            .map(|c| c.chars().count())
            .max()
            .unwrap_or(0);
        for row in &cells {
            f.write_str("[ ")?;
            for (j, c) in row.iter().enumerate() {
                if j > 0 {
                    f.write_str("  ")?;
                }
                write!(f, "{c:>width$}")?;
            }
            f.write_str(" ]\n")?;
        }
        Ok(())
    }
}

impl<S: MaxPlusScalar + Serialize> Serialize for Matrix<S> {
    fn serialize<Z: Serializer>(&self, serializer: Z) -> Result<Z::Ok, Z::Error> {
        serializer.collect_seq(self.rows())
    }
}

impl<'de, S: MaxPlusScalar + Deserialize<'de>> Deserialize<'de> for Matrix<S> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<S>>::deserialize(deserializer)?;
        Matrix::from_rows(rows).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::MaxPlusMatrix;
    use proptest::prelude::*;

    const NEG: TimeValue = TimeValue::NegInf;

    fn ms(n: i64) -> TimeValue {
        TimeValue::millis(n)
    }

    fn m(rows: Vec<Vec<TimeValue>>) -> MaxPlusMatrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_is_neutral() {
        let a = m(vec![vec![ms(1), NEG], vec![ms(-4), ms(7)]]);
        assert_eq!(MaxPlusMatrix::identity(2).matmul(&a).unwrap(), a);
        assert_eq!(a.matmul(&MaxPlusMatrix::identity(2)).unwrap(), a);
    }

    #[test]
    fn epsilon_absorbs() {
        let a = m(vec![vec![ms(1), TimeValue::PosInf], vec![ms(-4), ms(7)]]);
        let e = MaxPlusMatrix::epsilon(2);
        assert_eq!(e.matmul(&a).unwrap(), e);
        assert_eq!(a.oplus(&e).unwrap(), a);
    }

    #[test]
    fn lower_triangular_square() {
        // [[0,-inf],[5,0]]^2: entry (1,0) = max(5+0, 0+5) = 5.
        let a = m(vec![vec![ms(0), NEG], vec![ms(5), ms(0)]]);
        assert_eq!(a.matmul(&a).unwrap(), a);
    }

    #[test]
    fn oplus_examples() {
        let a = m(vec![vec![ms(1)]]);
        let b = m(vec![vec![ms(3)]]);
        assert_eq!(a.oplus(&b).unwrap(), b);
        assert_eq!(a.oplus(&a).unwrap(), a);
    }

    #[test]
    fn dimension_mismatch() {
        let a = MaxPlusMatrix::identity(2);
        let b = MaxPlusMatrix::identity(3);
        assert_eq!(
            a.matmul(&b),
            Err(MaxPlusError::DimensionMismatch { left: 2, right: 3 })
        );
        assert!(a.oplus(&b).is_err());
        assert!(a.mul_vec(&[ms(0)]).is_err());
        assert!(matches!(
            Matrix::from_rows(vec![vec![ms(0), ms(1)], vec![ms(0)]]),
            Err(MaxPlusError::NotSquare { row: 1, .. })
        ));
    }

    #[test]
    fn star_of_empty_graph_is_identity() {
        assert_eq!(
            MaxPlusMatrix::epsilon(3).kleene_star(),
            MaxPlusMatrix::identity(3)
        );
    }

    #[test]
    fn pipeline_star_closed_form() {
        let (g21, g32) = (ms(5), ms(-3));
        let gamma = m(vec![
            vec![ms(0), NEG, NEG],
            vec![g21, ms(0), NEG],
            vec![NEG, g32, ms(0)],
        ]);
        let expected = m(vec![
            vec![ms(0), NEG, NEG],
            vec![g21, ms(0), NEG],
            vec![ms(2), g32, ms(0)],
        ]);
        assert_eq!(gamma.kleene_star(), expected);
    }

    #[test]
    fn cycle_classification_examples() {
        let pipeline = m(vec![
            vec![ms(0), NEG, NEG],
            vec![ms(5), ms(0), NEG],
            vec![NEG, ms(5), ms(0)],
        ]);
        assert_eq!(pipeline.classify_cycles(), CycleClass::AllNegative);
        let positive = m(vec![vec![ms(0), ms(1)], vec![ms(1), ms(0)]]);
        assert_eq!(positive.classify_cycles(), CycleClass::HasPositive);
        let zero = m(vec![vec![ms(0), ms(2)], vec![ms(-2), ms(0)]]);
        assert_eq!(zero.classify_cycles(), CycleClass::NonPositiveWithZero);
        let negative = m(vec![vec![ms(0), ms(1)], vec![ms(-3), ms(0)]]);
        assert_eq!(negative.classify_cycles(), CycleClass::AllNegative);
    }

    #[test]
    fn float_scalars_share_the_algebra() {
        let inf = f64::NEG_INFINITY;
        let a = Matrix::from_rows(vec![vec![0.0, inf], vec![2.5, 0.0]]).unwrap();
        assert_eq!(a.matmul(&a).unwrap(), a);
        assert_eq!(a.kleene_star(), a);
        let c = Matrix::from_rows(vec![vec![0.0f32, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(c.classify_cycles(), CycleClass::HasPositive);
        assert_eq!(<f64 as MaxPlusScalar>::epsilon().otimes(f64::INFINITY), inf);
    }

    #[test]
    fn csv_and_display() {
        let a = m(vec![vec![ms(0), NEG], vec![ms(5), ms(0)]]);
        assert_eq!(a.to_csv(), "0ms,-inf\n5ms,0ms\n");
        let shown = a.to_string();
        assert!(shown.contains("-inf"));
        assert_eq!(shown.lines().count(), 2);
    }

    #[test]
    fn serde_roundtrip() {
        let a = m(vec![vec![ms(0), NEG], vec![ms(5), TimeValue::PosInf]]);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#"[["0ms","-inf"],["5ms","+inf"]]"#);
        let back: MaxPlusMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    /// Least fixpoint of `S = I ⊕ A S`, iterated from `I`.
    fn fixpoint_star(a: &MaxPlusMatrix) -> MaxPlusMatrix {
        let n = a.dim();
        let id = MaxPlusMatrix::identity(n);
        let mut s = id.clone();
        for _ in 0..=n + 1 {
            let next = id.oplus(&a.matmul(&s).unwrap()).unwrap();
            if next == s {
                return s;
            }
            s = next;
        }
        s
    }

    fn entry() -> impl Strategy<Value = TimeValue> {
        prop_oneof![
            1 => Just(NEG),
            3 => (-20i64..20).prop_map(ms),
        ]
    }

    fn square(n: usize) -> impl Strategy<Value = MaxPlusMatrix> {
        proptest::collection::vec(entry(), n * n).prop_map(move |v| Matrix { n, entries: v })
    }

    fn gamma_like() -> impl Strategy<Value = MaxPlusMatrix> {
        (1usize..=6).prop_flat_map(|n| {
            square(n).prop_map(|mut g| {
                for i in 0..g.dim() {
                    g.set(i, i, ms(0));
                }
                g
            })
        })
    }

    fn triple() -> impl Strategy<Value = (MaxPlusMatrix, MaxPlusMatrix, MaxPlusMatrix)> {
        (1usize..=4).prop_flat_map(|n| (square(n), square(n), square(n)))
    }

    proptest! {
        #[test]
        fn semiring_laws((a, b, c) in triple()) {
            let n = a.dim();
            prop_assert_eq!(a.oplus(&b).unwrap(), b.oplus(&a).unwrap());
            prop_assert_eq!(
                a.oplus(&b).unwrap().oplus(&c).unwrap(),
                a.oplus(&b.oplus(&c).unwrap()).unwrap()
            );
            prop_assert_eq!(a.oplus(&a).unwrap(), a.clone());
            prop_assert_eq!(
                a.matmul(&b).unwrap().matmul(&c).unwrap(),
                a.matmul(&b.matmul(&c).unwrap()).unwrap()
            );
            prop_assert_eq!(
                a.matmul(&b.oplus(&c).unwrap()).unwrap(),
                a.matmul(&b).unwrap().oplus(&a.matmul(&c).unwrap()).unwrap()
            );
            prop_assert_eq!(
                b.oplus(&c).unwrap().matmul(&a).unwrap(),
                b.matmul(&a).unwrap().oplus(&c.matmul(&a).unwrap()).unwrap()
            );
            let id = MaxPlusMatrix::identity(n);
            let eps = MaxPlusMatrix::epsilon(n);
            prop_assert_eq!(id.matmul(&a).unwrap(), a.clone());
            prop_assert_eq!(a.oplus(&eps).unwrap(), a.clone());
            prop_assert_eq!(a.matmul(&eps).unwrap(), eps.clone());
        }

        #[test]
        fn star_is_fixpoint_without_positive_cycles(g in gamma_like()) {
            prop_assume!(g.classify_cycles() != CycleClass::HasPositive);
            let star = g.kleene_star();
            let id = MaxPlusMatrix::identity(g.dim());
            prop_assert_eq!(id.oplus(&g.matmul(&star).unwrap()).unwrap(), star.clone());
            prop_assert_eq!(fixpoint_star(&g), star);
        }

        #[test]
        fn star_is_monotone(g in gamma_like(), bump in proptest::collection::vec(0i64..5, 36)) {
            let n = g.dim();
            let mut h = g.clone();
            for i in 0..n {
                for j in 0..n {
                    let v = g.get(i, j);
                    if v.is_finite() {
                        h.set(i, j, v.otimes(ms(bump[i * n + j])));
                    }
                }
            }
            prop_assert!(g.le_entrywise(&h));
            prop_assert!(g.kleene_star().le_entrywise(&h.kleene_star()));
        }
    }
}
