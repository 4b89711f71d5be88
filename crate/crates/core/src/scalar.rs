//! Numeric scalar abstraction shared by the network, losses and augmentations.
//!
//! Everything differentiable is generic over [`Scalar`] so the same code runs in
//! `f32` for training, `f64` for gradient checks, and [`Dual`] for exact
//! Hessian-vector products (forward-over-reverse differentiation).

use core::fmt::Debug;
use core::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialEq
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    /// Real part as `f64`.
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn is_finite(self) -> bool;

    #[inline]
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    #[inline]
    fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    #[inline]
    fn clamp(self, lo: Self, hi: Self) -> Self {
        self.max(lo).min(hi)
    }

    #[inline]
    fn sigmoid(self) -> Self {
        Self::ONE / (Self::ONE + (-self).exp())
    }

    /// `c[i*rsc + j*csc] = beta * c + sum_l a[i*rsa + l*csa] * b[l*rsb + j*csb]`
    /// for `i < m`, `j < n`, `l < k`.
    ///
    /// The default is a plain triple loop; `f32` and `f64` dispatch to a blocked
    /// SIMD kernel.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        (rsa, csa): (usize, usize),
        b: &[Self],
        (rsb, csb): (usize, usize),
        beta: Self,
        c: &mut [Self],
        (rsc, csc): (usize, usize),
    ) {
        check_extent(a.len(), m, k, rsa, csa);
        check_extent(b.len(), k, n, rsb, csb);
        check_extent(c.len(), m, n, rsc, csc);
        for i in 0..m {
            for j in 0..n {
                let mut acc = Self::ZERO;
                for l in 0..k {
                    acc += a[i * rsa + l * csa] * b[l * rsb + j * csb];
                }
                let slot = &mut c[i * rsc + j * csc];
                *slot = if beta == Self::ZERO { acc } else { beta * *slot + acc };
            }
        }
    }
}

#[inline]
fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * rs + (cols - 1) * cs;
    assert!(last < len, "gemm operand too small: need index {last}, have {len}");
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn exp(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::logf(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        libm::sqrtf(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        libm::tanhf(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        (rsa, csa): (usize, usize),
        b: &[Self],
        (rsb, csb): (usize, usize),
        beta: Self,
        c: &mut [Self],
        (rsc, csc): (usize, usize),
    ) {
        check_extent(a.len(), m, k, rsa, csa);
        check_extent(b.len(), k, n, rsb, csb);
        check_extent(c.len(), m, n, rsc, csc);
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: every index touched by the kernel was bounds-checked above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                beta,
                c.as_mut_ptr(),
                rsc as isize,
                csc as isize,
            );
        }
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        libm::tanh(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        (rsa, csa): (usize, usize),
        b: &[Self],
        (rsb, csb): (usize, usize),
        beta: Self,
        c: &mut [Self],
        (rsc, csc): (usize, usize),
    ) {
        check_extent(a.len(), m, k, rsa, csa);
        check_extent(b.len(), k, n, rsb, csb);
        check_extent(c.len(), m, n, rsc, csc);
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: every index touched by the kernel was bounds-checked above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                beta,
                c.as_mut_ptr(),
                rsc as isize,
                csc as isize,
            );
        }
    }
}

/// First-order dual number `re + eps·ε` with `ε² = 0`.
///
/// Running a reverse-mode gradient computation over `Dual` values whose
/// tangents are seeded with a direction `v` yields `H·v` in the tangents of the
/// gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Self { re, eps }
    }

    pub fn constant(re: S) -> Self {
        Self { re, eps: S::ZERO }
    }
}

impl<S: Scalar> PartialOrd for Dual<S> {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = S::ONE / o.re;
        Self::new(self.re * inv, (self.eps * o.re - self.re * o.eps) * inv * inv)
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl<S: Scalar> AddAssign for Dual<S> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Scalar> SubAssign for Dual<S> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<S: Scalar> MulAssign for Dual<S> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<S: Scalar> DivAssign for Dual<S> {
    #[inline]
    fn div_assign(&mut self, o: Self) {
        *self = *self / o;
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    const ZERO: Self = Dual { re: S::ZERO, eps: S::ZERO };
    const ONE: Self = Dual { re: S::ONE, eps: S::ZERO };

    fn from_f64(v: f64) -> Self {
        Self::constant(S::from_f64(v))
    }
    fn to_f64(self) -> f64 {
        self.re.to_f64()
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, self.eps * e)
    }
    fn ln(self) -> Self {
        Self::new(self.re.ln(), self.eps / self.re)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self::new(s, self.eps / (S::from_f64(2.0) * s))
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Self::new(t, self.eps * (S::ONE - t * t))
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }

    /// Splits into real and tangent parts so the underlying kernel is reused:
    /// `(A + εA')(B + εB') = AB + ε(AB' + A'B)`.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        (rsa, csa): (usize, usize),
        b: &[Self],
        (rsb, csb): (usize, usize),
        beta: Self,
        c: &mut [Self],
        (rsc, csc): (usize, usize),
    ) {
        check_extent(a.len(), m, k, rsa, csa);
        check_extent(b.len(), k, n, rsb, csb);
        check_extent(c.len(), m, n, rsc, csc);
        let split = |x: &[Self], rows: usize, cols: usize, rs: usize, cs: usize| {
            let mut re = alloc::vec::Vec::with_capacity(rows * cols);
            let mut eps = alloc::vec::Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for j in 0..cols {
                    let v = x[i * rs + j * cs];
                    re.push(v.re);
                    eps.push(v.eps);
                }
            }
            (re, eps)
        };
        let (a_re, a_eps) = split(a, m, k, rsa, csa);
        let (b_re, b_eps) = split(b, k, n, rsb, csb);
        let mut c_re = alloc::vec![S::ZERO; m * n];
        let mut c_eps = alloc::vec![S::ZERO; m * n];
        S::gemm(m, k, n, &a_re, (k, 1), &b_re, (n, 1), S::ZERO, &mut c_re, (n, 1));
        S::gemm(m, k, n, &a_re, (k, 1), &b_eps, (n, 1), S::ZERO, &mut c_eps, (n, 1));
        S::gemm(m, k, n, &a_eps, (k, 1), &b_re, (n, 1), S::ONE, &mut c_eps, (n, 1));
        for i in 0..m {
            for j in 0..n {
                let prod = Dual::new(c_re[i * n + j], c_eps[i * n + j]);
                let slot = &mut c[i * rsc + j * csc];
                *slot = if beta == Self::ZERO { prod } else { beta * *slot + prod };
            }
        }
    }
}

/// Converts a slice between scalar types through `f64`.
pub fn cast_slice<A: Scalar, B: Scalar>(src: &[A]) -> alloc::vec::Vec<B> {
    src.iter().map(|v| B::from_f64(v.to_f64())).collect()
}
