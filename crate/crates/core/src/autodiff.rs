//! Tape-based reverse-mode automatic differentiation over `f64` scalars.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`] holding the
//! forward value, the parent indices and the local partial derivatives.
//! Parents always precede their children, so a single reverse sweep over the
//! node list accumulates adjoints.
//!
//! ```
//! use ccma_core::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(2.0);
//! let y = tape.var(3.0);
//! let z = x * y + x.exp();
//! let grads = tape.backward(z).unwrap();
//! assert_eq!(grads.wrt(x), 3.0 + 2f64.exp());
//! assert_eq!(grads.wrt(y), 2.0);
//! ```
//!
//! Complex quantities are carried as [`CVar`] pairs of real variables.
//! Non-smooth primitives (`abs`, `max`, `min`, `clamp`) and callers that take
//! data-dependent branches log a branch tag on the tape; [`gradcheck`] uses the
//! log to skip coordinates where a finite-difference probe crosses a branch.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;

use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Default)]
struct Inner {
    values: Vec<f64>,
    // (start, len) into `parents` / `partials`
    spans: Vec<(u32, u32)>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    branches: Vec<u64>,
}

/// Append-only record of scalar operations.
pub struct Tape {
    id: u64,
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.len())
            .finish()
    }
}

/// Scalar variable recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            inner: RefCell::new(Inner::default()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all nodes but keeps the allocations.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.values.clear();
        inner.spans.clear();
        inner.parents.clear();
        inner.partials.clear();
        inner.branches.clear();
    }

    fn push(&self, value: f64, edges: &[(u32, f64)]) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let index = inner.values.len() as u32;
        let start = inner.parents.len() as u32;
        for &(p, d) in edges {
            debug_assert!(p < index);
            inner.parents.push(p);
            inner.partials.push(d);
        }
        inner.spans.push((start, edges.len() as u32));
        inner.values.push(value);
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn push_iter<I>(&self, value: f64, edges: I) -> Var<'_>
    where
        I: IntoIterator<Item = (u32, f64)>,
    {
        let mut inner = self.inner.borrow_mut();
        let index = inner.values.len() as u32;
        let start = inner.parents.len() as u32;
        let mut len = 0u32;
        for (p, d) in edges {
            inner.parents.push(p);
            inner.partials.push(d);
            len += 1;
        }
        inner.spans.push((start, len));
        inner.values.push(value);
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// New independent (leaf) variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, &[])
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// A value that takes no part in differentiation.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(value, &[])
    }

    /// Records a data-dependent branch decision.
    pub fn note_branch(&self, tag: u64) {
        self.inner.borrow_mut().branches.push(tag);
    }

    pub fn branches(&self) -> Vec<u64> {
        self.inner.borrow().branches.clone()
    }

    fn owns(&self, v: &Var<'_>) -> bool {
        std::ptr::eq(self, v.tape)
    }

    pub fn sum(&self, xs: &[Var<'_>]) -> Var<'_> {
        let value = xs.iter().map(|x| x.value).sum();
        self.push_iter(value, xs.iter().map(|x| (self.check(x), 1.0)))
    }

    /// `Σ c_i x_i` as a single node.
    pub fn dot(&self, coeffs: &[f64], xs: &[Var<'_>]) -> Var<'_> {
        assert_eq!(coeffs.len(), xs.len(), "dot: length mismatch");
        let value = coeffs.iter().zip(xs).map(|(c, x)| c * x.value).sum();
        self.push_iter(value, coeffs.iter().zip(xs).map(|(&c, x)| (self.check(x), c)))
    }

    /// `xᵀ A x` for a row-major `n × n` matrix `A`, as a single node.
    pub fn quad_form(&self, matrix: &[f64], xs: &[Var<'_>]) -> Var<'_> {
        let n = xs.len();
        assert_eq!(matrix.len(), n * n, "quad_form: matrix is not n × n");
        let x: Vec<f64> = xs.iter().map(|v| v.value).collect();
        let mut ax = vec![0.0; n];
        let mut atx = vec![0.0; n];
        for i in 0..n {
            let row = &matrix[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * x[j];
                atx[j] += row[j] * x[i];
            }
            ax[i] = acc;
        }
        let value = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
        self.push_iter(
            value,
            xs.iter().enumerate().map(|(i, v)| (self.check(v), ax[i] + atx[i])),
        )
    }

    fn check(&self, v: &Var<'_>) -> u32 {
        assert!(self.owns(v), "variable belongs to a different tape");
        v.index
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        self.backward_seeded(&[(root, 1.0)])
    }

    /// Reverse sweep with explicit output adjoints (a vector-Jacobian product).
    pub fn backward_seeded(&self, seeds: &[(Var<'_>, f64)]) -> Result<Gradients> {
        let inner = self.inner.borrow();
        let n = inner.values.len();
        let mut adj = vec![0.0; n];
        for (v, s) in seeds {
            if !self.owns(v) || v.index as usize >= n {
                return Err(Error::ForeignVar);
            }
            adj[v.index as usize] += s;
        }
        let top = seeds.iter().map(|(v, _)| v.index as usize + 1).max().unwrap_or(0);
        for k in (0..top).rev() {
            let a = adj[k];
            if a == 0.0 {
                continue;
            }
            let (start, len) = inner.spans[k];
            let (start, end) = (start as usize, (start + len) as usize);
            for e in start..end {
                adj[inner.parents[e] as usize] += inner.partials[e] * a;
            }
        }
        Ok(Gradients {
            tape_id: self.id,
            adjoints: adj,
        })
    }
}

/// Adjoints for every node of one tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape_id: u64,
    adjoints: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        assert_eq!(self.tape_id, v.tape.id, "variable belongs to a different tape");
        self.adjoints[v.index as usize]
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.adjoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjoints.is_empty()
    }
}

const BRANCH_ABS: u64 = 0xA5_0000;
const BRANCH_MAX: u64 = 0xA6_0000;
const BRANCH_MIN: u64 = 0xA7_0000;
const BRANCH_CLAMP: u64 = 0xA8_0000;

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.value
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    fn unary(self, value: f64, d: f64) -> Var<'t> {
        self.tape.push(value, &[(self.index, d)])
    }

    fn binary(self, other: Var<'t>, value: f64, da: f64, db: f64) -> Var<'t> {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
        self.tape.push(value, &[(self.index, da), (other.index, db)])
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value.exp();
        self.unary(e, e)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        if !(self.value > 0.0) {
            return Err(Error::Domain {
                op: "ln",
                value: self.value,
            });
        }
        Ok(self.unary(self.value.ln(), 1.0 / self.value))
    }

    pub fn log10(self) -> Result<Var<'t>> {
        if !(self.value > 0.0) {
            return Err(Error::Domain {
                op: "log10",
                value: self.value,
            });
        }
        Ok(self.unary(self.value.log10(), 1.0 / (self.value * std::f64::consts::LN_10)))
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        if !(self.value >= 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                value: self.value,
            });
        }
        let s = self.value.sqrt();
        Ok(self.unary(s, 0.5 / s))
    }

    /// `sqrt(x)` whose derivative is evaluated as `1 / (2 sqrt(x + floor))`,
    /// keeping the gradient finite at `x = 0`.
    pub fn sqrt_floored(self, floor: f64) -> Result<Var<'t>> {
        if !(self.value >= 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                value: self.value,
            });
        }
        Ok(self.unary(self.value.sqrt(), 0.5 / (self.value + floor).sqrt()))
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(self.value.sin(), self.value.cos())
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(self.value.cos(), -self.value.sin())
    }

    /// `|x|` with subgradient 0 at the origin.
    pub fn abs(self) -> Var<'t> {
        let (d, tag) = if self.value > 0.0 {
            (1.0, 1)
        } else if self.value < 0.0 {
            (-1.0, 2)
        } else {
            (0.0, 0)
        };
        self.tape.note_branch(BRANCH_ABS | tag);
        self.unary(self.value.abs(), d)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(self.value * self.value, 2.0 * self.value)
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        let d = if n == 0 { 0.0 } else { n as f64 * self.value.powi(n - 1) };
        self.unary(self.value.powi(n), d)
    }

    /// `x^p` for a constant exponent; negative bases need an integer exponent.
    pub fn powf(self, p: f64) -> Result<Var<'t>> {
        if self.value < 0.0 && p.fract() != 0.0 {
            return Err(Error::Domain {
                op: "powf",
                value: self.value,
            });
        }
        if self.value == 0.0 && p < 1.0 {
            return Err(Error::Domain {
                op: "powf",
                value: self.value,
            });
        }
        let d = if p == 0.0 { 0.0 } else { p * self.value.powf(p - 1.0) };
        Ok(self.unary(self.value.powf(p), d))
    }

    /// `x^y` with both operands recorded; requires `x > 0`.
    pub fn pow(self, y: Var<'t>) -> Result<Var<'t>> {
        if !(self.value > 0.0) {
            return Err(Error::Domain {
                op: "pow",
                value: self.value,
            });
        }
        let v = self.value.powf(y.value);
        Ok(self.binary(y, v, y.value * self.value.powf(y.value - 1.0), v * self.value.ln()))
    }

    pub fn checked_div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        if rhs.value == 0.0 {
            return Err(Error::Domain {
                op: "div",
                value: rhs.value,
            });
        }
        Ok(self / rhs)
    }

    pub fn recip(self) -> Var<'t> {
        let r = 1.0 / self.value;
        self.unary(r, -r * r)
    }

    /// Larger operand; ties pass the gradient to `self`.
    pub fn max(self, other: Var<'t>) -> Var<'t> {
        let first = self.value >= other.value;
        self.tape.note_branch(BRANCH_MAX | first as u64);
        if first {
            self.binary(other, self.value, 1.0, 0.0)
        } else {
            self.binary(other, other.value, 0.0, 1.0)
        }
    }

    /// Smaller operand; ties pass the gradient to `self`.
    pub fn min(self, other: Var<'t>) -> Var<'t> {
        let first = self.value <= other.value;
        self.tape.note_branch(BRANCH_MIN | first as u64);
        if first {
            self.binary(other, self.value, 1.0, 0.0)
        } else {
            self.binary(other, other.value, 0.0, 1.0)
        }
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        assert!(lo <= hi, "clamp: lo > hi");
        let (v, d, tag) = if self.value < lo {
            (lo, 0.0, 1)
        } else if self.value > hi {
            (hi, 0.0, 2)
        } else {
            (self.value, 1.0, 0)
        };
        self.tape.note_branch(BRANCH_CLAMP | tag);
        self.unary(v, d)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> AddAssign for Var<'t> {
    fn add_assign(&mut self, rhs: Var<'t>) {
        *self = *self + rhs;
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(self - rhs.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self / rhs.value;
        rhs.unary(q, -q / rhs.value)
    }
}

/// Complex number as a pair of real variables.
#[derive(Clone, Copy, Debug)]
pub struct CVar<'t> {
    pub re: Var<'t>,
    pub im: Var<'t>,
}

impl<'t> CVar<'t> {
    pub fn new(re: Var<'t>, im: Var<'t>) -> Self {
        Self { re, im }
    }

    pub fn value(self) -> Complex64 {
        Complex64::new(self.re.value, self.im.value)
    }

    pub fn conj(self) -> Self {
        Self {
            re: self.re,
            im: -self.im,
        }
    }

    /// `|z|²`.
    pub fn norm_sqr(self) -> Var<'t> {
        let (a, b) = (self.re.value, self.im.value);
        self.re.binary(self.im, a * a + b * b, 2.0 * a, 2.0 * b)
    }

    pub fn scale(self, k: Var<'t>) -> Self {
        Self {
            re: self.re * k,
            im: self.im * k,
        }
    }

    /// Product with a complex constant.
    pub fn mul_const(self, c: Complex64) -> Self {
        let tape = self.re.tape;
        let (a, b) = (self.re.value, self.im.value);
        let re = tape.push(a * c.re - b * c.im, &[(self.re.index, c.re), (self.im.index, -c.im)]);
        let im = tape.push(a * c.im + b * c.re, &[(self.re.index, c.im), (self.im.index, c.re)]);
        Self { re, im }
    }
}

impl<'t> Add for CVar<'t> {
    type Output = CVar<'t>;
    fn add(self, rhs: Self) -> Self {
        Self {
            re: self.re + rhs.re,
            im: self.im + rhs.im,
        }
    }
}

impl<'t> Sub for CVar<'t> {
    type Output = CVar<'t>;
    fn sub(self, rhs: Self) -> Self {
        Self {
            re: self.re - rhs.re,
            im: self.im - rhs.im,
        }
    }
}

impl<'t> Mul for CVar<'t> {
    type Output = CVar<'t>;
    fn mul(self, rhs: Self) -> Self {
        Self {
            re: self.re * rhs.re - self.im * rhs.im,
            im: self.re * rhs.im + self.im * rhs.re,
        }
    }
}

/// Result of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub finite_difference: Vec<f64>,
    /// Max over checked coordinates of `|AD − FD| / max(1, |FD|)`.
    pub max_rel_error: f64,
    /// Coordinates skipped because a probe switched a branch.
    pub excluded: Vec<usize>,
}

impl GradcheckReport {
    /// True when every coordinate sits next to a branch switch.
    pub fn point_excluded(&self) -> bool {
        !self.gradient.is_empty() && self.excluded.len() == self.gradient.len()
    }
}

fn eval_value<F>(f: &F, x: &[f64]) -> Result<(f64, Vec<u64>)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xs = tape.vars(x);
    let y = f(&tape, &xs)?;
    Ok((y.value, tape.branches()))
}

/// Central-difference check with step `1e-4 · max(1, |x_k|)` per coordinate.
pub fn gradcheck<F>(f: F, point: &[f64]) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xs = tape.vars(point);
    let y = f(&tape, &xs)?;
    let grads = tape.backward(y)?;
    let gradient = grads.wrt_all(&xs);
    let base_branches = tape.branches();

    let mut fd = Vec::with_capacity(point.len());
    let mut excluded = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    let mut probe = point.to_vec();
    for k in 0..point.len() {
        let h = 1e-4 * point[k].abs().max(1.0);
        probe[k] = point[k] + h;
        let (fp, bp) = eval_value(&f, &probe)?;
        probe[k] = point[k] - h;
        let (fm, bm) = eval_value(&f, &probe)?;
        probe[k] = point[k];
        let d = (fp - fm) / (2.0 * h);
        fd.push(d);
        if bp != base_branches || bm != base_branches {
            excluded.push(k);
            continue;
        }
        let rel = (gradient[k] - d).abs() / d.abs().max(1.0);
        max_rel_error = max_rel_error.max(rel);
    }
    Ok(GradcheckReport {
        value: y.value,
        gradient,
        finite_difference: fd,
        max_rel_error,
        excluded,
    })
}
