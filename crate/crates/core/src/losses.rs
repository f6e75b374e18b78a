//! Loss families, data generators and reference solvers.
//!
//! ERM losses act on a linear score `s = <w, x>`; labels are `±1`. Saddle
//! losses are
//!
//! ```text
//! f(w, v; z) = <w, A(z) v> + <b(z), w> - <c(z), v> - (rho/2) ||v||^2
//! ```
//!
//! which is affine in the example's coefficients `(A, b, c)`. Every empirical
//! or population saddle quantity therefore only needs the averaged
//! coefficients, see [`SaddleCoefficients`].

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::DomainSpec;
use crate::rng::{rng_from_seed, Rng};
use crate::vecops::{axpy, dist, dot, mean_and_se, norm};

/// `sup_s |d^2/ds^2 (sigmoid(s) - t)^2|` over `t in {0, 1}` is 0.15406 (numerically);
/// rounded up.
const SIGMOID_SQ_CURVATURE: f64 = 0.155;
/// `sup_s |d/ds (sigmoid(s) - t)^2| = 8/27`, attained at sigmoid(s) = 1/3 or 2/3.
const SIGMOID_SQ_SLOPE: f64 = 8.0 / 27.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Coefficients of one saddle example. `a` is row-major `d_w x d_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleExample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<E> {
    pub examples: Vec<E>,
    pub generator_id: String,
    pub seed: u64,
}

impl<E> Dataset<E> {
    pub fn new(examples: Vec<E>, generator_id: impl Into<String>, seed: u64) -> Self {
        Self {
            examples,
            generator_id: generator_id.into(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `S^(i)`: the same dataset with position `i` replaced.
    pub fn with_replaced(&self, i: usize, replacement: E) -> Result<Self>
    where
        E: Clone,
    {
        if i >= self.examples.len() {
            return Err(Error::invalid(format!(
                "index {i} outside dataset of size {}",
                self.len()
            )));
        }
        let mut examples = self.examples.clone();
        examples[i] = replacement;
        Ok(Self {
            examples,
            generator_id: format!("{}~{i}", self.generator_id),
            seed: self.seed,
        })
    }
}

impl Dataset<Example> {
    /// One example per line: features, then label.
    pub fn to_delimited(&self) -> String {
        let mut out = String::new();
        for z in &self.examples {
            for x in &z.x {
                out.push_str(&format!("{x:e},"));
            }
            out.push_str(&format!("{:e}\n", z.y));
        }
        out
    }
}

impl Dataset<SaddleExample> {
    /// One example per line: `A` row-major, then `b`, then `c`.
    pub fn to_delimited(&self) -> String {
        self.examples
            .iter()
            .map(|z| {
                z.a.iter()
                    .chain(&z.b)
                    .chain(&z.c)
                    .map(|x| format!("{x:e}"))
                    .collect::<Vec<_>>()
                    .join(",")
                    + "\n"
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Logistic,
    Hinge,
    Absolute,
    LeastSquares,
    /// `(sigmoid(<w,x>) - (1+y)/2)^2`: smooth, non-convex.
    SigmoidSq,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::Hinge => "hinge",
            LossKind::Absolute => "absolute",
            LossKind::LeastSquares => "least-squares",
            LossKind::SigmoidSq => "sigmoid-sq",
        }
    }
}

/// A loss with its constants on a fixed domain and feature bound.
#[derive(Debug, Clone, PartialEq)]
pub struct LossFamily {
    pub kind: LossKind,
    pub d: usize,
    /// Feature norm bound `B_x`.
    pub b_x: f64,
    /// Label magnitude bound `B_y` (1 for ±1 labels).
    pub b_y: f64,
    /// Lipschitz constant on the configured domain.
    pub g: f64,
    /// Smoothness constant, absent for non-smooth families.
    pub l: Option<f64>,
    pub convex: bool,
    pub smooth: bool,
}

impl LossFamily {
    pub fn new(kind: LossKind, d: usize, b_x: f64, domain: &DomainSpec) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(b_x > 0.0) {
            return Err(Error::invalid(format!("feature bound must be positive, got {b_x}")));
        }
        let b_y = 1.0;
        let (g, l, convex, smooth) = match kind {
            LossKind::Logistic => (b_x, Some(b_x * b_x / 4.0), true, true),
            LossKind::Hinge | LossKind::Absolute => (b_x, None, true, false),
            LossKind::LeastSquares => {
                let g = match domain.radius() {
                    Some(r) => b_x * (b_x * r + b_y),
                    None => f64::INFINITY,
                };
                (g, Some(b_x * b_x), true, true)
            }
            LossKind::SigmoidSq => (
                SIGMOID_SQ_SLOPE * b_x,
                Some(SIGMOID_SQ_CURVATURE * b_x * b_x),
                false,
                true,
            ),
        };
        Ok(Self {
            kind,
            d,
            b_x,
            b_y,
            g,
            l,
            convex,
            smooth,
        })
    }

    /// `sup_z f(0; z)` over labels in `{-1, 1}`.
    pub fn sup_value_at_zero(&self) -> f64 {
        match self.kind {
            LossKind::Logistic => std::f64::consts::LN_2,
            LossKind::Hinge | LossKind::Absolute => self.b_y,
            LossKind::LeastSquares => 0.5 * self.b_y * self.b_y,
            LossKind::SigmoidSq => 0.25,
        }
    }

    fn check(&self, w: &[f64], z: &Example) -> Result<()> {
        if w.len() != self.d || z.x.len() != self.d {
            return Err(Error::invalid(format!(
                "dimension mismatch: family d = {}, w has {}, x has {}",
                self.d,
                w.len(),
                z.x.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, w: &[f64], z: &Example) -> Result<f64> {
        self.check(w, z)?;
        Ok(self.value_unchecked(w, z))
    }

    pub fn subgradient(&self, w: &[f64], z: &Example) -> Result<Vec<f64>> {
        self.check(w, z)?;
        let mut g = vec![0.0; self.d];
        self.add_subgradient(w, z, 1.0, &mut g);
        Ok(g)
    }

    pub(crate) fn value_unchecked(&self, w: &[f64], z: &Example) -> f64 {
        let s = dot(w, &z.x);
        match self.kind {
            LossKind::Logistic => softplus(-z.y * s),
            LossKind::Hinge => (1.0 - z.y * s).max(0.0),
            LossKind::Absolute => (s - z.y).abs(),
            LossKind::LeastSquares => 0.5 * (s - z.y) * (s - z.y),
            LossKind::SigmoidSq => {
                let r = sigmoid(s) - 0.5 * (1.0 + z.y);
                r * r
            }
        }
    }

    /// Derivative of the loss with respect to the score `<w, x>`; kinks map to 0.
    fn score_derivative(&self, s: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::Logistic => -y * sigmoid(-y * s),
            LossKind::Hinge => {
                if y * s < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
            LossKind::Absolute => {
                let r = s - y;
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::LeastSquares => s - y,
            LossKind::SigmoidSq => {
                let sg = sigmoid(s);
                2.0 * (sg - 0.5 * (1.0 + y)) * sg * (1.0 - sg)
            }
        }
    }

    /// `out += scale * ∂f(w; z)`.
    pub(crate) fn add_subgradient(&self, w: &[f64], z: &Example, scale: f64, out: &mut [f64]) {
        let c = self.score_derivative(dot(w, &z.x), z.y);
        if c != 0.0 {
            axpy(scale * c, &z.x, out);
        }
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(u))` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn check_nonempty<E>(s: &Dataset<E>) -> Result<()> {
    if s.is_empty() {
        Err(Error::invalid("empty dataset"))
    } else {
        Ok(())
    }
}

/// `F_S(w) = (1/n) sum_i f(w; z_i)`.
pub fn empirical_risk(fam: &LossFamily, s: &Dataset<Example>, w: &[f64]) -> Result<f64> {
    check_nonempty(s)?;
    let values = s
        .examples
        .iter()
        .map(|z| fam.value(w, z))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_se(&values).0)
}

/// Full-batch (sub)gradient of `F_S`.
pub fn empirical_gradient(fam: &LossFamily, s: &Dataset<Example>, w: &[f64]) -> Result<Vec<f64>> {
    check_nonempty(s)?;
    let mut g = vec![0.0; fam.d];
    let inv = 1.0 / s.len() as f64;
    for z in &s.examples {
        fam.check(w, z)?;
        fam.add_subgradient(w, z, inv, &mut g);
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Generators

/// Serializable generator description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    /// `x` uniform on the sphere of radius `b_x`; `y = sign(<w_true, x>)`
    /// flipped with probability `p_noise`; `w_true` a random unit vector.
    Classification {
        d: usize,
        b_x: f64,
        p_noise: f64,
        w_true_seed: u64,
    },
    /// Always emits the same example.
    Fixed { x: Vec<f64>, y: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Classification { b_x: f64, p_noise: f64, w_true: Vec<f64> },
    Fixed(Example),
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<Generator> {
        match self {
            GeneratorSpec::Classification {
                d,
                b_x,
                p_noise,
                w_true_seed,
            } => {
                if *d == 0 {
                    return Err(Error::invalid("generator dimension must be positive"));
                }
                let mut rng = rng_from_seed(*w_true_seed);
                let w_true = random_direction(*d, &mut rng);
                Generator::classification(*b_x, *p_noise, w_true)
            }
            GeneratorSpec::Fixed { x, y } => Ok(Generator::Fixed(Example { x: x.clone(), y: *y })),
        }
    }

    pub fn id(&self) -> String {
        match self {
            GeneratorSpec::Classification {
                d,
                b_x,
                p_noise,
                w_true_seed,
            } => format!("classification(d={d},b_x={b_x},p_noise={p_noise},w_true_seed={w_true_seed})"),
            GeneratorSpec::Fixed { .. } => "fixed".to_string(),
        }
    }
}

fn random_direction(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let nv = norm(&v);
        if nv > 1e-12 {
            return v.into_iter().map(|x| x / nv).collect();
        }
    }
}

impl Generator {
    pub fn classification(b_x: f64, p_noise: f64, w_true: Vec<f64>) -> Result<Self> {
        if !(b_x > 0.0) {
            return Err(Error::invalid("b_x must be positive"));
        }
        if !(0.0..=1.0).contains(&p_noise) {
            return Err(Error::invalid(format!("p_noise must lie in [0, 1], got {p_noise}")));
        }
        if w_true.is_empty() {
            return Err(Error::invalid("w_true must be nonempty"));
        }
        Ok(Generator::Classification { b_x, p_noise, w_true })
    }

    pub fn dim(&self) -> usize {
        match self {
            Generator::Classification { w_true, .. } => w_true.len(),
            Generator::Fixed(z) => z.x.len(),
        }
    }

    /// Noise-free label rule; ties go to +1.
    pub fn clean_label(w_true: &[f64], x: &[f64]) -> f64 {
        if dot(w_true, x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Example {
        match self {
            Generator::Classification { b_x, p_noise, w_true } => {
                let mut x = random_direction(w_true.len(), rng);
                x.iter_mut().for_each(|v| *v *= b_x);
                let mut y = Self::clean_label(w_true, &x);
                if rng.random::<f64>() < *p_noise {
                    y = -y;
                }
                Example { x, y }
            }
            Generator::Fixed(z) => z.clone(),
        }
    }
}

pub fn generate_dataset(gen: &Generator, n: usize, seed: u64) -> Result<Dataset<Example>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let examples = (0..n).map(|_| gen.sample(&mut rng)).collect();
    Ok(Dataset::new(examples, "erm", seed))
}

/// Monte-Carlo estimate of `F(w) = E_z f(w; z)` with its standard error.
pub fn population_risk_mc(
    fam: &LossFamily,
    gen: &Generator,
    w: &[f64],
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::invalid("population estimate needs at least 2 samples"));
    }
    let mut rng = rng_from_seed(seed);
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        values.push(fam.value(w, &gen.sample(&mut rng))?);
    }
    Ok(mean_and_se(&values))
}

// ---------------------------------------------------------------------------
// Saddle families

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinimaxKind {
    BilinearSaddle,
    /// Bilinear plus `-(rho/2) ||v||^2`.
    ScConcaveSaddle,
}

/// A saddle family on `W x V` (centered balls of radii `r_w`, `r_v`).
///
/// Example coefficients have entries in `[-entry_scale, entry_scale]`, where
/// `entry_scale` is the largest value keeping both partial gradients bounded
/// by `g` on `W x V`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxFamily {
    pub kind: MinimaxKind,
    pub d_w: usize,
    pub d_v: usize,
    pub rho: f64,
    pub r_w: f64,
    pub r_v: f64,
    pub g: f64,
    /// Joint smoothness constant, `entry_scale * sqrt(d_w d_v) + rho`.
    pub l: f64,
    pub entry_scale: f64,
}

impl MinimaxFamily {
    pub fn new(kind: MinimaxKind, d_w: usize, d_v: usize, rho: f64, g: f64, r_w: f64, r_v: f64) -> Result<Self> {
        if d_w == 0 || d_v == 0 {
            return Err(Error::invalid("saddle dimensions must be positive"));
        }
        if !(r_w > 0.0 && r_v > 0.0) {
            return Err(Error::invalid("saddle domains must be balls of positive radius"));
        }
        let rho = match kind {
            MinimaxKind::BilinearSaddle => {
                if rho != 0.0 {
                    return Err(Error::invalid("bilinear saddle has rho = 0"));
                }
                0.0
            }
            MinimaxKind::ScConcaveSaddle => {
                if !(rho > 0.0) {
                    return Err(Error::invalid("strongly-concave saddle needs rho > 0"));
                }
                rho
            }
        };
        if !(g > rho * r_v) {
            return Err(Error::invalid(format!(
                "G = {g} cannot cover the quadratic term's gradient rho * r_v = {}",
                rho * r_v
            )));
        }
        let fro = ((d_w * d_v) as f64).sqrt();
        let s_w = g / (fro * r_v + (d_w as f64).sqrt());
        let s_v = (g - rho * r_v) / (fro * r_w + (d_v as f64).sqrt());
        let entry_scale = s_w.min(s_v);
        Ok(Self {
            kind,
            d_w,
            d_v,
            rho,
            r_w,
            r_v,
            g,
            l: entry_scale * fro + rho,
            entry_scale,
        })
    }

    /// Family with explicit constants, for hand-built examples. No bound checks.
    #[allow(clippy::too_many_arguments)]
    pub fn with_constants(
        kind: MinimaxKind,
        d_w: usize,
        d_v: usize,
        rho: f64,
        r_w: f64,
        r_v: f64,
        g: f64,
        l: f64,
    ) -> Self {
        Self {
            kind,
            d_w,
            d_v,
            rho,
            r_w,
            r_v,
            g,
            l,
            entry_scale: 1.0,
        }
    }

    pub fn w_domain(&self) -> DomainSpec {
        DomainSpec::Ball { radius: self.r_w }
    }

    pub fn v_domain(&self) -> DomainSpec {
        DomainSpec::Ball { radius: self.r_v }
    }

    fn check(&self, w: &[f64], v: &[f64], z: &SaddleExample) -> Result<()> {
        if w.len() != self.d_w
            || v.len() != self.d_v
            || z.a.len() != self.d_w * self.d_v
            || z.b.len() != self.d_w
            || z.c.len() != self.d_v
        {
            return Err(Error::invalid("dimension mismatch in saddle evaluation"));
        }
        Ok(())
    }

    pub fn value(&self, w: &[f64], v: &[f64], z: &SaddleExample) -> Result<f64> {
        self.check(w, v, z)?;
        Ok(SaddleCoefficients::view(self, &z.a, &z.b, &z.c).value(w, v))
    }

    pub fn subgrad_w(&self, w: &[f64], v: &[f64], z: &SaddleExample) -> Result<Vec<f64>> {
        self.check(w, v, z)?;
        let mut g = vec![0.0; self.d_w];
        add_grad_w(self, &z.a, &z.b, v, 1.0, &mut g);
        Ok(g)
    }

    pub fn subgrad_v(&self, w: &[f64], v: &[f64], z: &SaddleExample) -> Result<Vec<f64>> {
        self.check(w, v, z)?;
        let mut g = vec![0.0; self.d_v];
        add_grad_v(self, &z.a, &z.c, w, v, 1.0, &mut g);
        Ok(g)
    }
}

/// `out += scale * (A v + b)`
pub(crate) fn add_grad_w(fam: &MinimaxFamily, a: &[f64], b: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * fam.d_v..(i + 1) * fam.d_v];
        *o += scale * (dot(row, v) + b[i]);
    }
}

/// `out += scale * (A^T w - c - rho v)`
pub(crate) fn add_grad_v(fam: &MinimaxFamily, a: &[f64], c: &[f64], w: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let mut s = -c[j] - fam.rho * v[j];
        for (i, wi) in w.iter().enumerate() {
            s += a[i * fam.d_v + j] * wi;
        }
        *o += scale * s;
    }
}

/// Averaged saddle coefficients `(A_bar, b_bar, c_bar)`. Since the saddle
/// loss is affine in `(A, b, c)`, `F_S(w, v)` evaluated with these equals the
/// empirical mean over the examples.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleCoefficients {
    pub d_w: usize,
    pub d_v: usize,
    pub rho: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl SaddleCoefficients {
    fn view(fam: &MinimaxFamily, a: &[f64], b: &[f64], c: &[f64]) -> Self {
        Self {
            d_w: fam.d_w,
            d_v: fam.d_v,
            rho: fam.rho,
            a: a.to_vec(),
            b: b.to_vec(),
            c: c.to_vec(),
        }
    }

    pub fn from_examples(fam: &MinimaxFamily, examples: &[SaddleExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        let mut a = vec![0.0; fam.d_w * fam.d_v];
        let mut b = vec![0.0; fam.d_w];
        let mut c = vec![0.0; fam.d_v];
        let inv = 1.0 / examples.len() as f64;
        for z in examples {
            if z.a.len() != a.len() || z.b.len() != b.len() || z.c.len() != c.len() {
                return Err(Error::invalid("saddle example dimensions do not match family"));
            }
            axpy(inv, &z.a, &mut a);
            axpy(inv, &z.b, &mut b);
            axpy(inv, &z.c, &mut c);
        }
        Ok(Self::view(fam, &a, &b, &c))
    }

    pub fn from_dataset(fam: &MinimaxFamily, s: &Dataset<SaddleExample>) -> Result<Self> {
        Self::from_examples(fam, &s.examples)
    }

    pub fn value(&self, w: &[f64], v: &[f64]) -> f64 {
        let mut bil = 0.0;
        for (i, wi) in w.iter().enumerate() {
            bil += wi * dot(&self.a[i * self.d_v..(i + 1) * self.d_v], v);
        }
        bil + dot(&self.b, w) - dot(&self.c, v) - 0.5 * self.rho * dot(v, v)
    }

    /// `A v + b`
    pub fn grad_w(&self, v: &[f64]) -> Vec<f64> {
        (0..self.d_w)
            .map(|i| dot(&self.a[i * self.d_v..(i + 1) * self.d_v], v) + self.b[i])
            .collect()
    }

    /// `A^T w - c`, the v-gradient of the bilinear part (at `v = 0`).
    pub fn linear_v(&self, w: &[f64]) -> Vec<f64> {
        (0..self.d_v)
            .map(|j| {
                let mut s = -self.c[j];
                for (i, wi) in w.iter().enumerate() {
                    s += self.a[i * self.d_v + j] * wi;
                }
                s
            })
            .collect()
    }

    /// `A^T w - c - rho v`
    pub fn grad_v(&self, w: &[f64], v: &[f64]) -> Vec<f64> {
        let mut g = self.linear_v(w);
        axpy(-self.rho, v, &mut g);
        g
    }
}

/// Averaged function `v -> <g, v> - (rho/2)||v||^2 + k` maximized over a
/// centered ball (or all of R^d when `radius` is `None` and `rho > 0`).
pub fn maximize_concave_quadratic(g: &[f64], rho: f64, k: f64, radius: Option<f64>) -> Result<(Vec<f64>, f64)> {
    let gn = norm(g);
    if gn == 0.0 {
        return Ok((vec![0.0; g.len()], k));
    }
    let step = match (radius, rho > 0.0) {
        (Some(r), true) => (gn / rho).min(r),
        (Some(r), false) => r,
        (None, true) => gn / rho,
        (None, false) => return Err(Error::Unsupported("linear maximization over an unbounded set".into())),
    };
    let v: Vec<f64> = g.iter().map(|x| x * step / gn).collect();
    let value = step * gn - 0.5 * rho * step * step + k;
    Ok((v, value))
}

/// `v+ = argmax_{v in V} F_S(w, v)` in closed form, with the attained value.
pub fn best_response_v(coefs: &SaddleCoefficients, w: &[f64], v_domain: &DomainSpec) -> Result<(Vec<f64>, f64)> {
    let g = coefs.linear_v(w);
    maximize_concave_quadratic(&g, coefs.rho, dot(&coefs.b, w), v_domain.radius())
}

/// `w- = argmin_{w in W} F_S(w, v)`; `F_S` is linear in `w`.
pub fn best_response_w(coefs: &SaddleCoefficients, v: &[f64], w_domain: &DomainSpec) -> Result<(Vec<f64>, f64)> {
    let h = coefs.grad_w(v);
    let k = -dot(&coefs.c, v) - 0.5 * coefs.rho * dot(v, v);
    minimize_linear(&h, k, w_domain.radius())
}

/// `min_{||w|| <= r} <h, w> + k`.
pub fn minimize_linear(h: &[f64], k: f64, radius: Option<f64>) -> Result<(Vec<f64>, f64)> {
    let hn = norm(h);
    if hn == 0.0 {
        return Ok((vec![0.0; h.len()], k));
    }
    let r = radius.ok_or_else(|| Error::Unsupported("linear minimization over an unbounded set".into()))?;
    Ok((h.iter().map(|x| -x * r / hn).collect(), k - r * hn))
}

/// Dataset-level form of [`best_response_v`].
pub fn best_response_v_on(
    fam: &MinimaxFamily,
    s: &Dataset<SaddleExample>,
    w: &[f64],
    v_domain: &DomainSpec,
) -> Result<(Vec<f64>, f64)> {
    best_response_v(&SaddleCoefficients::from_dataset(fam, s)?, w, v_domain)
}

/// `max_v F_S(w, v) - min_w F_S(w, v)` at the pair `(w, v)`.
pub fn duality_gap(
    coefs: &SaddleCoefficients,
    w: &[f64],
    v: &[f64],
    w_domain: &DomainSpec,
    v_domain: &DomainSpec,
) -> Result<f64> {
    let (_, hi) = best_response_v(coefs, w, v_domain)?;
    let (_, lo) = best_response_w(coefs, v, w_domain)?;
    Ok(hi - lo)
}

pub fn empirical_minimax_risk(fam: &MinimaxFamily, s: &Dataset<SaddleExample>, w: &[f64], v: &[f64]) -> Result<f64> {
    check_nonempty(s)?;
    let values = s
        .examples
        .iter()
        .map(|z| fam.value(w, v, z))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_se(&values).0)
}

/// Serializable saddle-data description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleGeneratorSpec {
    pub mean_seed: u64,
}

/// Saddle data: `A(z) = s (M + U(z)) / 2`, likewise `b`, `c`, with `M` a fixed
/// mean drawn once from `mean_seed` and `U(z)` fresh, both entrywise uniform on
/// `[-1, 1]`; `s` is the family's `entry_scale`.
#[derive(Debug, Clone, PartialEq)]
pub enum SaddleGenerator {
    Random {
        d_w: usize,
        d_v: usize,
        half_scale: f64,
        mean: SaddleExample,
    },
    Fixed(SaddleExample),
}

impl SaddleGenerator {
    pub fn new(fam: &MinimaxFamily, mean_seed: u64) -> Self {
        let mut rng = rng_from_seed(mean_seed);
        let half_scale = fam.entry_scale / 2.0;
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| half_scale * rng.random_range(-1.0..=1.0)).collect() };
        let mean = SaddleExample {
            a: draw(fam.d_w * fam.d_v),
            b: draw(fam.d_w),
            c: draw(fam.d_v),
        };
        SaddleGenerator::Random {
            d_w: fam.d_w,
            d_v: fam.d_v,
            half_scale,
            mean,
        }
    }

    /// Exact population coefficients.
    pub fn mean_coefficients(&self, fam: &MinimaxFamily) -> SaddleCoefficients {
        match self {
            SaddleGenerator::Random { mean, .. } => SaddleCoefficients::view(fam, &mean.a, &mean.b, &mean.c),
            SaddleGenerator::Fixed(z) => SaddleCoefficients::view(fam, &z.a, &z.b, &z.c),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> SaddleExample {
        match self {
            SaddleGenerator::Random { half_scale, mean, .. } => {
                let mut jitter = |m: &[f64]| -> Vec<f64> {
                    m.iter()
                        .map(|&x| x + half_scale * rng.random_range(-1.0..=1.0))
                        .collect()
                };
                SaddleExample {
                    a: jitter(&mean.a),
                    b: jitter(&mean.b),
                    c: jitter(&mean.c),
                }
            }
            SaddleGenerator::Fixed(z) => z.clone(),
        }
    }
}

pub fn generate_saddle_dataset(gen: &SaddleGenerator, n: usize, seed: u64) -> Result<Dataset<SaddleExample>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let examples = (0..n).map(|_| gen.sample(&mut rng)).collect();
    Ok(Dataset::new(examples, "saddle", seed))
}

/// Monte-Carlo estimate of `F(w, v)` with its standard error.
pub fn population_minimax_risk_mc(
    fam: &MinimaxFamily,
    gen: &SaddleGenerator,
    w: &[f64],
    v: &[f64],
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::invalid("population estimate needs at least 2 samples"));
    }
    let mut rng = rng_from_seed(seed);
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        values.push(fam.value(w, v, &gen.sample(&mut rng))?);
    }
    Ok(mean_and_se(&values))
}

/// Averaged coefficients of `samples` fresh draws: a Monte-Carlo stand-in for
/// the population objective.
pub fn population_coefficients_mc(
    fam: &MinimaxFamily,
    gen: &SaddleGenerator,
    samples: usize,
    seed: u64,
) -> Result<SaddleCoefficients> {
    let s = generate_saddle_dataset(gen, samples, seed)?;
    SaddleCoefficients::from_dataset(fam, &s)
}

// ---------------------------------------------------------------------------
// Reference solvers

pub const DEFAULT_ORACLE_BUDGET: usize = 100_000;
/// Largest duality gap accepted from [`saddle_oracle`].
pub const SADDLE_ORACLE_TOL: f64 = 1e-4;

/// Reference empirical minimizer over `domain`, started at the origin.
///
/// Smooth families run projected gradient descent with step `1/L`; non-smooth
/// ones run projected subgradient descent with steps `R/(G sqrt(t))` and
/// iterate averaging. The best point seen (by `F_S`) is returned.
pub fn erm_oracle(
    fam: &LossFamily,
    s: &Dataset<Example>,
    domain: &DomainSpec,
    budget: usize,
) -> Result<(Vec<f64>, f64)> {
    if !fam.convex {
        return Err(Error::Unsupported(format!("{} is not convex", fam.kind.label())));
    }
    check_nonempty(s)?;
    let mut w = vec![0.0; fam.d];
    let mut best = (w.clone(), empirical_risk(fam, s, &w)?);
    let consider = |cand: &[f64], best: &mut (Vec<f64>, f64)| -> Result<()> {
        let v = empirical_risk(fam, s, cand)?;
        if v < best.1 {
            *best = (cand.to_vec(), v);
        }
        Ok(())
    };

    match (fam.smooth, fam.l) {
        (true, Some(l)) => {
            let step = 1.0 / l;
            let mut prev_value = best.1;
            for _ in 0..budget {
                let g = empirical_gradient(fam, s, &w)?;
                axpy(-step, &g, &mut w);
                domain.project_in_place(&mut w);
                let value = empirical_risk(fam, s, &w)?;
                if value < best.1 {
                    best = (w.clone(), value);
                }
                if (prev_value - value).abs() <= 1e-15 * value.abs().max(1.0) && norm(&g) < 1e-12 {
                    break;
                }
                prev_value = value;
            }
        }
        _ => {
            let scale = domain.radius().unwrap_or(1.0) / fam.g.max(1e-12);
            let mut avg = vec![0.0; fam.d];
            let mut weight = 0.0;
            let check_every = (budget / 200).max(1);
            for t in 1..=budget {
                let g = empirical_gradient(fam, s, &w)?;
                if norm(&g) == 0.0 {
                    break;
                }
                let step = scale / (t as f64).sqrt();
                axpy(-step, &g, &mut w);
                domain.project_in_place(&mut w);
                weight += step;
                let mix = step / weight;
                for (a, wi) in avg.iter_mut().zip(&w) {
                    *a += mix * (wi - *a);
                }
                if t % check_every == 0 {
                    consider(&avg, &mut best)?;
                    consider(&w, &mut best)?;
                }
            }
            consider(&avg, &mut best)?;
        }
    }
    Ok(best)
}

/// Reference saddle point of `F_S` on `W x V` via full-batch extragradient
/// with averaging. Returns the pair with the smallest exact duality gap.
pub fn saddle_oracle(
    fam: &MinimaxFamily,
    s: &Dataset<SaddleExample>,
    w_domain: &DomainSpec,
    v_domain: &DomainSpec,
    budget: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let coefs = SaddleCoefficients::from_dataset(fam, s)?;
    saddle_oracle_coefs(&coefs, fam.l, w_domain, v_domain, budget)
}

pub fn saddle_oracle_coefs(
    coefs: &SaddleCoefficients,
    l: f64,
    w_domain: &DomainSpec,
    v_domain: &DomainSpec,
    budget: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let step = 0.5 / l.max(1e-12);
    let mut w = vec![0.0; coefs.d_w];
    let mut v = vec![0.0; coefs.d_v];
    let mut avg_w = w.clone();
    let mut avg_v = v.clone();
    let mut best = (w.clone(), v.clone(), duality_gap(coefs, &w, &v, w_domain, v_domain)?);
    let check_every = 50;
    for t in 1..=budget {
        let mut w_half = w.clone();
        axpy(-step, &coefs.grad_w(&v), &mut w_half);
        w_domain.project_in_place(&mut w_half);
        let mut v_half = v.clone();
        axpy(step, &coefs.grad_v(&w, &v), &mut v_half);
        v_domain.project_in_place(&mut v_half);

        axpy(-step, &coefs.grad_w(&v_half), &mut w);
        w_domain.project_in_place(&mut w);
        axpy(step, &coefs.grad_v(&w_half, &v_half), &mut v);
        v_domain.project_in_place(&mut v);

        let mix = 1.0 / t as f64;
        for (a, x) in avg_w.iter_mut().zip(&w_half) {
            *a += mix * (x - *a);
        }
        for (a, x) in avg_v.iter_mut().zip(&v_half) {
            *a += mix * (x - *a);
        }
        if t % check_every == 0 || t == budget {
            for (cw, cv) in [(&w, &v), (&avg_w, &avg_v)] {
                let gap = duality_gap(coefs, cw, cv, w_domain, v_domain)?;
                if gap < best.2 {
                    best = (cw.clone(), cv.clone(), gap);
                }
            }
            if best.2 <= 1e-9 {
                break;
            }
        }
    }
    if best.2 > SADDLE_ORACLE_TOL {
        return Err(Error::OracleNotConverged {
            gap: best.2,
            tol: SADDLE_ORACLE_TOL,
        });
    }
    Ok(best)
}

/// Closed-form saddle of the strongly-concave family when `A_bar` is square
/// and invertible and the stationary point is interior to both balls:
/// `v* = -A^{-1} b`, `A^T w* = c + rho v*`.
pub fn interior_saddle(coefs: &SaddleCoefficients, r_w: f64, r_v: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    if coefs.d_w != coefs.d_v {
        return None;
    }
    let d = coefs.d_w;
    let a = nalgebra::DMatrix::from_row_slice(d, d, &coefs.a);
    let lu = a.clone().lu();
    let v = lu.solve(&nalgebra::DVector::from_column_slice(&coefs.b))?.map(|x| -x);
    let rhs = nalgebra::DVector::from_column_slice(&coefs.c) + &v * coefs.rho;
    let w = a.transpose().lu().solve(&rhs)?;
    let (w, v): (Vec<f64>, Vec<f64>) = (w.iter().copied().collect(), v.iter().copied().collect());
    if norm(&w) < r_w && norm(&v) < r_v {
        Some((w, v))
    } else {
        None
    }
}

/// Distance from `(w, v)` to `(w*, v*)` in the joint Euclidean norm.
pub fn pair_distance(w: &[f64], v: &[f64], w_star: &[f64], v_star: &[f64]) -> f64 {
    (dist(w, w_star).powi(2) + dist(v, v_star).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(r: f64) -> DomainSpec {
        DomainSpec::Ball { radius: r }
    }

    fn ex(x: &[f64], y: f64) -> Example {
        Example { x: x.to_vec(), y }
    }

    #[test]
    fn loss_values() {
        let logistic = LossFamily::new(LossKind::Logistic, 2, 1.0, &ball(5.0)).unwrap();
        let z = ex(&[0.3, -0.2], -1.0);
        assert!((logistic.value(&[0.0, 0.0], &z).unwrap() - 2f64.ln()).abs() < 1e-15);

        let hinge = LossFamily::new(LossKind::Hinge, 1, 1.0, &ball(5.0)).unwrap();
        assert_eq!(hinge.value(&[2.0], &ex(&[1.0], 1.0)).unwrap(), 0.0);

        let abs = LossFamily::new(LossKind::Absolute, 1, 1.0, &ball(5.0)).unwrap();
        assert_eq!(abs.value(&[2.0], &ex(&[1.0], 0.0)).unwrap(), 2.0);

        assert!(abs.value(&[1.0, 2.0], &ex(&[1.0], 0.0)).is_err());
    }

    #[test]
    fn subgradients() {
        let logistic = LossFamily::new(LossKind::Logistic, 2, 1.0, &ball(5.0)).unwrap();
        let z = ex(&[0.6, -0.8], 1.0);
        let g = logistic.subgradient(&[0.0, 0.0], &z).unwrap();
        assert!((g[0] + 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);

        let hinge = LossFamily::new(LossKind::Hinge, 2, 1.0, &ball(5.0)).unwrap();
        let g = hinge.subgradient(&[1.0, 0.0], &ex(&[1.0, 0.0], 1.0)).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);

        let ls = LossFamily::new(LossKind::LeastSquares, 1, 1.0, &DomainSpec::Unconstrained).unwrap();
        assert_eq!(ls.subgradient(&[0.0], &ex(&[1.0], 1.0)).unwrap(), vec![-1.0]);
        assert!(ls.g.is_infinite());

        let abs = LossFamily::new(LossKind::Absolute, 1, 1.0, &ball(1.0)).unwrap();
        assert_eq!(abs.subgradient(&[0.0], &ex(&[1.0], 0.0)).unwrap(), vec![0.0]);
    }

    #[test]
    fn family_constants() {
        let d = ball(2.0);
        let ls = LossFamily::new(LossKind::LeastSquares, 3, 0.5, &d).unwrap();
        assert_eq!(ls.g, 0.5 * (0.5 * 2.0 + 1.0));
        assert_eq!(ls.l, Some(0.25));
        let lg = LossFamily::new(LossKind::Logistic, 3, 2.0, &d).unwrap();
        assert_eq!((lg.g, lg.l), (2.0, Some(1.0)));
        let h = LossFamily::new(LossKind::Hinge, 3, 2.0, &d).unwrap();
        assert!(h.l.is_none() && !h.smooth);
        let sq = LossFamily::new(LossKind::SigmoidSq, 3, 1.0, &d).unwrap();
        assert!(!sq.convex && sq.smooth);
    }

    #[test]
    fn empirical_risk_means() {
        let abs = LossFamily::new(LossKind::Absolute, 1, 1.0, &ball(1.0)).unwrap();
        let s = Dataset::new(vec![ex(&[1.0], 1.0), ex(&[1.0], -1.0)], "t", 0);
        assert_eq!(empirical_risk(&abs, &s, &[0.0]).unwrap(), 1.0);
        let one = Dataset::new(vec![ex(&[1.0], 0.5)], "t", 0);
        assert_eq!(
            empirical_risk(&abs, &one, &[2.0]).unwrap(),
            abs.value(&[2.0], &one.examples[0]).unwrap()
        );
        let empty: Dataset<Example> = Dataset::new(vec![], "t", 0);
        assert!(empirical_risk(&abs, &empty, &[0.0]).is_err());
    }

    #[test]
    fn generator_properties() {
        let spec = GeneratorSpec::Classification {
            d: 4,
            b_x: 2.0,
            p_noise: 0.1,
            w_true_seed: 3,
        };
        let gen = spec.build().unwrap();
        let a = generate_dataset(&gen, 50, 17).unwrap();
        let b = generate_dataset(&gen, 50, 17).unwrap();
        assert_eq!(a, b);
        for z in &a.examples {
            assert!((norm(&z.x) - 2.0).abs() < 1e-12);
            assert!(z.y == 1.0 || z.y == -1.0);
        }
        assert_eq!(Generator::clean_label(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        let clean = Generator::classification(1.0, 0.0, vec![1.0, 0.0]).unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..100 {
            let z = clean.sample(&mut rng);
            assert_eq!(z.y, Generator::clean_label(&[1.0, 0.0], &z.x));
        }
        assert!(a.to_delimited().lines().count() == 50);
    }

    #[test]
    fn population_mc() {
        let logistic = LossFamily::new(LossKind::Logistic, 3, 1.0, &ball(1.0)).unwrap();
        let gen = GeneratorSpec::Classification {
            d: 3,
            b_x: 1.0,
            p_noise: 0.2,
            w_true_seed: 1,
        }
        .build()
        .unwrap();
        let (m, se) = population_risk_mc(&logistic, &gen, &[0.0; 3], 1000, 5).unwrap();
        assert!((m - 2f64.ln()).abs() <= 3.0 * se + 1e-12);

        let fixed = Generator::Fixed(ex(&[1.0, 0.0, 0.0], 1.0));
        let (m, se) = population_risk_mc(&logistic, &fixed, &[0.5, 0.0, 0.0], 100, 5).unwrap();
        assert!((m - logistic.value(&[0.5, 0.0, 0.0], &ex(&[1.0, 0.0, 0.0], 1.0)).unwrap()).abs() < 1e-15);
        assert_eq!(se, 0.0);
        let hinge = LossFamily::new(LossKind::Hinge, 3, 1.0, &ball(5.0)).unwrap();
        assert_eq!(
            population_risk_mc(&hinge, &fixed, &[2.0, 0.0, 0.0], 10, 1).unwrap(),
            (0.0, 0.0)
        );
        assert!(population_risk_mc(&hinge, &fixed, &[2.0, 0.0, 0.0], 1, 1).is_err());
    }

    #[test]
    fn erm_oracle_examples() {
        let ls = LossFamily::new(LossKind::LeastSquares, 1, 1.0, &DomainSpec::Unconstrained).unwrap();
        let s = Dataset::new(vec![ex(&[1.0], 1.0)], "t", 0);
        let (w, v) = erm_oracle(&ls, &s, &DomainSpec::Unconstrained, 1000).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-6 && v < 1e-12);

        let abs = LossFamily::new(LossKind::Absolute, 1, 1.0, &ball(3.0)).unwrap();
        let s = Dataset::new(vec![ex(&[1.0], 0.0)], "t", 0);
        let (w, v) = erm_oracle(&abs, &s, &ball(3.0), 1000).unwrap();
        assert!(w[0].abs() < 1e-6 && v.abs() < 1e-6);

        let sq = LossFamily::new(LossKind::SigmoidSq, 1, 1.0, &ball(3.0)).unwrap();
        assert!(matches!(
            erm_oracle(&sq, &s, &ball(3.0), 10),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn saddle_values_and_gradients() {
        let fam = MinimaxFamily::with_constants(MinimaxKind::BilinearSaddle, 1, 1, 0.0, 1.0, 1.0, 1.0, 1.0);
        let z = SaddleExample {
            a: vec![1.0],
            b: vec![0.0],
            c: vec![0.0],
        };
        assert_eq!(fam.value(&[1.0], &[0.0], &z).unwrap(), 0.0);
        assert_eq!(fam.subgrad_w(&[1.0], &[0.0], &z).unwrap(), vec![0.0]);
        assert_eq!(fam.subgrad_v(&[1.0], &[0.0], &z).unwrap(), vec![1.0]);

        let sc = MinimaxFamily::with_constants(MinimaxKind::ScConcaveSaddle, 1, 1, 0.5, 1.0, 1.0, 1.0, 1.5);
        let z = SaddleExample {
            a: vec![0.7],
            b: vec![0.2],
            c: vec![-0.1],
        };
        assert_eq!(
            sc.value(&[0.3], &[0.0], &z).unwrap(),
            fam.value(&[0.3], &[0.0], &z).unwrap()
        );
        let dv_sc = sc.subgrad_v(&[0.3], &[0.4], &z).unwrap()[0];
        let dv_bl = fam.subgrad_v(&[0.3], &[0.4], &z).unwrap()[0];
        assert!((dv_sc - (dv_bl - 0.5 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn minimax_family_scaling() {
        let fam = MinimaxFamily::new(MinimaxKind::ScConcaveSaddle, 2, 3, 0.5, 1.0, 1.0, 1.0).unwrap();
        let gen = SaddleGenerator::new(&fam, 4);
        let mut rng = rng_from_seed(8);
        for _ in 0..200 {
            let z = gen.sample(&mut rng);
            assert!(z.a.iter().chain(&z.b).chain(&z.c).all(|x| x.abs() <= fam.entry_scale));
        }
        assert!(MinimaxFamily::new(MinimaxKind::ScConcaveSaddle, 2, 2, 2.0, 1.0, 1.0, 1.0).is_err());
        assert!(MinimaxFamily::new(MinimaxKind::BilinearSaddle, 2, 2, 0.5, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn best_response_closed_forms() {
        let coefs = |g: Vec<f64>, rho: f64| SaddleCoefficients {
            d_w: 1,
            d_v: g.len(),
            rho,
            a: g.clone(),
            b: vec![0.0],
            c: vec![0.0; g.len()],
        };
        // w = 1 makes the linear v-coefficient equal to the A row
        let (v, _) = best_response_v(&coefs(vec![0.0, 0.0], 1.0), &[1.0], &ball(1.0)).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
        let (v, val) = best_response_v(&coefs(vec![2.0, 0.0], 1.0), &[1.0], &ball(1.0)).unwrap();
        assert_eq!(v, vec![1.0, 0.0]);
        assert!((val - 1.5).abs() < 1e-15);
        let (v, val) = best_response_v(&coefs(vec![0.5, 0.0], 1.0), &[1.0], &ball(1.0)).unwrap();
        assert_eq!(v, vec![0.5, 0.0]);
        assert!((val - 0.125).abs() < 1e-15);
        let (v, _) = best_response_v(&coefs(vec![0.0, 3.0], 0.0), &[1.0], &ball(2.0)).unwrap();
        assert_eq!(v, vec![0.0, 2.0]);
    }

    #[test]
    fn saddle_oracle_examples() {
        let fam = MinimaxFamily::with_constants(MinimaxKind::BilinearSaddle, 1, 1, 0.0, 1.0, 1.0, 1.0, 1.0);
        let s = Dataset::new(
            vec![SaddleExample {
                a: vec![1.0],
                b: vec![0.0],
                c: vec![0.0],
            }],
            "t",
            0,
        );
        let (w, v, gap) = saddle_oracle(&fam, &s, &ball(1.0), &ball(1.0), 20_000).unwrap();
        assert!(w[0].abs() < 1e-4 && v[0].abs() < 1e-4);
        assert!((0.0..=SADDLE_ORACLE_TOL).contains(&gap));

        let sc = MinimaxFamily::with_constants(MinimaxKind::ScConcaveSaddle, 1, 1, 1.0, 1.0, 1.0, 2.0, 1.0);
        let s = Dataset::new(
            vec![SaddleExample {
                a: vec![0.0],
                b: vec![0.0],
                c: vec![0.0],
            }],
            "t",
            0,
        );
        let (_, v, gap) = saddle_oracle(&sc, &s, &ball(1.0), &ball(1.0), 1000).unwrap();
        assert!(v[0].abs() < 1e-6 && gap >= 0.0);
    }

    #[test]
    fn interior_saddle_matches_oracle() {
        let fam = MinimaxFamily::new(MinimaxKind::ScConcaveSaddle, 2, 2, 0.5, 1.0, 1.0, 1.0).unwrap();
        let gen = SaddleGenerator::new(&fam, 21);
        let s = generate_saddle_dataset(&gen, 64, 2).unwrap();
        let coefs = SaddleCoefficients::from_dataset(&fam, &s).unwrap();
        if let Some((w, v)) = interior_saddle(&coefs, fam.r_w, fam.r_v) {
            let gap = duality_gap(&coefs, &w, &v, &fam.w_domain(), &fam.v_domain()).unwrap();
            assert!(gap.abs() < 1e-12, "gap {gap}");
        }
    }
}
