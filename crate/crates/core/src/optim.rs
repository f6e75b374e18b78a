//! MC-SGD and MC-SGDA.
//!
//! Both methods take a pre-sampled [`ChainPath`] so twin runs can share the
//! exact same index sequence. Steps are constant within a run; the schedule
//! only picks the constant from the horizon `T`.

use serde::{Deserialize, Serialize};

use crate::chain::ChainPath;
use crate::error::{Error, Result};
use crate::losses::{add_grad_v, add_grad_w, Dataset, Example, LossFamily, MinimaxFamily, SaddleExample};
use crate::vecops::{axpy, dist, norm};

/// Iterates are stored every `max(1, T / MAX_STORED_ITERATES)` steps, plus the final one.
pub const MAX_STORED_ITERATES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DomainSpec {
    Ball { radius: f64 },
    Unconstrained,
}

impl DomainSpec {
    pub fn ball(radius: f64) -> Result<Self> {
        let d = DomainSpec::Ball { radius };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::Ball { radius } if !(radius.is_finite() && *radius > 0.0) => {
                Err(Error::invalid(format!("ball radius must be positive, got {radius}")))
            }
            _ => Ok(()),
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match self {
            DomainSpec::Ball { radius } => Some(*radius),
            DomainSpec::Unconstrained => None,
        }
    }

    /// Diameter, infinite when unconstrained.
    pub fn diameter(&self) -> f64 {
        self.radius().map_or(f64::INFINITY, |r| 2.0 * r)
    }

    pub fn contains(&self, w: &[f64], tol: f64) -> bool {
        self.radius().is_none_or(|r| norm(w) <= r + tol)
    }

    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        let mut out = w.to_vec();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, w: &mut [f64]) {
        if let DomainSpec::Ball { radius } = self {
            let nw = norm(w);
            if nw > *radius {
                let s = radius / nw;
                w.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    /// `eta = (T ln T)^(-1/2)`
    InvSqrtTlogt,
    /// `eta = T^(-3/4)`
    TPowNeg34,
    /// `eta = 1 / (sqrt(T) ln T)`
    InvSqrtTTimesLogt,
}

impl StepSchedule {
    pub fn label(&self) -> String {
        match self {
            StepSchedule::Constant { eta } => format!("constant({eta})"),
            StepSchedule::InvSqrtTlogt => "inv_sqrt_tlogt".into(),
            StepSchedule::TPowNeg34 => "t_pow_neg34".into(),
            StepSchedule::InvSqrtTTimesLogt => "inv_sqrt_t_times_logt".into(),
        }
    }

    /// The constant step for a run of length `t`.
    pub fn resolve(&self, t: usize) -> Result<f64> {
        let tf = t as f64;
        let eta = match self {
            StepSchedule::Constant { eta } => {
                if !(eta.is_finite() && *eta >= 0.0) {
                    return Err(Error::InvalidConfiguration(format!(
                        "step must be nonnegative, got {eta}"
                    )));
                }
                return Ok(*eta);
            }
            StepSchedule::InvSqrtTlogt | StepSchedule::InvSqrtTTimesLogt if t < 2 => {
                return Err(Error::InvalidConfiguration(format!(
                    "{} needs T >= 2, got {t}",
                    self.label()
                )))
            }
            StepSchedule::InvSqrtTlogt => 1.0 / (tf * tf.ln()).sqrt(),
            StepSchedule::InvSqrtTTimesLogt => 1.0 / (tf.sqrt() * tf.ln()),
            StepSchedule::TPowNeg34 => {
                if t == 0 {
                    return Err(Error::InvalidConfiguration("t_pow_neg34 needs T >= 1".into()));
                }
                tf.powf(-0.75)
            }
        };
        Ok(eta)
    }
}

/// `eta <= 2/L` for smooth loss families.
pub fn check_sgd_step(fam: &LossFamily, eta: f64) -> Result<()> {
    if let (true, Some(l)) = (fam.smooth, fam.l) {
        if l > 0.0 && eta > 2.0 / l {
            return Err(Error::InvalidConfiguration(format!(
                "step {eta} exceeds 2/L = {} for {}",
                2.0 / l,
                fam.kind.label()
            )));
        }
    }
    Ok(())
}

/// `T eta^2 <= 1/(2 L^2)` for smooth saddle families.
pub fn check_sgda_steps(l: f64, t: usize, eta: f64) -> Result<()> {
    let lhs = t as f64 * eta * eta;
    let rhs = 1.0 / (2.0 * l * l);
    if lhs > rhs {
        return Err(Error::InvalidConfiguration(format!(
            "T * eta^2 = {lhs} exceeds 1/(2L^2) = {rhs}"
        )));
    }
    Ok(())
}

fn thinning_stride(t: usize) -> usize {
    (t / MAX_STORED_ITERATES).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub eta: f64,
    pub t: usize,
    /// Iterations at which `iterates` were recorded (`0, stride, 2 stride, ..., T`).
    pub checkpoints: Vec<usize>,
    pub iterates: Vec<Vec<f64>>,
    pub last: Vec<f64>,
    /// `sum_j eta w_j / sum_j eta` over `j = 1..T`; `w_0` when `T = 0`.
    pub averaged: Vec<f64>,
    pub path_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleTrajectory {
    pub eta: f64,
    pub t: usize,
    pub checkpoints: Vec<usize>,
    pub iterates: Vec<(Vec<f64>, Vec<f64>)>,
    pub last: (Vec<f64>, Vec<f64>),
    pub averaged: (Vec<f64>, Vec<f64>),
    pub path_seed: u64,
}

fn check_path(path: &ChainPath, n: usize) -> Result<()> {
    if let Some(&bad) = path.indices.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!("path index {bad} outside dataset of size {n}")));
    }
    Ok(())
}

/// Running `sum eta_j x_j` and `sum eta_j`.
struct WeightedSum {
    sum: Vec<f64>,
    weight: f64,
}

impl WeightedSum {
    fn new(d: usize) -> Self {
        Self {
            sum: vec![0.0; d],
            weight: 0.0,
        }
    }

    fn add(&mut self, eta: f64, x: &[f64]) {
        axpy(eta, x, &mut self.sum);
        self.weight += eta;
    }

    /// Weighted mean; falls back to `fallback` when no weight was accumulated.
    fn mean(self, fallback: &[f64]) -> Vec<f64> {
        if self.weight > 0.0 {
            self.sum.into_iter().map(|s| s / self.weight).collect()
        } else {
            fallback.to_vec()
        }
    }
}

/// MC-SGD: `w_t = Proj(w_{t-1} - eta * g(w_{t-1}; z_{i_t}))` along `path`.
pub fn mc_sgd(
    fam: &LossFamily,
    s: &Dataset<Example>,
    path: &ChainPath,
    sched: &StepSchedule,
    w0: &[f64],
    domain: &DomainSpec,
) -> Result<Trajectory> {
    mc_sgd_observed(fam, s, path, sched, w0, domain, |_, _| {})
}

/// [`mc_sgd`] calling `observe(t, w_t)` for every `t = 0..=T`.
pub fn mc_sgd_observed(
    fam: &LossFamily,
    s: &Dataset<Example>,
    path: &ChainPath,
    sched: &StepSchedule,
    w0: &[f64],
    domain: &DomainSpec,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<Trajectory> {
    let t_max = path.len();
    let eta = sched.resolve(t_max)?;
    check_sgd_step(fam, eta)?;
    domain.validate()?;
    if w0.len() != fam.d {
        return Err(Error::invalid(format!(
            "w0 has dimension {}, family has {}",
            w0.len(),
            fam.d
        )));
    }
    if s.examples.iter().any(|z| z.x.len() != fam.d) {
        return Err(Error::invalid("dataset dimension does not match family"));
    }
    check_path(path, s.len())?;

    let stride = thinning_stride(t_max);
    let mut w = w0.to_vec();
    let mut checkpoints = vec![0];
    let mut iterates = vec![w.clone()];
    let mut avg = WeightedSum::new(fam.d);
    let mut g = vec![0.0; fam.d];
    observe(0, &w);
    for (k, &i) in path.indices.iter().enumerate() {
        let t = k + 1;
        g.iter_mut().for_each(|x| *x = 0.0);
        fam.add_subgradient(&w, &s.examples[i], 1.0, &mut g);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= eta * gi;
        }
        domain.project_in_place(&mut w);
        avg.add(eta, &w);
        observe(t, &w);
        if t % stride == 0 || t == t_max {
            checkpoints.push(t);
            iterates.push(w.clone());
        }
    }
    Ok(Trajectory {
        eta,
        t: t_max,
        checkpoints,
        iterates,
        averaged: avg.mean(w0),
        last: w,
        path_seed: path.seed,
    })
}

/// MC-SGDA with the simultaneous update: both partial gradients are taken at
/// `(w_{t-1}, v_{t-1})`.
#[allow(clippy::too_many_arguments)]
pub fn mc_sgda(
    fam: &MinimaxFamily,
    s: &Dataset<SaddleExample>,
    path: &ChainPath,
    sched: &StepSchedule,
    w0: &[f64],
    v0: &[f64],
    w_domain: &DomainSpec,
    v_domain: &DomainSpec,
) -> Result<SaddleTrajectory> {
    let t_max = path.len();
    let eta = sched.resolve(t_max)?;
    w_domain.validate()?;
    v_domain.validate()?;
    if w0.len() != fam.d_w || v0.len() != fam.d_v {
        return Err(Error::invalid("initial point dimensions do not match family"));
    }
    if s.examples
        .iter()
        .any(|z| z.a.len() != fam.d_w * fam.d_v || z.b.len() != fam.d_w || z.c.len() != fam.d_v)
    {
        return Err(Error::invalid("dataset dimension does not match family"));
    }
    check_path(path, s.len())?;

    let stride = thinning_stride(t_max);
    let (mut w, mut v) = (w0.to_vec(), v0.to_vec());
    let mut checkpoints = vec![0];
    let mut iterates = vec![(w.clone(), v.clone())];
    let mut avg_w = WeightedSum::new(fam.d_w);
    let mut avg_v = WeightedSum::new(fam.d_v);
    for (k, &i) in path.indices.iter().enumerate() {
        let t = k + 1;
        let z = &s.examples[i];
        let (w_prev, v_prev) = (w.clone(), v.clone());
        add_grad_w(fam, &z.a, &z.b, &v_prev, -eta, &mut w);
        add_grad_v(fam, &z.a, &z.c, &w_prev, &v_prev, eta, &mut v);
        w_domain.project_in_place(&mut w);
        v_domain.project_in_place(&mut v);
        avg_w.add(eta, &w);
        avg_v.add(eta, &v);
        if t % stride == 0 || t == t_max {
            checkpoints.push(t);
            iterates.push((w.clone(), v.clone()));
        }
    }
    Ok(SaddleTrajectory {
        eta,
        t: t_max,
        checkpoints,
        iterates,
        averaged: (avg_w.mean(w0), avg_v.mean(v0)),
        last: (w, v),
        path_seed: path.seed,
    })
}

/// `sum eta_j x_j / sum eta_j`.
pub fn average_iterates(iterates: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if iterates.is_empty() {
        return Err(Error::invalid("no iterates to average"));
    }
    if weights.len() != iterates.len() {
        return Err(Error::invalid("one weight per iterate required"));
    }
    let d = iterates[0].len();
    if iterates.iter().any(|x| x.len() != d) {
        return Err(Error::invalid("iterates have different dimensions"));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("weights must be nonnegative"));
    }
    let mut acc = WeightedSum::new(d);
    for (x, &eta) in iterates.iter().zip(weights) {
        acc.add(eta, x);
    }
    if acc.weight <= 0.0 {
        return Err(Error::invalid("weights sum to zero"));
    }
    Ok(acc.mean(&iterates[0]))
}

/// `(||(w - eta g(w)) - (w' - eta g(w'))||, ||w - w'||)` for one example.
pub fn nonexpansive_witness(fam: &LossFamily, w: &[f64], w2: &[f64], z: &Example, eta: f64) -> Result<(f64, f64)> {
    if !fam.smooth || !fam.convex {
        return Err(Error::Unsupported(format!(
            "{} is not smooth and convex",
            fam.kind.label()
        )));
    }
    if let Some(l) = fam.l {
        if eta > 2.0 / l {
            return Err(Error::invalid(format!("step {eta} exceeds 2/L")));
        }
    }
    let mut a = w.to_vec();
    axpy(-eta, &fam.subgradient(w, z)?, &mut a);
    let mut b = w2.to_vec();
    axpy(-eta, &fam.subgradient(w2, z)?, &mut b);
    Ok((dist(&a, &b), dist(w, w2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{sample_path, uniform_distribution, TransitionMatrix};
    use crate::losses::{LossKind, MinimaxKind};

    fn path(indices: Vec<usize>) -> ChainPath {
        ChainPath {
            indices,
            seed: 0,
            initial: vec![1.0],
        }
    }

    fn one_point(x: f64, y: f64) -> Dataset<Example> {
        Dataset::new(vec![Example { x: vec![x], y }], "t", 0)
    }

    #[test]
    fn projection() {
        let b5 = DomainSpec::Ball { radius: 5.0 };
        assert_eq!(b5.project(&[3.0, 4.0]), vec![3.0, 4.0]);
        let b1 = DomainSpec::Ball { radius: 1.0 };
        let p = b1.project(&[3.0, 4.0]);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert_eq!(b1.project(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(DomainSpec::Unconstrained.project(&[30.0]), vec![30.0]);
        assert!(DomainSpec::ball(0.0).is_err());
    }

    #[test]
    fn schedules() {
        assert_eq!(StepSchedule::Constant { eta: 0.3 }.resolve(7).unwrap(), 0.3);
        let t = 1024.0f64;
        assert!((StepSchedule::InvSqrtTlogt.resolve(1024).unwrap() - 1.0 / (t * t.ln()).sqrt()).abs() < 1e-15);
        assert!((StepSchedule::TPowNeg34.resolve(16).unwrap() - 0.125).abs() < 1e-15);
        assert!((StepSchedule::InvSqrtTTimesLogt.resolve(1024).unwrap() - 1.0 / (32.0 * t.ln())).abs() < 1e-15);
        assert!(StepSchedule::InvSqrtTlogt.resolve(1).is_err());
        assert!(StepSchedule::Constant { eta: -1.0 }.resolve(1).is_err());

        let logistic = LossFamily::new(LossKind::Logistic, 1, 2.0, &DomainSpec::Unconstrained).unwrap();
        assert!(check_sgd_step(&logistic, 2.0).is_ok());
        assert!(check_sgd_step(&logistic, 2.1).is_err());
        assert!(check_sgda_steps(1.0, 50, 0.1).is_ok());
        assert!(check_sgda_steps(1.0, 51, 0.1).is_err());
    }

    #[test]
    fn schedule_toml() {
        #[derive(Deserialize)]
        struct W {
            s: StepSchedule,
        }
        let w: W = toml::from_str("s = { kind = \"constant\", eta = 0.5 }").unwrap();
        assert_eq!(w.s, StepSchedule::Constant { eta: 0.5 });
        let w: W = toml::from_str("s = { kind = \"inv_sqrt_tlogt\" }").unwrap();
        assert_eq!(w.s, StepSchedule::InvSqrtTlogt);
    }

    #[test]
    fn sgd_hand_examples() {
        let abs = LossFamily::new(LossKind::Absolute, 1, 1.0, &DomainSpec::Unconstrained).unwrap();
        let tr = mc_sgd(
            &abs,
            &one_point(1.0, 0.0),
            &path(vec![0, 0]),
            &StepSchedule::Constant { eta: 0.5 },
            &[2.0],
            &DomainSpec::Unconstrained,
        )
        .unwrap();
        assert_eq!(tr.iterates, vec![vec![2.0], vec![1.5], vec![1.0]]);
        assert_eq!(tr.averaged, vec![1.25]);

        let ls = LossFamily::new(LossKind::LeastSquares, 1, 1.0, &DomainSpec::Unconstrained).unwrap();
        let tr = mc_sgd(
            &ls,
            &one_point(1.0, 1.0),
            &path(vec![0, 0]),
            &StepSchedule::Constant { eta: 1.0 },
            &[0.0],
            &DomainSpec::Unconstrained,
        )
        .unwrap();
        assert_eq!(tr.iterates, vec![vec![0.0], vec![1.0], vec![1.0]]);
        assert_eq!(tr.averaged, vec![1.0]);

        let tr = mc_sgd(
            &ls,
            &one_point(1.0, 1.0),
            &path(vec![0; 5]),
            &StepSchedule::Constant { eta: 0.0 },
            &[0.3],
            &DomainSpec::Unconstrained,
        )
        .unwrap();
        assert!(tr.iterates.iter().all(|w| w == &vec![0.3]));

        assert!(mc_sgd(
            &ls,
            &one_point(1.0, 1.0),
            &path(vec![1]),
            &StepSchedule::Constant { eta: 0.5 },
            &[0.0],
            &DomainSpec::Unconstrained,
        )
        .is_err());
    }

    #[test]
    fn zero_length_run_outputs_start() {
        let ls = LossFamily::new(LossKind::LeastSquares, 1, 1.0, &DomainSpec::Unconstrained).unwrap();
        let tr = mc_sgd(
            &ls,
            &one_point(1.0, 1.0),
            &path(vec![]),
            &StepSchedule::Constant { eta: 0.5 },
            &[0.25],
            &DomainSpec::Unconstrained,
        )
        .unwrap();
        assert_eq!(tr.averaged, vec![0.25]);
    }

    #[test]
    fn sgda_hand_example() {
        let fam = MinimaxFamily::with_constants(MinimaxKind::BilinearSaddle, 1, 1, 0.0, 10.0, 10.0, 1.0, 1.0);
        let s = Dataset::new(
            vec![SaddleExample {
                a: vec![1.0],
                b: vec![0.0],
                c: vec![0.0],
            }],
            "t",
            0,
        );
        let dom = DomainSpec::Unconstrained;
        let tr = mc_sgda(
            &fam,
            &s,
            &path(vec![0, 0]),
            &StepSchedule::Constant { eta: 0.1 },
            &[1.0],
            &[0.0],
            &dom,
            &dom,
        )
        .unwrap();
        let (w1, v1) = &tr.iterates[1];
        let (w2, v2) = &tr.iterates[2];
        assert!((w1[0] - 1.0).abs() < 1e-15 && (v1[0] - 0.1).abs() < 1e-15);
        assert!((w2[0] - 0.99).abs() < 1e-15 && (v2[0] - 0.2).abs() < 1e-15);

        let zero = Dataset::new(
            vec![SaddleExample {
                a: vec![0.0],
                b: vec![0.0],
                c: vec![0.0],
            }],
            "t",
            0,
        );
        let tr = mc_sgda(
            &fam,
            &zero,
            &path(vec![0; 4]),
            &StepSchedule::Constant { eta: 0.1 },
            &[0.4],
            &[0.7],
            &dom,
            &dom,
        )
        .unwrap();
        assert!(tr.iterates.iter().all(|(w, v)| w[0] == 0.4 && v[0] == 0.7));

        let sc = MinimaxFamily::with_constants(MinimaxKind::ScConcaveSaddle, 1, 1, 1.0, 10.0, 10.0, 1.0, 1.0);
        let tr = mc_sgda(
            &sc,
            &zero,
            &path(vec![0; 4]),
            &StepSchedule::Constant { eta: 0.1 },
            &[0.4],
            &[0.7],
            &dom,
            &dom,
        )
        .unwrap();
        let vs: Vec<f64> = tr.iterates.iter().map(|(_, v)| v[0]).collect();
        assert!(vs.windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn averaging() {
        assert_eq!(
            average_iterates(&[vec![1.5], vec![1.0]], &[0.5, 0.5]).unwrap(),
            vec![1.25]
        );
        assert_eq!(average_iterates(&[vec![2.0]], &[0.1]).unwrap(), vec![2.0]);
        assert_eq!(
            average_iterates(&[vec![0.0], vec![4.0]], &[1.0, 3.0]).unwrap(),
            vec![3.0]
        );
        assert!(average_iterates(&[], &[]).is_err());
    }

    #[test]
    fn witness_examples() {
        let ls = LossFamily::new(LossKind::LeastSquares, 1, 1.0, &DomainSpec::Unconstrained).unwrap();
        let z = Example { x: vec![1.0], y: 0.0 };
        assert_eq!(nonexpansive_witness(&ls, &[0.3], &[0.3], &z, 1.0).unwrap(), (0.0, 0.0));
        let (l, r) = nonexpansive_witness(&ls, &[0.3], &[-0.2], &z, 0.0).unwrap();
        assert_eq!(l, r);
        let (l, r) = nonexpansive_witness(&ls, &[0.3], &[-0.2], &z, 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert!((r - 0.5).abs() < 1e-15);
        let hinge = LossFamily::new(LossKind::Hinge, 1, 1.0, &DomainSpec::Unconstrained).unwrap();
        assert!(nonexpansive_witness(&hinge, &[0.0], &[1.0], &z, 0.1).is_err());
    }

    #[test]
    fn thinning_keeps_final_and_exact_average() {
        let ls = LossFamily::new(LossKind::LeastSquares, 1, 1.0, &DomainSpec::Unconstrained).unwrap();
        let s = Dataset::new(
            vec![Example { x: vec![1.0], y: 1.0 }, Example { x: vec![1.0], y: -1.0 }],
            "t",
            0,
        );
        let p = TransitionMatrix::uniform(2).unwrap();
        let path = sample_path(&p, 2503, &uniform_distribution(2), 9).unwrap();
        let eta = 0.1;
        let tr = mc_sgd(
            &ls,
            &s,
            &path,
            &StepSchedule::Constant { eta },
            &[0.0],
            &DomainSpec::Unconstrained,
        )
        .unwrap();
        assert_eq!(*tr.checkpoints.last().unwrap(), 2503);
        assert!(tr.iterates.len() <= 2 * MAX_STORED_ITERATES + 2);

        let mut w = 0.0;
        let mut sum = 0.0;
        for &i in &path.indices {
            w = (1.0 - eta) * w + eta * s.examples[i].y;
            sum += w;
        }
        assert!((tr.last[0] - w).abs() < 1e-12);
        assert!((tr.averaged[0] - sum / 2503.0).abs() < 1e-12);
    }
}
