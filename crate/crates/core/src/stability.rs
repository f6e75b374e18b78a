//! Stability and risk estimation.
//!
//! Twin runs share one [`ChainPath`], so the only difference between the two
//! trajectories is the replaced example. Replicates are independent and run
//! on the rayon pool; each replicate derives its seeds from
//! `derive_seed(master_seed, r)` and results are folded in replicate order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{sample_path, uniform_distribution, ChainPath, TransitionMatrix};
use crate::error::{Error, Result};
use crate::losses::{
    best_response_v, duality_gap, empirical_gradient, empirical_risk, erm_oracle, generate_dataset,
    generate_saddle_dataset, maximize_concave_quadratic, minimize_linear, population_coefficients_mc,
    population_risk_mc, saddle_oracle_coefs, Dataset, Example, Generator, LossFamily, MinimaxFamily,
    SaddleCoefficients, SaddleExample, SaddleGenerator,
};
use crate::optim::{mc_sgd, mc_sgda, DomainSpec, SaddleTrajectory, StepSchedule, Trajectory};
use crate::rng::{derive_seed, rng_from_seed, stream_seed, Stream};
use crate::vecops::{axpy, dist, dot, mean_and_se, norm};
use rand::Rng as _;

/// Coefficients of one saddle problem with its `(w, v)` saddle point.
pub type SaddleSample = (SaddleCoefficients, (Vec<f64>, Vec<f64>));

/// Position `index` (0-based) of a dataset replaced by `replacement`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSpec<E> {
    pub index: usize,
    pub replacement: E,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityKind {
    Erm,
    Minimax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityEstimate {
    pub mean_distance: f64,
    pub std_error: f64,
    pub replicates: usize,
    pub kind: StabilityKind,
}

/// A mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let (mean, se) = mean_and_se(values);
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxRisks {
    pub weak_pd_population: Estimate,
    pub weak_pd_empirical: Estimate,
    /// `weak_pd_population - weak_pd_empirical`.
    pub weak_pd_gen: Estimate,
    pub primal_population: Option<Estimate>,
    pub primal_empirical: Option<Estimate>,
    pub primal_gen: Option<Estimate>,
    /// `R(w_bar) - min_w R(w)`.
    pub primal_excess: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub replicates: usize,
    pub empirical: Estimate,
    pub population: Estimate,
    /// `population - empirical`; its `se` comes from the per-replicate differences.
    pub gen_gap: Estimate,
    pub excess: Option<Estimate>,
    pub minimax: Option<MinimaxRisks>,
}

fn gap_estimate(population: &[f64], empirical: &[f64]) -> (Estimate, Estimate, Estimate) {
    let pop = Estimate::from_samples(population);
    let emp = Estimate::from_samples(empirical);
    let diffs: Vec<f64> = population.iter().zip(empirical).map(|(p, e)| p - e).collect();
    let gap = Estimate {
        mean: pop.mean - emp.mean,
        se: Estimate::from_samples(&diffs).se,
    };
    (pop, emp, gap)
}

/// Runs `f(r, replicate_seed)` for `r = 0..replicates` on the rayon pool and
/// returns the results in replicate order.
pub fn run_replicates<T, F>(replicates: usize, master_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync + Send,
{
    (0..replicates)
        .into_par_iter()
        .map(|r| f(r, derive_seed(master_seed, r as u64)))
        .collect()
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates < 2 {
        return Err(Error::invalid(format!("need at least 2 replicates, got {replicates}")));
    }
    Ok(())
}

fn check_chain(chain: &TransitionMatrix, n: usize) -> Result<()> {
    if chain.n() != n {
        return Err(Error::invalid(format!(
            "chain has {} states but the dataset has {n} examples",
            chain.n()
        )));
    }
    Ok(())
}

/// Everything needed to run MC-SGD replicates on fresh data.
#[derive(Debug, Clone)]
pub struct SgdSetup {
    pub fam: LossFamily,
    pub gen: Generator,
    pub n: usize,
    pub t: usize,
    pub sched: StepSchedule,
    pub domain: DomainSpec,
    pub chain: TransitionMatrix,
}

impl SgdSetup {
    pub fn eta(&self) -> Result<f64> {
        self.sched.resolve(self.t)
    }

    pub fn path(&self, replicate_seed: u64) -> Result<ChainPath> {
        check_chain(&self.chain, self.n)?;
        sample_path(
            &self.chain,
            self.t,
            &uniform_distribution(self.n),
            stream_seed(replicate_seed, Stream::Path),
        )
    }

    pub fn dataset(&self, replicate_seed: u64) -> Result<Dataset<Example>> {
        generate_dataset(&self.gen, self.n, stream_seed(replicate_seed, Stream::Dataset))
    }

    pub fn run(&self, s: &Dataset<Example>, path: &ChainPath) -> Result<Trajectory> {
        mc_sgd(&self.fam, s, path, &self.sched, &vec![0.0; self.fam.d], &self.domain)
    }
}

/// Everything needed to run MC-SGDA replicates on fresh data.
#[derive(Debug, Clone)]
pub struct SgdaSetup {
    pub fam: MinimaxFamily,
    pub gen: SaddleGenerator,
    pub n: usize,
    pub t: usize,
    pub sched: StepSchedule,
    pub w_domain: DomainSpec,
    pub v_domain: DomainSpec,
    pub chain: TransitionMatrix,
}

impl SgdaSetup {
    pub fn eta(&self) -> Result<f64> {
        self.sched.resolve(self.t)
    }

    pub fn path(&self, replicate_seed: u64) -> Result<ChainPath> {
        check_chain(&self.chain, self.n)?;
        sample_path(
            &self.chain,
            self.t,
            &uniform_distribution(self.n),
            stream_seed(replicate_seed, Stream::Path),
        )
    }

    pub fn dataset(&self, replicate_seed: u64) -> Result<Dataset<SaddleExample>> {
        generate_saddle_dataset(&self.gen, self.n, stream_seed(replicate_seed, Stream::Dataset))
    }

    pub fn run(&self, s: &Dataset<SaddleExample>, path: &ChainPath) -> Result<SaddleTrajectory> {
        mc_sgda(
            &self.fam,
            s,
            path,
            &self.sched,
            &vec![0.0; self.fam.d_w],
            &vec![0.0; self.fam.d_v],
            &self.w_domain,
            &self.v_domain,
        )
    }
}

/// Averaged outputs of the twin runs on `S` and `S^(i)` and their distance.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinOutput {
    pub output: Vec<f64>,
    pub neighbor_output: Vec<f64>,
    pub distance: f64,
}

pub fn twin_sgd(
    fam: &LossFamily,
    s: &Dataset<Example>,
    nb: &NeighborSpec<Example>,
    path: &ChainPath,
    sched: &StepSchedule,
    w0: &[f64],
    domain: &DomainSpec,
) -> Result<TwinOutput> {
    let s2 = s.with_replaced(nb.index, nb.replacement.clone())?;
    let a = mc_sgd(fam, s, path, sched, w0, domain)?;
    let b = mc_sgd(fam, &s2, path, sched, w0, domain)?;
    let distance = dist(&a.averaged, &b.averaged);
    Ok(TwinOutput {
        output: a.averaged,
        neighbor_output: b.averaged,
        distance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleTwinOutput {
    pub output: (Vec<f64>, Vec<f64>),
    pub neighbor_output: (Vec<f64>, Vec<f64>),
    pub w_distance: f64,
    pub v_distance: f64,
}

impl SaddleTwinOutput {
    /// `||w - w'|| + ||v - v'||`
    pub fn distance(&self) -> f64 {
        self.w_distance + self.v_distance
    }
}

#[allow(clippy::too_many_arguments)]
pub fn twin_sgda(
    fam: &MinimaxFamily,
    s: &Dataset<SaddleExample>,
    nb: &NeighborSpec<SaddleExample>,
    path: &ChainPath,
    sched: &StepSchedule,
    w0: &[f64],
    v0: &[f64],
    w_domain: &DomainSpec,
    v_domain: &DomainSpec,
) -> Result<SaddleTwinOutput> {
    let s2 = s.with_replaced(nb.index, nb.replacement.clone())?;
    let a = mc_sgda(fam, s, path, sched, w0, v0, w_domain, v_domain)?;
    let b = mc_sgda(fam, &s2, path, sched, w0, v0, w_domain, v_domain)?;
    Ok(SaddleTwinOutput {
        w_distance: dist(&a.averaged.0, &b.averaged.0),
        v_distance: dist(&a.averaged.1, &b.averaged.1),
        output: a.averaged,
        neighbor_output: b.averaged,
    })
}

fn random_index(replicate_seed: u64, n: usize) -> usize {
    rng_from_seed(stream_seed(replicate_seed, Stream::Index)).random_range(0..n)
}

/// Per-replicate twin distances for MC-SGD.
pub fn stability_samples_sgd(setup: &SgdSetup, replicates: usize, master_seed: u64) -> Result<Vec<f64>> {
    run_replicates(replicates, master_seed, |_, seed| {
        let s = setup.dataset(seed)?;
        let mut ghost = rng_from_seed(stream_seed(seed, Stream::Ghost));
        let nb = NeighborSpec {
            index: random_index(seed, setup.n),
            replacement: setup.gen.sample(&mut ghost),
        };
        let path = setup.path(seed)?;
        let twin = twin_sgd(
            &setup.fam,
            &s,
            &nb,
            &path,
            &setup.sched,
            &vec![0.0; setup.fam.d],
            &setup.domain,
        )?;
        Ok(twin.distance)
    })
}

pub fn estimate_stability_sgd(setup: &SgdSetup, replicates: usize, master_seed: u64) -> Result<StabilityEstimate> {
    check_replicates(replicates)?;
    let d = stability_samples_sgd(setup, replicates, master_seed)?;
    let e = Estimate::from_samples(&d);
    Ok(StabilityEstimate {
        mean_distance: e.mean,
        std_error: e.se,
        replicates,
        kind: StabilityKind::Erm,
    })
}

/// Per-replicate twin outputs for MC-SGDA.
pub fn stability_samples_sgda(setup: &SgdaSetup, replicates: usize, master_seed: u64) -> Result<Vec<SaddleTwinOutput>> {
    run_replicates(replicates, master_seed, |_, seed| {
        let s = setup.dataset(seed)?;
        let mut ghost = rng_from_seed(stream_seed(seed, Stream::Ghost));
        let nb = NeighborSpec {
            index: random_index(seed, setup.n),
            replacement: setup.gen.sample(&mut ghost),
        };
        let path = setup.path(seed)?;
        twin_sgda(
            &setup.fam,
            &s,
            &nb,
            &path,
            &setup.sched,
            &vec![0.0; setup.fam.d_w],
            &vec![0.0; setup.fam.d_v],
            &setup.w_domain,
            &setup.v_domain,
        )
    })
}

pub fn estimate_stability_sgda(setup: &SgdaSetup, replicates: usize, master_seed: u64) -> Result<StabilityEstimate> {
    check_replicates(replicates)?;
    let d: Vec<f64> = stability_samples_sgda(setup, replicates, master_seed)?
        .iter()
        .map(SaddleTwinOutput::distance)
        .collect();
    let e = Estimate::from_samples(&d);
    Ok(StabilityEstimate {
        mean_distance: e.mean,
        std_error: e.se,
        replicates,
        kind: StabilityKind::Minimax,
    })
}

/// Plug-in comparator: an ERM solution on a large independent dataset and its
/// Monte-Carlo population risk.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparator {
    pub w: Vec<f64>,
    pub population: Estimate,
}

pub fn plug_in_comparator(
    fam: &LossFamily,
    gen: &Generator,
    domain: &DomainSpec,
    size: usize,
    budget: usize,
    n_test: usize,
    seed: u64,
) -> Result<Comparator> {
    let s = generate_dataset(gen, size, stream_seed(seed, Stream::Dataset))?;
    let (w, _) = erm_oracle(fam, &s, domain, budget)?;
    let (mean, se) = population_risk_mc(fam, gen, &w, n_test, stream_seed(seed, Stream::Test))?;
    Ok(Comparator {
        w,
        population: Estimate { mean, se },
    })
}

/// Empirical vs population risk of the MC-SGD output over fresh replicates.
pub fn generalization_report_sgd(
    setup: &SgdSetup,
    replicates: usize,
    n_test: usize,
    master_seed: u64,
    comparator: Option<&Comparator>,
) -> Result<RiskReport> {
    check_replicates(replicates)?;
    let rows = run_replicates(replicates, master_seed, |_, seed| {
        let s = setup.dataset(seed)?;
        let path = setup.path(seed)?;
        let tr = setup.run(&s, &path)?;
        let emp = empirical_risk(&setup.fam, &s, &tr.averaged)?;
        let (pop, _) = population_risk_mc(
            &setup.fam,
            &setup.gen,
            &tr.averaged,
            n_test,
            stream_seed(seed, Stream::Test),
        )?;
        Ok((pop, emp))
    })?;
    let (pops, emps): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let (population, empirical, gen_gap) = gap_estimate(&pops, &emps);
    let excess = comparator.map(|c| Estimate {
        mean: population.mean - c.population.mean,
        se: population.se.hypot(c.population.se),
    });
    Ok(RiskReport {
        replicates,
        empirical,
        population,
        gen_gap,
        excess,
        minimax: None,
    })
}

/// `max_v E_r[F(w_r, v)] - min_w E_r[F(w, v_r)]` for a fixed objective, with
/// the per-replicate values at the two optimizers.
pub fn weak_pd_value(
    coefs: &SaddleCoefficients,
    outputs: &[(Vec<f64>, Vec<f64>)],
    w_domain: &DomainSpec,
    v_domain: &DomainSpec,
) -> Result<(f64, Vec<f64>)> {
    if outputs.is_empty() {
        return Err(Error::invalid("no outputs"));
    }
    let k = outputs.len() as f64;
    let mut w_mean = vec![0.0; coefs.d_w];
    let mut v_mean = vec![0.0; coefs.d_v];
    let mut v_sq = 0.0;
    for (w, v) in outputs {
        axpy(1.0 / k, w, &mut w_mean);
        axpy(1.0 / k, v, &mut v_mean);
        v_sq += dot(v, v) / k;
    }
    let (v_star, hi) = best_response_v(coefs, &w_mean, v_domain)?;
    let h = coefs.grad_w(&v_mean);
    let (w_star, lo) = minimize_linear(&h, -dot(&coefs.c, &v_mean) - 0.5 * coefs.rho * v_sq, w_domain.radius())?;
    let per = outputs
        .iter()
        .map(|(w, v)| coefs.value(w, &v_star) - coefs.value(&w_star, v))
        .collect();
    Ok((hi - lo, per))
}

/// Empirical weak-PD risk, where each replicate's output is paired with its own
/// training set: `max_v E_r[F_{S_r}(w_r, v)] - min_w E_r[F_{S_r}(w, v_r)]`.
pub fn weak_pd_empirical_value(
    samples: &[SaddleSample],
    w_domain: &DomainSpec,
    v_domain: &DomainSpec,
) -> Result<(f64, Vec<f64>)> {
    let first = &samples.first().ok_or_else(|| Error::invalid("no outputs"))?.0;
    let (d_w, d_v, rho) = (first.d_w, first.d_v, first.rho);
    let k = samples.len() as f64;
    let mut g = vec![0.0; d_v];
    let mut g0 = 0.0;
    let mut h = vec![0.0; d_w];
    let mut h0 = 0.0;
    for (c, (w, v)) in samples {
        axpy(1.0 / k, &c.linear_v(w), &mut g);
        g0 += dot(&c.b, w) / k;
        axpy(1.0 / k, &c.grad_w(v), &mut h);
        h0 += (-dot(&c.c, v) - 0.5 * rho * dot(v, v)) / k;
    }
    let (v_star, hi) = maximize_concave_quadratic(&g, rho, g0, v_domain.radius())?;
    let (w_star, lo) = minimize_linear(&h, h0, w_domain.radius())?;
    let per = samples
        .iter()
        .map(|(c, (w, v))| c.value(w, &v_star) - c.value(&w_star, v))
        .collect();
    Ok((hi - lo, per))
}

/// `R(w) = max_{v in V} F(w, v)`.
pub fn primal_risk(coefs: &SaddleCoefficients, w: &[f64], v_domain: &DomainSpec) -> Result<f64> {
    Ok(best_response_v(coefs, w, v_domain)?.1)
}

/// Weak-PD and primal risks of the MC-SGDA output. The population objective
/// is the average of `n_test` fresh coefficient draws.
pub fn sgda_risk_report(setup: &SgdaSetup, replicates: usize, n_test: usize, master_seed: u64) -> Result<RiskReport> {
    check_replicates(replicates)?;
    let pop = population_coefficients_mc(&setup.fam, &setup.gen, n_test, stream_seed(master_seed, Stream::Test))?;
    let samples = run_replicates(replicates, master_seed, |_, seed| {
        let s = setup.dataset(seed)?;
        let path = setup.path(seed)?;
        let tr = setup.run(&s, &path)?;
        Ok((SaddleCoefficients::from_dataset(&setup.fam, &s)?, tr.averaged))
    })?;
    minimax_report(setup, &pop, &samples)
}

fn minimax_report(setup: &SgdaSetup, pop: &SaddleCoefficients, samples: &[SaddleSample]) -> Result<RiskReport> {
    let (wd, vd) = (&setup.w_domain, &setup.v_domain);
    let outputs: Vec<(Vec<f64>, Vec<f64>)> = samples.iter().map(|(_, o)| o.clone()).collect();
    let (pd_pop, pd_pop_per) = weak_pd_value(pop, &outputs, wd, vd)?;
    let (pd_emp, pd_emp_per) = weak_pd_empirical_value(samples, wd, vd)?;
    let diffs: Vec<f64> = pd_pop_per.iter().zip(&pd_emp_per).map(|(a, b)| a - b).collect();
    let weak_pd_population = Estimate {
        mean: pd_pop,
        se: Estimate::from_samples(&pd_pop_per).se,
    };
    let weak_pd_empirical = Estimate {
        mean: pd_emp,
        se: Estimate::from_samples(&pd_emp_per).se,
    };
    let weak_pd_gen = Estimate {
        mean: pd_pop - pd_emp,
        se: Estimate::from_samples(&diffs).se,
    };

    let f_pop: Vec<f64> = outputs.iter().map(|(w, v)| pop.value(w, v)).collect();
    let f_emp: Vec<f64> = samples.iter().map(|(c, (w, v))| c.value(w, v)).collect();
    let (population, empirical, gen_gap) = gap_estimate(&f_pop, &f_emp);

    let (mut primal_population, mut primal_empirical, mut primal_gen, mut primal_excess) = (None, None, None, None);
    if setup.fam.rho > 0.0 {
        let r_pop = outputs
            .iter()
            .map(|(w, _)| primal_risk(pop, w, vd))
            .collect::<Result<Vec<f64>>>()?;
        let r_emp = samples
            .iter()
            .map(|(c, (w, _))| primal_risk(c, w, vd))
            .collect::<Result<Vec<f64>>>()?;
        let (p, e, g) = gap_estimate(&r_pop, &r_emp);
        let (w_star, _, _) = saddle_oracle_coefs(pop, setup.fam.l, wd, vd, crate::losses::DEFAULT_ORACLE_BUDGET)?;
        let r_min = primal_risk(pop, &w_star, vd)?;
        primal_excess = Some(Estimate {
            mean: p.mean - r_min,
            se: p.se,
        });
        primal_population = Some(p);
        primal_empirical = Some(e);
        primal_gen = Some(g);
    }

    Ok(RiskReport {
        replicates: samples.len(),
        empirical,
        population,
        gen_gap,
        excess: None,
        minimax: Some(MinimaxRisks {
            weak_pd_population,
            weak_pd_empirical,
            weak_pd_gen,
            primal_population,
            primal_empirical,
            primal_gen,
            primal_excess,
        }),
    })
}

/// `F_S(w_bar) - F_S(comparator)`.
pub fn opt_gap_sgd(fam: &LossFamily, s: &Dataset<Example>, tr: &Trajectory, comparator: &[f64]) -> Result<f64> {
    Ok(empirical_risk(fam, s, &tr.averaged)? - empirical_risk(fam, s, comparator)?)
}

/// Empirical primal-dual gap of the averaged MC-SGDA output.
pub fn pd_gap_sgda(
    fam: &MinimaxFamily,
    s: &Dataset<SaddleExample>,
    tr: &SaddleTrajectory,
    w_domain: &DomainSpec,
    v_domain: &DomainSpec,
) -> Result<f64> {
    let coefs = SaddleCoefficients::from_dataset(fam, s)?;
    duality_gap(&coefs, &tr.averaged.0, &tr.averaged.1, w_domain, v_domain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradNormTrace {
    pub checkpoints: Vec<usize>,
    pub sq_norms: Vec<f64>,
    pub running_min: Vec<f64>,
}

/// `||grad F_S(w_j)||^2` at the stored checkpoints `j >= 1` and its running minimum.
pub fn grad_norm_trace(fam: &LossFamily, s: &Dataset<Example>, tr: &Trajectory) -> Result<GradNormTrace> {
    if !fam.smooth {
        return Err(Error::Unsupported(format!("{} is not smooth", fam.kind.label())));
    }
    let mut checkpoints = Vec::new();
    let mut sq_norms = Vec::new();
    for (&j, w) in tr.checkpoints.iter().zip(&tr.iterates) {
        if j == 0 {
            continue;
        }
        checkpoints.push(j);
        sq_norms.push(norm(&empirical_gradient(fam, s, w)?).powi(2));
    }
    let running_min = sq_norms
        .iter()
        .scan(f64::INFINITY, |m, &x| {
            *m = m.min(x);
            Some(*m)
        })
        .collect();
    Ok(GradNormTrace {
        checkpoints,
        sq_norms,
        running_min,
    })
}
