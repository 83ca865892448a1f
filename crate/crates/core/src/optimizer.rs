//! CRLB-GA: a genetic algorithm over discrete RIS phase configurations that
//! maximizes the inverse position CRLB, plus an exhaustive oracle.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{path_gain, phase_table, PhaseConfig, RisSteering};
use crate::crlb::{information_trace_inverse, PathDirectionSums};
use crate::environment::{
    mirror_point, propagation_paths, AgentState, Environment, LandmarkKind, RisPanel,
};
use crate::error::{OptimizerError, Result};
use crate::SPEED_OF_LIGHT;

/// Anything that scores a gene vector. Larger is better.
pub trait FitnessContext: Sync {
    fn adaptability(&self, genes: &[u32]) -> f64;
}

/// A path whose amplitude depends on the commanded RIS phases.
#[derive(Debug, Clone)]
pub struct RisTerm {
    pub sums: PathDirectionSums,
    pub steering: RisSteering,
    /// Extra amplitude factor, e.g. the wall coefficient of a VRIS path.
    pub scale: f64,
}

/// Closed-form CRLB evaluator for one predicted pose and map.
#[derive(Debug, Clone)]
pub struct CrlbContext {
    /// Information from paths that do not involve the RIS.
    pub fixed_info: Matrix2<f64>,
    pub ris_terms: Vec<RisTerm>,
    /// 8π²ζ² / (c² N₀).
    pub info_per_power: f64,
    pub levels: u32,
    table: Vec<Complex64>,
}

impl CrlbContext {
    pub fn new(zeta_sq: f64, n0: f64, levels: u32) -> Self {
        Self {
            fixed_info: Matrix2::zeros(),
            ris_terms: Vec::new(),
            info_per_power: 8.0 * PI * PI * zeta_sq / (SPEED_OF_LIGHT * SPEED_OF_LIGHT * n0),
            levels,
            table: phase_table(levels),
        }
    }

    pub fn add_fixed(&mut self, sums: PathDirectionSums, amplitude_sq: f64) {
        let w = self.info_per_power * amplitude_sq;
        self.fixed_info += Matrix2::new(
            sums.nu * sums.nu,
            sums.nu * sums.kappa,
            sums.nu * sums.kappa,
            sums.kappa * sums.kappa,
        ) * w;
    }

    pub fn add_ris(&mut self, term: RisTerm) {
        self.ris_terms.push(term);
    }

    /// Every path gain multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.fixed_info *= factor * factor;
        for t in &mut out.ris_terms {
            t.scale *= factor;
        }
        out
    }

    /// Position information under `genes`.
    pub fn information(&self, genes: &[u32]) -> Matrix2<f64> {
        let mut info = self.fixed_info;
        for t in &self.ris_terms {
            let g = t.steering.gain_with_table(genes, &self.table) * t.scale;
            let w = self.info_per_power * g.norm_sqr();
            let s = &t.sums;
            info[(0, 0)] += w * s.nu * s.nu;
            info[(0, 1)] += w * s.nu * s.kappa;
            info[(1, 1)] += w * s.kappa * s.kappa;
        }
        info[(1, 0)] = info[(0, 1)];
        info
    }

    pub fn crlb(&self, genes: &[u32]) -> f64 {
        information_trace_inverse(&self.information(genes)).unwrap_or(f64::INFINITY)
    }

    /// Context from the true scene at `agent`, ignoring VT paths.
    pub fn from_truth(
        env: &Environment,
        agent: &AgentState,
        wavelength: f64,
        tx_gain: f64,
        zeta_sq: f64,
        n0: f64,
    ) -> Result<Self> {
        let panel = env.panel()?;
        let mut ctx = Self::new(zeta_sq, n0, panel.map_or(1, |p| p.phase_levels));
        for path in propagation_paths(env, agent)? {
            let sums = PathDirectionSums::of(&path);
            match (path.kind, panel) {
                (LandmarkKind::Vt, _) => {}
                (LandmarkKind::Ris, Some(p)) => {
                    let n = path.vertices.len();
                    let steering = RisSteering::new(
                        p,
                        &path.vertices[0],
                        &path.vertices[n - 1],
                        wavelength,
                        tx_gain,
                    )?;
                    ctx.add_ris(RisTerm {
                        sums,
                        steering,
                        scale: 1.0,
                    });
                }
                (LandmarkKind::Vris, Some(p)) => {
                    let n = path.vertices.len();
                    let bounce = path.vertices[n - 2];
                    let refl = env
                        .reflectors
                        .iter()
                        .find(|r| r.plane.signed_distance(&bounce).abs() < 1e-9)
                        .expect("VRIS path without reflector");
                    let rx_img = mirror_point(&path.vertices[n - 1], &refl.plane);
                    let steering =
                        RisSteering::new(p, &path.vertices[0], &rx_img, wavelength, tx_gain)?;
                    ctx.add_ris(RisTerm {
                        sums,
                        steering,
                        scale: refl.reflection_coefficient,
                    });
                }
                _ => {
                    let g = path_gain(env, &path, wavelength, tx_gain, None)?;
                    ctx.add_fixed(sums, g.norm_sqr());
                }
            }
        }
        Ok(ctx)
    }
}

impl FitnessContext for CrlbContext {
    /// 1 / CRLB; unobservable geometry scores 0.
    fn adaptability(&self, genes: &[u32]) -> f64 {
        let c = self.crlb(genes);
        if c.is_finite() && c > 0.0 {
            1.0 / c
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genes: Vec<u32>,
    pub cached_adaptability: Option<f64>,
}

impl Individual {
    pub fn new(genes: Vec<u32>) -> Self {
        Self {
            genes,
            cached_adaptability: None,
        }
    }

    pub fn random(len: usize, levels: u32, rng: &mut impl Rng) -> Self {
        Self::new((0..len).map(|_| rng.random_range(1..=levels)).collect())
    }

    pub fn fitness(&self) -> f64 {
        self.cached_adaptability.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub mutation_prob: f64,
    pub seed: u64,
    /// Inject the previous cycle's best into the initial population.
    pub warm_start: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 32,
            elites: 4,
            iterations: 40,
            mutation_prob: 0.05,
            seed: 0,
            warm_start: true,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.elites == 0 || self.elites >= self.population {
            return Err(OptimizerError::InvalidConfig(format!(
                "need 0 < Q < K, got Q={} K={}",
                self.elites, self.population
            )));
        }
        if (self.population - self.elites) % 2 != 0 {
            return Err(OptimizerError::InvalidConfig(format!(
                "K - Q must be even, got {}",
                self.population - self.elites
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(OptimizerError::InvalidConfig(format!(
                "mutation probability {} outside [0, 1]",
                self.mutation_prob
            )));
        }
        Ok(())
    }
}

fn rank_order(a: &Individual, b: &Individual) -> std::cmp::Ordering {
    b.fitness()
        .total_cmp(&a.fitness())
        .then_with(|| a.genes.cmp(&b.genes))
}

/// Top `q` by adaptability; ties go to the lexicographically smaller genes.
pub fn select_elites(pop: &[Individual], q: usize) -> Vec<Individual> {
    let mut sorted = pop.to_vec();
    sorted.sort_by(rank_order);
    sorted.truncate(q);
    sorted
}

/// Exchange of the genes from 1-based locus `i` to the end.
pub fn crossover_at(a: &Individual, b: &Individual, i: usize) -> (Individual, Individual) {
    let cut = i.saturating_sub(1).min(a.genes.len());
    let mut ca = a.genes.clone();
    let mut cb = b.genes.clone();
    ca[cut..].swap_with_slice(&mut cb[cut..]);
    (Individual::new(ca), Individual::new(cb))
}

pub fn crossover(a: &Individual, b: &Individual, rng: &mut impl Rng) -> (Individual, Individual) {
    let i = rng.random_range(1..=a.genes.len().max(1));
    crossover_at(a, b, i)
}

pub fn mutate(mut child: Individual, p_m: f64, levels: u32, rng: &mut impl Rng) -> Individual {
    for g in child.genes.iter_mut() {
        if rng.random_bool(p_m) {
            *g = rng.random_range(1..=levels);
        }
    }
    child.cached_adaptability = None;
    child
}

/// Fitness-proportional index by cumulative-sum inversion; uniform when the
/// population has no fitness at all.
fn roulette(pop: &[Individual], total: f64, rng: &mut impl Rng) -> usize {
    if !(total > 0.0) || !total.is_finite() {
        return rng.random_range(0..pop.len());
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, ind) in pop.iter().enumerate() {
        acc += ind.fitness();
        if target < acc {
            return i;
        }
    }
    pop.len() - 1
}

fn evaluate(pop: &mut [Individual], ctx: &impl FitnessContext) {
    pop.par_iter_mut().for_each(|ind| {
        if ind.cached_adaptability.is_none() {
            ind.cached_adaptability = Some(ctx.adaptability(&ind.genes));
        }
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: PhaseConfig,
    pub best_fitness: f64,
    /// Best fitness seen after each iteration.
    pub trace: Vec<f64>,
}

/// Runs `iterations` rounds of selection, gene cross and gene mutation.
pub fn optimize_phases(
    ctx: &impl FitnessContext,
    rows: usize,
    cols: usize,
    levels: u32,
    cfg: &GaConfig,
    warm: Option<&PhaseConfig>,
) -> Result<GaResult> {
    cfg.validate()?;
    let len = rows * cols;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pop: Vec<Individual> = (0..cfg.population)
        .map(|_| Individual::random(len, levels, &mut rng))
        .collect();
    if let (true, Some(w)) = (cfg.warm_start, warm) {
        if w.genes.len() == len && w.levels == levels {
            pop[0] = Individual::new(w.genes.clone());
        }
    }
    evaluate(&mut pop, ctx);
    let mut best = select_elites(&pop, 1).remove(0);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let elites = select_elites(&pop, cfg.elites);
        let total: f64 = pop.iter().map(Individual::fitness).sum();
        let mut next = elites;
        while next.len() < cfg.population {
            let a = roulette(&pop, total, &mut rng);
            let b = roulette(&pop, total, &mut rng);
            let (ca, cb) = crossover(&pop[a], &pop[b], &mut rng);
            next.push(mutate(ca, cfg.mutation_prob, levels, &mut rng));
            next.push(mutate(cb, cfg.mutation_prob, levels, &mut rng));
        }
        pop = next;
        evaluate(&mut pop, ctx);
        let top = select_elites(&pop, 1).remove(0);
        if rank_order(&top, &best) == std::cmp::Ordering::Less {
            best = top;
        }
        trace.push(best.fitness());
    }
    Ok(GaResult {
        best_fitness: best.fitness(),
        best: PhaseConfig {
            rows,
            cols,
            levels,
            genes: best.genes,
        },
        trace,
    })
}

pub const EXHAUSTIVE_LIMIT: f64 = 1e6;

/// Global optimum by enumeration; the first maximizer in lexicographic order.
pub fn exhaustive_search(
    ctx: &impl FitnessContext,
    rows: usize,
    cols: usize,
    levels: u32,
) -> Result<(PhaseConfig, f64), OptimizerError> {
    let len = rows * cols;
    let space = (levels as f64).powi(len as i32);
    if space > EXHAUSTIVE_LIMIT {
        return Err(OptimizerError::SearchSpaceTooLarge(space));
    }
    let mut genes = vec![1u32; len];
    let mut best = (genes.clone(), ctx.adaptability(&genes));
    loop {
        // odometer increment, last locus fastest, keeps lexicographic order
        let mut i = len;
        loop {
            if i == 0 {
                let (g, f) = best;
                return Ok((
                    PhaseConfig {
                        rows,
                        cols,
                        levels,
                        genes: g,
                    },
                    f,
                ));
            }
            i -= 1;
            if genes[i] < levels {
                genes[i] += 1;
                break;
            }
            genes[i] = 1;
        }
        let f = ctx.adaptability(&genes);
        if f > best.1 {
            best = (genes.clone(), f);
        }
    }
}

/// Shape of the panel's gene vector.
pub fn panel_shape(panel: &RisPanel) -> (usize, usize, u32) {
    (panel.rows, panel.cols, panel.phase_levels)
}
