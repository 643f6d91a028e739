//! Genetic-algorithm search over dipole type and position, nested inside
//! the dipole-count outer loop.
//!
//! Each individual encodes only the discrete kind and the coordinates of
//! every dipole; magnitudes and phases are never search variables — the
//! inner back-and-forth solver recovers them per candidate layout, and its
//! relative error is the fitness. The outer loop adds dipoles one at a time
//! until the RE improvement from one more dipole drops to μ, then keeps the
//! smaller set.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::forward::{build_transfer_matrix, Dipole, DipoleRecord, DipoleType, Environment};
use crate::scan::{FieldDataset, ScanSurface};
use crate::solver::{
    back_and_forth_single, back_and_forth_two, FitReport, FitResult, SolverConfig,
};

/// Fitness assigned to layouts the inner solver rejects (ill-conditioned
/// transfer matrix, non-finite errors). Above any honest RE of interest.
pub const PENALTY_FITNESS: f64 = 2.0;

/// Best-fitness improvements at or below this are treated as stalls.
pub const STALL_IMPROVEMENT: f64 = 1e-6;

/// The mutation σ never shrinks below this fraction of its initial value,
/// so position refinement keeps a nonzero step to the last generation.
pub const SIGMA_FLOOR: f64 = 0.02;

/// Axis-aligned search box and the candidate dipole kinds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchBounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
    #[serde(default = "all_kinds")]
    pub kinds: Vec<DipoleType>,
}

fn all_kinds() -> Vec<DipoleType> {
    DipoleType::ALL.to_vec()
}

impl SearchBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            if !r[0].is_finite() || !r[1].is_finite() || r[0] > r[1] {
                return Err(Error::Config(format!(
                    "bad {name} range [{}, {}]",
                    r[0], r[1]
                )));
            }
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("allowed kind set is empty".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        p.x >= self.x[0]
            && p.x <= self.x[1]
            && p.y >= self.y[0]
            && p.y <= self.y[1]
            && p.z >= self.z[0]
            && p.z <= self.z[1]
    }
}

/// GA hyperparameters. `mutation_sigma_frac` is the coordinate-mutation σ
/// as a fraction of each axis range; `mutation_shrink` scales σ down
/// linearly over the generations (1 → σ approaches zero by the final
/// generation, 0 → constant σ), which lets the search refine positions far
/// below the initial step once the right region is found.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct GAConfig {
    pub population: usize,
    pub max_generations: usize,
    pub stall_generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elite_count: usize,
    pub mutation_sigma_frac: f64,
    pub mutation_shrink: f64,
    /// Fresh random individuals injected per generation; keeps the
    /// kind-combination search alive after the continuous refinement has
    /// taken over the population.
    pub immigrants: usize,
    pub tournament_size: usize,
    /// Independent restarts per run (fresh population, derived seed); the
    /// best individual across all restarts is returned.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for GAConfig {
    fn default() -> Self {
        Self {
            population: 50,
            max_generations: 100,
            stall_generations: 20,
            crossover_rate: 0.8,
            mutation_rate: 0.15,
            elite_count: 2,
            mutation_sigma_frac: 0.05,
            mutation_shrink: 1.0,
            immigrants: 5,
            tournament_size: 2,
            restarts: 3,
            seed: 0,
        }
    }
}

impl GAConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("population must be at least 2".into()));
        }
        if self.max_generations < 1 {
            return Err(Error::Config("max_generations must be at least 1".into()));
        }
        if self.stall_generations < 1 {
            return Err(Error::Config("stall_generations must be at least 1".into()));
        }
        for (name, r) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {r}")));
            }
        }
        if self.elite_count >= self.population {
            return Err(Error::Config(
                "elite_count must be smaller than the population".into(),
            ));
        }
        if self.elite_count + self.immigrants >= self.population {
            return Err(Error::Config(
                "elite_count + immigrants must leave room for offspring".into(),
            ));
        }
        if self.tournament_size < 1 {
            return Err(Error::Config("tournament_size must be at least 1".into()));
        }
        if self.restarts < 1 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.mutation_sigma_frac.is_nan()
            || self.mutation_sigma_frac < 0.0
            || !(0.0..=1.0).contains(&self.mutation_shrink)
        {
            return Err(Error::Config("bad mutation sigma/shrink".into()));
        }
        Ok(())
    }
}

/// One dipole slot of an individual: its kind and position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gene {
    pub kind: DipoleType,
    pub position: Vector3<f64>,
}

/// A candidate layout plus its cached fitness. Fitness is `None` until the
/// inner solver has been run; variation clears it only when genes change.
#[derive(Debug, Clone)]
pub struct Individual {
    pub genes: Vec<Gene>,
    pub fitness: Option<f64>,
    pub fit: Option<FitResult>,
}

impl Individual {
    fn layout(&self) -> Vec<(DipoleType, Vector3<f64>)> {
        self.genes.iter().map(|g| (g.kind, g.position)).collect()
    }
}

/// The data the GA fits against: one or two surfaces with their
/// row-ordered magnitudes, and the propagation environment.
#[derive(Debug, Clone)]
pub struct Problem {
    pub surfaces: Vec<ScanSurface>,
    pub magnitudes: Vec<Vec<f64>>,
    pub env: Environment,
}

impl Problem {
    /// Assemble from one or two datasets; all must agree on frequency.
    pub fn from_datasets(datasets: &[&FieldDataset], ground: bool) -> Result<Self> {
        if datasets.is_empty() || datasets.len() > 2 {
            return Err(Error::Config(format!(
                "expected one or two datasets, got {}",
                datasets.len()
            )));
        }
        let f0 = datasets[0].frequency_hz;
        for d in datasets {
            if (d.frequency_hz - f0).abs() > 1e-6 * f0 {
                return Err(Error::Config(format!(
                    "datasets disagree on frequency: {} vs {}",
                    d.frequency_hz, f0
                )));
            }
        }
        Ok(Self {
            surfaces: datasets.iter().map(|d| d.surface.clone()).collect(),
            magnitudes: datasets.iter().map(|d| d.row_magnitudes()).collect(),
            env: Environment::new(ground, f0)?,
        })
    }

    pub fn is_single_surface(&self) -> bool {
        self.surfaces.len() == 1
    }
}

/// Run the inner solver for a fixed layout.
pub fn solve_layout(
    layout: &[(DipoleType, Vector3<f64>)],
    problem: &Problem,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    let t1 = build_transfer_matrix(layout, &problem.surfaces[0], &problem.env)?;
    if problem.is_single_surface() {
        back_and_forth_single(&t1, &problem.magnitudes[0], cfg)
    } else {
        let t2 = build_transfer_matrix(layout, &problem.surfaces[1], &problem.env)?;
        back_and_forth_two(&t1, &t2, &problem.magnitudes[0], &problem.magnitudes[1], cfg)
    }
}

/// Fitness of one individual: the solver's final RE, or the penalty value
/// when the layout cannot be solved. Deterministic per (individual,
/// problem, config).
pub fn evaluate_individual(ind: &Individual, problem: &Problem, cfg: &SolverConfig) -> f64 {
    match solve_layout(&ind.layout(), problem, cfg) {
        Ok(fit) if fit.re.is_finite() => fit.re,
        _ => PENALTY_FITNESS,
    }
}

fn sample_coord(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..=range[1])
    }
}

fn random_gene(rng: &mut ChaCha8Rng, bounds: &SearchBounds) -> Gene {
    let kind = bounds.kinds[rng.gen_range(0..bounds.kinds.len())];
    Gene {
        kind,
        position: Vector3::new(
            sample_coord(rng, bounds.x),
            sample_coord(rng, bounds.y),
            sample_coord(rng, bounds.z),
        ),
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller from two uniforms
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Per-gene Gaussian mutation of coordinates (clamped to the bounds) and
/// uniform resampling of kinds. Returns whether anything changed.
fn mutate_genes(
    genes: &mut [Gene],
    rng: &mut ChaCha8Rng,
    bounds: &SearchBounds,
    ga: &GAConfig,
    sigma_scale: f64,
) -> bool {
    let mut changed = false;
    for gene in genes.iter_mut() {
        if rng.gen_bool(ga.mutation_rate) {
            let new_kind = bounds.kinds[rng.gen_range(0..bounds.kinds.len())];
            if new_kind != gene.kind {
                changed = true;
            }
            gene.kind = new_kind;
        }
        for (axis, range) in [(0usize, bounds.x), (1, bounds.y), (2, bounds.z)] {
            if rng.gen_bool(ga.mutation_rate) {
                let sigma = ga.mutation_sigma_frac * (range[1] - range[0]) * sigma_scale;
                if sigma > 0.0 {
                    let v = (gene.position[axis] + sigma * gaussian(rng))
                        .clamp(range[0], range[1]);
                    if v != gene.position[axis] {
                        changed = true;
                    }
                    gene.position[axis] = v;
                }
            }
        }
    }
    changed
}

/// Uniform crossover over whole per-dipole gene blocks.
fn crossover_genes(a: &[Gene], b: &[Gene], rng: &mut ChaCha8Rng) -> Vec<Gene> {
    a.iter()
        .zip(b)
        .map(|(ga, gb)| if rng.gen_bool(0.5) { *ga } else { *gb })
        .collect()
}

/// Index of the fittest member; ties go to the lower index.
fn best_index(pop: &[Individual]) -> usize {
    let mut best = 0;
    for (i, ind) in pop.iter().enumerate().skip(1) {
        if ind.fitness.unwrap() < pop[best].fitness.unwrap() {
            best = i;
        }
    }
    best
}

/// Tournament selection; ties go to the lower population index.
fn select<'a>(pop: &'a [Individual], rng: &mut ChaCha8Rng, size: usize) -> &'a Individual {
    let mut winner = rng.gen_range(0..pop.len());
    for _ in 1..size {
        let challenger = rng.gen_range(0..pop.len());
        let (cf, wf) = (
            pop[challenger].fitness.unwrap(),
            pop[winner].fitness.unwrap(),
        );
        if cf < wf || (cf == wf && challenger < winner) {
            winner = challenger;
        }
    }
    &pop[winner]
}

fn evaluate_population(pop: &mut [Individual], problem: &Problem, cfg: &SolverConfig) {
    pop.par_iter_mut().for_each(|ind| {
        if ind.fitness.is_none() {
            ind.fitness = Some(evaluate_individual(ind, problem, cfg));
        }
    });
}

/// Result of one fixed-count GA run.
#[derive(Debug, Clone)]
pub struct GaOutcome {
    /// Best individual over all generations, with its solver fit attached.
    pub best: Individual,
    /// Best-so-far fitness per generation (non-increasing).
    pub best_history: Vec<f64>,
}

/// Search kinds and positions for `n_dipoles` dipoles. Reproducible per
/// seed; stops at `max_generations` or after `stall_generations` without a
/// best-fitness improvement above [`STALL_IMPROVEMENT`].
pub fn ga_run(
    n_dipoles: usize,
    bounds: &SearchBounds,
    ga: &GAConfig,
    problem: &Problem,
    solver: &SolverConfig,
) -> Result<GaOutcome> {
    ga_run_seeded(n_dipoles, bounds, ga, problem, solver, None)
}

/// [`ga_run`] with an optional warm start: when a previous layout of
/// `n_dipoles − 1` genes is given, every second initial individual (and
/// every second immigrant) keeps it and adds one random dipole, so the
/// search for count N concentrates on the newly added slot while fully
/// random individuals keep exploring the whole space.
pub fn ga_run_seeded(
    n_dipoles: usize,
    bounds: &SearchBounds,
    ga: &GAConfig,
    problem: &Problem,
    solver: &SolverConfig,
    warm_start: Option<&[Gene]>,
) -> Result<GaOutcome> {
    if n_dipoles == 0 {
        return Err(Error::Config("dipole count must be at least 1".into()));
    }
    bounds.validate()?;
    ga.validate()?;
    solver.validate()?;
    if let Some(w) = warm_start {
        if w.len() + 1 != n_dipoles {
            return Err(Error::Config(format!(
                "warm start has {} genes, expected {}",
                w.len(),
                n_dipoles - 1
            )));
        }
    }

    let mut master = ChaCha8Rng::seed_from_u64(ga.seed);
    let mut global_best: Option<Individual> = None;
    let mut best_history = Vec::new();
    for restart in 0..ga.restarts {
        let restart_seed = master.gen::<u64>();
        let (restart_best, restart_history) = ga_single_run(
            n_dipoles,
            bounds,
            ga,
            problem,
            solver,
            warm_start,
            restart_seed,
        );
        log::info!(
            "GA n={n_dipoles} restart {restart}: best RE {:.6e}",
            restart_best.fitness.unwrap()
        );
        let prior = global_best
            .as_ref()
            .map(|b| b.fitness.unwrap())
            .unwrap_or(f64::INFINITY);
        for f in restart_history {
            best_history.push(f.min(prior));
        }
        if restart_best.fitness.unwrap() < prior {
            global_best = Some(restart_best);
        }
    }

    let mut best = global_best.expect("at least one restart ran");
    // attach the solver fit of the returned layout
    best.fit = solve_layout(&best.layout(), problem, solver).ok();
    Ok(GaOutcome { best, best_history })
}

fn warm_or_random(
    rng: &mut ChaCha8Rng,
    bounds: &SearchBounds,
    n_dipoles: usize,
    warm_start: Option<&[Gene]>,
    take_warm: bool,
) -> Vec<Gene> {
    match warm_start {
        Some(core) if take_warm => {
            let mut genes = core.to_vec();
            genes.push(random_gene(rng, bounds));
            genes
        }
        _ => (0..n_dipoles).map(|_| random_gene(rng, bounds)).collect(),
    }
}

fn ga_single_run(
    n_dipoles: usize,
    bounds: &SearchBounds,
    ga: &GAConfig,
    problem: &Problem,
    solver: &SolverConfig,
    warm_start: Option<&[Gene]>,
    seed: u64,
) -> (Individual, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pop: Vec<Individual> = (0..ga.population)
        .map(|i| Individual {
            genes: warm_or_random(&mut rng, bounds, n_dipoles, warm_start, i % 2 == 1),
            fitness: None,
            fit: None,
        })
        .collect();
    evaluate_population(&mut pop, problem, solver);

    let mut best = pop[best_index(&pop)].clone();
    let mut best_history = vec![best.fitness.unwrap()];
    let mut stall = 0usize;

    for gen in 2..=ga.max_generations {
        let sigma_scale = (1.0
            - ga.mutation_shrink * (gen - 1) as f64 / ga.max_generations as f64)
            .max(SIGMA_FLOOR);

        // sort a copy of the indices by (fitness, index) for elitism
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| {
            pop[a]
                .fitness
                .unwrap()
                .partial_cmp(&pop[b].fitness.unwrap())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });

        let mut next: Vec<Individual> = order[..ga.elite_count]
            .iter()
            .map(|&i| pop[i].clone())
            .collect();
        for j in 0..ga.immigrants {
            next.push(Individual {
                genes: warm_or_random(&mut rng, bounds, n_dipoles, warm_start, j % 2 == 0),
                fitness: None,
                fit: None,
            });
        }
        while next.len() < ga.population {
            let parent = select(&pop, &mut rng, ga.tournament_size);
            let (mut genes, mut changed) = if rng.gen_bool(ga.crossover_rate) {
                let other = select(&pop, &mut rng, ga.tournament_size);
                let child = crossover_genes(&parent.genes, &other.genes, &mut rng);
                let same = child == parent.genes;
                (child, !same)
            } else {
                (parent.genes.clone(), false)
            };
            changed |= mutate_genes(&mut genes, &mut rng, bounds, ga, sigma_scale);
            next.push(Individual {
                fitness: if changed { None } else { parent.fitness },
                fit: None,
                genes,
            });
        }
        pop = next;
        evaluate_population(&mut pop, problem, solver);

        let gen_best = &pop[best_index(&pop)];
        if best.fitness.unwrap() - gen_best.fitness.unwrap() > STALL_IMPROVEMENT {
            best = gen_best.clone();
            stall = 0;
        } else {
            stall += 1;
        }
        best_history.push(best.fitness.unwrap());
        log::info!(
            "GA n={} generation {}: best RE {:.6e}",
            n_dipoles,
            gen,
            best.fitness.unwrap()
        );
        if stall >= ga.stall_generations {
            break;
        }
    }
    (best, best_history)
}

/// Full extraction: dipole counts, kinds, positions and moments.
#[derive(Debug, Clone)]
pub struct ExtractionResult {
    pub dipoles: Vec<Dipole>,
    pub re: f64,
    pub re1: f64,
    pub re2: Option<f64>,
    /// (dipole count, best RE) for every count that was searched.
    pub n_history: Vec<(usize, f64)>,
    /// Per-count best-RE curve over GA generations.
    pub generation_history: Vec<Vec<f64>>,
    pub seed: u64,
    /// True when the count loop hit `max_dipoles` without the μ rule firing.
    pub capped: bool,
    pub warnings: Vec<String>,
    /// Solver fit of the selected layout.
    pub fit: FitResult,
}

/// Count-outer-loop extraction. Starting from the N=0 baseline RE of 1
/// (the zero-source prediction), dipole counts are searched in turn; once
/// adding a dipole improves RE by μ or less, the previous (smaller) set is
/// returned. Hitting `max_dipoles` first returns that result with a cap
/// warning.
pub fn extract_auto(
    bounds: &SearchBounds,
    ga: &GAConfig,
    solver: &SolverConfig,
    problem: &Problem,
    mu: f64,
    max_dipoles: usize,
) -> Result<ExtractionResult> {
    if mu.is_nan() || mu <= 0.0 {
        return Err(Error::Config(format!("mu must be positive, got {mu}")));
    }
    if max_dipoles < 1 {
        return Err(Error::Config("max_dipoles must be at least 1".into()));
    }
    bounds.validate()?;
    ga.validate()?;
    solver.validate()?;

    let mut master = ChaCha8Rng::seed_from_u64(ga.seed);
    let mut n_history = Vec::new();
    let mut generation_history = Vec::new();
    let mut warnings = Vec::new();
    let mut prev: Option<GaOutcome> = None;
    let mut prev_re = 1.0; // N = 0 baseline: a zero prediction has RE exactly 1
    let mut selected: Option<GaOutcome> = None;
    let mut capped = false;

    for n in 1..=max_dipoles {
        let sub_seed = master.gen::<u64>();
        let ga_n = GAConfig {
            seed: sub_seed,
            ..*ga
        };
        let warm = prev.as_ref().map(|p| p.best.genes.as_slice());
        let outcome = ga_run_seeded(n, bounds, &ga_n, problem, solver, warm)?;
        let re_n = outcome.best.fitness.unwrap();
        log::info!("extract: n={n} best RE {re_n:.6e} (previous {prev_re:.6e})");
        n_history.push((n, re_n));
        generation_history.push(outcome.best_history.clone());

        if prev_re - re_n <= mu {
            match prev.take() {
                Some(p) => selected = Some(p),
                None => {
                    warnings.push(format!(
                        "one dipole improves RE over the zero-source baseline by only {:.3e} (≤ μ = {mu}); returning it anyway",
                        1.0 - re_n
                    ));
                    selected = Some(outcome);
                }
            }
            break;
        }
        if re_n <= mu {
            // no larger count can improve RE by more than μ from here, so
            // the next run's stop is already decided
            selected = Some(outcome);
            break;
        }
        prev_re = re_n;
        prev = Some(outcome);
    }

    let selected = match selected {
        Some(s) => s,
        None => {
            capped = true;
            warnings.push(format!(
                "stopped at the max_dipoles cap ({max_dipoles}) with RE still improving by more than μ"
            ));
            prev.expect("at least one count was searched")
        }
    };

    let fit = selected
        .best
        .fit
        .clone()
        .ok_or_else(|| Error::Config("selected layout has no solver fit".into()))?;
    let dipoles: Vec<Dipole> = selected
        .best
        .genes
        .iter()
        .zip(&fit.moments)
        .map(|(g, &m)| Dipole::new(g.kind, g.position, m))
        .collect::<Result<_>>()?;

    Ok(ExtractionResult {
        dipoles,
        re: fit.re,
        re1: fit.re1,
        re2: fit.re2,
        n_history,
        generation_history,
        seed: ga.seed,
        capped,
        warnings,
        fit,
    })
}

fn default_mu() -> f64 {
    0.01
}

fn default_max_dipoles() -> usize {
    10
}

/// Extraction run configuration, the JSON the CLI consumes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// One (single-surface path) or two dataset CSV paths.
    pub datasets: Vec<PathBuf>,
    #[serde(default)]
    pub ground: bool,
    /// Optional cross-check; must match the dataset headers when present.
    #[serde(default)]
    pub frequency_hz: Option<f64>,
    pub bounds: SearchBounds,
    #[serde(default)]
    pub ga: GAConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_max_dipoles")]
    pub max_dipoles: usize,
}

/// JSON run report of an extraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub selected_n: usize,
    pub re: f64,
    pub re1: f64,
    pub re2: Option<f64>,
    pub converged_by_mu: bool,
    pub n_history: Vec<CountEntry>,
    pub generation_history: Vec<Vec<f64>>,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub dipoles: Vec<DipoleRecord>,
    pub fit: FitReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountEntry {
    pub n: usize,
    pub re: f64,
}

impl ExtractionResult {
    pub fn report(&self) -> RunReport {
        RunReport {
            selected_n: self.dipoles.len(),
            re: self.re,
            re1: self.re1,
            re2: self.re2,
            converged_by_mu: !self.capped,
            n_history: self
                .n_history
                .iter()
                .map(|&(n, re)| CountEntry { n, re })
                .collect(),
            generation_history: self.generation_history.clone(),
            seed: self.seed,
            warnings: self.warnings.clone(),
            dipoles: self.dipoles.iter().map(DipoleRecord::from_dipole).collect(),
            fit: self.fit.report(),
        }
    }
}
