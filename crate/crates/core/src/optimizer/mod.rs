//! Population-based three-objective dwell-time optimizer.
//!
//! Each generation clusters the population in normalized objective space,
//! picks parents by binary tournament within a cluster (occasionally taking
//! the second parent from the archive), applies uniform crossover and
//! self-adaptive Gaussian mutation, and repairs the child onto the box and
//! contribution constraints. Survivors are chosen (μ+λ) by non-domination
//! rank and crowding distance. Every evaluated child is offered to an elitist
//! archive; the contiguity constraint is computed only for children the
//! archive could accept.
//!
//! The run is a pure function of the case, settings and seed: children are
//! generated sequentially from one RNG, evaluated in parallel, and merged in
//! index order.

mod archive;
mod constraints;
mod variation;

pub use archive::{constrained_dominates_values, crowding_distance, Archive, Entry};
pub use constraints::{
    contribution_report, needle_share, CatheterContribution, Constraints, ContributionReport,
    FractionBounds, GroupContributions, GroupShare, MaxTimeOverride, RepairReport,
};
pub use variation::{kmeans, nondominated_ranks, select_survivors};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::case::{AimCategory, CatheterGroup, Metric, PatientCase, Protocol};
use crate::dose::{ContiguitySettings, DoseEngine};
use crate::dv::{DvValue, EvalContext, PlanEvaluator, PointCount};
use crate::objectives::{default_plan, score_adaptive, ObjectiveVector, DEFAULT_EPSILON};
use crate::{par, Error, Result, SCHEMA_VERSION};

/// Default number of evaluations of an initial run.
pub const DEFAULT_EVALUATION_BUDGET: usize = 6_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationSettings {
    pub seed: u64,
    pub evaluation_budget: usize,
    /// Budget of a warm-started run; a quarter of `evaluation_budget` when unset.
    pub reoptimization_budget: Option<usize>,
    pub population_size: usize,
    pub single_needle_fraction: FractionBounds,
    pub total_needle_fraction: FractionBounds,
    /// Bounds on the combined share of both ovoids.
    pub ovoid_fraction: FractionBounds,
    pub max_time_overrides: Vec<MaxTimeOverride>,
    /// Replaces the case protocol for this run.
    pub protocol: Option<Protocol>,
    pub archive_capacity: usize,
    pub clusters: usize,
    /// Probability that the second parent is drawn from the archive.
    pub archive_parent_probability: f64,
    pub epsilon: f64,
    pub contiguity: ContiguitySettings,
    pub enforce_contiguity: bool,
}

impl Default for OptimizationSettings {
    fn default() -> Self {
        OptimizationSettings {
            seed: 1,
            evaluation_budget: DEFAULT_EVALUATION_BUDGET,
            reoptimization_budget: None,
            population_size: 120,
            single_needle_fraction: FractionBounds::at_most(0.20),
            total_needle_fraction: FractionBounds::at_most(0.40),
            ovoid_fraction: FractionBounds::UNCONSTRAINED,
            max_time_overrides: Vec::new(),
            protocol: None,
            archive_capacity: 200,
            clusters: 5,
            archive_parent_probability: 0.1,
            epsilon: DEFAULT_EPSILON,
            contiguity: ContiguitySettings::default(),
            enforce_contiguity: true,
        }
    }
}

impl OptimizationSettings {
    pub fn validate(&self) -> Result<()> {
        self.single_needle_fraction.validate("single_needle_fraction")?;
        self.total_needle_fraction.validate("total_needle_fraction")?;
        self.ovoid_fraction.validate("ovoid_fraction")?;
        if self.population_size < 4 {
            return Err(Error::validation("population_size", "must be at least 4"));
        }
        if self.evaluation_budget == 0 {
            return Err(Error::validation("evaluation_budget", "must be positive"));
        }
        if self.archive_capacity == 0 {
            return Err(Error::validation("archive_capacity", "must be positive"));
        }
        if self.clusters == 0 {
            return Err(Error::validation("clusters", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.archive_parent_probability) {
            return Err(Error::validation("archive_parent_probability", "must be in [0, 1]"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::validation("epsilon", "must be in (0, 1)"));
        }
        let c = &self.contiguity;
        if !(c.level_fraction > 0.0 && c.min_component_cm3 >= 0.0 && c.spacing_mm > 0.0 && c.margin_mm >= 0.0) {
            return Err(Error::validation("contiguity", "parameters must be positive"));
        }
        if let Some(p) = &self.protocol {
            p.validate()?;
        }
        Ok(())
    }

    pub fn effective_reoptimization_budget(&self) -> usize {
        self.reoptimization_budget
            .unwrap_or(self.evaluation_budget / 4)
            .max(self.population_size)
    }
}

/// Plan identifier `run-index`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PlanId {
    pub run: u32,
    pub index: u32,
}

impl fmt::Display for PlanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.run, self.index)
    }
}

impl FromStr for PlanId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::validation("plan_id", format!("'{s}' is not of the form run-index"));
        let (r, i) = s.split_once('-').ok_or_else(bad)?;
        Ok(PlanId {
            run: r.parse().map_err(|_| bad())?,
            index: i.parse().map_err(|_| bad())?,
        })
    }
}

impl TryFrom<String> for PlanId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PlanId> for String {
    fn from(id: PlanId) -> String {
        id.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    InitialRun,
    Reoptimized,
    ManualImport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub id: PlanId,
    pub dwell_times: Vec<f64>,
    pub objective: ObjectiveVector,
    pub dv_values: Vec<DvValue>,
    pub feasible: bool,
    pub contiguity_violation_cm3: f64,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSet {
    pub schema_version: u32,
    pub run_id: u32,
    pub provenance: Provenance,
    /// Run this set was warm-started from.
    pub parent_run: Option<u32>,
    pub settings: OptimizationSettings,
    pub evaluations: usize,
    /// False when no plan met the contiguity constraint; the plans are then
    /// the least-violating ones found.
    pub feasible_found: bool,
    pub plans: Vec<Plan>,
}

impl PlanSet {
    pub fn plan(&self, id: PlanId) -> Option<&Plan> {
        self.plans.iter().find(|p| p.id == id)
    }

    pub fn default_plan(&self) -> Result<PlanId> {
        default_plan(self.plans.iter().map(|p| (p.id, &p.objective)))
    }

    /// Weighted objective vectors of all plans.
    pub fn objective_points(&self) -> Vec<[f64; 3]> {
        self.plans.iter().map(|p| p.objective.weighted()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortKey {
    SparingToCoverage,
    NeedleContribution,
}

/// Plan ids in display order.
///
/// `SparingToCoverage` sorts by descending `lsi` (ties: ascending `lci`);
/// `NeedleContribution` by ascending needle time share. Remaining ties go to
/// the smaller id.
pub fn sort_plans(case: &PatientCase, plans: &[Plan], key: SortKey) -> Vec<PlanId> {
    let mut order: Vec<&Plan> = plans.iter().collect();
    match key {
        SortKey::SparingToCoverage => order.sort_by(|a, b| {
            b.objective
                .lsi
                .total_cmp(&a.objective.lsi)
                .then(a.objective.lci.total_cmp(&b.objective.lci))
                .then(a.id.cmp(&b.id))
        }),
        SortKey::NeedleContribution => {
            let share = |p: &Plan| needle_share(case, &p.dwell_times);
            order.sort_by(|a, b| share(a).total_cmp(&share(b)).then(a.id.cmp(&b.id)))
        }
    }
    order.into_iter().map(|p| p.id).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub evaluations: usize,
    pub budget: usize,
    pub generation: usize,
    pub archive_size: usize,
}

/// Per-run options that do not affect the result.
#[derive(Clone, Copy, Default)]
pub struct RunControl<'a> {
    /// Run id used in plan ids; defaults to 1 for initial runs and to the
    /// previous run + 1 for warm starts.
    pub run_id: Option<u32>,
    /// Record every archive candidate for auditing.
    pub audit: bool,
    pub progress: Option<&'a (dyn Fn(&Progress) + Sync)>,
}

/// One candidate offered to the archive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub values: [f64; 3],
    /// `None` when the archive rejected the candidate without computing it.
    pub violation_cm3: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub plan_set: PlanSet,
    pub audit: Option<Vec<AuditRecord>>,
}

pub fn optimize(engine: &DoseEngine, case: &PatientCase, settings: &OptimizationSettings) -> Result<PlanSet> {
    Ok(optimize_with(engine, case, settings, &RunControl::default())?.plan_set)
}

pub fn optimize_with(
    engine: &DoseEngine,
    case: &PatientCase,
    settings: &OptimizationSettings,
    control: &RunControl,
) -> Result<RunOutput> {
    settings.validate()?;
    if settings.evaluation_budget < settings.population_size {
        return Err(Error::contract(format!(
            "evaluation budget {} is smaller than the population {}",
            settings.evaluation_budget, settings.population_size
        )));
    }
    let job = Job {
        engine,
        settings,
        budget: settings.evaluation_budget,
        run_id: control.run_id.unwrap_or(1),
        provenance: Provenance::InitialRun,
        parent_run: None,
    };
    job.run(case, Vec::new(), control)
}

/// Warm-started run: the previous plans, repaired onto the new constraints,
/// seed the population and are kept in the archive unless dominated.
pub fn reoptimize(
    engine: &DoseEngine,
    case: &PatientCase,
    previous: &PlanSet,
    settings: &OptimizationSettings,
) -> Result<PlanSet> {
    Ok(reoptimize_with(engine, case, previous, settings, &RunControl::default())?.plan_set)
}

pub fn reoptimize_with(
    engine: &DoseEngine,
    case: &PatientCase,
    previous: &PlanSet,
    settings: &OptimizationSettings,
    control: &RunControl,
) -> Result<RunOutput> {
    settings.validate()?;
    if previous.plans.is_empty() {
        return Err(Error::contract("previous plan set is empty"));
    }
    let seeds: Vec<Vec<f64>> = previous.plans.iter().map(|p| p.dwell_times.clone()).collect();
    if seeds.iter().any(|s| s.len() != case.dwell_count()) {
        return Err(Error::contract("previous plans do not match the case"));
    }
    let job = Job {
        engine,
        settings,
        budget: settings.effective_reoptimization_budget().max(seeds.len()),
        run_id: control.run_id.unwrap_or(previous.run_id + 1),
        provenance: Provenance::Reoptimized,
        parent_run: Some(previous.run_id),
    };
    job.run(case, seeds, control)
}

/// Evaluates a given dwell-time vector as a plan under `settings`.
pub fn evaluate_candidate(
    engine: &DoseEngine,
    case: &PatientCase,
    settings: &OptimizationSettings,
    times: &[f64],
    id: PlanId,
    provenance: Provenance,
) -> Result<Plan> {
    let case = with_protocol(case, settings)?;
    DoseEngine::check_times(&case, times)?;
    let ctx = EvalContext::for_case(&case, PointCount::Optimization)?;
    let dv = crate::dv::evaluate_plan(engine, &case, times, &ctx)?;
    let (objective, _) = score_adaptive(&dv, &case.protocol, settings.epsilon)?;
    let violation = if settings.enforce_contiguity {
        engine
            .check_contiguity(&case, times, &settings.contiguity)?
            .violation_cm3
    } else {
        0.0
    };
    Ok(Plan {
        id,
        dwell_times: times.to_vec(),
        objective,
        dv_values: dv,
        feasible: violation <= 0.0,
        contiguity_violation_cm3: violation,
        provenance,
    })
}

fn with_protocol(case: &PatientCase, settings: &OptimizationSettings) -> Result<PatientCase> {
    match &settings.protocol {
        None => Ok(case.clone()),
        Some(p) => {
            let mut c = case.clone();
            c.protocol = p.clone();
            c.validate()?;
            Ok(c)
        }
    }
}

#[derive(Clone, Debug)]
struct Individual {
    times: Vec<f64>,
    sigma: Vec<f64>,
    values: [f64; 3],
    violation: Option<f64>,
}

#[derive(Clone, Debug)]
struct Candidate {
    times: Vec<f64>,
    sigma: Vec<f64>,
    dv: Vec<DvValue>,
    objective: ObjectiveVector,
}

struct Job<'a> {
    engine: &'a DoseEngine,
    settings: &'a OptimizationSettings,
    budget: usize,
    run_id: u32,
    provenance: Provenance,
    parent_run: Option<u32>,
}

struct State<'a> {
    case: &'a PatientCase,
    evaluator: PlanEvaluator<'a>,
    constraints: Constraints,
    usable: Vec<usize>,
    archive: Archive<Candidate>,
    audit: Option<Vec<AuditRecord>>,
    evaluations: usize,
}

impl Job<'_> {
    fn run(&self, case: &PatientCase, seeds: Vec<Vec<f64>>, control: &RunControl) -> Result<RunOutput> {
        let s = self.settings;
        let case = with_protocol(case, s)?;
        let max_group = [AimCategory::Coverage, AimCategory::Sparing, AimCategory::Added]
            .iter()
            .map(|&c| case.protocol.aims_in(c).count())
            .max()
            .unwrap_or(1);
        if s.epsilon * (max_group as f64 - 1.0) >= 1.0 {
            return Err(Error::validation("epsilon", "too large for the number of aims per objective"));
        }
        let constraints = Constraints::new(&case, s)?;
        let usable = constraints.usable_dwells();
        let ctx = EvalContext::for_case(&case, PointCount::Optimization)?;
        let evaluator = PlanEvaluator::new(self.engine, &case, ctx, &usable)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);

        let patterns = loading_patterns(&case, &usable);
        let scales = patterns
            .iter()
            .map(|p| calibrate(&evaluator, &case, p))
            .collect::<Result<Vec<f64>>>()?;
        let scale = scales[0];
        let max_usable = usable.iter().map(|&j| constraints.max_time_s[j]).fold(0.0, f64::max);
        let sigma_bounds = (1e-3 * max_usable, 0.5 * max_usable);
        let sigma0 = (0.3 * scale).clamp(sigma_bounds.0, sigma_bounds.1);

        let mut st = State {
            case: &case,
            evaluator,
            constraints,
            usable,
            archive: Archive::new(s.archive_capacity),
            audit: control.audit.then(Vec::new),
            evaluations: 0,
        };

        // Initial population: warm-start seeds, calibrated uniform loadings,
        // then random plans around the first loading.
        let n_genes = st.usable.len();
        let mut initial: Vec<(Vec<f64>, bool)> = Vec::new();
        for seed in &seeds {
            let t = st.constraints.repair(seed);
            if !initial.iter().any(|(x, _)| *x == t) {
                initial.push((t, true));
            }
        }
        let target = s.population_size.max(initial.len()).min(self.budget);
        for (p, &sc) in patterns.iter().zip(&scales) {
            if initial.len() < target {
                let mut t = vec![0.0; case.dwell_count()];
                for &j in p {
                    t[j] = sc;
                }
                initial.push((st.constraints.repair(&t), false));
            }
        }
        while initial.len() < target {
            let factor = rng.random_range(-0.5f64..0.5).exp();
            let mut t = vec![0.0; case.dwell_count()];
            for &j in &st.usable {
                if rng.random::<f64>() >= 0.1 {
                    t[j] = scale * factor * 2.0 * rng.random::<f64>();
                }
            }
            initial.push((st.constraints.repair(&t), false));
        }
        initial.truncate(self.budget);
        let sigmas = vec![vec![sigma0; n_genes]; initial.len()];
        let pinned: Vec<bool> = initial.iter().map(|(_, p)| *p).collect();
        let times: Vec<Vec<f64>> = initial.into_iter().map(|(t, _)| t).collect();
        let mut population = self.evaluate_batch(&mut st, times, sigmas, &pinned)?;
        let mut generation = 0;
        self.report(control, &st, generation);

        while st.evaluations < self.budget {
            generation += 1;
            let lambda = s.population_size.min(self.budget - st.evaluations);
            let (times, sigmas) = self.offspring(&st, &population, lambda, sigma_bounds, &mut rng);
            let children = self.evaluate_batch(&mut st, times, sigmas, &vec![false; lambda])?;
            population.extend(children);
            let values: Vec<[f64; 3]> = population.iter().map(|p| p.values).collect();
            let viol: Vec<f64> = population.iter().map(|p| p.violation.unwrap_or(0.0)).collect();
            let keep = select_survivors(&values, &viol, s.population_size);
            population = keep.into_iter().map(|i| population[i].clone()).collect();
            self.report(control, &st, generation);
        }

        let evaluations = st.evaluations;
        let audit = st.audit.take();
        let mut entries = st.archive.into_entries();
        entries.sort_by(|a, b| {
            b.item
                .objective
                .lsi
                .total_cmp(&a.item.objective.lsi)
                .then(a.item.objective.lci.total_cmp(&b.item.objective.lci))
        });
        let feasible_found = entries.iter().any(|e| e.violation <= 0.0);
        let plans = entries
            .into_iter()
            .enumerate()
            .map(|(i, e)| Plan {
                id: PlanId {
                    run: self.run_id,
                    index: i as u32,
                },
                dwell_times: e.item.times,
                objective: e.item.objective,
                dv_values: e.item.dv,
                feasible: e.violation <= 0.0,
                contiguity_violation_cm3: e.violation,
                provenance: self.provenance,
            })
            .collect();
        Ok(RunOutput {
            plan_set: PlanSet {
                schema_version: SCHEMA_VERSION,
                run_id: self.run_id,
                provenance: self.provenance,
                parent_run: self.parent_run,
                settings: s.clone(),
                evaluations,
                feasible_found,
                plans,
            },
            audit,
        })
    }

    fn report(&self, control: &RunControl, st: &State, generation: usize) {
        if let Some(cb) = control.progress {
            cb(&Progress {
                evaluations: st.evaluations,
                budget: self.budget,
                generation,
                archive_size: st.archive.len(),
            });
        }
    }

    /// Evaluates plans in parallel, then offers them to the archive in order.
    fn evaluate_batch(
        &self,
        st: &mut State,
        times: Vec<Vec<f64>>,
        sigmas: Vec<Vec<f64>>,
        pinned: &[bool],
    ) -> Result<Vec<Individual>> {
        let s = self.settings;
        let evaluated: Vec<Result<(Vec<DvValue>, ObjectiveVector)>> = par::map(self.engine.parallelism, &times, |t| {
            let dv = st.evaluator.evaluate(t)?;
            let (o, _) = score_adaptive(&dv, &st.case.protocol, s.epsilon)?;
            Ok((dv, o))
        });
        st.evaluations += times.len();
        let mut out = Vec::with_capacity(times.len());
        for (((t, sigma), r), &pin) in times.into_iter().zip(sigmas).zip(evaluated).zip(pinned) {
            let (dv, objective) = r?;
            let values = objective.weighted();
            let violation = if st.archive.screens_out(&values) {
                None
            } else if s.enforce_contiguity {
                Some(
                    self.engine
                        .check_contiguity(st.case, &t, &s.contiguity)?
                        .violation_cm3,
                )
            } else {
                Some(0.0)
            };
            if let Some(a) = st.audit.as_mut() {
                a.push(AuditRecord {
                    values,
                    violation_cm3: violation,
                });
            }
            if let Some(v) = violation {
                st.archive.insert(
                    values,
                    v,
                    pin,
                    Candidate {
                        times: t.clone(),
                        sigma: sigma.clone(),
                        dv,
                        objective,
                    },
                );
            }
            out.push(Individual {
                times: t,
                sigma,
                values,
                violation,
            });
        }
        Ok(out)
    }

    fn offspring(
        &self,
        st: &State,
        population: &[Individual],
        lambda: usize,
        sigma_bounds: (f64, f64),
        rng: &mut ChaCha8Rng,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let s = self.settings;
        let values: Vec<[f64; 3]> = population.iter().map(|p| p.values).collect();
        let viol: Vec<f64> = population.iter().map(|p| p.violation.unwrap_or(0.0)).collect();
        let (rank, crowd) = variation::rank_and_crowding(&values, &viol);
        let clusters = kmeans(&values, s.clusters, rng);
        let n_clusters = clusters.iter().copied().max().map_or(0, |m| m + 1);
        let members: Vec<Vec<usize>> = (0..n_clusters)
            .map(|c| (0..population.len()).filter(|&i| clusters[i] == c).collect())
            .collect();
        let better = |a: usize, b: usize| {
            let ord = rank[a].cmp(&rank[b]).then(crowd[b].total_cmp(&crowd[a])).then(a.cmp(&b));
            if ord.is_le() {
                a
            } else {
                b
            }
        };
        let genes = |t: &[f64]| -> Vec<f64> { st.usable.iter().map(|&j| t[j]).collect() };

        let mut all_times = Vec::with_capacity(lambda);
        let mut all_sigmas = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let r1 = rng.random_range(0..population.len());
            let pool = &members[clusters[r1]];
            let tournament = |rng: &mut ChaCha8Rng, first: usize| {
                let other = pool[rng.random_range(0..pool.len())];
                better(first, other)
            };
            let p1 = tournament(rng, r1);
            let (x2, s2) = if !st.archive.is_empty() && rng.random::<f64>() < s.archive_parent_probability {
                let e = &st.archive.entries()[rng.random_range(0..st.archive.len())];
                (genes(&e.item.times), e.item.sigma.clone())
            } else {
                let start = pool[rng.random_range(0..pool.len())];
                let p2 = tournament(rng, start);
                (genes(&population[p2].times), population[p2].sigma.clone())
            };
            let x1 = genes(&population[p1].times);
            let (mut x, mut sigma) = variation::uniform_crossover((&x1, &population[p1].sigma), (&x2, &s2), rng);
            if rng.random::<f64>() < 0.2 {
                let n: f64 = StandardNormal.sample(rng);
                let f = (0.1 * n).exp();
                x.iter_mut().for_each(|v| *v *= f);
            }
            variation::mutate(&mut x, &mut sigma, sigma_bounds, rng);
            let mut t = vec![0.0; st.case.dwell_count()];
            for (g, &j) in st.usable.iter().enumerate() {
                t[j] = x[g];
            }
            all_times.push(st.constraints.repair(&t));
            all_sigmas.push(sigma);
        }
        (all_times, all_sigmas)
    }
}

/// Uniform loading patterns used to start a run: every usable dwell, the
/// applicator without needles, and the intrauterine tube alone.
fn loading_patterns(case: &PatientCase, usable: &[usize]) -> Vec<Vec<usize>> {
    let groups = case.dwell_groups();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for keep in [
        &[CatheterGroup::OvoidLeft, CatheterGroup::OvoidRight, CatheterGroup::Intrauterine, CatheterGroup::Needles][..],
        &[CatheterGroup::OvoidLeft, CatheterGroup::OvoidRight, CatheterGroup::Intrauterine][..],
        &[CatheterGroup::Intrauterine][..],
    ] {
        let p: Vec<usize> = usable.iter().copied().filter(|&j| keep.contains(&groups[j])).collect();
        if !p.is_empty() && !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Uniform time on `pattern` that brings the first coverage dose aim to its
/// aim, from one evaluation of the unit plan (dose is linear in time).
fn calibrate(evaluator: &PlanEvaluator, case: &PatientCase, pattern: &[usize]) -> Result<f64> {
    let mut unit = vec![0.0; case.dwell_count()];
    for &j in pattern {
        unit[j] = 1.0;
    }
    let dv = evaluator.evaluate(&unit)?;
    let primary = case
        .protocol
        .aims_in(AimCategory::Coverage)
        .find(|(_, a)| matches!(a.metric, Metric::DoseToPercent(_) | Metric::DoseToVolume(_)))
        .map(|(i, _)| i);
    let scale = primary
        .and_then(|i| dv.iter().find(|r| r.aim_index == Some(i)))
        .and_then(|r| match r.aim_physical {
            Some(target) if r.physical > 0.0 && target > 0.0 => Some(target / r.physical),
            _ => None,
        })
        .unwrap_or(1.0);
    Ok(scale.max(case.dwell_mask.min_time_s))
}
