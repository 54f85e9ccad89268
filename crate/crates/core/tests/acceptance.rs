//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero when any fails.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use brachynav_core::case::{
    generate_phantom, AimCategory, CatheterKind, Direction, DoseAim, Metric, PatientCase, PhantomSpec,
    Protocol, Roi, RoiRole,
};
use brachynav_core::dose::{contiguity_verdict, label_components, DoseEngine, SourceModel, VoxelMask};
use brachynav_core::dv::{d_index, eqd2, evaluate_plan, point_sets, v_index, EvalContext, PointCount, VolumeSpec};
use brachynav_core::geometry::{Shape, Vec3};
use brachynav_core::metrics::{hypervolume, reference_point};
use brachynav_core::optimizer::{
    evaluate_candidate, optimize, optimize_with, reoptimize, MaxTimeOverride,
    OptimizationSettings, Plan, PlanId, PlanSet, Provenance, RunControl,
};
use brachynav_core::Parallelism;
use brachynav_service::export::{export_plan, import_plan, read_export, write_export};

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

fn engine(mode: Parallelism) -> DoseEngine {
    DoseEngine::new(SourceModel::default(), mode)
}

fn phantom(seed: u64, samples: usize) -> PatientCase {
    generate_phantom(&PhantomSpec {
        seed,
        samples_per_roi: samples,
        ..PhantomSpec::default()
    })
    .expect("phantom")
}

// ---------------------------------------------------------------------------
// DV indices against sort/count oracles

fn dv_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checks = 0;
    for case in 0..1000 {
        let n = if case < 10 { case + 1 } else { rng.random_range(1..=10_000) };
        let discrete = rng.random_bool(0.4);
        let doses: Vec<f64> = (0..n)
            .map(|_| {
                if discrete {
                    rng.random_range(0..40) as f64 * 0.25
                } else {
                    rng.random_range(0.0..20.0)
                }
            })
            .collect();
        let vol = rng.random_range(0.5..120.0);
        let mut sorted = doses.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let kth = |x: f64| sorted[((x.round() as usize).max(1)).min(n) - 1];

        let mut percents = vec![100.0, rng.random_range(0.001..1.0)];
        percents.extend((0..4).map(|_| rng.random_range(0.0..100.0f64).max(1e-6)));
        for v in percents {
            let got = ok(d_index(&doses, VolumeSpec::Percent(v), vol))?;
            let want = kth(v * n as f64 / 100.0);
            ensure(got.to_bits() == want.to_bits(), || {
                format!("D{v}% on N={n}: {got} != {want}")
            })?;
            checks += 1;
        }
        let mut volumes = vec![vol, vol * 1e-4];
        volumes.extend((0..4).map(|_| rng.random_range(0.0..vol).max(1e-9)));
        for v in volumes {
            let got = ok(d_index(&doses, VolumeSpec::Cm3(v), vol))?;
            let want = kth(v * n as f64 / vol);
            ensure(got.to_bits() == want.to_bits(), || {
                format!("D{v}cm3 on N={n}: {got} != {want}")
            })?;
            checks += 1;
        }
        let mut levels = vec![0.0, sorted[0], sorted[n - 1], sorted[n / 2], 25.0];
        levels.extend((0..3).map(|_| rng.random_range(0.0..21.0)));
        for d in levels {
            let count = sorted.iter().take_while(|&&x| x >= d).count();
            let want = vol * count as f64 / n as f64;
            let got = ok(v_index(&doses, d, vol))?;
            ensure(got.to_bits() == want.to_bits(), || format!("V{d}Gy on N={n}: {got} != {want}"))?;
            checks += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{checks} indices on 1000 inputs in {secs:.2} s"))
}

// ---------------------------------------------------------------------------
// EQD2 reference values

fn eqd2_values() -> Outcome {
    let one = ok(eqd2(2.0, 1, 10.0))?;
    ensure(one == 2.0, || format!("d=2,n=1 gives {one}"))?;
    let one_oar = ok(eqd2(2.0, 1, 3.0))?;
    ensure(one_oar == 2.0, || format!("d=2,n=1,ab=3 gives {one_oar}"))?;
    let bt = ok(eqd2(7.0, 4, 10.0))?;
    ensure((bt - 39.666_666_666_666_664).abs() <= 1e-9, || format!("d=7,n=4 gives {bt}"))?;
    let target = ok(eqd2(45.0 / 25.0, 25, 10.0))?;
    let oar = ok(eqd2(45.0 / 25.0, 25, 3.0))?;
    ensure((target - 44.25).abs() <= 1e-9, || format!("EBRT target {target}"))?;
    ensure((oar - 43.2).abs() <= 1e-9, || format!("EBRT OAR {oar}"))?;
    let ctx = ok(EvalContext::new(&Default::default(), PointCount::Optimization))?;
    ensure(
        (ctx.ebrt_eqd2_target_gy - 44.25).abs() <= 1e-9 && (ctx.ebrt_eqd2_oar_gy - 43.2).abs() <= 1e-9,
        || "default prescription EBRT offsets differ".into(),
    )?;
    Ok(format!("2.0, {bt:.4}, {target:.2}, {oar:.2}"))
}

// ---------------------------------------------------------------------------
// Archive against a brute-force constrained non-dominated filter

type Key = ([u64; 3], u64);

/// Feasible beats infeasible, smaller violation beats larger, and among
/// feasible points Pareto dominance decides (all objectives maximized).
fn beats(a: &[f64; 3], av: f64, b: &[f64; 3], bv: f64) -> bool {
    if av > 0.0 || bv > 0.0 {
        return av < bv;
    }
    (0..3).all(|k| a[k] >= b[k]) && (0..3).any(|k| a[k] > b[k])
}

fn key(values: &[f64; 3], violation: f64) -> Key {
    (values.map(f64::to_bits), violation.to_bits())
}

fn check_archive(seed: u64, runs: &mut Vec<(PatientCase, PlanSet)>) -> std::result::Result<f64, String> {
    let case = phantom(seed, 20_000);
    let settings = OptimizationSettings {
        seed,
        evaluation_budget: 2_000,
        archive_capacity: usize::MAX,
        ..OptimizationSettings::default()
    };
    let start = Instant::now();
    let out = ok(optimize_with(
        &engine(Parallelism::Parallel),
        &case,
        &settings,
        &RunControl {
            audit: true,
            ..RunControl::default()
        },
    ))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("seed {seed} took {secs:.1} s"))?;
    let plans = &out.plan_set.plans;
    let audit = out.audit.ok_or("no audit")?;
    ensure(audit.len() == out.plan_set.evaluations, || "audit misses candidates".into())?;

    let pts: Vec<([f64; 3], f64)> = plans
        .iter()
        .map(|p| (p.objective.weighted(), p.contiguity_violation_cm3))
        .collect();
    for (i, a) in pts.iter().enumerate() {
        for (j, b) in pts.iter().enumerate() {
            ensure(i == j || !beats(&a.0, a.1, &b.0, b.1), || {
                format!("seed {seed}: plan {i} dominates plan {j}")
            })?;
            ensure(i == j || a != b, || format!("seed {seed}: plans {i} and {j} coincide"))?;
        }
    }

    let cands: Vec<([f64; 3], f64)> = audit
        .iter()
        .map(|r| (r.values, r.violation_cm3.unwrap_or(f64::INFINITY)))
        .collect();
    let mut oracle: BTreeSet<Key> = BTreeSet::new();
    for (i, c) in cands.iter().enumerate() {
        let beaten = cands.iter().enumerate().any(|(j, o)| {
            j != i && beats(&o.0, o.1, &c.0, c.1)
        });
        if !beaten {
            oracle.insert(key(&c.0, c.1));
        }
    }
    let archive: BTreeSet<Key> = pts.iter().map(|p| key(&p.0, p.1)).collect();
    ensure(archive == oracle, || {
        format!(
            "seed {seed}: archive has {} plans, oracle {} ({} only in archive, {} only in oracle)",
            archive.len(),
            oracle.len(),
            archive.difference(&oracle).count(),
            oracle.difference(&archive).count()
        )
    })?;
    runs.push((case, out.plan_set));
    Ok(secs)
}

fn archive_correctness(runs: &mut Vec<(PatientCase, PlanSet)>) -> Outcome {
    let mut times = Vec::new();
    for seed in 1..=5 {
        times.push(format!("{:.1}", check_archive(seed, runs)?));
    }
    let sizes: Vec<String> = runs.iter().map(|(_, s)| s.plans.len().to_string()).collect();
    Ok(format!("seeds 1-5, archive sizes [{}], seconds [{}]", sizes.join(", "), times.join(", ")))
}

// ---------------------------------------------------------------------------
// Single dwell against the analytic inverse-square sweep

/// Volume of the intersection of a ball of radius `rho` at the origin with a
/// ball of radius `r` whose center is `l` away.
fn lens_volume(rho: f64, r: f64, l: f64) -> f64 {
    if rho <= l - r {
        return 0.0;
    }
    if rho >= l + r {
        return 4.0 / 3.0 * PI * r.powi(3);
    }
    PI * (r + rho - l).powi(2) * (l * l + 2.0 * l * rho - 3.0 * rho * rho + 2.0 * l * r + 6.0 * r * rho - 3.0 * r * r)
        / (12.0 * l)
}

fn one_dwell_oracle() -> Outcome {
    const R_TARGET: f64 = 15.0;
    const R_OAR: f64 = 12.0;
    const L_OAR: f64 = 25.0;
    let source = SourceModel {
        radial_table: vec![[1.0, 1.0], [100.0, 1.0]],
        ..SourceModel::default()
    };
    ok(source.validate())?;
    let k = source.strength_factor;

    let mut case = phantom(1, 1_000);
    let iu = case
        .catheters
        .iter()
        .position(|c| c.kind == CatheterKind::Intrauterine)
        .ok_or("no intrauterine catheter")?;
    let pos = case.catheters[iu].dwell_positions.len() / 2;
    let q = case.catheters[iu].dwell_positions[pos];
    for (ci, row) in case.dwell_mask.active.iter_mut().enumerate() {
        for (pi, a) in row.iter_mut().enumerate() {
            *a = ci == iu && pi == pos;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let target = Shape::Ellipsoid {
        center: q,
        radii: Vec3::new(R_TARGET, R_TARGET, R_TARGET),
    };
    let oar = Shape::Ellipsoid {
        center: q + Vec3::new(0.0, L_OAR, 0.0),
        radii: Vec3::new(R_OAR, R_OAR, R_OAR),
    };
    case.rois = vec![
        Roi::sampled("CTV_HR", RoiRole::Target, target, 20_000, &mut rng),
        Roi::sampled("bladder", RoiRole::Oar, oar, 20_000, &mut rng),
    ];
    let aim = |roi: &str, metric, direction, aim, category| DoseAim {
        roi: roi.into(),
        metric,
        direction,
        aim,
        limit: None,
        category,
        weight: 1.0,
    };
    case.protocol = Protocol {
        name: "one dwell".into(),
        aims: vec![
            aim("CTV_HR", Metric::DoseToPercent(90.0), Direction::AtLeast, 69.25, AimCategory::Coverage),
            aim("bladder", Metric::DoseToVolume(2.0), Direction::AtMost, 61.4, AimCategory::Sparing),
        ],
    };
    ok(case.validate())?;
    let j0 = case.flat_index(case.catheters[iu].id, pos).ok_or("no flat index")?;

    // Hottest 90 % of a centered ball is the inner ball of radius R·0.9^(1/3).
    let d90 = |t: f64| k * t / (R_TARGET * R_TARGET * 0.9f64.powf(2.0 / 3.0));
    // Hottest 2 cm³ of the OAR ball lies within the radius where the lens holds 2000 mm³.
    let (mut lo, mut hi) = (L_OAR - R_OAR, L_OAR + R_OAR);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lens_volume(mid, R_OAR, L_OAR) < 2000.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rho = 0.5 * (lo + hi);
    let d2 = |t: f64| k * t / (rho * rho);

    let settings = OptimizationSettings {
        seed: 5,
        evaluation_budget: 1_200,
        population_size: 40,
        ..OptimizationSettings::default()
    };
    let set = ok(optimize(&DoseEngine::new(source, Parallelism::Parallel), &case, &settings))?;
    let mut ts = Vec::new();
    let mut worst: f64 = 0.0;
    for p in &set.plans {
        let t = p.dwell_times[j0];
        ensure(
            p.dwell_times.iter().enumerate().all(|(j, &x)| j == j0 || x == 0.0),
            || format!("plan {} loads an inactive dwell", p.id),
        )?;
        let row = |label: &str| p.dv_values.iter().find(|r| r.label == label).map(|r| r.physical);
        let cov = row("CTV_HR D90%").ok_or("missing coverage row")?;
        let spa = row("bladder D2cm3").ok_or("missing sparing row")?;
        for (got, want, what) in [(cov, d90(t), "D90%"), (spa, d2(t), "D2cm3")] {
            ensure(rel_close(got, want, 0.02), || {
                format!("plan {} t={t:.2}: {what} {got:.4} vs analytic {want:.4}", p.id)
            })?;
            if want > 0.0 {
                worst = worst.max((got - want).abs() / want);
            }
        }
        ts.push(t);
    }
    ts.sort_by(f64::total_cmp);
    ensure(ts.len() >= 20, || format!("only {} plans on the curve", ts.len()))?;
    let (tmin, tmax) = (ts[0], ts[ts.len() - 1]);
    ensure(tmin <= 1.0 + 1e-9 && tmax >= 150.0 - 1.0, || {
        format!("curve spans t in [{tmin:.2}, {tmax:.2}] instead of [1, 150]")
    })?;
    let gap = ts.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    ensure(gap <= 10.0, || format!("largest gap along the sweep is {gap:.2} s"))?;
    Ok(format!(
        "{} plans over t in [{tmin:.1}, {tmax:.1}] s, largest gap {gap:.2} s, worst relative error {:.3}%",
        ts.len(),
        worst * 100.0
    ))
}

// ---------------------------------------------------------------------------
// Warm start

fn warm_start(cold_out: &mut Option<(PatientCase, PlanSet)>) -> Outcome {
    let start = Instant::now();
    let eng = engine(Parallelism::Parallel);
    let case = phantom(1, 20_000);
    let settings = OptimizationSettings {
        evaluation_budget: 2_000,
        ..OptimizationSettings::default()
    };
    let cold = ok(optimize(&eng, &case, &settings))?;
    let warm = ok(reoptimize(&eng, &case, &cold, &settings))?;
    ensure(warm.evaluations == 500, || format!("warm run used {} evaluations", warm.evaluations))?;
    let (pc, pw) = (cold.objective_points(), warm.objective_points());
    let r = reference_point([pc.as_slice(), pw.as_slice()]).ok_or("empty sets")?;
    let (hc, hw) = (hypervolume(&pc, r), hypervolume(&pw, r));
    ensure(hw >= hc - 1e-9, || format!("hypervolume fell from {hc} to {hw}"))?;

    let default_id = ok(cold.default_plan())?;
    let default = cold.plan(default_id).ok_or("default plan missing")?;
    let refs = case.dwell_refs();
    let j = (0..default.dwell_times.len())
        .filter(|&j| default.dwell_times[j] > 0.0)
        .max_by(|&a, &b| default.dwell_times[a].total_cmp(&default.dwell_times[b]))
        .ok_or("default plan has no loaded dwell")?;
    let c = &case.catheters[refs[j].catheter];
    let disabled = OptimizationSettings {
        max_time_overrides: vec![MaxTimeOverride {
            catheter: c.id,
            position: refs[j].position,
            max_time_s: 0.0,
        }],
        ..settings.clone()
    };
    let edited = ok(reoptimize(&eng, &case, &cold, &disabled))?;
    ensure(!edited.plans.is_empty(), || "no plans after disabling a dwell".into())?;
    for p in &edited.plans {
        ensure(p.dwell_times[j] == 0.0, || {
            format!("plan {} keeps {} s on the disabled dwell", p.id, p.dwell_times[j])
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 90.0, || format!("took {secs:.1} s"))?;
    let detail = format!(
        "HV cold {hc:.4} -> warm {hw:.4}; dwell {}:{} disabled in {} plans; {secs:.1} s",
        c.id,
        refs[j].position,
        edited.plans.len()
    );
    *cold_out = Some((case, cold));
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Contiguity against a recursive flood fill

fn flood_sizes(mask: &VoxelMask) -> Vec<usize> {
    fn fill(m: &VoxelMask, seen: &mut [bool], x: i64, y: i64, z: i64) -> usize {
        let [nx, ny, nz] = m.dims.map(|d| d as i64);
        if x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz {
            return 0;
        }
        let i = ((z * ny + y) * nx + x) as usize;
        if seen[i] || !m.cells[i] {
            return 0;
        }
        seen[i] = true;
        1 + fill(m, seen, x + 1, y, z)
            + fill(m, seen, x - 1, y, z)
            + fill(m, seen, x, y + 1, z)
            + fill(m, seen, x, y - 1, z)
            + fill(m, seen, x, y, z + 1)
            + fill(m, seen, x, y, z - 1)
    }
    let mut seen = vec![false; mask.cells.len()];
    let mut sizes = Vec::new();
    let [nx, ny, nz] = mask.dims;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let s = fill(mask, &mut seen, x as i64, y as i64, z as i64);
                if s > 0 {
                    sizes.push(s);
                }
            }
        }
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

/// Sets the first `n` cells of a box in raster order, which keeps them connected.
fn blob(m: &mut VoxelMask, at: [usize; 3], size: [usize; 3], n: usize) {
    let mut left = n;
    for z in 0..size[2] {
        for y in 0..size[1] {
            for x in 0..size[0] {
                if left == 0 {
                    return;
                }
                m.set(at[0] + x, at[1] + y, at[2] + z, true);
                left -= 1;
            }
        }
    }
    assert_eq!(left, 0, "box too small");
}

fn cube(m: &mut VoxelMask, at: [usize; 3], edge: usize) {
    blob(m, at, [edge; 3], edge * edge * edge);
}

fn contiguity_grids() -> Vec<(String, VoxelMask)> {
    fn add(grids: &mut Vec<(String, VoxelMask)>, name: String, m: VoxelMask) {
        grids.push((name, m));
    }
    let mut grids = Vec::new();

    add(&mut grids, "empty".into(), VoxelMask::new([8, 8, 8]));
    let mut full = VoxelMask::new([32, 32, 32]);
    full.cells.iter_mut().for_each(|c| *c = true);
    add(&mut grids, "full 32^3".into(), full);
    let mut single = VoxelMask::new([5, 5, 5]);
    single.set(2, 2, 2, true);
    add(&mut grids, "single cell".into(), single);

    for (a, b) in [(124, 124), (125, 125), (126, 126), (125, 126), (124, 126), (126, 500), (125, 500), (126, 127)] {
        let mut m = VoxelMask::new([30, 12, 12]);
        blob(&mut m, [1, 1, 1], [8, 8, 8], a);
        blob(&mut m, [12, 1, 1], [10, 10, 10], b);
        add(&mut grids, format!("two blobs {a}+{b}"), m);
    }
    for n in [125, 126] {
        let mut m = VoxelMask::new([32, 32, 32]);
        blob(&mut m, [0, 0, 0], [5, 5, 6], n);
        blob(&mut m, [20, 20, 20], [6, 6, 6], n);
        blob(&mut m, [0, 20, 0], [8, 8, 8], 300);
        add(&mut grids, format!("three blobs {n}+{n}+300"), m);
    }

    let mut edge = VoxelMask::new([14, 14, 14]);
    cube(&mut edge, [1, 1, 1], 6);
    cube(&mut edge, [7, 7, 1], 6);
    add(&mut grids, "cubes sharing an edge".into(), edge);
    let mut corner = VoxelMask::new([14, 14, 14]);
    cube(&mut corner, [1, 1, 1], 6);
    cube(&mut corner, [7, 7, 7], 6);
    add(&mut grids, "cubes sharing a corner".into(), corner);
    let mut face = VoxelMask::new([14, 8, 8]);
    cube(&mut face, [1, 1, 1], 6);
    cube(&mut face, [7, 1, 1], 6);
    add(&mut grids, "cubes sharing a face".into(), face);

    let mut checker = VoxelMask::new([16, 16, 16]);
    for z in 0..16 {
        for y in 0..16 {
            for x in 0..16 {
                checker.set(x, y, z, (x + y + z) % 2 == 0);
            }
        }
    }
    add(&mut grids, "checkerboard".into(), checker);

    let mut snake = VoxelMask::new([32, 32, 4]);
    for y in (0..32).step_by(2) {
        for x in 0..32 {
            snake.set(x, y, 1, true);
        }
        if y + 1 < 32 {
            let x = if (y / 2) % 2 == 0 { 31 } else { 0 };
            snake.set(x, y + 1, 1, true);
        }
    }
    add(&mut grids, "serpentine".into(), snake);

    let mut combs = VoxelMask::new([32, 32, 3]);
    for y in (0..32).step_by(2) {
        for x in 0..32 {
            combs.set(x, y, 1, true);
        }
    }
    add(&mut grids, "parallel rods".into(), combs);

    let mut shell = VoxelMask::new([20, 20, 20]);
    for z in 2..18 {
        for y in 2..18 {
            for x in 2..18 {
                let wall = [x, y, z].iter().any(|&c| c == 2 || c == 17);
                let core = (7..13).contains(&x) && (7..13).contains(&y) && (7..13).contains(&z);
                shell.set(x, y, z, wall || core);
            }
        }
    }
    add(&mut grids, "hollow shell with core".into(), shell);

    let mut bridged = VoxelMask::new([30, 12, 12]);
    blob(&mut bridged, [1, 1, 1], [8, 8, 8], 200);
    blob(&mut bridged, [20, 1, 1], [8, 8, 8], 200);
    for x in 9..20 {
        bridged.set(x, 1, 1, true);
    }
    add(&mut grids, "blobs joined by a one-cell bridge".into(), bridged);

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut i = 0;
    while grids.len() < 50 {
        let dims = [rng.random_range(4..=32), rng.random_range(4..=32), rng.random_range(4..=32)];
        let p = [0.05, 0.15, 0.25, 0.3, 0.35, 0.45, 0.6, 0.8][i % 8];
        let mut m = VoxelMask::new(dims);
        m.cells.iter_mut().for_each(|c| *c = rng.random_bool(p));
        add(&mut grids, format!("random {dims:?} p={p}"), m);
        i += 1;
    }
    grids
}

fn contiguity_oracle() -> Outcome {
    const CELL_CM3: f64 = 0.001;
    const MIN_CM3: f64 = 0.125;
    // At 1 mm a component counts when it has more than 125 cells.
    const MIN_CELLS: usize = 125;
    let grids = contiguity_grids();
    ensure(grids.len() == 50, || format!("{} grids", grids.len()))?;
    let mut infeasible = 0;
    for (name, mask) in &grids {
        let m = mask.clone();
        let expected = std::thread::Builder::new()
            .stack_size(512 << 20)
            .spawn(move || flood_sizes(&m))
            .map_err(|e| e.to_string())?
            .join()
            .map_err(|_| format!("{name}: flood fill panicked"))?;
        let sizes = label_components(mask);
        ensure(sizes == expected, || format!("{name}: components {sizes:?} vs {expected:?}"))?;
        let large: Vec<usize> = expected.iter().copied().filter(|&s| s > MIN_CELLS).collect();
        let want_feasible = large.len() <= 1;
        let want_violation = large.iter().skip(1).sum::<usize>() as f64 * CELL_CM3;
        let verdict = contiguity_verdict(&sizes, CELL_CM3, MIN_CM3);
        ensure(verdict.feasible == want_feasible, || {
            format!("{name}: feasible {} expected {want_feasible}", verdict.feasible)
        })?;
        ensure((verdict.violation_cm3 - want_violation).abs() <= 1e-12, || {
            format!("{name}: violation {} expected {want_violation}", verdict.violation_cm3)
        })?;
        if !want_feasible {
            infeasible += 1;
        }
    }
    Ok(format!("50 grids, {infeasible} infeasible"))
}

// ---------------------------------------------------------------------------
// Sampling stability

fn sampling_stability(optimized: Option<&(PatientCase, PlanSet)>) -> Outcome {
    let eng = engine(Parallelism::Parallel);
    let mut fields: Vec<(String, PatientCase, Vec<f64>)> = Vec::new();
    for seed in [1, 2, 3] {
        let case = phantom(seed, 20_000);
        let times: Vec<f64> = case
            .dwell_mask
            .effective_max_flat()
            .iter()
            .map(|&m| if m > 0.0 { 8.0f64.min(m) } else { 0.0 })
            .collect();
        fields.push((format!("seed {seed} uniform"), case, times));
    }
    if let Some((case, set)) = optimized {
        let id = ok(set.default_plan())?;
        let times = set.plan(id).ok_or("default plan missing")?.dwell_times.clone();
        fields.push((format!("seed 1 plan {id}"), case.clone(), times));
    }
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (name, case, times) in &fields {
        let opt = point_sets(case, PointCount::Optimization);
        let fin = point_sets(case, PointCount::Final);
        for (i, roi) in case.rois.iter().enumerate() {
            ensure(opt[i].len() == 20_000, || format!("{} has {} points", roi.name, opt[i].len()))?;
            let a = ok(eng.dose_at_points(case, times, &opt[i]))?.dose_gy;
            let b = ok(eng.dose_at_points(case, times, &fin[i]))?.dose_gy;
            let spec = match roi.role {
                RoiRole::Target => VolumeSpec::Percent(90.0),
                RoiRole::Oar => VolumeSpec::Cm3(2.0),
            };
            let (x, y) = (ok(d_index(&a, spec, roi.volume_cm3))?, ok(d_index(&b, spec, roi.volume_cm3))?);
            let rel = (x - y).abs() / y;
            ensure(rel <= 0.02, || {
                format!("{name} {} {spec:?}: {x:.4} at 20k vs {y:.4} final ({:.2}%)", roi.name, rel * 100.0)
            })?;
            worst = worst.max(rel);
            count += 1;
        }
    }
    Ok(format!("{count} indices on {} fields, worst {:.3}%", fields.len(), worst * 100.0))
}

// ---------------------------------------------------------------------------
// Determinism across worker counts

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}

fn cli(args: &[&str]) -> std::result::Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["brachynav"];
    full.extend_from_slice(args);
    let code = brachynav_service::cli::run(full, &mut out, &mut err);
    ensure(code == 0, || {
        format!("`{}` exited {code}: {}", args.join(" "), String::from_utf8_lossy(&err))
    })?;
    String::from_utf8(out).map_err(|e| e.to_string())
}

const PIPELINE_FILES: [&str; 5] = ["case.json", "plans.json", "reopt.json", "export.json", "imported.json"];

fn cli_pipeline(dir: &Path, workers: usize) -> std::result::Result<Vec<Vec<u8>>, String> {
    let w = workers.to_string();
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let (case, plans, reopt, export, imported) = (p("case.json"), p("plans.json"), p("reopt.json"), p("export.json"), p("imported.json"));
    let left = format!("{plans}#1-0");
    let steps: Vec<Vec<&str>> = vec![
        vec!["phantom", "--seed", "3", "--needles", "4", "--samples", "4000", "--out", &case],
        vec!["plan", "--case", &case, "--seed", "9", "--budget", "480", "--population", "40", "--out", &plans],
        vec!["reoptimize", "--case", &case, "--previous", &plans, "--total-needle-max", "0.3", "--out", &reopt],
        vec!["evaluate", "--case", &case, "--plan", &plans, "--points", "final"],
        vec!["--format", "json", "evaluate", "--case", &case, "--plan", &reopt],
        vec!["export", "--case", &case, "--plan", &reopt, "--out", &export],
        vec!["import", "--case", &case, "--export", &export, "--out", &imported],
        vec!["diff", "--case", &case, "--left", &left, "--right", &reopt, "--axis", "axial", "--position", "0"],
        vec!["--format", "json", "diff", "--case", &case, "--left", &plans, "--right", &imported],
    ];
    let mut outputs = Vec::new();
    let prefix = dir.to_string_lossy().into_owned();
    for step in steps {
        let mut args = vec!["--workers", &w];
        args.extend(step);
        outputs.push(cli(&args)?.replace(&prefix, "<dir>").into_bytes());
    }
    for f in PIPELINE_FILES {
        outputs.push(std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"))?);
    }
    Ok(outputs)
}

fn determinism() -> Outcome {
    let case = phantom(2, 5_000);
    let settings = OptimizationSettings {
        seed: 11,
        evaluation_budget: 600,
        population_size: 60,
        ..OptimizationSettings::default()
    };
    let run = |mode: Parallelism| -> std::result::Result<(Vec<u8>, Vec<u8>), String> {
        let eng = engine(mode);
        let cold = ok(optimize(&eng, &case, &settings))?;
        let warm = ok(reoptimize(&eng, &case, &cold, &settings))?;
        Ok((ok(serde_json::to_vec(&cold))?, ok(serde_json::to_vec(&warm))?))
    };
    let sequential = with_pool(1, || run(Parallelism::Sequential))?;
    let parallel = with_pool(4, || run(Parallelism::Parallel))?;
    let parallel_one = with_pool(1, || run(Parallelism::Parallel))?;
    ensure(sequential == parallel, || "optimize differs between 1 and 4 workers".into())?;
    ensure(sequential == parallel_one, || "optimize differs between modes on one worker".into())?;

    let d1 = ok(tempfile::tempdir())?;
    let d4 = ok(tempfile::tempdir())?;
    let one = cli_pipeline(d1.path(), 1)?;
    let four = cli_pipeline(d4.path(), 4)?;
    for (i, (a, b)) in one.iter().zip(&four).enumerate() {
        ensure(a == b, || format!("CLI output {i} differs between 1 and 4 workers"))?;
    }
    Ok(format!(
        "library plan sets identical ({} bytes); {} CLI outputs identical",
        sequential.0.len() + sequential.1.len(),
        one.len()
    ))
}

// ---------------------------------------------------------------------------
// Export round trip

fn export_round_trip(source: Option<&(PatientCase, PlanSet)>) -> Outcome {
    let (case, set) = source.ok_or("no optimized plan set")?;
    let eng = engine(Parallelism::Parallel);
    let dir = ok(tempfile::tempdir())?;
    let mut plans: Vec<Plan> = Vec::new();
    let default_id = ok(set.default_plan())?;
    for p in &set.plans {
        if p.id == default_id || p.id.index == 0 || p.id.index as usize == set.plans.len() - 1 {
            plans.push(p.clone());
        }
    }
    let zero = vec![0.0; case.dwell_count()];
    plans.push(ok(evaluate_candidate(
        &eng,
        case,
        &set.settings,
        &zero,
        PlanId { run: 0, index: 0 },
        Provenance::ManualImport,
    ))?);
    let final_ctx = ok(EvalContext::for_case(case, PointCount::Final))?;
    for (n, plan) in plans.iter().enumerate() {
        let exported = ok(export_plan(&eng, case, plan))?;
        let path = dir.path().join(format!("plan{n}.json"));
        ok(write_export(&exported, &path))?;
        let back = ok(read_export(&path))?;
        ensure(back == exported, || format!("{}: export file does not round-trip", plan.id))?;
        let fresh = ok(evaluate_plan(&eng, case, &plan.dwell_times, &final_ctx))?;
        ensure(back.dv_summary == fresh, || format!("{}: export DV summary differs", plan.id))?;
        let imported = ok(import_plan(&eng, case, &back, &set.settings, PlanId { run: 99, index: 0 }))?;
        let bits = |t: &[f64]| t.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(&imported.dwell_times) == bits(&plan.dwell_times), || {
            format!("{}: dwell times changed", plan.id)
        })?;
        ensure(imported.dv_values.len() == plan.dv_values.len(), || format!("{}: DV rows differ", plan.id))?;
        for (a, b) in imported.dv_values.iter().zip(&plan.dv_values) {
            let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
                (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
                (None, None) => true,
                _ => false,
            };
            ensure(
                a.label == b.label
                    && (a.physical - b.physical).abs() <= 1e-12
                    && close(a.eqd2_total, b.eqd2_total)
                    && a.status == b.status,
                || format!("{} {}: {} vs {}", plan.id, a.label, a.physical, b.physical),
            )?;
        }
    }
    Ok(format!("{} plans including the empty plan", plans.len()))
}

// ---------------------------------------------------------------------------
// Golden Corner and default plan

fn golden_corner(sets: &[(PatientCase, PlanSet)]) -> Outcome {
    let mut members = 0;
    let mut total = 0;
    for (case, set) in sets {
        ensure(!set.plans.is_empty(), || "empty plan set".into())?;
        let protocol = set.settings.protocol.as_ref().unwrap_or(&case.protocol);
        let mut best: Option<(f64, f64, PlanId)> = None;
        for p in &set.plans {
            let (mut lci, mut lsi) = (f64::INFINITY, f64::INFINITY);
            for (i, aim) in protocol.aims.iter().enumerate() {
                let row = p
                    .dv_values
                    .iter()
                    .find(|r| r.aim_index == Some(i))
                    .ok_or_else(|| format!("{}: no row for {}", p.id, aim.label()))?;
                let value = row.eqd2_total.unwrap_or(row.physical);
                let margin = match aim.direction {
                    Direction::AtLeast => value - aim.aim,
                    Direction::AtMost => aim.aim - value,
                };
                match aim.category {
                    AimCategory::Coverage => lci = lci.min(margin),
                    AimCategory::Sparing => lsi = lsi.min(margin),
                    _ => {}
                }
            }
            ensure(p.objective.lci == lci && p.objective.lsi == lsi, || {
                format!("{}: lci/lsi {}/{} vs {lci}/{lsi}", p.id, p.objective.lci, p.objective.lsi)
            })?;
            let inside = lci >= 0.0 && lsi >= 0.0;
            ensure(p.objective.in_golden_corner == inside, || format!("{}: membership flag wrong", p.id))?;
            members += inside as usize;
            total += 1;
            let better = match best {
                None => true,
                Some((bl, bs, bid)) => {
                    let (m, bm) = (lci.min(lsi), bl.min(bs));
                    m > bm || (m == bm && (lci > bl || (lci == bl && p.id < bid)))
                }
            };
            if better {
                best = Some((lci, lsi, p.id));
            }
        }
        let want = best.map(|b| b.2).ok_or("no plans")?;
        let got = ok(set.default_plan())?;
        ensure(got == want, || format!("default plan {got}, exhaustive search gives {want}"))?;
    }
    Ok(format!("{total} plans in {} sets, {members} in the Golden Corner", sets.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    panic::set_hook(Box::new(|_| {}));
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {why}");
            }
        }
    };

    let mut runs: Vec<(PatientCase, PlanSet)> = Vec::new();
    let mut cold: Option<(PatientCase, PlanSet)> = None;
    report("dv_indices_match_sort_and_count_oracles", &mut dv_oracle);
    report("eqd2_reference_values", &mut eqd2_values);
    report("archive_equals_nondominated_filter_of_audit", &mut || archive_correctness(&mut runs));
    report("single_dwell_front_matches_analytic_sweep", &mut one_dwell_oracle);
    report("warm_start_keeps_hypervolume_and_disables_dwell", &mut || warm_start(&mut cold));
    report("contiguity_matches_flood_fill", &mut contiguity_oracle);
    report("sampling_stability_20k_vs_final", &mut || sampling_stability(cold.as_ref()));
    report("determinism_across_worker_counts", &mut determinism);
    report("export_import_round_trip", &mut || export_round_trip(cold.as_ref()));
    let mut all = runs.clone();
    all.extend(cold.clone());
    report("golden_corner_and_default_plan", &mut || golden_corner(&all));

    println!("{} failed, total {:.1} s", failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
