//! One function per subcommand. Each writes `<command>.json` (plus data
//! files) into the output directory and returns whether its audits passed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use dsde_core::coefficients::{
    builtin_family, check_factorization, estimate_ellipticity, CoefficientSet, ParamValue,
};
use dsde_core::conditions::{
    a4prime_check, exponent_window, growth_margin, min_m_on_grid, occupation_condition_route,
};
use dsde_core::density::{
    compute_beta, solve_density_with, verify_divergence_free, verify_preinvariance, DensityField,
};
use dsde_core::diagnostics::{
    feynman_kac_crosscheck, krylov_audit, krylov_dt_stability, krylov_report, uniqueness_probe,
    FeynmanKacOptions, KrylovOptions, SpaceTimeFn, UniquenessOptions, Variant,
};
use dsde_core::grid::{BoundaryPolicy, Bounds, GridField};
use dsde_core::report::{Clause, DiagnosticReport, Verdict};
use dsde_core::rng::{derive_seed, NormalStream};
use dsde_core::semigroup::{
    audit_local_boundedness, evolve_strided, semigroup_contraction_check, sub_markov_check,
    SpaceTimeField,
};
use dsde_core::simulator::{exit_time_stats, occupation_profile, simulate_ensemble, PathEnsemble};
use dsde_core::testfn::default_bumps;
use dsde_core::Error;
use serde_json::{json, Value};

use crate::config::{DiagnosticSpec, ExperimentConfig, FORMAT_VERSION};
use crate::output::{num, nums, write_atomic, write_report};
use crate::Failure;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub digest: String,
    pub workers: usize,
    pub coef: CoefficientSet,
    pub x0: Vec<f64>,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, workers: usize) -> Result<Self, Failure> {
        let coef = cfg.family.build()?;
        let x0 = cfg.x0(coef.d());
        Ok(Self {
            digest: cfg.digest(),
            cfg,
            workers,
            coef,
            x0,
        })
    }

    fn bounds(&self) -> Result<Bounds, Failure> {
        self.cfg.box_.bounds()
    }

    fn density(&self) -> Result<DensityField, Failure> {
        Ok(solve_density_with(
            &self.coef,
            &self.bounds()?,
            self.cfg.box_.n,
            self.cfg.density.normalization,
        )?)
    }

    fn emit(&self, command: &str, passed: bool, verdict: &str, seeds: &[u64], result: Value) -> Result<(), Failure> {
        let v = json!({
            "command": command,
            "format_version": FORMAT_VERSION,
            "config_digest": self.digest,
            "family": self.cfg.family.name,
            "passed": passed,
            "verdict": verdict,
            "seeds": seeds,
            "result": result,
        });
        write_report(&self.cfg.output_dir, command, &v, self.workers)
    }
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Inconclusive => "inconclusive",
        Verdict::NotApplicable => "not_applicable",
    }
}

/// A not-applicable audit does not fail the run: the statement it probes
/// simply has no content for this input.
fn counts_as_pass(v: Verdict) -> bool {
    matches!(v, Verdict::Pass | Verdict::NotApplicable)
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

fn prefixed(prefix: &str, r: &DiagnosticReport) -> Vec<Clause> {
    r.clauses
        .iter()
        .cloned()
        .map(|mut c| {
            c.name = format!("{prefix}.{}", c.name);
            c
        })
        .collect()
}

/// Deterministic uniform probe points in the box.
fn probe_points(b: &Bounds, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = b.dim();
    let mut s = NormalStream::new(derive_seed(seed, 0x70_72_6f_62), 0, d);
    (0..n)
        .map(|_| {
            (0..d)
                .map(|k| b.lower[k] + (b.upper[k] - b.lower[k]) * s.next_uniform())
                .collect()
        })
        .collect()
}

pub fn check(ctx: &Context) -> Result<bool, Failure> {
    let c = &ctx.coef;
    let d = c.d();
    let b = ctx.bounds()?;
    let spec = &ctx.cfg.check;
    let seed = ctx.cfg.sim.master_seed;
    let mut clauses = Vec::new();

    let fact = check_factorization(c, &probe_points(&b, spec.probes, seed), spec.factorization_tol);
    clauses.extend(prefixed("factorization", &fact));

    let center: Vec<f64> = (0..d).map(|k| 0.5 * (b.lower[k] + b.upper[k])).collect();
    let radius = (0..d)
        .map(|k| 0.5 * (b.upper[k] - b.lower[k]))
        .fold(f64::INFINITY, f64::min);
    let ellipticity = match estimate_ellipticity(c, &center, radius, spec.ellipticity_samples, seed) {
        Ok((lo, hi)) => {
            clauses.push(Clause::new("matrix_elliptic", lo > 0.0, format!("λ̂ = {lo:.6e}, Λ̂ = {hi:.6e}")).with_value(lo));
            json!({"lambda": num(lo), "Lambda": num(hi)})
        }
        Err(Error::DegenerateMatrix(v)) => {
            clauses.push(Clause::new("matrix_elliptic", false, format!("min Rayleigh quotient {v:e}")).with_value(v));
            Value::Null
        }
        Err(e) => return Err(e.into()),
    };

    let min_m = min_m_on_grid(c, &b, spec.resolution)?;
    clauses.push(Clause::new("min_m_finite", min_m.is_finite(), format!("min_M = {min_m}")).with_value(min_m));
    let m = spec.growth_m.unwrap_or(min_m);
    let mut margins = Vec::new();
    for (i, x) in spec.growth_points.iter().enumerate() {
        if x.len() != d {
            return Err(Failure::config(format!("growth point {i} has {} entries, d = {d}", x.len())));
        }
        match growth_margin(c, x, m) {
            Ok(g) => {
                clauses.push(
                    Clause::new(
                        format!("growth_margin_nonnegative.{i}"),
                        g.margin >= 0.0,
                        format!("lhs {:.6e}, rhs {:.6e}", g.lhs, g.rhs),
                    )
                    .with_value(g.margin)
                    .with_threshold(0.0),
                );
                margins.push(to_json(&g));
            }
            Err(Error::NullSetPoint) => margins.push(json!({"point": x, "skipped": "null set point"})),
            Err(e) => return Err(e.into()),
        }
    }

    let a4 = a4prime_check(c);
    clauses.extend(prefixed("a4prime", &a4));
    let window = match c.params.get("alpha") {
        Some(ParamValue::Number(a)) => to_json(&exponent_window(d, *a)),
        _ => Value::Null,
    };
    let passed = clauses.iter().all(|c| c.pass);
    ctx.emit(
        "check",
        passed,
        if passed { "pass" } else { "fail" },
        &[seed],
        json!({
            "clauses": to_json(&clauses),
            "min_M": num(min_m),
            "growth_m": num(m),
            "growth_margins": margins,
            "exponent_window": window,
            "occupation_route": occupation_condition_route(c).label(),
            "ellipticity": ellipticity,
            "factorization": to_json(&fact),
            "a4prime": to_json(&a4),
        }),
    )?;
    Ok(passed)
}

fn grid_header(out: &mut String, dens_grid: &dsde_core::grid::Grid, extra: &str) {
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let _ = writeln!(out, "# d={}", dens_grid.dim());
    let _ = writeln!(out, "# lower={}", join(&dens_grid.bounds.lower));
    let _ = writeln!(out, "# upper={}", join(&dens_grid.bounds.upper));
    let _ = writeln!(out, "# n={}", dens_grid.n);
    if !extra.is_empty() {
        let _ = writeln!(out, "# {extra}");
    }
}

fn coord_names(d: usize) -> String {
    (1..=d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",")
}

pub fn density(ctx: &Context) -> Result<bool, Failure> {
    let c = &ctx.coef;
    let spec = &ctx.cfg.density;
    let dens = ctx.density()?;
    let bumps = default_bumps(&dens.grid.bounds);
    let pre = verify_preinvariance(c, &dens, &bumps, spec.preinvariance_tol)?;
    let dec = compute_beta(c, &dens);
    let div = verify_divergence_free(&dens, &dec, &bumps, spec.divergence_tol)?;
    let passed = pre.passed() && div.passed();
    if spec.csv {
        let g = &dens.grid;
        let mut out = String::new();
        let norm = match dens.normalization {
            dsde_core::density::Normalization::Anchor => "anchor",
            dsde_core::density::Normalization::Mass => "mass",
        };
        grid_header(&mut out, g, &format!("normalization={norm}"));
        let _ = writeln!(out, "{},rho,psi", coord_names(g.dim()));
        for i in 0..g.len() {
            for x in g.point_vec(i) {
                let _ = write!(out, "{x},");
            }
            let _ = writeln!(out, "{},{}", dens.rho.values[i], dens.psi[i]);
        }
        write_atomic(&ctx.cfg.output_dir, "density.csv", out.as_bytes())?;
    }
    ctx.emit(
        "density",
        passed,
        if passed { "pass" } else { "fail" },
        &[],
        json!({
            "residual_norm": num(dens.residual_norm),
            "linear_residual": num(dens.linear_residual),
            "rho_min": num(dens.rho.min()),
            "rho_max": num(dens.rho.max()),
            "max_abs_beta": num(dec.beta.max_abs()),
            "max_abs_b": num(dec.b.max_abs()),
            "null_nodes": dec.null_nodes.len(),
            "preinvariance": to_json(&pre),
            "divergence_free": to_json(&div),
        }),
    )?;
    Ok(passed)
}

fn slice_csv(u: &SpaceTimeField, k: usize) -> String {
    let g = &u.grid;
    let mut out = String::new();
    grid_header(&mut out, g, &format!("t={}", u.times[k]));
    let _ = writeln!(out, "{},u", coord_names(g.dim()));
    for (i, v) in u.slices[k].iter().enumerate() {
        for x in g.point_vec(i) {
            let _ = write!(out, "{x},");
        }
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn semigroup(ctx: &Context) -> Result<bool, Failure> {
    let spec = ctx
        .cfg
        .semigroup
        .as_ref()
        .ok_or_else(|| Failure::config("the semigroup subcommand needs a [semigroup] section"))?;
    let c = &ctx.coef;
    let dens = ctx.density()?;
    let f = spec.initial.function(c.d())?;
    let f0 = GridField::from_fn(dens.grid.clone(), BoundaryPolicy::Dirichlet, |x| f(x));
    let u = evolve_strided(c, &dens, &f0, spec.t_end, spec.dt, spec.store_stride)?;
    let mut reports = vec![semigroup_contraction_check(&u, &dens)];
    if f0.min() >= 0.0 && f0.max() <= 1.0 {
        reports.push(sub_markov_check(&u, 1e-12));
    }
    if let Some(lb) = &spec.local_boundedness {
        reports.push(audit_local_boundedness(&u, &lb.center, lb.t_bar, lb.r, lb.p)?);
    }
    if spec.csv {
        for k in 0..u.len() {
            write_atomic(&ctx.cfg.output_dir, &format!("semigroup_slice_{k:04}.csv"), slice_csv(&u, k).as_bytes())?;
        }
    }
    let passed = reports.iter().all(|r| r.passed());
    let mid = dens.grid.nearest(&ctx.x0);
    ctx.emit(
        "semigroup",
        passed,
        if passed { "pass" } else { "fail" },
        &[],
        json!({
            "initial": spec.initial.label(),
            "times": nums(&u.times),
            "value_at_x0": nums(&u.slices.iter().map(|s| s[mid]).collect::<Vec<_>>()),
            "sup_norm": nums(&u.slices.iter().map(|s| s.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect::<Vec<_>>()),
            "reports": to_json(&reports),
        }),
    )?;
    Ok(passed)
}

fn write_paths_bin(dir: &Path, ens: &PathEnsemble) -> Result<(), Failure> {
    let mut b: Vec<u8> = Vec::with_capacity(64 + ens.states.len() * 8);
    b.extend_from_slice(b"DSDEPTH1");
    for v in [ens.d, ens.n_paths(), ens.n_steps, ens.record_stride] {
        b.extend_from_slice(&(v as u64).to_le_bytes());
    }
    b.extend_from_slice(&ens.dt.to_le_bytes());
    for x in &ens.x0 {
        b.extend_from_slice(&x.to_le_bytes());
    }
    b.extend_from_slice(&ens.master_seed.to_le_bytes());
    for s in &ens.states {
        b.extend_from_slice(&s.to_le_bytes());
    }
    write_atomic(dir, "paths.bin", &b)?;
    Ok(())
}

pub fn simulate(ctx: &Context) -> Result<bool, Failure> {
    let c = &ctx.coef;
    let d = c.d();
    let sim = &ctx.cfg.sim;
    let spec = &ctx.cfg.simulate;
    let ens = simulate_ensemble(c, &ctx.x0, sim)?;
    let fin = ens.final_states();
    let n = ens.n_paths();
    let mut mean = vec![0.0; d];
    let mut stderr = vec![0.0; d];
    for k in 0..d {
        let col: Vec<f64> = fin.iter().skip(k).step_by(d).copied().collect();
        let (m, s) = dsde_core::diagnostics::mean_stderr(&col);
        mean[k] = m;
        stderr[k] = s;
    }
    let mut radii: Vec<f64> = sim.r_exit.into_iter().chain(spec.exit_radii.iter().copied()).collect();
    radii.dedup();
    let mut exits = Vec::new();
    let mut fraction_at_exit = None;
    for &r in &radii {
        let s = exit_time_stats(&ens, r)?;
        if Some(r) == sim.r_exit {
            fraction_at_exit = Some(s.fraction_exited);
        }
        exits.push(json!({"radius": num(r), "fraction_exited": s.fraction_exited, "mean_stopped_time": s.mean_stopped_time}));
    }
    let mut eps: Vec<f64> = vec![0.0];
    if sim.near_degeneracy_eps > 0.0 {
        eps.push(sim.near_degeneracy_eps);
    }
    eps.extend(sim.profile_eps.iter().copied().filter(|e| *e > 0.0));
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let profile = occupation_profile(&ens, &eps)?;
    let occ_max = ens.occupation_exact.iter().copied().fold(0.0, f64::max);

    let mut clauses = Vec::new();
    if let Some(limit) = spec.max_exit_fraction {
        let f = fraction_at_exit.ok_or_else(|| Failure::config("max_exit_fraction needs sim.r_exit"))?;
        clauses.push(Clause::at_most("exit_fraction", f, limit));
    }
    if spec.require_zero_occupation {
        clauses.push(Clause::at_most("occupation_exact", occ_max, 0.0));
    }
    let passed = clauses.iter().all(|c| c.pass);

    let mut csv = String::from("path,exit_step,exploded_step,occupation_exact,occupation_near\n");
    for p in 0..n {
        let opt = |v: Option<usize>| v.map_or(String::new(), |k| k.to_string());
        let _ = writeln!(
            csv,
            "{p},{},{},{},{}",
            opt(ens.exit_step[p]),
            opt(ens.exploded[p]),
            ens.occupation_exact[p],
            ens.occupation_near[p]
        );
    }
    write_atomic(&ctx.cfg.output_dir, "paths_summary.csv", csv.as_bytes())?;
    if spec.dump_paths {
        write_paths_bin(&ctx.cfg.output_dir, &ens)?;
    }
    ctx.emit(
        "simulate",
        passed,
        if passed { "pass" } else { "fail" },
        &[sim.master_seed],
        json!({
            "n_paths": n,
            "n_steps": ens.n_steps,
            "dt": sim.dt,
            "x0": nums(&ctx.x0),
            "final_mean": nums(&mean),
            "final_stderr": nums(&stderr),
            "exploded": ens.exploded_count(),
            "exit": exits,
            "occupation_exact_max": num(occ_max),
            "occupation_profile": to_json(&profile),
            "clauses": to_json(&clauses),
        }),
    )?;
    Ok(passed)
}

fn space_fn(d: &crate::config::Datum, dim: usize) -> Result<SpaceTimeFn, Failure> {
    let f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> = Arc::from(d.function(dim)?);
    Ok(SpaceTimeFn::new(d.label(), move |x, _| f(x)))
}

fn diagnose_one(ctx: &Context, spec: &DiagnosticSpec) -> Result<(Value, bool), Failure> {
    let c = &ctx.coef;
    let d = c.d();
    let entry = |test: &str, statistic: f64, threshold: f64, report: &DiagnosticReport, extra: Value| {
        json!({
            "test": test,
            "inputs_digest": ctx.digest,
            "statistic": num(statistic),
            "threshold": num(threshold),
            "verdict": verdict_str(report.verdict),
            "seeds": report.seeds,
            "report": to_json(report),
            "details": extra,
        })
    };
    match spec {
        DiagnosticSpec::Uniqueness { variants, t_checks, level, common_seed, permutations, energy_cap } => {
            let mut vs = Vec::with_capacity(variants.len());
            for v in variants {
                let name = v.family.clone().unwrap_or_else(|| ctx.cfg.family.name.clone());
                let mut params = if name == ctx.cfg.family.name {
                    ctx.cfg.family.params.clone()
                } else {
                    BTreeMap::new()
                };
                params.extend(v.params.clone());
                vs.push(Variant {
                    label: v.label.clone(),
                    coefficients: builtin_family(&name, &params)?,
                    dt: v.dt,
                });
            }
            let opts = UniquenessOptions {
                level: *level,
                common_seed: *common_seed,
                permutations: *permutations,
                energy_cap: *energy_cap,
            };
            let (report, results) = uniqueness_probe(&vs, &ctx.x0, t_checks, &ctx.cfg.sim, &opts)?;
            let worst = report
                .clauses
                .iter()
                .filter_map(|c| c.value)
                .fold(0.0, f64::max);
            let ok = counts_as_pass(report.verdict);
            let labels: Vec<&str> = variants.iter().map(|v| v.label.as_str()).collect();
            Ok((
                entry("uniqueness_probe", worst, 1.0, &report, json!({"variants": labels, "comparisons": to_json(&results)})),
                ok,
            ))
        }
        DiagnosticSpec::Krylov { radius, t_end, dictionary, dts, homogeneity_tol, max_factor, space_cells, time_cells, lambda } => {
            let dict = dictionary.iter().map(|f| space_fn(f, d)).collect::<Result<Vec<_>, _>>()?;
            let opts = KrylovOptions {
                space_cells: *space_cells,
                time_cells: *time_cells,
                lambda: *lambda,
            };
            let dts = if dts.is_empty() { vec![ctx.cfg.sim.dt] } else { dts.clone() };
            let mut runs = Vec::new();
            let mut reports = Vec::new();
            for &dt in &dts {
                let mut sim = ctx.cfg.sim.clone();
                sim.dt = dt;
                let run = krylov_audit(c, &ctx.x0, *radius, *t_end, &dict, &sim, &opts)?;
                reports.push(krylov_report(&run, *homogeneity_tol));
                runs.push(run);
            }
            if runs.len() > 1 {
                reports.push(krylov_dt_stability(&runs, *max_factor));
            }
            let mut merged = DiagnosticReport::new("krylov_audit");
            for r in &reports {
                merged.clauses.extend(prefixed(&r.test, r));
                merged.seeds.extend(r.seeds.iter().copied().filter(|s| !merged.seeds.contains(s)).collect::<Vec<_>>());
            }
            let c_hat = runs.iter().map(|r| r.c_hat).fold(0.0, f64::max);
            merged.metric("c_hat", c_hat);
            let merged = merged.finish();
            let ok = merged.passed();
            Ok((entry("krylov_audit", c_hat, f64::NAN, &merged, json!({"runs": to_json(&runs), "reports": to_json(&reports)})), ok))
        }
        DiagnosticSpec::FeynmanKac { t_end, pde_dt, initial, budget_factor, leakage_tol } => {
            let dens = ctx.density()?;
            let f = initial.function(d)?;
            let opts = FeynmanKacOptions {
                pde_dt: *pde_dt,
                leakage_tol: *leakage_tol,
                budget_factor: *budget_factor,
            };
            let out = feynman_kac_crosscheck(c, &dens, &*f, &ctx.x0, *t_end, &ctx.cfg.sim, &opts)?;
            let ok = out.report.passed();
            let budget = out.report.metrics["budget"];
            Ok((
                entry(
                    "feynman_kac_crosscheck",
                    (out.mc - out.pde).abs(),
                    budget,
                    &out.report,
                    json!({"initial": initial.label(), "mc": out.mc, "mc_stderr": out.mc_stderr, "pde": out.pde, "pde_coarse": out.pde_coarse, "richardson": out.richardson, "leakage": out.leakage}),
                ),
                ok,
            ))
        }
    }
}

pub fn diagnose(ctx: &Context) -> Result<bool, Failure> {
    if ctx.cfg.diagnostics.is_empty() {
        return Err(Failure::config("no [[diagnostics]] entries configured"));
    }
    let mut entries = Vec::new();
    let mut passed = true;
    let mut seeds = Vec::new();
    for spec in &ctx.cfg.diagnostics {
        let (v, ok) = diagnose_one(ctx, spec)?;
        if let Some(s) = v["seeds"].as_array() {
            seeds.extend(s.iter().filter_map(|x| x.as_u64()));
        }
        passed &= ok;
        entries.push(v);
    }
    ctx.emit("diagnose", passed, if passed { "pass" } else { "fail" }, &seeds, json!({ "diagnostics": entries }))?;
    Ok(passed)
}

/// Merges every `<name>.json` of `dir` (sidecars and an earlier merge
/// excluded) into `report.json`. Fails when the config digests differ.
pub fn report(dir: &Path, workers: usize) -> Result<bool, Failure> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json") && !n.ends_with(".meta.json") && n != "report.json" && !n.starts_with('.'))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Failure::config(format!("no reports found in {}", dir.display())));
    }
    let mut merged = serde_json::Map::new();
    let mut digest: Option<String> = None;
    let mut passed = true;
    for n in &names {
        let text = fs::read_to_string(dir.join(n)).map_err(|e| Failure::io(e, n))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Failure::config(format!("{n}: {e}")))?;
        let dg = v["config_digest"]
            .as_str()
            .ok_or_else(|| Failure::config(format!("{n} has no config_digest")))?
            .to_string();
        match &digest {
            None => digest = Some(dg),
            Some(d0) if *d0 != dg => {
                return Err(Failure::audit(format!(
                    "config digest conflict: {n} has {dg}, earlier reports have {d0}"
                )))
            }
            _ => {}
        }
        passed &= v["passed"].as_bool().unwrap_or(false);
        merged.insert(n.trim_end_matches(".json").to_string(), v);
    }
    let out = json!({
        "command": "report",
        "config_digest": digest,
        "passed": passed,
        "merged": Value::Object(merged),
    });
    write_report(dir, "report", &out, workers)?;
    Ok(passed)
}
