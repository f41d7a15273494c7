"""Experiment dispatch and result persistence."""
from __future__ import annotations

import csv
import datetime as dt
import functools
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from . import geometry as geo
from . import localization as loc
from . import msa
from .config import RunConfig
from .geometry import Rectangle, edge_probe, scale_ladder
from .operator import DisorderEnsemble, InteractionSpec, assemble, sample_for
from .solver import combes_thomas_check, eig, stollmann_rise

RESULT_COLUMNS = ["experiment", "N", "n", "d", "L", "k", "p", "m", "E_star", "eps_or_grid", "trials",
                  "hits", "point", "ci_low", "ci_high", "bound_log10", "vacuous_flag", "seed"]

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2

# descriptive claim attached to every results file
PAPER_CLAIMS = {
    "geometry-verify": "n^n candidate centers cover every non-separable partner; far cubes with small spread are pre-separable",
    "wegner": "two-volume Wegner bound |C'||C| max|Pi_i C| s(F, 2 eps)",
    "cnr-pair": "P{exists E: neither separable cube is E-CNR} < L^{-4^N p}",
    "initial-scale": "Lifshitz-tail bound P{E_0 <= 2 C L0^{-1/2}} <= C_1 L0^d exp(-c L0^{1/4})",
    "initial-ds": "m = (14 N^N + 6 N d) L0^{-1/2}; E_0 > 2 C L0^{-1/2} implies (E, m)-NS for E <= E*",
    "ds-estimate": "P{exists E in I: separable cubes both (E, m)-S} <= L_k^{-2 p 4^{N-n}}",
    "tunnelling": "P{exists E in I: PI cube is (E, m)-T} <= 1/2 L_{k+1}^{-4 p 4^{N-n}}",
    "counts": "P{M_PI >= kappa(n) + 2} and P{pairwise separable FI singular cubes >= 2 ell} bounds",
    "lemma44-audit": "E-CNR and at most kappa(n) + 5 separable singular sub-cubes imply (E, m)-NS",
    "spectral-edge": "inf sigma(H) = 0 almost surely and [0, 4nd] is in the spectrum",
    "weyl": "translated quasi-modes give ||(H - E) phi_m|| -> 0 for E in [0, 4nd]",
    "decay": "eigenfunctions in [0, E*] decay exponentially",
    "dynamics": "sup_f || |X|^{s/2} f(H) P_I 1_K ||_HS^2 < infinity",
    "kernel-decay": "|| delta_x f(H) P_I delta_y ||_HS = |<delta_x, f(H) P_I delta_y>| and its decay in |x - y|",
    "ct-check": "|G(x, y; E)| <= 2 eta^{-1} exp(-(eta / 12 nu) |x - y|) for dist(E, sigma) = eta <= 1",
    "stollmann-check": "eigenvalues rise by at least t when t is added on one particle's projection",
}


def fmt(v: Any) -> str:
    """Deterministic text for CSV cells."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path: Path, rows: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or (list(rows[0].keys()) if rows else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        o = float(o)
        return o if math.isfinite(o) else repr(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if hasattr(o, "to_json"):
        return _jsonable(o.to_json())
    return o


@dataclass
class Outcome:
    rows: list[dict] = field(default_factory=list)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)
    reports: list = field(default_factory=list)


@dataclass
class Context:
    cfg: RunConfig
    seed: int
    workers: int

    @property
    def params(self):
        return self.cfg.model_params()

    @property
    def ensemble(self) -> DisorderEnsemble:
        return self.cfg.ensemble.build(self.seed)

    @property
    def interaction(self) -> InteractionSpec:
        return self.cfg.interaction_spec()

    @property
    def s(self) -> dict:
        return self.cfg.settings

    def cubes(self) -> tuple[Rectangle, ...]:
        if not self.cfg.cubes:
            return ()
        out = []
        for c in self.cfg.cubes:
            radii = c.radius if isinstance(c.radius, list) else [c.radius] * len(c.center)
            out.append(Rectangle(tuple(tuple(p) for p in c.center), tuple(radii)))
        return tuple(out)

    def plan(self, **kw) -> msa.ExperimentPlan:
        base = dict(params=self.params, ensemble=self.ensemble, interaction=self.interaction,
                    cubes=self.cubes(), trials=self.cfg.trials, seed=self.seed,
                    overrides={tuple(o.site): o.value for o in self.cfg.overrides})
        base.update(kw)
        return msa.ExperimentPlan(**base)

    def row(self, est: msa.MonteCarloEstimate, **kw) -> dict:
        P = self.params
        r = {"experiment": self.cfg.experiment, "N": P.N, "n": P.n, "d": P.d, "L": None, "k": None,
             "p": P.p, "m": P.m, "E_star": P.E_star, "eps_or_grid": None, "trials": est.trials,
             "hits": est.hits, "point": est.point, "ci_low": est.ci_low, "ci_high": est.ci_high,
             "bound_log10": est.bound_log10, "vacuous_flag": est.vacuous, "seed": self.seed}
        r.update(kw)
        return r

    def count_row(self, hits: int, trials: int, **kw) -> dict:
        est = msa.MonteCarloEstimate.from_counts(hits, trials, None, "")
        return self.row(est, **kw)


def _from_result(ctx: Context, res: msa.ExperimentResult) -> Outcome:
    out = Outcome(summary=dict(res.summary), violations=list(res.violations), reports=list(res.reports))
    for keys, est in res.estimates:
        out.rows.append(ctx.row(est, **keys))
    if res.table:
        out.tables[ctx.cfg.experiment.replace("-", "_")] = res.table
    return out


# --------------------------------------------------------------------------- experiments

def _geometry_reps(n: int, L: int) -> list[np.ndarray]:
    """Representative x configurations: coincident, clustered, spread and mixed."""
    reps = [np.zeros((n, 1), int)]
    if n >= 2:
        reps.append((np.arange(n) * L).reshape(n, 1))
        reps.append((np.arange(n) * (4 * n * L + 1)).reshape(n, 1))
    if n >= 3:
        reps.append(np.array([0, L, 5 * n * L][:n]).reshape(n, 1))
    return reps


def run_geometry(ctx: Context) -> Outcome:
    s = ctx.s
    out = Outcome()
    rng = np.random.default_rng(ctx.seed)
    table = []
    for n in s["n_list"]:
        N = s["N"] or max(n, 1)
        for L in s["L_list"]:
            bad = 0
            reps = _geometry_reps(n, L)
            for x in reps:
                bad += geo.verify_candidate_centers(x, L, N)
            table.append({"n": n, "L": L, "N": N, "x_count": len(reps), "counterexamples": bad,
                          "box_side": 20 * N * L})
            out.rows.append(ctx.count_row(bad, len(reps), L=L, n=n, N=N, eps_or_grid="covering"))
            if bad:
                out.violations.append(f"geometry: {bad} covering counterexamples at n={n}, L={L}")
    # sufficient condition for pre-separability on random instances
    premise = viol = 0
    for _ in range(s["random_instances"]):
        n = int(rng.choice(s["n_list"]))
        N = s["N"] or max(n, 1)
        L = int(rng.choice(s["L_list"]))
        x = rng.integers(-3 * L, 3 * L + 1, size=(n, 1))
        y = rng.integers(-2 * L, 2 * L + 1, size=(n, 1)) + rng.integers(-20 * N * L, 20 * N * L + 1)
        if geo.separable_from_B(x, y, L, N):
            premise += 1
            if geo.pre_separable_witness(Rectangle.cube(x, L), Rectangle.cube(y, L)) is None:
                viol += 1
    out.rows.append(ctx.count_row(viol, s["random_instances"], eps_or_grid="spread-implication"))
    out.summary.update({"covering": table, "implication_premise_count": premise,
                        "implication_violations": viol})
    out.tables["geometry"] = table
    if viol:
        out.violations.append(f"geometry: {viol} pre-separability implication failures")
    return out


def run_wegner(ctx: Context) -> Outcome:
    plan = ctx.plan()
    if not plan.cubes:
        P = ctx.params
        plan = replace(plan, cubes=msa.default_pair(P.n, P.d, 1, P.N))
    res = msa.wegner_experiment(plan, ctx.s["eps_list"], ctx.workers)
    out = _from_result(ctx, res)
    spread = res.summary.get("ratio_spread")
    if spread is not None and spread > ctx.s["max_ratio_spread"]:
        out.summary["ratio_spread_exceeded"] = True
    return out


def run_cnr(ctx: Context) -> Outcome:
    P = ctx.params
    plan = ctx.plan(options={"mirror": ctx.s["mirror"]})
    if not plan.cubes:
        L = scale_ladder(P.L0, ctx.s["k"], strict=not P.relaxed)[ctx.s["k"]]
        plan = replace(plan, cubes=msa.default_pair(P.n, P.d, L, P.N))
    return _from_result(ctx, msa.cnr_pair_experiment(plan, ctx.workers))


def run_initial_scale(ctx: Context) -> Outcome:
    res = msa.initial_scale_experiment(ctx.plan(), ctx.s["C_const"], ctx.s["L0_list"], ctx.workers)
    return _from_result(ctx, res)


def run_initial_ds(ctx: Context) -> Outcome:
    res = msa.initial_ds_check(ctx.plan(energy_step=ctx.s["energy_step"]), ctx.workers)
    out = _from_result(ctx, res)
    for r in out.rows:
        r["k"] = 0
    return out


def run_ds(ctx: Context) -> Outcome:
    out = Outcome()
    for k in ctx.s["k_list"]:
        res = msa.ds_estimate(ctx.plan(energy_step=ctx.s["energy_step"]), k, ctx.workers)
        part = _from_result(ctx, res)
        out.rows += part.rows
        out.summary[f"k={k}"] = part.summary
        out.violations += part.violations
        out.reports += part.reports
    if len(out.rows) >= 2:
        a, b = out.rows[0], out.rows[1]
        out.summary["trend"] = trend(a, b)
    return out


def trend(a: dict, b: dict) -> dict:
    """Compare two MC rows: separated CIs, or both upper bounds below 0.02."""
    separated = b["ci_high"] < a["ci_low"]
    both_small = a["ci_high"] < 0.02 and b["ci_high"] < 0.02
    arrow = "down" if b["point"] < a["point"] else ("flat" if b["point"] == a["point"] else "up")
    return {"arrow": arrow, "ci_separated": bool(separated), "both_upper_below_0.02": bool(both_small),
            "holds": bool(b["point"] <= a["point"] and (separated or both_small))}


def run_tunnelling(ctx: Context) -> Outcome:
    if ctx.s["control"] == "double_well":
        plan = msa.planted_double_well(ctx.params, ctx.s["k"], ctx.s["wall"], ctx.s["width"])
        plan = replace(plan, trials=ctx.cfg.trials, seed=ctx.seed)
    else:
        plan = ctx.plan(energy_step=ctx.s["energy_step"],
                        options={"energies": ctx.s["energies"], "step": ctx.s["step"]})
    out = _from_result(ctx, msa.tunnelling_probability(plan, ctx.s["k"], ctx.workers))
    out.summary["control"] = ctx.s["control"]
    return out


def run_counts(ctx: Context) -> Outcome:
    plan = ctx.plan(energy_step=ctx.s["energy_step"], options={"step": ctx.s["step"]})
    return _from_result(ctx, msa.count_statistics(plan, ctx.s["k"], ctx.s["ell"], ctx.workers))


def run_audit(ctx: Context) -> Outcome:
    plan = ctx.plan(energy_step=ctx.s["energy_step"], options={"step": ctx.s["step"]})
    out = _from_result(ctx, msa.cnr_ns_implication_audit(plan, ctx.s["k"], ctx.workers))
    # audit violations are findings at small L0, not broken invariants
    out.violations = []
    return out


def run_edge(ctx: Context) -> Outcome:
    P = ctx.params
    res = loc.spectral_edge_sweep(ctx.ensemble, ctx.interaction, P.n, P.d, ctx.s["box_sizes"],
                                  ctx.cfg.trials, ctx.workers)
    out = Outcome(tables={"edge_sweep": res["rows"]})
    for L in ctx.s["box_sizes"]:
        neg = sum(1 for r in res["rows"] if r["L"] == L and r["E0"] < -loc.PSD_TOL)
        out.rows.append(ctx.count_row(neg, ctx.cfg.trials, L=L, eps_or_grid="E0<-1e-9"))
    out.summary = {k: v for k, v in res.items() if k != "rows"}
    if not res["nonnegative"]:
        out.violations.append("spectral-edge: negative lowest eigenvalue")
    return out


def run_weyl(ctx: Context) -> Outcome:
    P = ctx.params
    nd = P.n * P.d
    energies = ctx.s["energies"] if ctx.s["energies"] is not None else [0.0, 2.0 * nd, 4.0 * nd]
    table, out = [], Outcome()
    for E in energies:
        res = loc.weyl_residual(E, lambda m: edge_probe(P.N, P.d, P.r0, ctx.s["k"], m, 1, n=P.n),
                                ctx.s["well_eps"], ctx.s["m_list"], ctx.ensemble, ctx.interaction)
        vals = [r.residual for r in res]
        mono = all(b <= a * (1 + ctx.s["jitter"]) for a, b in zip(vals, vals[1:]))
        for r in res:
            table.append(r.to_json())
            if r.potential_part > r.potential_bound * (1 + 1e-12):
                out.violations.append(f"weyl: potential part {r.potential_part} above {r.potential_bound}")
        out.summary[f"E={E!r}"] = {"residuals": vals, "nonincreasing": mono,
                                   "strictly_decreasing": all(b < a for a, b in zip(vals, vals[1:]))}
    out.tables["weyl"] = table
    return out


def _decay_trial(box, ensemble, interaction, window, fraction, i):
    return [f.to_json() | {"realization": i} for f in
            loc.decay_spectrum(box, ensemble, i, interaction, window, fraction)]


def run_decay(ctx: Context) -> Outcome:
    P = ctx.params
    box = Rectangle.cube(np.zeros((P.n, P.d), int), ctx.s["L"])
    window = tuple(ctx.s["window"]) if ctx.s["window"] else None
    fn = functools.partial(_decay_trial, box, ctx.ensemble, ctx.interaction, window, ctx.s["fraction"])
    fits = [f for part in msa.run_trials(fn, range(ctx.cfg.trials), ctx.workers) for f in part]
    rates = np.array([f["rate"] for f in fits], dtype=float)
    r2 = np.array([f["r2"] for f in fits], dtype=float)
    pos = int(np.sum(rates > 0))
    out = Outcome(tables={"decay_fits": [
        {"realization": f["realization"], "eigenvalue": f["eigenvalue"],
         "center": ";".join(",".join(map(str, p)) for p in f["center"]), "rate": f["rate"], "r2": f["r2"],
         "mass_tail": f["mass_tail"], "shells": f["shells"]} for f in fits]})
    out.rows.append(ctx.count_row(pos, max(1, len(fits)), L=ctx.s["L"], eps_or_grid="rate>0"))
    out.summary = {"states": len(fits), "positive_fraction": pos / max(1, len(fits)),
                   "median_rate": float(np.nanmedian(rates)) if fits else math.nan,
                   "median_r2": float(np.nanmedian(r2)) if fits else math.nan}
    out.summary["meets_thresholds"] = bool(out.summary["positive_fraction"] >= ctx.s["min_positive"]
                                           and out.summary["median_r2"] >= ctx.s["min_r2"])
    return out


def _times(t: dict) -> np.ndarray:
    return np.linspace(t["start"], t["stop"], t["num"])


def run_dynamics(ctx: Context) -> Outcome:
    P = ctx.params
    box = Rectangle.cube(np.zeros((P.n, P.d), int), ctx.s["L"])
    K = loc.k_ball(box, ctx.s["K_radius"])
    times = _times(ctx.s["times"])
    interval = tuple(ctx.s["interval"]) if ctx.s["interval"] else (-math.inf, math.inf)
    s_max = P.s_star if P.mode == "paper" else None
    table, out = [], Outcome()
    tol = ctx.s["bound_rel_tol"]
    for i in range(ctx.cfg.trials):
        dm = loc.dyn_moment(box, ctx.ensemble, i, ctx.interaction, ctx.s["s"], K, times, interval, s_max)
        bad = sum(v > dm.correlator_bound * (1 + tol) for v in dm.values)
        for t, v in zip(dm.times, dm.values):
            table.append({"realization": i, "t": t, "M": v, "B": dm.correlator_bound})
        out.rows.append(ctx.count_row(bad, len(times), L=ctx.s["L"], eps_or_grid=f"realization={i}"))
        v = np.array(dm.values)
        med = float(np.median(v))
        out.summary[f"realization={i}"] = {"bound": dm.correlator_bound, "median": med,
                                           "max_over_median": float(v.max() / med),
                                           "median_over_min": float(med / v.min()),
                                           "growth": float(v[-1] / v[0]), "states": dm.states_in_window}
        if bad:
            out.violations.append(f"dynamics: M(t) above the correlator bound at {bad} times (realization {i})")
    out.tables["dynamics"] = table
    return out


def run_kernel(ctx: Context) -> Outcome:
    P = ctx.params
    box = Rectangle.cube(np.zeros((P.n, P.d), int), ctx.s["L"])
    if ctx.s["pairs"]:
        pairs = [(np.array(x), np.array(y)) for x, y in ctx.s["pairs"]]
    else:
        origin = np.zeros(P.n * P.d, int)
        pairs = [(origin, np.full(P.n * P.d, r)) for r in range(0, ctx.s["L"] + 1, max(1, ctx.s["L"] // 6))]
    interval = tuple(ctx.s["interval"]) if ctx.s["interval"] else (-math.inf, math.inf)
    ladder = scale_ladder(P.L0, 3, strict=not P.relaxed)
    table, out = [], Outcome()
    worst = 0.0
    for i in range(ctx.cfg.trials):
        rows = loc.kernel_decay(box, ctx.ensemble, i, ctx.interaction, pairs, _times(ctx.s["times"]),
                                interval, ladder, P.N)
        for r in rows:
            r["realization"] = i
            r["x"] = ",".join(map(str, r["x"]))
            r["y"] = ",".join(map(str, r["y"]))
        table += rows
        worst = max(worst, max(r["diff"] for r in rows))
    bad = sum(r["diff"] > ctx.s["route_tol"] for r in table)
    out.rows.append(ctx.count_row(bad, len(table), L=ctx.s["L"], eps_or_grid="route-agreement"))
    out.tables["kernel_decay"] = table
    out.summary["max_route_difference"] = worst
    if bad:
        out.violations.append(f"kernel-decay: {bad} route disagreements above {ctx.s['route_tol']}")
    return out


def ct_instances(seed: int, count: int, max_L: int, ensemble: DisorderEnsemble,
                 interaction: InteractionSpec):
    """Random (operator, energy) pairs with dist(E, sigma) in (0, 1], below the spectrum or in a gap."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        n = int(rng.integers(1, 3))
        L = int(rng.integers(1, max_L + 1))
        center = rng.integers(-2, 3, size=(n, 1))
        cube = Rectangle.cube(center, L)
        op = assemble(cube, sample_for(ensemble, i, cube), interaction)
        w = eig(op).eigenvalues
        eta = float(rng.uniform(0.05, 1.0))
        gaps = np.flatnonzero(np.diff(w) > 2 * eta)
        if gaps.size and rng.random() < 0.5:
            j = int(rng.choice(gaps))
            E = float(w[j] + eta)
        else:
            E = float(w[0] - eta)
        yield i, op, E


def run_ct(ctx: Context) -> Outcome:
    table, worst = [], 0.0
    for i, op, E in ct_instances(ctx.seed, ctx.cfg.trials, ctx.s["max_L"], ctx.ensemble, ctx.interaction):
        rep = combes_thomas_check(op, E)
        worst = max(worst, rep.worst_ratio)
        table.append({"instance": i, "n": op.rectangle.n, "L": op.rectangle.L, "E": E,
                      "eta": rep.eta, "worst_ratio": rep.worst_ratio})
    bad = sum(r["worst_ratio"] > ctx.s["max_ratio"] for r in table)
    out = Outcome(tables={"ct_check": table}, summary={"worst_ratio": worst})
    out.rows.append(ctx.count_row(bad, len(table), eps_or_grid=f"ratio>{ctx.s['max_ratio']!r}"))
    if bad:
        out.violations.append(f"ct-check: {bad} instances with ratio above {ctx.s['max_ratio']}")
    return out


def stollmann_instances(seed: int, count: int, max_L: int, ensemble: DisorderEnsemble):
    rng = np.random.default_rng(seed)
    for i in range(count):
        n = int(rng.integers(1, 3))
        radii = tuple(int(v) for v in rng.integers(1, max_L + 1, size=n))
        center = tuple((int(c),) for c in rng.integers(-2, 3, size=n))
        yield i, Rectangle(center, radii), int(rng.integers(0, n))


def run_stollmann(ctx: Context) -> Outcome:
    table = []
    for i, r, particle in stollmann_instances(ctx.seed, ctx.cfg.trials, ctx.s["max_L"], ctx.ensemble):
        pot = sample_for(ctx.ensemble, i, r)
        for t in ctx.s["t_list"]:
            rise = stollmann_rise(r, pot, ctx.interaction, particle, t)
            table.append({"instance": i, "particle": particle + 1, "t": t, "min_rise": rise,
                          "ok": rise >= t - ctx.s["slack"]})
    bad = sum(not r["ok"] for r in table)
    out = Outcome(tables={"stollmann": table},
                  summary={"min_excess": min(r["min_rise"] - r["t"] for r in table)})
    out.rows.append(ctx.count_row(bad, len(table), eps_or_grid="rise<t"))
    if bad:
        out.violations.append(f"stollmann-check: {bad} eigenvalue rises below t")
    return out


RUNNERS: dict[str, Callable[[Context], Outcome]] = {
    "geometry-verify": run_geometry, "wegner": run_wegner, "cnr-pair": run_cnr,
    "initial-scale": run_initial_scale, "initial-ds": run_initial_ds, "ds-estimate": run_ds,
    "tunnelling": run_tunnelling, "counts": run_counts, "lemma44-audit": run_audit,
    "spectral-edge": run_edge, "weyl": run_weyl, "decay": run_decay, "dynamics": run_dynamics,
    "kernel-decay": run_kernel, "ct-check": run_ct, "stollmann-check": run_stollmann,
}


# --------------------------------------------------------------------------- persistence

def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def run(cfg: RunConfig, out_dir: str | Path, seed: int, workers: int | None = None,
        emit_reports: bool = False) -> tuple[int, Outcome]:
    """Run one experiment and write its files; returns (exit code, outcome)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = cfg.model_copy(update={"seed": seed, "workers": workers or cfg.workers,
                                 "output_dir": str(out_dir)})
    started = _now()
    ctx = Context(cfg, seed, cfg.workers)
    outcome = RUNNERS[cfg.experiment](ctx)
    ended = _now()
    (out_dir / "resolved_config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
    write_csv(out_dir / "results.csv", outcome.rows, RESULT_COLUMNS)
    for name, rows in outcome.tables.items():
        write_csv(out_dir / f"{name}.csv", rows)
    summary = {"experiment": cfg.experiment, "paper_claim": PAPER_CLAIMS[cfg.experiment],
               "rows": outcome.rows, "summary": outcome.summary, "violations": outcome.violations}
    (out_dir / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    manifest = {"config_hash": cfg.config_hash(), "started": started, "ended": ended,
                "artifact_version": __version__, "experiment": cfg.experiment,
                "paper_claim": PAPER_CLAIMS[cfg.experiment], "seed": seed, "workers": cfg.workers,
                "files": sorted(["results.csv", "summary.json", "resolved_config.yaml",
                                 *(f"{n}.csv" for n in outcome.tables)])}
    if emit_reports and outcome.reports:
        (out_dir / "reports.jsonl").write_text(
            "".join(json.dumps(_jsonable(r), sort_keys=True) + "\n" for r in outcome.reports), encoding="utf-8")
        manifest["files"].append("reports.jsonl")
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return (EXIT_VIOLATION if outcome.violations else EXIT_OK), outcome


# --------------------------------------------------------------------------- report

def report(results_dir: str | Path) -> str:
    d = Path(results_dir)
    mf, res = d / "manifest.json", d / "results.csv"
    if not mf.is_file() or not res.is_file():
        raise FileNotFoundError(f"{d}: no manifest.json/results.csv found")
    try:
        manifest = json.loads(mf.read_text(encoding="utf-8"))
        rows = list(csv.DictReader(res.open(encoding="utf-8")))
    except (json.JSONDecodeError, csv.Error) as exc:
        raise ValueError(f"{d}: corrupt results: {exc}") from exc
    lines = [f"experiment: {manifest['experiment']}  (seed {manifest['seed']}, version {manifest['artifact_version']})",
             f"claim: {manifest['paper_claim']}", ""]
    head = f"{'L':>5} {'k':>3} {'grid':>16} {'hits':>7} {'trials':>7} {'estimate':>10} {'95% CI':>23} {'bound':>16}"
    lines.append(head)
    for r in rows:
        b = r["bound_log10"]
        if b == "":
            bound = "-"
        elif r["vacuous_flag"] == "true":
            bound = f"1e{float(b):.1f} (vacuous)"
        else:
            bound = f"{10 ** float(b):.3g}"
        ci = f"[{float(r['ci_low']):.4f}, {float(r['ci_high']):.4f}]"
        lines.append(f"{r['L']:>5} {r['k']:>3} {r['eps_or_grid'][:16]:>16} {r['hits']:>7} {r['trials']:>7} "
                     f"{float(r['point']):>10.4g} {ci:>23} {bound:>16}")
    if manifest["experiment"] == "ds-estimate" and len(rows) >= 2:
        a, b = ({k: (float(v) if k in ("point", "ci_low", "ci_high") else v) for k, v in r.items()} for r in rows[:2])
        t = trend(a, b)
        arrow = {"down": "↓", "up": "↑", "flat": "→"}[t["arrow"]]
        note = "CIs separated" if t["ci_separated"] else (
            "both CI upper bounds < 0.02" if t["both_upper_below_0.02"] else "CIs overlap")
        lines.append(f"\ntrend k={a['k']} -> k={b['k']}: {arrow} ({note})")
    return "\n".join(lines)
