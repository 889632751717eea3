"""Scenario orchestration: physical run, similarity run, functionals, checks, artifacts.

A run directory holds

- ``config.toml``: the configuration echo
- ``physical_history.csv``: per-step ``t``, ``T - t``, ``max|u|``, local time scale
- ``physical_snapshots.csv`` and ``physical_start.npz``
- ``similarity_snapshots.csv``
- ``functionals_eta<eta>.csv``: one report row per ``report_every`` in ``s``
- ``identities.csv``: left side, right side and residual of each identity
- ``checks.json``, ``checks.txt`` and ``summary.json``

``check_artifacts`` recomputes every check from these files alone.
"""
from __future__ import annotations

import math
import subprocess
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, dumps, load
from .functionals import (NORMALIZATION, FunctionalConfig, FunctionalReport,
                          evaluate_report, identity_series, reports_to_arrays, resolve_config)
from .io import read_csv, read_json, save_state_npz, write_csv, write_json, write_snapshot_blocks
from .model import kappa0
from .physical import advance_to, initial_state, run_until_blowup
from .quadrature import RadialGrid
from .similarity import SimilarityState, calibrate_frame, evolve, to_similarity
from .verifier import (CheckOutcome, Resolution, corrector_sweep, growth_bound_check,
                       monotonicity_check, rate_ratio_check, rate_window_check)

ENV_OUT = "CONFORMAL_BLOWUP_OUT"
EXPONENTIAL_BOUNDS = ("thm1_exp", "thm1_exp_energy", "prop3_exp")
POLYNOMIAL_BOUNDS = ("thm4_poly_velocity", "thm4_poly_gradient", "thm4_poly_potential")


def version_string() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        desc = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def eta_tag(eta: float) -> str:
    return format(float(eta), "g")


@dataclass
class RunResult:
    status: int
    directory: Path
    outcomes: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def failed(self):
        return [o.name for o, req in self.outcomes if req and not o.passed]


# --- stages -------------------------------------------------------------------------

def _functional_configs(cfg: ExperimentConfig, initial: SimilarityState):
    fn = cfg.functionals
    out = {}
    for eta in fn.etas:
        base = FunctionalConfig(
            eta=float(eta), b=fn.b,
            theta=None if fn.theta == "auto" else float(fn.theta),
            sigma=None if fn.sigma == "auto" else float(fn.sigma))
        out[float(eta)] = resolve_config(base, initial, cfg.params)
    return out


def _b_H0(cfg):
    v = cfg.functionals.b_H0
    return None if v == "auto" else float(v)


def _physical_stage(cfg: ExperimentConfig, out: Path, summary: dict):
    params, ph = cfg.params, cfg.physical
    st0, traj, est = _physical_stage_quiet(cfg)
    hi, lo, sup = np.asarray(traj.t_hi), np.asarray(traj.t_lo), np.asarray(traj.sup)
    if est is not None:
        rem = est.remaining(hi, lo)
        with np.errstate(invalid="ignore"):
            scaled = np.where(rem > 0, np.abs(rem) ** params.alpha * sup, np.nan)
    else:
        rem = np.full_like(hi, np.nan)
        scaled = rem
    write_csv(out / "physical_history.csv",
              ["t", "t_lo", "T_minus_t", "sup", "tau_loc", "scaled_sup"],
              zip(hi, lo, rem, sup, traj.tau_loc, scaled))
    summary["physical"] = {
        "outcome": traj.outcome, "steps": len(traj.t_hi) - 1,
        "T_fit": None if est is None else est.T,
        "fit_method": ph.fit_method,
        "fit_residual": None if est is None else est.residual,
        "fit_window": None if est is None else list(est.fit_window),
    }
    return st0, traj, est


def _snapshot_chain(st0, t_end, count, params, cfl, step_fraction):
    """States at ``count`` equally spaced times ending at ``t_end``."""
    times = np.linspace(0.0, t_end, max(count, 2))
    chain, st = [], st0
    for t in times:
        if t > st.t:
            st = advance_to(st, float(t), params, cfl, step_fraction)
        chain.append(st)
    return chain


def _similarity_start(cfg, params, gy, st0, est, summary, out):
    sm = cfg.similarity
    k0 = kappa0(params)
    fam = cfg.data.family
    if fam == "steady_state":
        return SimilarityState(s=sm.s_start, w=np.full(gy.n, k0), ws=np.zeros(gy.n), grid=gy), None
    if fam == "zero":
        return SimilarityState(s=sm.s_start, w=np.zeros(gy.n), ws=np.zeros(gy.n), grid=gy), None
    if est is None:
        raise RuntimeError("no blow-up detected; the similarity frame is undefined")
    # a frame shift of O(1e-5) must not push s below s_start
    t0 = est.T - 0.99 * math.exp(-sm.s_start)
    if t0 < 0:
        raise RuntimeError(f"blow-up at T={est.T} is too early for s_start={sm.s_start}")
    ph = cfg.physical
    chain = _snapshot_chain(st0, t0, ph.snapshots, params, ph.cfl, ph.step_fraction)
    snap = chain[-1]
    if ph.snapshots:
        write_snapshot_blocks(out / "physical_snapshots.csv", chain[-ph.snapshots:])
    save_state_npz(out / "physical_start.npz", snap)
    T0 = est.T
    if sm.calibrate:
        cal = calibrate_frame(snap, est.T, params, gy, span=sm.span, cfl=sm.cfl)
        T0 = cal.T0
        summary["calibration"] = {"T0": cal.T0, "evaluations": cal.evaluations,
                                  "final_velocity": cal.final_velocity}
    summary["T0"] = T0
    return to_similarity(snap, T0, params, gy), T0


def _identity_keys(etas):
    keys = []
    for eta in etas:
        keys += [(f"E_eta_{eta_tag(eta)}", "E_eta", eta), (f"N_eta_{eta_tag(eta)}", "N_eta", eta)]
    return keys + [("E_phi", "E_phi", etas[0]), ("E0", "E0", etas[0])]


STENCIL = 5


def _identity_row(window, keys, cfgs, params):
    row = []
    for _, which, eta in keys:
        _, lhs, rhs, res = identity_series(window, which, cfgs[eta], params, stencil=STENCIL)
        row += [lhs[0], rhs[0], res[0]]
    return row


def _similarity_stage(cfg, start: SimilarityState, cfgs, out: Path, summary: dict):
    params, sm = cfg.params, cfg.similarity
    h = start.grid.spacing
    per = max(1, math.ceil(sm.report_every / (sm.cfl * h) - 1e-9))
    nrep = int(round(sm.span / sm.report_every))
    snap_every = max(1, int(round(sm.snapshot_every / sm.report_every)))
    ds = sm.report_every / per
    etas = list(cfgs)
    keys = _identity_keys(etas)
    b_H0 = _b_H0(cfg)
    reports = {eta: [] for eta in etas}
    ident_rows, snaps = [], []
    buf = deque(maxlen=STENCIL)
    half = STENCIL // 2
    counter = [0]

    def observe(st):
        k = counter[0]
        counter[0] += 1
        buf.append(st)
        if k % per == 0:
            for eta in etas:
                reports[eta].append(evaluate_report(st, cfgs[eta], params, b_H0))
            if (k // per) % snap_every == 0:
                snaps.append(st)
        if k >= 2 * half and (k - half) % per == 0:
            ident_rows.append([buf[half].s] + _identity_row(list(buf), keys, cfgs, params))

    end = evolve(start, params, start.s + nrep * sm.report_every, cfl=sm.cfl,
                 observer=observe, nsteps=per * nrep)
    for eta in etas:
        write_csv(out / f"functionals_eta{eta_tag(eta)}.csv", FunctionalReport.columns(),
                  (r.row() for r in reports[eta]))
    header = ["s"] + [f"{name}_{part}" for name, _, _ in keys for part in ("lhs", "rhs", "residual")]
    write_csv(out / "identities.csv", header, ident_rows)
    write_snapshot_blocks(out / "similarity_snapshots.csv", snaps, time_key="s", space_key="y",
                          fields=("w", "ws"))
    summary["similarity"] = {
        "outcome": "completed" if end.valid else "nonfinite",
        "s_start": start.s, "s_end": end.s, "dy": h, "ds": ds,
        "steps": counter[0] - 1, "reports": len(reports[etas[0]]),
    }
    summary["functionals"] = {eta_tag(e): {"theta": c.theta, "sigma": c.sigma, "eta": c.eta, "b": c.b}
                              for e, c in cfgs.items()}
    summary["b_H0"] = cfg.model.a / 2.0 if b_H0 is None else b_H0
    ident_max = {}
    for j, (name, _, _) in enumerate(keys):
        res = np.array([r[1 + 3 * j + 2] for r in ident_rows])
        ident_max[name] = float(np.max(np.abs(res))) if res.size else math.nan
    return {eta: reports_to_arrays(reports[eta]) for eta in etas}, ident_max, Resolution(h, ds)


# --- checks -----------------------------------------------------------------------------

def _guard(name, fn):
    try:
        return fn()
    except (ValueError, RuntimeError) as exc:
        return CheckOutcome(name, False, -1.0, {"error": str(exc)}, 0.0)


def _renamed(o: CheckOutcome, name: str) -> CheckOutcome:
    return replace(o, name=name)


def evaluate_checks(cfg: ExperimentConfig, ctx: dict) -> list:
    """Run every configured check on a run context.

    ``ctx`` holds ``T_fit``, ``T0``, ``history`` (``remaining``, ``sup``),
    ``reports`` (arrays per eta), ``identity_max``, ``resolution`` and
    ``cfgs`` (resolved functional configs per eta); entries a check does not
    need may be missing.  Returns ``(CheckOutcome, required)`` pairs.
    """
    ck, params = cfg.checks, cfg.params
    run = set(ck.run)
    res = []

    def add(o, kind):
        res.append((o, kind not in ck.advisory))

    if "blowup_time" in run:
        T = ctx.get("T_fit")
        if T is None:
            o = CheckOutcome("blowup_time", False, -1.0, {"error": "no blow-up detected"})
        else:
            err = abs(T - ck.expected_T)
            o = CheckOutcome("blowup_time", err <= ck.T_tolerance, ck.T_tolerance - err,
                             {"T": T, "expected": ck.expected_T, "error": err}, 0.0)
        add(o, "blowup_time")
    if "ode_rate" in run:
        hist = ctx.get("history")
        if hist is None or ctx.get("T_fit") is None:
            o = CheckOutcome("ode_rate", False, -1.0, {"error": "no blow-up detected"})
        else:
            o = rate_ratio_check(hist["remaining"], hist["sup"], params, ck.ode_decades,
                                 tuple(ck.ode_window))
        add(o, "ode_rate")
    reports = ctx.get("reports")
    if not reports:
        for kind in run & {"identities", "monotonicity", "corrector_sweep", "growth", "rate_window"}:
            add(CheckOutcome(kind, False, -1.0, {"error": "no similarity series"}), kind)
        return res
    cfgs, rsl = ctx["cfgs"], ctx["resolution"]
    eta0 = next(iter(cfgs))
    first = reports[eta0]
    burn = ck.burn_in
    if "identities" in run:
        for name, val in ctx["identity_max"].items():
            m = ck.identity_tolerance - val if math.isfinite(val) else -1.0
            add(CheckOutcome(f"identity_{name}", m >= 0, m,
                             {"max_residual": val, "tolerance": ck.identity_tolerance}), "identities")
    if "monotonicity" in run:
        for eta, arr in reports.items():
            o = _guard("monotone_G_eta", lambda: monotonicity_check(
                arr, "G_eta", burn, params, cfgs[eta], rsl, ck.allowance_c))
            add(_renamed(o, f"monotone_G_eta_{eta_tag(eta)}"), "monotonicity")
        for which in ("L", "H0"):
            add(_guard(f"monotone_{which}", lambda: monotonicity_check(
                first, which, burn, params, cfgs[eta0], rsl, ck.allowance_c)), "monotonicity")
    if "corrector_sweep" in run:
        for eta, arr in reports.items():
            o = _guard("sweep_G_eta", lambda: corrector_sweep(
                arr, "G_eta", burn, params, cfgs[eta], rsl, ck.sweep_decades,
                allowance_c=ck.allowance_c))
            add(_renamed(o, f"sweep_G_eta_{eta_tag(eta)}"), "corrector_sweep")
        add(_guard("sweep_L", lambda: corrector_sweep(
            first, "L", burn, params, cfgs[eta0], rsl, ck.sweep_decades,
            allowance_c=ck.allowance_c)), "corrector_sweep")
    if "growth" in run:
        for eta, arr in reports.items():
            for bound in EXPONENTIAL_BOUNDS:
                o = _guard(bound, lambda: growth_bound_check(
                    arr, bound, eta, params, start=float(arr["s"][0]),
                    fit_tolerance=ck.fit_tolerance, seed=cfg.seed))
                add(_renamed(o, f"{bound}_{eta_tag(eta)}"), "growth")
        for bound in POLYNOMIAL_BOUNDS:
            add(_guard(bound, lambda: growth_bound_check(
                first, bound, cfgs[eta0].b, params, start=float(first["s"][0]), seed=cfg.seed)),
                "growth")
    if "rate_window" in run:
        frame = None
        if ctx.get("T0") is not None and ctx.get("T_fit") is not None:
            frame = (ctx["T0"], ctx["T_fit"])
        add(_guard("rate_window", lambda: rate_window_check(
            first, params, burn, ck.rate_span, ck.rate_floor, frame=frame)), "rate_window")
    return res


def _write_checks(out: Path, outcomes, status: int):
    write_json(out / "checks.json", {
        "status": status,
        "checks": [dict(o.to_dict(), required=req) for o, req in outcomes],
    })
    write_text_table(out / "checks.txt", outcomes)


def format_table(outcomes) -> str:
    rows = [("check", "kind", "result", "margin")]
    for o, req in outcomes:
        rows.append((o.name, "required" if req else "advisory",
                     "PASS" if o.passed else "FAIL", format(o.margin, ".6g")))
    w = [max(len(r[k]) for r in rows) for k in range(4)]
    return "\n".join("  ".join(c.ljust(w[k]) for k, c in enumerate(r)).rstrip() for r in rows) + "\n"


def write_text_table(path, outcomes):
    Path(path).write_text(format_table(outcomes))


# --- entry points --------------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Run a configured scenario and write its artifacts.

    ``status`` is 0 when every required check passes and 1 otherwise.
    Artifacts written before a failure are kept.
    """
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dumps(cfg))
    params = cfg.params
    summary = {
        "name": cfg.name, "version": version_string(), "seed": cfg.seed,
        "normalization": NORMALIZATION, "config": cfg.to_dict(),
        "constants": {"p": params.p, "alpha": params.alpha, "kappa0": kappa0(params)},
        "burn_in": cfg.checks.burn_in,
    }
    ctx = {}
    errors = []
    try:
        st0 = est = None
        if cfg.physical_enabled:
            st0, traj, est = _physical_stage(cfg, out, summary)
            ctx["T_fit"] = None if est is None else est.T
            if est is not None:
                ctx["history"] = {"remaining": est.remaining(np.asarray(traj.t_hi), np.asarray(traj.t_lo)),
                                  "sup": np.asarray(traj.sup)}
        if cfg.similarity.enabled:
            gy = RadialGrid.uniform(cfg.similarity.nodes)
            start, T0 = _similarity_start(cfg, params, gy, st0, est, summary, out)
            ctx["T0"] = T0
            cfgs = _functional_configs(cfg, start)
            reports, ident, rsl = _similarity_stage(cfg, start, cfgs, out, summary)
            ctx.update(reports=reports, identity_max=ident, resolution=rsl, cfgs=cfgs)
        elif cfg.physical_enabled and est is not None and cfg.physical.snapshots:
            ph = cfg.physical
            chain = _snapshot_chain(st0, est.fit_window[0], ph.snapshots, params, ph.cfl,
                                    ph.step_fraction)
            write_snapshot_blocks(out / "physical_snapshots.csv", chain)
            save_state_npz(out / "physical_start.npz", chain[-1])
    except (RuntimeError, FloatingPointError, ValueError) as exc:
        errors.append(f"{type(exc).__name__}: {exc}")
    outcomes = evaluate_checks(cfg, ctx)
    if errors:
        outcomes.append((CheckOutcome("pipeline", False, -1.0, {"errors": errors}), True))
    status = 0 if all(o.passed for o, req in outcomes if req) else 1
    summary["status"] = status
    summary["failed"] = [o.name for o, req in outcomes if req and not o.passed]
    summary["T_fit"] = ctx.get("T_fit")
    summary.setdefault("T0", ctx.get("T0"))
    _write_checks(out, outcomes, status)
    write_json(out / "summary.json", summary)
    return RunResult(status, out, outcomes, summary)


def context_from_artifacts(directory):
    """Rebuild the check context of a finished run from its files."""
    d = Path(directory)
    cfg = load(d / "config.toml")
    summary = read_json(d / "summary.json")
    ctx = {"T_fit": summary.get("T_fit"), "T0": summary.get("T0")}
    hist = d / "physical_history.csv"
    if hist.exists():
        _, cols = read_csv(hist)
        ctx["history"] = {"remaining": cols["T_minus_t"], "sup": cols["sup"]}
    sim = summary.get("similarity")
    if cfg.similarity.enabled and sim is not None:
        cfgs, reports = {}, {}
        for eta in cfg.functionals.etas:
            f = summary["functionals"][eta_tag(eta)]
            cfgs[float(eta)] = FunctionalConfig(eta=f["eta"], b=f["b"], theta=f["theta"], sigma=f["sigma"])
            _, cols = read_csv(d / f"functionals_eta{eta_tag(eta)}.csv")
            reports[float(eta)] = cols
        _, ident = read_csv(d / "identities.csv")
        imax = {}
        for name, _, _ in _identity_keys([float(e) for e in cfg.functionals.etas]):
            col = ident[f"{name}_residual"]
            imax[name] = float(np.max(np.abs(col))) if col.size else math.nan
        ctx.update(reports=reports, identity_max=imax, cfgs=cfgs,
                   resolution=Resolution(sim["dy"], sim["ds"]))
    return cfg, ctx


def check_artifacts(directory) -> RunResult:
    """Recompute the checks of a run directory from its CSV/JSON artifacts."""
    cfg, ctx = context_from_artifacts(directory)
    outcomes = evaluate_checks(cfg, ctx)
    status = 0 if all(o.passed for o, req in outcomes if req) else 1
    return RunResult(status, Path(directory), outcomes, {})


# --- convergence ------------------------------------------------------------------------

@dataclass
class ConvergenceTable:
    nodes: list
    ds: list
    residuals: dict   # identity -> list per level
    orders: dict      # identity -> list per refinement (None for "exact")
    status: dict      # identity -> "exact" | "converging" | "failed"
    min_order: float

    @property
    def passed(self) -> bool:
        return all(v != "failed" for v in self.status.values())

    def to_dict(self):
        return {"nodes": self.nodes, "ds": self.ds, "residuals": self.residuals,
                "orders": self.orders, "status": self.status, "min_order": self.min_order,
                "passed": self.passed}


def convergence_suite(cfg: ExperimentConfig, levels: int) -> ConvergenceTable:
    """Identity residuals under simultaneous refinement of ``dy`` and ``ds``.

    Level ``k`` uses ``(n0 - 1) 2^k + 1`` nodes and ``2^k`` times as many
    steps over the same window; residuals are measured at the same values of
    ``s`` on every level.  An identity is ``exact`` when its residual sits
    below ``convergence.exact_floor`` on the finer level of every pair;
    otherwise each observed order must reach ``convergence.min_order``.
    """
    if levels < 2:
        raise ValueError("a convergence study needs at least 2 levels")
    params, sm, cv = cfg.params, cfg.similarity, cfg.convergence
    n0 = sm.nodes
    gy0 = RadialGrid.uniform(n0)
    if cfg.physical_enabled:
        st0, _, est = _physical_stage_quiet(cfg)
        if est is None:
            raise RuntimeError("no blow-up detected; the similarity frame is undefined")
        t0 = est.T - 0.99 * math.exp(-sm.s_start)
        snap = advance_to(st0, t0, params, cfg.physical.cfl, cfg.physical.step_fraction)

        def start_fn(gy):
            return to_similarity(snap, est.T, params, gy)
    else:
        def start_fn(gy):
            return _similarity_start(cfg, params, gy, None, None, {}, None)[0]
    cfgs = _functional_configs(cfg, start_fn(gy0))
    keys = _identity_keys(list(cfgs))
    nsteps0 = max(2 * (cv.samples + 1), math.ceil(cv.window / (sm.cfl * gy0.spacing) - 1e-9))
    stride = nsteps0 // (cv.samples + 1)
    table = {name: [] for name, _, _ in keys}
    nodes, dss = [], []
    for k in range(levels):
        n = (n0 - 1) * 2**k + 1
        nsteps = nsteps0 * 2**k
        centres = [j * stride * 2**k for j in range(1, cv.samples + 1)]
        want = {c + STENCIL // 2 for c in centres}
        gy = RadialGrid.uniform(n)
        st = start_fn(gy)
        buf = deque(maxlen=STENCIL)
        rows = []
        counter = [0]

        def observe(x):
            i = counter[0]
            counter[0] += 1
            buf.append(x)
            if i in want:
                rows.append(_identity_row(list(buf), keys, cfgs, params))

        evolve(st, params, st.s + cv.window, cfl=sm.cfl, observer=observe, nsteps=nsteps)
        nodes.append(n)
        dss.append(cv.window / nsteps)
        for j, (name, _, _) in enumerate(keys):
            table[name].append(float(np.max(np.abs([r[3 * j + 2] for r in rows]))))
    orders, status = {}, {}
    for name, r in table.items():
        o, exact = [], True
        for k in range(1, levels):
            if r[k] <= cv.exact_floor and r[k - 1] <= cv.exact_floor:
                o.append(None)
            else:
                exact = False
                o.append(math.log2(r[k - 1] / r[k]) if r[k] > 0 else math.inf)
        orders[name] = o
        if exact:
            status[name] = "exact"
        elif all(v is None or v >= cv.min_order for v in o):
            status[name] = "converging"
        else:
            status[name] = "failed"
    return ConvergenceTable(nodes, dss, table, orders, status, cv.min_order)


def _physical_stage_quiet(cfg):
    params, ph = cfg.params, cfg.physical
    grid = RadialGrid.uniform(ph.nodes, ph.domain_end)
    st0 = initial_state(cfg.data.family, grid, params, **cfg.data.kwargs())
    traj, est = run_until_blowup(st0, params, threshold=ph.threshold, cfl=ph.cfl,
                                 horizon=ph.horizon, step_fraction=ph.step_fraction,
                                 method=ph.fit_method)
    return st0, traj, est


def write_convergence(table: ConvergenceTable, out: Path):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    names = list(table.residuals)
    header = ["nodes", "ds"] + [f"{n}_residual" for n in names] + [f"{n}_order" for n in names]
    rows = []
    for k, n in enumerate(table.nodes):
        orders = [math.nan if k == 0 or table.orders[m][k - 1] is None else table.orders[m][k - 1]
                  for m in names]
        rows.append([n, table.ds[k]] + [table.residuals[m][k] for m in names] + orders)
    write_csv(out / "convergence.csv", header, rows)
    write_json(out / "convergence.json", table.to_dict())


def format_convergence(table: ConvergenceTable) -> str:
    lines = ["identity        " + "  ".join(f"n={n:<9d}" for n in table.nodes) + "  orders          status"]
    for name, r in table.residuals.items():
        o = ", ".join("exact" if v is None else f"{v:.2f}" for v in table.orders[name])
        lines.append(f"{name:<16s}" + "  ".join(f"{v:<11.3e}" for v in r) + f"  {o:<16s}{table.status[name]}")
    return "\n".join(lines) + "\n"
