"""Experiment drivers: phase scans, spreading fits, Monte Carlo cross-checks and certificates.

Each driver returns plain data (lists of row dicts or small dataclasses);
:func:`run_experiment` writes them as CSV plus a ``summary.json``.
"""

from __future__ import annotations

import csv
import json
import math
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import certificates as cert
from . import pde
from .config import ExperimentConfig
from .errors import PreconditionError, SpreadingError
from .nonlinearity import Nonlinearity, VotingRule, as_nonlinearity, sigma, speeds
from .particle_sim import SimConfig, estimate_u, estimate_value_cdf

TRIVIAL_MAX = 0.05
NONTRIVIAL_FRACTION = 0.5
MATCH_SLACK = 0.02
# large-time trees are heavy tailed; a generous cap keeps truncation out of the cdf
CDF_PARTICLE_CAP = 10**8

PHASE_DEFAULTS = {"scheme": "imex", "dx": 0.05, "dt": 0.01, "L": 40.0, "t_end": 400.0,
                  "steady_tol": 1e-8}
SPEED_DEFAULTS = {"scheme": "imex", "dx": 0.05, "dt": 0.01, "L": 20.0, "max_L": 5120.0}
CROSS_DEFAULTS = {"scheme": "imex", "dx": 0.02, "dt": 0.002, "L": 40.0}
CDF_DEFAULTS = {"scheme": "imex", "dx": 0.05, "dt": 0.01, "L": 60.0, "t_end": 600.0,
                "steady_tol": 1e-8}


def _merge(defaults: dict, given: dict | None) -> dict:
    out = dict(defaults)
    out.update(given or {})
    return out


def _rule(rule) -> tuple[VotingRule, Nonlinearity]:
    F = as_nonlinearity(rule)
    return F.rule, F


# --- phase scan --------------------------------------------------------------


def classify(max_u: float, xi: float) -> str:
    if max_u <= TRIVIAL_MAX:
        return "trivial"
    if max_u >= NONTRIVIAL_FRACTION * xi:
        return "nontrivial"
    return "indeterminate"


def _phase_point(args):
    rule, zeta, gamma, s = args
    F = as_nonlinearity(rule)
    grid = pde.Grid.from_spacing(float(s["L"]), float(s["dx"]))
    cfg = pde.SolverConfig(gamma, zeta, float(s["dt"]), s["scheme"], float(s["t_end"]),
                           float(s["steady_tol"]))
    res = pde.steady_state(F, cfg, grid)
    half = grid.x <= 0.5 * grid.L
    max_u = float(res.field.values[half].max())
    return {
        "gamma": gamma,
        "max_U_half": max_u,
        "converged": res.converged,
        "t_stop": res.field.time,
        "class": classify(max_u, F.Xi),
    }, res.field


@dataclass
class PhaseScan:
    rows: list
    bracket: tuple | None
    monotone: bool
    profiles: dict = field(default_factory=dict)


def phase_scan(rule, zeta: float, gamma_list: Sequence[float], solver: dict | None = None,
               workers: int = 1) -> PhaseScan:
    """Steady states over ``gamma_list`` and the empirical transition bracket.

    The bracket is ``(last nontrivial gamma, first trivial gamma)``.  The scan
    is flagged non-monotone if a nontrivial point follows a trivial one.
    """
    gammas = [float(g) for g in gamma_list]
    if any(g <= 1 for g in gammas):
        raise PreconditionError("phase_scan needs every gamma > 1")
    gammas = sorted(gammas)
    s = _merge(PHASE_DEFAULTS, solver)
    rule, _ = _rule(rule)
    jobs = [(rule, zeta, g, s) for g in gammas]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_phase_point, jobs))
    else:
        results = [_phase_point(j) for j in jobs]
    rows = [r for r, _ in results]
    classes = [r["class"] for r in rows]
    monotone = not any(
        classes[i] == "trivial" and "nontrivial" in classes[i + 1:] for i in range(len(classes))
    )
    nontriv = [r["gamma"] for r in rows if r["class"] == "nontrivial"]
    triv = [r["gamma"] for r in rows if r["class"] == "trivial"]
    bracket = None
    if nontriv:
        later = [g for g in triv if g > max(nontriv)]
        if later:
            bracket = (max(nontriv), min(later))
    profiles = {r["gamma"]: f for r, f in results}
    return PhaseScan(rows, bracket, monotone, profiles)


# --- spreading fit -----------------------------------------------------------


def level_position(field: pde.Field, q: float) -> float | None:
    """First crossing of ``u`` above ``q`` scanning from ``x = 0``, linearly interpolated."""
    xg = np.concatenate([[0.0], field.grid.x])
    ug = np.concatenate([[0.0], field.values])
    above = np.flatnonzero(ug > q)
    if above.size == 0:
        return None
    i = int(above[0])
    return float(xg[i - 1] + (q - ug[i - 1]) / (ug[i] - ug[i - 1]) * (xg[i] - xg[i - 1]))


@dataclass
class SpreadingFit:
    q: float
    times: list
    positions: list
    lengths: list
    slope: float
    half_width: float
    c_under: float | None
    c_over: float | None
    profiles: list = field(default_factory=list)

    def in_band(self, rel: float = 0.25) -> bool:
        if self.c_under is None:
            return False
        lo = self.c_under - rel * abs(self.c_under)
        hi = self.c_over + rel * abs(self.c_over)
        return lo <= self.slope <= hi

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("profiles")
        return d


def speed_fit(rule, zeta: float, gamma: float, q: float = 0.5,
              window: tuple = (2.0, 6.0), solver: dict | None = None,
              sample_every: float = 0.25) -> SpreadingFit:
    """Fit the exponential growth rate of the level set ``{u = q}``.

    The domain starts at ``L`` and doubles (padding with the boundary value
    1) whenever the level position passes ``0.4 L``.
    """
    _, F = _rule(rule)
    if not gamma > F.Upsilon:
        raise PreconditionError(f"speed_fit needs gamma > Upsilon = {F.Upsilon:.6g}")
    s = _merge(SPEED_DEFAULTS, solver)
    t0, t1 = float(window[0]), float(window[1])
    dt = float(s["dt"])
    cfg = pde.SolverConfig(gamma, zeta, dt, s["scheme"], t1)
    grid = pde.Grid.from_spacing(float(s["L"]), float(s["dx"]))
    op = pde.NonlocalOperator(grid, F, cfg)
    pde.check_step(grid, cfg, op.lipschitz)
    field = pde.ones_field(grid)
    times, pos, lengths, profiles = [], [], [], []
    n_samples = int(round(t1 / sample_every))
    for j in range(1, n_samples + 1):
        ts = j * sample_every
        while field.time < ts - 1e-12:
            h = min(dt, ts - field.time)
            u = op.step(field.values, h)
            t = ts if h < dt else field.time + h
            field = pde.Field(field.grid, u, t)
            xq = level_position(field, q)
            if xq is None:
                raise SpreadingError(f"level {q} lost at t = {field.time:.4g}")
            if xq > 0.4 * field.grid.L:
                new_L = 2.0 * field.grid.L
                if new_L > float(s["max_L"]):
                    raise SpreadingError(
                        f"level {q} escaped the maximal domain {s['max_L']} at t = {field.time:.4g}")
                field = pde.extend_field(field, new_L, cfg.right_value)
                op = pde.NonlocalOperator(field.grid, F, cfg)
        if ts >= t0 - 1e-12:
            times.append(ts)
            pos.append(level_position(field, q))
            lengths.append(field.grid.L)
            if abs(ts - round(ts)) < 1e-9:
                profiles.append((ts, field.grid.x.copy(), field.values.copy()))
    if len(times) < 3:
        raise SpreadingError("fewer than three samples in the fit window")
    fit = stats.linregress(times, np.log(pos))
    tcrit = stats.t.ppf(0.975, len(times) - 2)
    c_under = c_over = None
    if F.Fprime0 > 1:
        sp = speeds(F, zeta, gamma)
        c_under, c_over = sp.c_under, sp.c_over
    return SpreadingFit(q, times, pos, lengths, float(fit.slope), float(tcrit * fit.stderr),
                        c_under, c_over, profiles)


# --- Monte Carlo cross-validation -----------------------------------------------


def crossval(rule, zeta: float, gamma: float, sample_points: Sequence[tuple], trials: int,
             solver: dict | None = None, seed: int = 0, threads: int | None = None,
             particle_cap: int | None = None) -> list:
    """Compare the PDE solution with Monte Carlo at ``(t, x)`` points."""
    rule, F = _rule(rule)
    s = _merge(CROSS_DEFAULTS, solver)
    pts = [(float(t), float(x)) for t, x in sample_points]
    if any(t < 0 or x < 0 for t, x in pts):
        raise PreconditionError("sample points need t >= 0 and x >= 0")
    L = max(float(s["L"]), 4.0 * max(x for _, x in pts))
    grid = pde.Grid.from_spacing(L, float(s["dx"]))
    t_max = max(t for t, _ in pts)
    cfg = pde.SolverConfig(gamma, zeta, float(s["dt"]), s["scheme"], max(t_max, 1e-12))
    times = sorted({t for t, _ in pts})
    snaps = dict(zip(times, pde.solve_cauchy(F, cfg, grid, times)))
    rows = []
    for k, (t, x) in enumerate(pts):
        u_pde = float(snaps[t].at(x, right=cfg.right_value))
        sim = SimConfig(x, gamma, zeta, t, seed=seed + k)
        if particle_cap:
            sim = sim.replace(particle_cap=int(particle_cap))
        est = estimate_u(rule, sim, trials, threads=threads)
        diff = abs(est.mean - u_pde)
        rows.append({
            "t": t, "x": x, "u_pde": u_pde, "u_mc": est.mean, "se": est.std_error,
            "abs_diff": diff, "trials": est.trials, "truncated": est.truncated,
            "unreliable": est.unreliable,
            "pass": bool(diff <= 3 * est.std_error + MATCH_SLACK and not est.unreliable),
        })
    return rows


def cdf_check(rule, zeta: float, gamma: float, t_large: float, trials: int,
              query_xs: Sequence[float], solver: dict | None = None, seed: int = 0,
              threads: int | None = None, particle_cap: int = CDF_PARTICLE_CAP) -> list:
    """Empirical CDF of the root value against ``(1 + U(x)) / 2`` from the steady state."""
    rule, F = _rule(rule)
    if not rule.odd_symmetric or abs(F.Xi - 1.0) > 1e-9:
        raise PreconditionError("cdf_check needs an odd rule with Xi = 1")
    if not gamma < F.Fprime0:
        raise PreconditionError(f"cdf_check needs gamma < F'(0) = {F.Fprime0:.6g}")
    s = _merge(CDF_DEFAULTS, solver)
    grid = pde.Grid.from_spacing(float(s["L"]), float(s["dx"]))
    cfg = pde.SolverConfig(gamma, zeta, float(s["dt"]), s["scheme"], float(s["t_end"]),
                           float(s["steady_tol"]))
    U = pde.steady_state(F, cfg, grid)
    sim = SimConfig(0.0, gamma, zeta, t_large, particle_cap=int(particle_cap), seed=seed)
    emp = estimate_value_cdf(rule, sim, trials, query_xs, threads=threads)
    rows = []
    for p in emp:
        x = p.x
        u = float(U.field.at(abs(x)))
        ref = 0.5 * (1.0 + math.copysign(u, x)) if x != 0 else 0.5
        diff = abs(p.cdf - ref)
        dropped = trials - p.trials
        rows.append({
            "x": x, "cdf_mc": p.cdf, "se": p.std_error, "cdf_pde": ref, "abs_diff": diff,
            "trials": p.trials, "truncated": dropped, "steady_converged": U.converged,
            "pass": bool(diff <= 3 * p.std_error + MATCH_SLACK and dropped <= 0.01 * trials),
        })
    return rows


# --- certificates --------------------------------------------------------------


def certify(rule, zeta: float, gamma: float, params: dict | None = None) -> dict:
    """Run the supersolution sweep and the ``H -> v_omega -> w`` chain.

    ``params`` may give ``f``, ``B`` (both needed for the chain), ``alpha``,
    ``omega``, ``nu``, ``x_max``, ``super_gamma`` and ``omegas``.
    """
    _, F = _rule(rule)
    p = dict(params or {})
    bundle = {"gamma": gamma, "zeta": zeta, "Upsilon": F.Upsilon, "Fprime0": F.Fprime0,
              "Xi": F.Xi}
    passed = []

    g_sup = p.get("super_gamma", gamma if gamma > F.Upsilon else None)
    if g_sup is not None:
        g_sup = float(g_sup)
        xs = cert.offset_grid(1e-3, 100.0, cert.CHECK_POINTS, log=True)
        sweep = []
        for om in p.get("omegas", [0.25, 0.5, 0.75, 1.0]):
            d_eq = zeta * (1.0 - F.Upsilon * g_sup ** -om)
            if d_eq <= 0:
                continue
            at = cert.check_supersolution(d_eq, 1.0, om, F, zeta, g_sup, xs)
            over = cert.check_supersolution(1.1 * d_eq, 1.0, om, F, zeta, g_sup, xs)
            sweep.append({"omega": om, "delta": d_eq, "passes_at_bound": at.passed,
                          "fails_above_bound": not over.passed,
                          "min_residual": at.min_residual,
                          "over_min_residual": over.min_residual,
                          "over_argmin_x": over.argmin_x})
            passed += [at.passed, not over.passed]
        bundle["supersolution"] = {"gamma": g_sup, "sweep": sweep}

    if "f" in p and "B" in p:
        f, B = float(p["f"]), float(p["B"])
        if not 0 < B < 1.0 / gamma:
            raise PreconditionError(f"B must lie in (0, 1/gamma) = (0, {1 / gamma:.6g}), got {B}")
        sig = sigma(f, 1.0 / B)
        nu = float(p.get("nu", max(0.0, zeta * sig + 0.05 * zeta) if sig > -0.05 else 0.0))
        if not nu > zeta * sig:
            raise PreconditionError(f"nu = {nu} must exceed zeta*Sigma(f, 1/B) = {zeta * sig:.6g}")
        kap = cert.kappa(f, B, nu / zeta)
        lb = cert.alpha_lower_bound(f, kap)
        alpha = float(p.get("alpha", 0.5 * (1.0 + lb)))
        w0 = cert.omega0(f, B)
        omega = float(p.get("omega", min(1.0, 0.9 * alpha * w0)))
        H = cert.build_H(F, F.Xi, f)
        V = cert.build_v_omega(B, f, nu / zeta, alpha, omega)
        x_max = float(p.get("x_max", B**-40))
        W = cert.build_w(H, B, V, x_max=x_max)
        xs = cert.offset_grid(1e-4, x_max, cert.CHECK_POINTS, log=True)
        rep = cert.check_subsolution_inequality(W, F, zeta, gamma, nu, xs)
        pert = cert.check_subsolution_inequality(W.scaled_piece(0, 0.5), F, zeta, gamma, nu, xs)
        bundle["subsolution"] = {
            "f": f, "B": B, "nu": nu, "kappa": kap, "alpha": alpha, "omega0": w0,
            "omega": V.omega, "m_omega": V.m_omega, "ladder": V.ladder,
            "H": {**H.describe(), "invariants": H.invariants()},
            "w": W.fn.describe(),
            "w_checks": W.checks,
            "report": rep.to_dict(),
            "perturbed_report": pert.to_dict(),
        }
        bundle["_scaffold"] = W
        passed += [rep.passed, not pert.passed]
    bundle["passed"] = bool(passed) and all(passed)
    return bundle


# --- orchestration -----------------------------------------------------------------


def git_describe() -> str:
    try:
        here = Path(__file__).resolve().parent
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_rows(path, rows: list, columns: Sequence[str] | None = None) -> None:
    if not rows:
        Path(path).write_text("")
        return
    cols = list(columns or rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int | None = None) -> dict:
    """Run ``cfg.kind``, write its tables and ``summary.json``; return the summary."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    threads = threads or cfg.mc.get("threads")
    trials = int(cfg.mc.get("trials", 20_000))
    prm = cfg.params
    result: dict = {}
    kind = cfg.kind
    if kind == "phase_scan":
        scan = phase_scan(cfg.rule, cfg.zeta, cfg.gammas, cfg.pde,
                          workers=int(prm.get("workers", 1)))
        write_rows(out / "phase_scan.csv", scan.rows,
                   ["gamma", "max_U_half", "converged", "t_stop", "class"])
        prof = [{"gamma": g, "x": float(x), "U": float(u)}
                for g, fld in scan.profiles.items() for x, u in zip(fld.grid.x, fld.values)]
        write_rows(out / "steady_profiles.csv", prof, ["gamma", "x", "U"])
        result = {"bracket": scan.bracket, "monotone": scan.monotone, "rows": scan.rows}
        passed = scan.monotone and all(r["converged"] for r in scan.rows)
    elif kind == "speed_fit":
        fit = speed_fit(cfg.rule, cfg.zeta, cfg.gamma, float(prm.get("q", 0.5)),
                        tuple(prm.get("window", (2.0, 6.0))), cfg.pde)
        write_rows(out / "level_positions.csv",
                   [{"t": t, "x_q": x, "L": L}
                    for t, x, L in zip(fit.times, fit.positions, fit.lengths)])
        write_rows(out / "rescaled_profiles.csv",
                   [{"t": t, "y": float(x * math.exp(-fit.slope * t)), "u": float(u)}
                    for t, xs, us in fit.profiles for x, u in zip(xs, us)])
        result = fit.summary()
        passed = fit.in_band()
    elif kind == "crossval":
        pts = prm.get("points", [(0.5, 1.0), (1.0, 0.5), (1.0, 2.0), (2.0, 1.0),
                                 (2.0, 3.0), (0.0, 1.0)])
        rows = crossval(cfg.rule, cfg.zeta, cfg.gamma, pts, trials, cfg.pde, cfg.seed, threads,
                        cfg.mc.get("particle_cap"))
        write_rows(out / "crossval.csv", rows)
        result = {"rows": rows}
        passed = all(r["pass"] for r in rows)
    elif kind == "cdf_check":
        xs = prm.get("xs", [-20.0, -5.0, 0.0, 5.0, 20.0])
        rows = cdf_check(cfg.rule, cfg.zeta, cfg.gamma, float(prm.get("t", 8.0)), trials, xs,
                         cfg.pde, cfg.seed, threads,
                         int(cfg.mc.get("particle_cap", CDF_PARTICLE_CAP)))
        write_rows(out / "cdf_check.csv", rows)
        result = {"rows": rows}
        passed = all(r["pass"] for r in rows)
    else:
        bundle = certify(cfg.rule, cfg.zeta, cfg.gamma, prm)
        W = bundle.pop("_scaffold", None)
        if W is not None:
            xs = cert.offset_grid(1e-3, W.fn.x_max, 2000, log=True)
            W.fn.write_csv(out / "w.csv", xs)
        (out / "certificates.json").write_text(json.dumps(bundle, indent=2,
                                                          default=_json_default))
        result = {"passed": bundle["passed"]}
        passed = bundle["passed"]
    summary = {
        "config": cfg.echo(),
        "git_describe": git_describe(),
        "wall_time_s": time.perf_counter() - start,
        "passed": bool(passed),
        "result": result,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default))
    return summary
