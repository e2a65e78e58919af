"""Configuration-driven experiment runner.

Configs are flat ``key = value`` text files ('#' starts a comment).  Every
experiment writes a trace CSV with the fixed header
``t,energy,max_h2,l2_norm,l2_dQdt,flag`` (header-only when the experiment
has no time series), a summary JSON embedding the fully resolved config,
and one SVG line plot per monitored series.  Identical config + seed give
byte-identical CSV output.

Usage:
  qflow run <config-file> [--out DIR] [--seed N]
  qflow check <config-file>

Exit codes: 0 success (including certified blow-up), 1 precondition or
config violation, 2 numerical failure outside a blow-up experiment.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import pde2d, radial, splitting
from .energy import LdGParams, derived_constants, elastic_matrix, elastic_matrix_eigenvalues
from .qtensor import physical_interval
from .pde2d import UnstableStepError
from .radial import RadialProfile, blowup_certificate, comparison_lower_bound
from .splitting import bulk_ode_step, eigen_ode_integrate, hull_bounds

CSV_HEADER = "t,energy,max_h2,l2_norm,l2_dQdt,flag"

EXPERIMENTS = (
    "smallness",
    "energy-decay",
    "blowup",
    "blowup-threshold-search",
    "physicality",
    "trotter-convergence",
    "continuous-dependence",
    "coercivity-report",
    "hedgehog-consistency",
)


class ConfigError(Exception):
    """Invalid config or violated precondition (exit code 1)."""


class NumericalFailure(Exception):
    """Non-finite values outside a blow-up experiment (exit code 2)."""


# key name -> (python type, default); None default means "required when the
# experiment lists it as mandatory, otherwise absent"
_KEY_TYPES = {
    "experiment": (str, None),
    "a": (float, None),
    "b": (float, 0.0),
    "c": (float, 1.0),
    "L1": (float, None),
    "L2": (float, 0.0),
    "L3": (float, 0.0),
    "L4": (float, 0.0),
    "C1": (float, 1.0),
    "seed": (int, 0),
    "scheme": (str, "imex"),
    "nx": (int, 64),
    "ny": (int, 64),
    "Lx": (float, 1.0),
    "Ly": (float, 1.0),
    "T": (float, None),
    "dt": (float, None),
    "amplitude": (float, None),
    "amplitude_frac": (float, 0.9),
    "kmax": (int, 2),
    "record_every": (int, 1),
    "R0": (float, None),
    "R1": (float, None),
    "nr": (int, 200),
    "amp_lo": (float, None),
    "amp_hi": (float, None),
    "n_grid": (int, 20),
    "n_rotations": (int, 20),
    "d": (int, 3),
    "n_cells": (int, 64),
    "period": (float, 6.283185307179586),
    "n_lo": (int, 8),
    "n_hi": (int, 64),
    "eps1": (float, 1e-6),
    "eps2": (float, 1e-7),
    "n_samples": (int, 20),
    "h_s": (float, 1e-3),
}

_REQUIRED = {
    "smallness": ["L1", "L4", "T", "dt"],
    "energy-decay": ["a", "L1", "T"],
    "blowup": ["a", "L1", "L4", "R0", "R1", "amplitude", "T", "dt"],
    "blowup-threshold-search": ["a", "L1", "L4", "R0", "R1", "amp_lo", "amp_hi", "T", "dt"],
    "physicality": ["a", "b", "T"],
    "trotter-convergence": ["a", "b", "L1", "T"],
    "continuous-dependence": ["a", "L1", "L4", "T", "dt"],
    "coercivity-report": ["L1", "L2", "L3"],
    "hedgehog-consistency": ["L1", "R0", "R1"],
}


@dataclass
class ExperimentConfig:
    experiment: str
    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def params(self) -> LdGParams:
        v = self.values
        return LdGParams(
            a=v.get("a", 0.0), b=v.get("b", 0.0), c=v.get("c", 1.0),
            L1=v.get("L1", 0.0), L2=v.get("L2", 0.0), L3=v.get("L3", 0.0),
            L4=v.get("L4", 0.0), C1=v.get("C1", 1.0),
        )


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat key = value text into a validated ExperimentConfig.

    Unknown keys are rejected with their line number; missing mandatory keys
    are listed exhaustively in one message; defaults (C1 = 1.0,
    scheme = imex, seed = 0, ...) are applied afterwards.
    """
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEY_TYPES:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        typ, _ = _KEY_TYPES[key]
        if typ is str:
            raw[key] = value
        else:
            try:
                raw[key] = typ(value)
            except ValueError:
                kind = "an integer" if typ is int else "a number"
                raise ConfigError(
                    f"line {lineno}: expected {kind} for key '{key}' (got '{value}')"
                ) from None

    if "experiment" not in raw:
        raise ConfigError("missing mandatory keys: experiment")
    experiment = raw["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment '{experiment}'; expected one of: " + ", ".join(EXPERIMENTS)
        )
    missing = [k for k in _REQUIRED[experiment] if k not in raw]
    if missing:
        raise ConfigError("missing mandatory keys: " + ", ".join(missing))

    values = {}
    for key, (typ, default) in _KEY_TYPES.items():
        if key == "experiment":
            continue
        if key in raw:
            values[key] = raw[key]
        elif default is not None:
            values[key] = default
    cfg = ExperimentConfig(experiment=experiment, values=values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    v = cfg.values
    if v.get("scheme") not in pde2d.SCHEMES:
        raise ConfigError(f"scheme must be one of {pde2d.SCHEMES}")
    if "R0" in v and "R1" in v and not v["R0"] < v["R1"]:
        raise ConfigError("R0 < R1 required")
    if "R0" in v and v["R0"] <= 0.0:
        raise ConfigError("R0 > 0 required")
    for key in ("T", "dt", "h_s", "period"):
        if key in v and v[key] <= 0.0:
            raise ConfigError(f"{key} must be positive")
    for key in ("nx", "ny", "nr", "n_grid", "n_cells", "n_samples"):
        if key in v and v[key] < 3:
            raise ConfigError(f"{key} must be at least 3")
    try:
        cfg.params().validate(strict=False)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.experiment == "smallness":
        params = cfg.params()
        try:
            consts = derived_constants(params, strict=True)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if "a" in v and abs(v["a"]) > 2.0 * params.c * consts.eta1:
            raise ConfigError("smallness requires |a| <= 2 c eta1")
    if cfg.experiment == "energy-decay" and v.get("L4", 0.0) != 0.0:
        raise ConfigError("energy-decay requires L4 = 0")
    if cfg.experiment in ("blowup", "blowup-threshold-search") and v.get("L4", 0.0) == 0.0:
        raise ConfigError("blow-up experiments require L4 != 0 (no cubic mechanism)")
    if cfg.experiment == "trotter-convergence":
        if v.get("L4", 0.0) != 0.0:
            raise ConfigError("trotter-convergence requires L4 = 0")
        if v.get("d") == 3 and v.get("L2", 0.0) + v.get("L3", 0.0) != 0.0:
            raise ConfigError("trotter-convergence with d = 3 requires L2 + L3 = 0")


# ---------------------------------------------------------------------------
# artifact writers

def _fmt(x) -> str:
    return f"{float(x):.17e}"


def write_trace_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for t, energy, max_h2, l2c, l2r, flag in rows:
            fh.write(
                f"{_fmt(t)},{_fmt(energy)},{_fmt(max_h2)},{_fmt(l2c)},{_fmt(l2r)},{int(flag)}\n"
            )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_svg(path, title, xs, ys, xlabel="t", ylabel="") -> None:
    """Minimal polyline plot; pure serialization of the series."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = xs[keep], ys[keep]
    W, H, M = 640, 400, 50
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W//2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    if xs.size >= 2:
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y1 = y0 + 1.0
        px = M + (xs - x0) / (x1 - x0) * (W - 2 * M)
        py = H - M - (ys - y0) / (y1 - y0) * (H - 2 * M)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f6fb2" stroke-width="1.5"/>')
        parts.append(f'<line x1="{M}" y1="{H-M}" x2="{W-M}" y2="{H-M}" stroke="black"/>')
        parts.append(f'<line x1="{M}" y1="{M}" x2="{M}" y2="{H-M}" stroke="black"/>')
        parts.append(f'<text x="{M}" y="{H-M+20}" font-size="11">{x0:.6g}</text>')
        parts.append(
            f'<text x="{W-M}" y="{H-M+20}" text-anchor="end" font-size="11">{x1:.6g}</text>'
        )
        parts.append(f'<text x="{M-5}" y="{H-M}" text-anchor="end" font-size="11">{y0:.6g}</text>')
        parts.append(f'<text x="{M-5}" y="{M+4}" text-anchor="end" font-size="11">{y1:.6g}</text>')
        parts.append(
            f'<text x="{W//2}" y="{H-10}" text-anchor="middle" font-size="12">{xlabel}</text>'
        )
        if ylabel:
            parts.append(f'<text x="12" y="{M-10}" font-size="12">{ylabel}</text>')
    else:
        parts.append(f'<text x="{W//2}" y="{H//2}" text-anchor="middle">no data</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


@dataclass
class ExperimentReport:
    experiment: str
    passed: bool
    summary: dict
    csv_path: str
    json_path: str
    svg_paths: list = dc_field(default_factory=list)


# ---------------------------------------------------------------------------
# individual experiments; each returns (results, checks, rows, series)
# where checks is a list of {name, passed, measured, tolerance}

def _check(name, passed, measured, tolerance):
    return {
        "name": name,
        "passed": bool(passed),
        "measured": _jsonable(measured),
        "tolerance": _jsonable(tolerance),
    }


def _trace_rows_from_run(trace: pde2d.RunTrace):
    rows = []
    for i in range(len(trace.t)):
        rows.append(
            (trace.t[i], trace.energy[i], trace.max_h2[i], trace.l2_q[i],
             trace.l2_dqdt[i], bool(trace.smallness[i]))
        )
    return rows


def _series_from_run(trace: pde2d.RunTrace):
    return {
        "energy": (trace.t, trace.energy),
        "max_h2": (trace.t, trace.max_h2),
        "l2_norm": (trace.t, trace.l2_q),
        "l2_dqdt": (trace.t, trace.l2_dqdt),
    }


def _exp_coercivity_report(cfg):
    params = cfg.params()
    eigs = elastic_matrix_eigenvalues(params)
    expected = np.sort(np.array([2 * (params.L1 + params.L2)] * 2 + [2 * (params.L1 + params.L3)] * 2))
    spectrum_err = float(np.abs(eigs - expected).max())
    consts = derived_constants(params, strict=False)
    rng = np.random.default_rng(cfg.seed)
    chi = rng.normal(size=(10000, 4))
    B = elastic_matrix(params)
    form = np.einsum("ni,ij,nj->n", chi, B, chi)
    norm2 = np.einsum("ni,ni->n", chi, chi)
    min_ratio = float(np.min(form / norm2))
    coercive = params.is_coercive()
    checks = [
        _check("spectrum matches 2(L1+L2)x2, 2(L1+L3)x2", spectrum_err <= 1e-10,
               spectrum_err, 1e-10),
    ]
    if coercive:
        checks.append(_check("quadratic form >= 2 nu |chi|^2",
                             min_ratio >= 2 * consts.nu - 1e-10, min_ratio, 2 * consts.nu))
    results = {
        "eigenvalues": eigs,
        "zeta": consts.zeta,
        "nu": consts.nu,
        "eta1": consts.eta1,
        "eta2": consts.eta2,
        "coercive": coercive,
        "min_form_ratio": min_ratio,
    }
    return results, checks, [], {}


def _exp_smallness(cfg):
    params = cfg.params()
    consts = derived_constants(params)
    eta1 = consts.eta1
    if not math.isfinite(eta1):
        raise ConfigError("smallness experiment needs L4 != 0 (eta1 finite)")
    if "a" not in cfg.values:
        # default to 90% of the admissible coefficient size |a| <= 2 c eta1
        cfg.values["a"] = 0.9 * 2.0 * params.c * eta1
        params = LdGParams(**{**params.__dict__, "a": cfg.values["a"]})
    grid = pde2d.Grid2D.from_extent(cfg.nx, cfg.ny, cfg.Lx, cfg.Ly)
    amplitude = cfg.amplitude_frac * math.sqrt(2.0 * eta1)
    field = pde2d.smooth_random_field(grid, amplitude, seed=cfg.seed, kmax=cfg.kmax)
    trace = pde2d.run(field, params, cfg.T, cfg.dt, scheme=cfg.scheme,
                      record_every=cfg.record_every)
    if trace.nonfinite or trace.blown_up:
        raise NumericalFailure("solution left the bounded regime during a smallness run")
    sup = math.sqrt(2.0 * float(trace.max_h2.max()))
    bound = math.sqrt(2.0 * eta1) * (1.0 + 1e-3)
    checks = [
        _check("sup_t sqrt(2) max h <= sqrt(2 eta1) * 1.001", sup <= bound, sup, bound),
        _check("smallness flag true at every step", trace.smallness_held(), None, None),
    ]
    results = {
        "eta1": eta1,
        "initial_sup": amplitude,
        "max_sup_over_run": sup,
        "bound": bound,
        "steps_recorded": len(trace.t),
    }
    return results, checks, _trace_rows_from_run(trace), _series_from_run(trace)


def _exp_energy_decay(cfg):
    params = cfg.params()
    grid = pde2d.Grid2D.from_extent(cfg.nx, cfg.ny, cfg.Lx, cfg.Ly)
    dt = cfg.values.get("dt") or 0.5 * pde2d.stability_dt(grid, params)
    cfg.values["dt"] = dt
    amplitude = cfg.values.get("amplitude", 0.05)
    field = pde2d.smooth_random_field(grid, amplitude, seed=cfg.seed, kmax=cfg.kmax)
    trace = pde2d.run(field, params, cfg.T, dt, scheme=cfg.scheme,
                      record_every=cfg.record_every)
    if trace.nonfinite or trace.blown_up:
        raise NumericalFailure("solution left the bounded regime during an energy-decay run")
    dE = np.diff(trace.energy)
    monotone = bool(np.all(dE <= 1e-9))
    rel_defect = float(np.max(trace.defect[1:] / (1.0 + np.abs(trace.energy[1:]))))
    checks = [
        _check("energy non-increasing (slack 1e-9)", monotone, float(dE.max()), 1e-9),
        _check("dissipation defect <= 1e-6 (1+|E|)", rel_defect <= 1e-6, rel_defect, 1e-6),
    ]
    results = {"dt": dt, "final_energy": float(trace.energy[-1]),
               "max_defect_rel": rel_defect, "steps_recorded": len(trace.t)}
    return results, checks, _trace_rows_from_run(trace), _series_from_run(trace)


def _radial_rows(trace: radial.RadialTrace, threshold: float):
    # fixed CSV header mapping for radial runs: energy := F(t),
    # max_h2 := max theta^2 / 4 (h^2 of the hedgehog field),
    # l2_norm := ||Q||_L2 = sqrt(pi y), l2_dQdt := sqrt(pi) * rate
    rows = []
    for i in range(len(trace.t)):
        rows.append(
            (trace.t[i], trace.F[i], trace.max_abs_theta[i] ** 2 / 4.0,
             math.sqrt(math.pi * max(trace.y[i], 0.0)),
             math.sqrt(math.pi) * trace.rate[i],
             bool(trace.y[i] > threshold))
        )
    return rows


def _exp_blowup(cfg):
    params = cfg.params()
    profile = RadialProfile.sine_bump(cfg.R0, cfg.R1, cfg.nr, cfg.amplitude)
    cert = blowup_certificate(profile, params)
    trace = radial.run_radial(profile, params, cfg.T, cfg.dt)
    dominated = radial.dominates_comparison(trace, params, cert, rtol=0.01)
    rec = trace.y_minus if params.L4 < 0 else trace.y_plus
    comp, comp_div = comparison_lower_bound(cert.M0, params.a, cert.F0, cert.y0, trace.t)
    checks = [
        _check("geometric criterion R0^2 pi^2 / (9 (R1-R0)^2) > 1",
               cert.criterion_ok, cert.criterion_value, 1.0),
        _check("blow-up flag raised before T", trace.blown_up, trace.blowup_time, cfg.T),
        _check("recorded y dominates comparison solution (1% rel)", dominated, None, 0.01),
    ]
    results = {
        "criterion_value": cert.criterion_value,
        "M0": cert.M0,
        "F0": cert.F0,
        "y0": cert.y0,
        "certificate": cert.reason,
        "predicted_blowup_time": cert.predicted_blowup_time,
        "blowup_time": trace.blowup_time,
        "blown_up": trace.blown_up,
        "final_y": float(trace.y[-1]),
        "comparison_divergence_time": comp_div,
        "y_series": trace.y,
        "y_signed_series": rec,
        "comparison_series": comp,
        "times": trace.t,
    }
    series = {
        "energy": (trace.t, trace.F),
        "max_h2": (trace.t, trace.max_abs_theta**2 / 4.0),
        "l2_norm": (trace.t, np.sqrt(math.pi * np.maximum(trace.y, 0.0))),
        "l2_dqdt": (trace.t, math.sqrt(math.pi) * trace.rate),
    }
    return results, checks, _radial_rows(trace, radial.BLOWUP_Y_THRESHOLD), series


def _exp_blowup_threshold_search(cfg):
    params = cfg.params()

    def blows(amp):
        profile = RadialProfile.sine_bump(cfg.R0, cfg.R1, cfg.nr, amp)
        return radial.run_radial(profile, params, cfg.T, cfg.dt).blown_up

    lo, hi = cfg.amp_lo, cfg.amp_hi
    lo_blows, hi_blows = blows(lo), blows(hi)
    if lo_blows == hi_blows:
        raise ConfigError(
            "amp_lo and amp_hi do not bracket the blow-up threshold "
            f"(flags {lo_blows} and {hi_blows})"
        )
    history = []
    for _ in range(16):
        mid = 0.5 * (lo + hi)
        mb = blows(mid)
        history.append({"amplitude": mid, "blown_up": mb})
        if mb == hi_blows:
            hi = mid
        else:
            lo = mid
    interval = sorted((lo, hi))
    checks = [_check("bisection bracketed to 16 iterations",
                     True, interval, abs(cfg.amp_hi - cfg.amp_lo) / 2 ** 16)]
    results = {
        "interval_lo": interval[0],
        "interval_hi": interval[1],
        "width": interval[1] - interval[0],
        "iterations": history,
        "blow_up_side": "hi" if hi_blows else "lo",
    }
    return results, checks, [], {}


def _exp_physicality(cfg):
    params = cfg.params()
    interval = physical_interval(params, 3)
    lo, hi = interval.lo, interval.hi
    grid_vals = np.linspace(lo, hi, cfg.n_grid)
    l1g, l2g = np.meshgrid(grid_vals, grid_vals, indexing="ij")
    third = -l1g - l2g
    admissible = (third >= lo) & (third <= hi)
    l1s = l1g[admissible]
    l2s = l2g[admissible]

    n_rec = 50
    tol = 1e-8
    times = np.linspace(0.0, cfg.T, n_rec + 1)
    cur1, cur2 = l1s.copy(), l2s.copy()
    rows = []
    inside_all = True
    order_all = True
    initially_ordered = l1s <= l2s
    for i, t in enumerate(times):
        if i > 0:
            cur1, cur2 = eigen_ode_integrate(cur1, cur2, params, times[i] - times[i - 1])
        lam3 = -cur1 - cur2
        all_lams = np.concatenate([cur1, cur2, lam3])
        inside = bool(all_lams.min() >= lo - tol and all_lams.max() <= hi + tol)
        inside_all = inside_all and inside
        ordered = bool(np.all(cur1[initially_ordered] <= cur2[initially_ordered] + 1e-12))
        order_all = order_all and ordered
        q2 = 2.0 * (cur1**2 + cur2**2 + cur1 * cur2)
        bulk = 0.5 * params.a * q2 + 0.25 * params.c * q2**2
        t3 = cur1**3 + cur2**3 + lam3**3
        bulk -= params.b / 3.0 * t3
        common = 2.0 * params.c * (cur1**2 + cur2**2 + cur1 * cur2) + params.a
        r1 = -cur1 * common + params.b * (cur1**2 - 2 * cur2**2 - 2 * cur1 * cur2) / 3.0
        r2 = -cur2 * common + params.b * (cur2**2 - 2 * cur1**2 - 2 * cur1 * cur2) / 3.0
        rate2 = 2.0 * (r1**2 + r2**2 + r1 * r2)  # |dQ/dt|_F^2 of the diagonal state
        rows.append(
            (t, float(np.mean(bulk)), float(np.max(q2) / 2.0),
             float(np.sqrt(np.mean(q2))), float(np.sqrt(np.mean(rate2))), inside)
        )

    rng = np.random.default_rng(cfg.seed)
    equi_err = 0.0
    t_eq = min(cfg.T, 1.0)
    for _ in range(cfg.n_rotations):
        m = rng.normal(size=(3, 3))
        R, _ = np.linalg.qr(m)
        i = rng.integers(0, len(l1s))
        Q0 = np.diag([l1s[i], l2s[i], -l1s[i] - l2s[i]])
        evolved = bulk_ode_step(R @ Q0 @ R.T, t_eq, params, 3)
        direct = bulk_ode_step(Q0, t_eq, params, 3)
        equi_err = max(equi_err, float(np.abs(evolved - R @ direct @ R.T).max()))

    checks = [
        _check("eigenvalues stay in the physical interval (+1e-8)", inside_all, None, tol),
        _check("order lambda1 <= lambda2 preserved", order_all, None, 1e-12),
        _check("O(3)-equivariance of the bulk flow", equi_err <= 1e-10, equi_err, 1e-10),
    ]
    results = {
        "interval_lo": lo,
        "interval_hi": hi,
        "n_admissible": int(l1s.size),
        "equivariance_error": equi_err,
    }
    series = {
        "mean_bulk": (times, np.array([r[1] for r in rows])),
        "max_h2": (times, np.array([r[2] for r in rows])),
        "rms_norm": (times, np.array([r[3] for r in rows])),
    }
    return results, checks, rows, series


def _exp_trotter_convergence(cfg):
    params = cfg.params()
    d = cfg.d
    h = cfg.period / cfg.n_cells
    if d == 3:
        # hull spans the physical interval, so the initial hull is invariant
        field0 = splitting.make_hull_spanning_field(cfg.n_cells, h, params, seed=cfg.seed)
    else:
        field0 = splitting.make_smooth_physical_field(cfg.n_cells, h, params, d, seed=cfg.seed)
    hull0 = hull_bounds(field0)
    n_list = []
    n = cfg.n_lo
    while n <= cfg.n_hi:
        n_list.append(n)
        n *= 2
    solutions = {}
    hull_ok = True
    worst_hull = 0.0
    for n in n_list + [2 * n_list[-1]]:
        res = splitting.trotter_solve(field0, cfg.T, n, params)
        solutions[n] = res.field
        for hb in res.hulls:
            worst_hull = max(worst_hull, hull0.lambda_min - hb.lambda_min,
                             hb.lambda_max - hull0.lambda_max)
            hull_ok = hull_ok and hb.within(hull0, 1e-8)
    errors = [splitting.field_l2_distance(solutions[n], solutions[2 * n]) for n in n_list]
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)]
    monotone = all(errors[i + 1] < errors[i] for i in range(len(errors) - 1))
    checks = [
        _check("||V_n - V_2n|| decreases monotonically", monotone, errors, None),
        _check("empirical order >= 0.5", min(orders) >= 0.5, orders, 0.5),
        _check("hull bounds inside initial hull (+1e-8)", hull_ok, worst_hull, 1e-8),
    ]
    results = {
        "n_list": n_list,
        "errors": errors,
        "orders": orders,
        "initial_hull": [hull0.lambda_min, hull0.lambda_max],
        "worst_hull_excess": worst_hull,
    }
    series = {"errors_vs_n": (np.array(n_list, dtype=float), np.array(errors))}
    return results, checks, [], series


def _exp_continuous_dependence(cfg):
    params = cfg.params()
    consts = derived_constants(params)
    grid = pde2d.Grid2D.from_extent(cfg.nx, cfg.ny, cfg.Lx, cfg.Ly)
    if math.isfinite(consts.eta2):
        amplitude = 0.9 * math.sqrt(2.0 * consts.eta2)
    else:
        amplitude = cfg.values.get("amplitude", 0.05)
    base = pde2d.smooth_random_field(grid, amplitude, seed=cfg.seed, kmax=cfg.kmax)
    shape = pde2d.smooth_random_field(grid, 1.0, seed=cfg.seed + 1, kmax=cfg.kmax)

    def perturbed(eps):
        return pde2d.Field2D(grid, base.p + eps * shape.p, base.q + eps * shape.q)

    nsteps = max(1, int(round(cfg.T / cfg.dt)))
    fa = base.copy()
    f1 = perturbed(cfg.eps1)
    f2 = perturbed(cfg.eps2)
    times = [0.0]
    d1 = [pde2d.field_distance(fa, f1)]
    d2 = [pde2d.field_distance(fa, f2)]
    base_trace_rows = []
    consts_eta1 = consts.eta1
    for n in range(nsteps + 1):
        if n > 0:
            fa = pde2d.step(fa, cfg.dt, params, cfg.scheme)
            f1 = pde2d.step(f1, cfg.dt, params, cfg.scheme)
            f2 = pde2d.step(f2, cfg.dt, params, cfg.scheme)
            times.append(n * cfg.dt)
            d1.append(pde2d.field_distance(fa, f1))
            d2.append(pde2d.field_distance(fa, f2))
        mh2 = fa.max_h2()
        small = mh2 <= consts_eta1 * (1 + 1e-3) ** 2 if math.isfinite(consts_eta1) else True
        base_trace_rows.append(
            (n * cfg.dt, pde2d.discrete_energy(fa, params), mh2, fa.l2_norm(), 0.0, small)
        )
    times = np.array(times)
    d1 = np.array(d1)
    d2 = np.array(d2)
    if not (np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))):
        raise NumericalFailure("non-finite distances in continuous-dependence run")
    ratio = d1 / d2
    expected = cfg.eps1 / cfg.eps2
    ratio_dev = float(np.max(np.abs(ratio / expected - 1.0)))
    pos = d1 > 0
    slope = float(np.polyfit(times[pos], np.log(d1[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    checks = [
        _check(f"distance ratio stays {expected:g} +- 20%", ratio_dev <= 0.2, ratio_dev, 0.2),
        _check("log-distance slope finite", math.isfinite(slope), slope, None),
    ]
    results = {
        "slope": slope,
        "ratio_max_deviation": ratio_dev,
        "initial_distances": [float(d1[0]), float(d2[0])],
        "final_distances": [float(d1[-1]), float(d2[-1])],
    }
    series = {
        "distance_eps1": (times, d1),
        "distance_eps2": (times, d2),
        "ratio": (times, ratio),
    }
    return results, checks, base_trace_rows, series


def _exp_hedgehog_consistency(cfg):
    params = cfg.params()
    R0, R1 = cfg.R0, cfg.R1
    rng = np.random.default_rng(cfg.seed)
    h1 = cfg.h_s
    margin = 3.0 * h1 * 2.0
    rr = rng.uniform(R0 + margin, R1 - margin, size=cfg.n_samples)
    ang = rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_samples)
    pts = np.stack([rr * np.cos(ang), rr * np.sin(ang)], axis=1)
    profiles = {
        "constant": (lambda r: np.full_like(np.asarray(r, dtype=float), 0.7),
                     lambda r: 0.0 * np.asarray(r), lambda r: 0.0 * np.asarray(r)),
        "linear": (lambda r: np.asarray(r, dtype=float),
                   lambda r: np.ones_like(np.asarray(r, dtype=float)),
                   lambda r: 0.0 * np.asarray(r)),
        "sine": (lambda r: np.sin(np.pi * (np.asarray(r) - R0) / (R1 - R0)),
                 lambda r: np.pi / (R1 - R0) * np.cos(np.pi * (np.asarray(r) - R0) / (R1 - R0)),
                 lambda r: -(np.pi / (R1 - R0)) ** 2 * np.sin(np.pi * (np.asarray(r) - R0) / (R1 - R0))),
    }
    ratios = {}
    mismatches = {}
    for name, triple in profiles.items():
        m1 = radial.hedgehog_consistency_check(triple, params, pts, h1, r_bounds=(R0, R1))
        m2 = radial.hedgehog_consistency_check(triple, params, pts, h1 / 2.0, r_bounds=(R0, R1))
        ratios[name] = m1 / m2 if m2 > 0 else float("inf")
        mismatches[name] = [m1, m2]
    ok = all(3.5 <= r <= 4.5 for r in ratios.values())
    checks = [_check("Richardson ratio in [3.5, 4.5] for all profiles", ok, ratios, [3.5, 4.5])]
    results = {"ratios": ratios, "mismatches": mismatches, "h_s": h1,
               "n_samples": cfg.n_samples}
    return results, checks, [], {}


_DISPATCH = {
    "coercivity-report": _exp_coercivity_report,
    "smallness": _exp_smallness,
    "energy-decay": _exp_energy_decay,
    "blowup": _exp_blowup,
    "blowup-threshold-search": _exp_blowup_threshold_search,
    "physicality": _exp_physicality,
    "trotter-convergence": _exp_trotter_convergence,
    "continuous-dependence": _exp_continuous_dependence,
    "hedgehog-consistency": _exp_hedgehog_consistency,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str, emit_svg: bool = True) -> ExperimentReport:
    """Execute the named experiment deterministically and write artifacts.

    SVG emission is pure serialization of the already-computed traces;
    disabling it changes no numeric output.
    """
    os.makedirs(out_dir, exist_ok=True)
    results, checks, rows, series = _DISPATCH[cfg.experiment](cfg)
    passed = all(c["passed"] for c in checks)
    csv_path = os.path.join(out_dir, "trace.csv")
    write_trace_csv(csv_path, rows)
    svg_paths = []
    if emit_svg:
        for name, (xs, ys) in series.items():
            path = os.path.join(out_dir, f"{name}.svg")
            write_svg(path, f"{cfg.experiment}: {name}", xs, ys, ylabel=name)
            svg_paths.append(path)
    summary = {
        "experiment": cfg.experiment,
        "passed": passed,
        "config": _jsonable({"experiment": cfg.experiment, **cfg.values}),
        "results": _jsonable(results),
        "checks": checks,
        "artifacts": {"trace_csv": csv_path, "svg": svg_paths},
        "qflow_threads": os.environ.get("QFLOW_THREADS"),
    }
    json_path = os.path.join(out_dir, "summary.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ExperimentReport(
        experiment=cfg.experiment, passed=passed, summary=summary,
        csv_path=csv_path, json_path=json_path, svg_paths=svg_paths,
    )


def _apply_thread_cap():
    cap = os.environ.get("QFLOW_THREADS")
    if not cap:
        return
    try:
        limit = int(cap)
    except ValueError:
        raise ConfigError(f"QFLOW_THREADS must be an integer (got '{cap}')") from None
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limit)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(limit)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", default="qflow-out", help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_check = sub.add_parser("check", help="validate a config file without running")
    p_check.add_argument("config")
    args = parser.parse_args(argv)

    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"qflow: cannot read config: {exc}", file=sys.stderr)
        return 1

    try:
        cfg = parse_config(text)
        if args.command == "check":
            print(f"config OK: experiment '{cfg.experiment}'")
            return 0
        _apply_thread_cap()
        if args.seed is not None:
            cfg.values["seed"] = args.seed
        report = run_experiment(cfg, args.out)
    except ConfigError as exc:
        print(f"qflow: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"qflow: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"qflow: numerical failure: {exc}", file=sys.stderr)
        return 2
    except UnstableStepError as exc:
        print(f"qflow: numerical failure: {exc}", file=sys.stderr)
        return 2

    status = "PASS" if report.passed else "FAIL"
    print(f"{cfg.experiment}: {status}")
    for c in report.summary["checks"]:
        mark = "ok" if c["passed"] else "FAIL"
        print(f"  [{mark}] {c['name']}")
    print(f"artifacts: {report.json_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
