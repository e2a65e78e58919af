"""Hedgehog reduction on an annulus: radial solver and blow-up machinery.

With Q(t,x) = theta(t,|x|) S(x), S_ij = x_i x_j/|x|^2 - delta_ij/2, the 2D
flow reduces to

  dtheta/dt = L4 (theta'^2/2 + theta theta'/r + theta theta'' + 6 theta^2/r^2)
              + zeta theta'' + zeta theta'/r - 4 zeta theta/r^2
              - a theta - c theta^3/2.

The quasilinear coefficient of theta'' is zeta + L4 theta: the stepper
treats it implicitly with the coefficient frozen at the current state, which
removes the parabolic step restriction even when |L4 theta| >> zeta.  Only
the regime zeta + L4 theta > 0 is integrable; if the coefficient turns
negative anywhere the run aborts as a numerical failure (locally backward
diffusion).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import solve_banded

from .energy import LdGParams
from .pde2d import Field2D, Grid2D, rhs_pq

# Blow-up threshold on y = int theta^2 r dr.
BLOWUP_Y_THRESHOLD = 1e6

# Comparison-ODE divergence threshold.
COMPARISON_DIVERGENCE = 1e12

# Per-step relative increment cap for the adaptive radial stepper.
STEP_FRACTION = 0.02


@dataclass
class RadialProfile:
    """theta samples on a uniform grid of [R0, R1], endpoints included.

    The flow's boundary condition theta(R0) = theta(R1) = theta_b >= 0 is
    enforced at flow entry (run_radial, blowup_certificate), not at
    construction, so stencil-only evaluations can use arbitrary profiles.
    """

    R0: float
    R1: float
    nr: int
    theta: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.R0 < self.R1:
            raise ValueError("annulus needs 0 < R0 < R1")
        if self.nr < 3:
            raise ValueError("need at least 3 interior points")
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.nr + 2,):
            raise ValueError(f"theta must have {self.nr + 2} samples")

    def check_boundary(self) -> None:
        tb0, tb1 = self.theta[0], self.theta[-1]
        if abs(tb0 - tb1) > 1e-12 * max(1.0, abs(tb0)):
            raise ValueError("boundary values theta(R0) and theta(R1) must agree")
        if tb0 < 0.0:
            raise ValueError("boundary value theta_b must be >= 0")

    @property
    def dr(self) -> float:
        return (self.R1 - self.R0) / (self.nr + 1)

    @property
    def r(self) -> np.ndarray:
        return np.linspace(self.R0, self.R1, self.nr + 2)

    def copy(self) -> "RadialProfile":
        return RadialProfile(self.R0, self.R1, self.nr, self.theta.copy())

    @classmethod
    def from_function(cls, R0, R1, nr, fn) -> "RadialProfile":
        r = np.linspace(R0, R1, nr + 2)
        return cls(R0, R1, nr, np.asarray(fn(r), dtype=float))

    @classmethod
    def sine_bump(cls, R0, R1, nr, amplitude) -> "RadialProfile":
        """theta(r) = amplitude * sin(pi (r - R0)/(R1 - R0)); zero boundary."""
        return cls.from_function(
            R0, R1, nr, lambda r: amplitude * np.sin(np.pi * (r - R0) / (R1 - R0))
        )


def theta_rhs_pointwise(theta, dtheta, ddtheta, r, params: LdGParams):
    """The radial RHS from pointwise values of theta and its derivatives."""
    zeta, L4, a, c = params.zeta, params.L4, params.a, params.c
    return (
        L4 * (0.5 * dtheta * dtheta + theta * dtheta / r + theta * ddtheta
              + 6.0 * theta * theta / (r * r))
        + zeta * ddtheta + zeta * dtheta / r - 4.0 * zeta * theta / (r * r)
        - a * theta - 0.5 * c * theta**3
    )


def theta_rhs(profile: RadialProfile, params: LdGParams) -> np.ndarray:
    """dtheta/dt on interior points with central differences."""
    if params.zeta <= 0.0:
        raise ValueError("radial flow needs zeta > 0")
    th = profile.theta
    dr = profile.dr
    ri = profile.r[1:-1]
    thi = th[1:-1]
    d1 = (th[2:] - th[:-2]) / (2.0 * dr)
    d2 = (th[2:] - 2.0 * thi + th[:-2]) / (dr * dr)
    return theta_rhs_pointwise(thi, d1, d2, ri, params)


def _signed_part(theta: np.ndarray, L4: float) -> np.ndarray:
    # theta_minus for L4 < 0, theta_plus for L4 > 0
    if L4 < 0.0:
        return np.maximum(-theta, 0.0)
    return np.maximum(theta, 0.0)


def criterion_value(R0: float, R1: float) -> float:
    return R0 * R0 * math.pi**2 / (9.0 * (R1 - R0) ** 2)


def blowup_functional(profile: RadialProfile, params: LdGParams) -> float:
    """F(0): the monitored functional of the comparison argument, built from
    the signed part matching the sign of L4."""
    r = profile.r
    phi = _signed_part(profile.theta, params.L4)
    dphi = np.gradient(phi, r, edge_order=2)
    integrand = (
        -abs(params.L4) * phi * (0.5 * dphi * dphi - 2.0 * phi * phi / (r * r))
        - params.zeta * (0.5 * dphi * dphi + 2.0 * phi * phi / (r * r))
        - 0.5 * params.a * phi * phi
        - params.c * phi**4 / 8.0
    )
    return float(np.trapezoid(integrand * r, r))


@dataclass(frozen=True)
class BlowupCertificate:
    M0: float
    F0: float
    y0: float
    criterion_value: float
    criterion_ok: bool
    predicted_blowup_time: float | None
    conclusive: bool
    reason: str


def blowup_certificate(profile: RadialProfile, params: LdGParams) -> BlowupCertificate:
    """Geometric criterion, M0, F(0) and (when provable) a divergence time.

    M0 = 2|L4| R0 / sqrt(R1^4 - R0^4) * [pi^2/(9 (R1-R0)^2) - 1/R0^2]; the
    sign-split quantity is theta_minus for L4 < 0 and theta_plus for L4 > 0.
    A predicted time is reported only when the comparison ODE provably
    diverges: F0 >= 0, or its RHS is positive at y0 and monotone above it;
    anything else is inconclusive.
    """
    if params.L4 == 0.0:
        raise ValueError("blow-up certificate needs L4 != 0 (no cubic mechanism)")
    profile.check_boundary()
    R0, R1 = profile.R0, profile.R1
    crit = criterion_value(R0, R1)
    bracket = math.pi**2 / (9.0 * (R1 - R0) ** 2) - 1.0 / (R0 * R0)
    M0 = 2.0 * abs(params.L4) * R0 / math.sqrt(R1**4 - R0**4) * bracket
    r = profile.r
    phi = _signed_part(profile.theta, params.L4)
    y0 = float(np.trapezoid(phi * phi * r, r))
    F0 = blowup_functional(profile, params)

    def G(y):
        return M0 * max(y, 0.0) ** 1.5 - abs(params.a) * y + 4.0 * F0

    provable = M0 > 0.0 and y0 > 0.0 and (
        F0 >= 0.0
        or (G(y0) > 0.0 and 1.5 * M0 * math.sqrt(y0) - abs(params.a) >= 0.0)
    )
    predicted = None
    reason = "inconclusive"
    if provable:
        _, tdiv = comparison_lower_bound(M0, params.a, F0, y0, np.array([1e3]))
        if tdiv is not None:
            predicted = tdiv
            reason = "comparison ODE diverges"
        else:
            reason = "comparison ODE stayed bounded on the probe window"
    return BlowupCertificate(
        M0=M0, F0=F0, y0=y0, criterion_value=crit, criterion_ok=crit > 1.0,
        predicted_blowup_time=predicted, conclusive=predicted is not None,
        reason=reason,
    )


def comparison_lower_bound(M0: float, a: float, F0: float, y0: float, t):
    """Integrate y' = 2 (M0 y^{3/2} - |a| y + 4 F0) from y0; evaluate at t.

    RK4 with the step halved whenever y would grow by more than 10%, which
    resolves the approach to the singularity.  Returns (values, divergence
    time); values are +inf past divergence (y > 1e12).  Negative y values
    are possible when F0 < 0 and make the lower bound vacuous there.
    """
    t_eval = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_eval < 0.0):
        raise ValueError("evaluation times must be >= 0")
    t_end = float(t_eval.max())

    def g(y):
        return 2.0 * (M0 * max(y, 0.0) ** 1.5 - abs(a) * y + 4.0 * F0)

    knots_t = [0.0]
    knots_y = [float(y0)]
    tcur, ycur = 0.0, float(y0)
    scale0 = max(abs(y0), 1.0)
    h = t_end / 1024.0 if t_end > 0 else 1.0
    rate = abs(g(ycur))
    if rate > 0:
        h = min(h, 0.05 * max(abs(ycur), scale0 * 1e-6) / rate)
    divergence_time = None
    max_knots = 2_000_000
    window = 256  # stagnation detector: net drift over this many steps
    y_marker = ycur
    while tcur < t_end and len(knots_t) < max_knots:
        h = min(h, t_end - tcur)
        # keep h inside the local linear stability region so the iteration
        # converges at stable equilibria instead of hovering around them
        dy = 1e-6 * max(abs(ycur), scale0 * 1e-6)
        lam = abs(g(ycur + dy) - g(ycur)) / dy
        if lam > 0.0:
            h = min(h, 1.0 / lam)
        for _ in range(200):
            k1 = g(ycur)
            k2 = g(ycur + 0.5 * h * k1)
            k3 = g(ycur + 0.5 * h * k2)
            k4 = g(ycur + h * k3)
            ynew = ycur + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            grow = abs(ynew - ycur)
            if grow <= 0.1 * max(abs(ycur), scale0 * 1e-9) or h <= 1e-15 * max(t_end, 1.0):
                break
            h *= 0.5
        tcur += h
        ycur = ynew
        knots_t.append(tcur)
        knots_y.append(ycur)
        if ycur > COMPARISON_DIVERGENCE:
            divergence_time = tcur
            break
        # stalled near an equilibrium: the trajectory cannot diverge anymore
        # (reported as "no divergence detected", never as a boundedness claim)
        if abs(g(ycur)) * (t_end - tcur) < 1e-9 * max(abs(ycur), scale0):
            break
        if len(knots_t) % window == 0:
            if abs(ycur - y_marker) < 1e-6 * max(abs(ycur), scale0):
                break
            y_marker = ycur
        if grow < 0.02 * max(abs(ycur), scale0 * 1e-9):
            h *= 1.5
    tk = np.array(knots_t)
    yk = np.array(knots_y)
    vals = np.interp(t_eval, tk, yk, right=yk[-1])
    if divergence_time is not None:
        vals = np.where(t_eval >= divergence_time, np.inf, vals)
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(vals[0]), divergence_time
    return vals, divergence_time


@dataclass
class RadialTrace:
    """Time series of the radial monitors.

    y = int theta^2 r dr with the sign-split parts y_minus, y_plus; F is the
    comparison functional; rate is the L2(r dr) norm of dtheta/dt.
    """

    t: np.ndarray
    y: np.ndarray
    y_minus: np.ndarray
    y_plus: np.ndarray
    max_abs_theta: np.ndarray
    F: np.ndarray
    rate: np.ndarray
    blown_up: bool = False
    nonfinite: bool = False
    blowup_time: float | None = None
    final_profile: "RadialProfile | None" = dc_field(default=None, repr=False)


def run_radial(profile0: RadialProfile, params: LdGParams, T: float, dt: float,
               y_threshold: float = BLOWUP_Y_THRESHOLD) -> RadialTrace:
    """March the radial flow to time T with an adaptive semi-implicit stepper.

    dt is the largest step taken; steps shrink so no update moves theta by
    more than 2% of its current amplitude.  The run stops with the blow-up
    flag once y = int theta^2 r dr exceeds y_threshold, and with the
    non-finite flag on numerical failure (including a sign change of the
    quasilinear diffusivity zeta + L4 theta).
    """
    if params.zeta <= 0.0:
        raise ValueError("radial flow needs zeta > 0")
    if dt <= 0.0 or T <= 0.0:
        raise ValueError("need positive T and dt")
    profile0.check_boundary()
    nr = profile0.nr
    dr = profile0.dr
    r = profile0.r
    ri = r[1:-1]
    zeta, L4, a, c = params.zeta, params.L4, params.a, params.c
    th = profile0.theta.copy()

    ts, ys, yms, yps, mxs, Fs, rates = [], [], [], [], [], [], []

    def record(t):
        prof = RadialProfile(profile0.R0, profile0.R1, nr, th.copy())
        rhs_full = theta_rhs(prof, params)
        y = float(np.trapezoid(th * th * r, r))
        tm = np.maximum(-th, 0.0)
        tp = np.maximum(th, 0.0)
        ts.append(t)
        ys.append(y)
        yms.append(float(np.trapezoid(tm * tm * r, r)))
        yps.append(float(np.trapezoid(tp * tp * r, r)))
        mxs.append(float(np.abs(th).max()))
        Fs.append(blowup_functional(prof, params))
        # boundary values are pinned, so dtheta/dt vanishes at the endpoints
        full = np.concatenate(([0.0], rhs_full, [0.0]))
        rates.append(math.sqrt(max(float(np.trapezoid(full * full * r, r)), 0.0)))
        return y

    t = 0.0
    y = record(0.0)
    blown = bool(y > y_threshold)
    nonfinite = False
    blowup_time = 0.0 if blown else None
    while t < T and not blown and not nonfinite:
        thi = th[1:-1]
        d1 = (th[2:] - th[:-2]) / (2.0 * dr)
        d2 = (th[2:] - 2.0 * thi + th[:-2]) / (dr * dr)
        D = zeta + L4 * thi
        if np.any(D <= 0.0):
            nonfinite = True
            break
        expl = L4 * (0.5 * d1 * d1 + 6.0 * thi * thi / ri**2) - a * thi - 0.5 * c * thi**3
        full = expl + D * d2 + (zeta / ri + L4 * thi / ri) * d1 - 4.0 * zeta * thi / ri**2
        scale = max(float(np.abs(th).max()), 1e-12)
        h = min(dt, STEP_FRACTION * scale / max(float(np.abs(full).max()), 1e-15), T - t)
        co_d2 = D / dr**2
        co_d1 = (zeta / ri + L4 * thi / ri) / (2.0 * dr)
        ab = np.zeros((3, nr))
        ab[0, 1:] = (-h * (co_d2 + co_d1))[:-1]
        ab[1, :] = 1.0 - h * (-2.0 * co_d2 - 4.0 * zeta / ri**2)
        ab[2, :-1] = (-h * (co_d2 - co_d1))[1:]
        b = thi + h * expl
        # boundary contributions from the fixed ring values
        b[0] += h * (co_d2[0] - co_d1[0]) * th[0]
        b[-1] += h * (co_d2[-1] + co_d1[-1]) * th[-1]
        th_new = solve_banded((1, 1), ab, b)
        th = np.concatenate(([th[0]], th_new, [th[-1]]))
        t += h
        if not np.all(np.isfinite(th)):
            nonfinite = True
            break
        y = record(t)
        if not math.isfinite(y) or y > y_threshold:
            blown = True
            blowup_time = t
    if nonfinite:
        blown = True
        blowup_time = t if blowup_time is None else blowup_time
    return RadialTrace(
        t=np.array(ts), y=np.array(ys), y_minus=np.array(yms), y_plus=np.array(yps),
        max_abs_theta=np.array(mxs), F=np.array(Fs), rate=np.array(rates),
        blown_up=blown, nonfinite=nonfinite, blowup_time=blowup_time,
        final_profile=RadialProfile(profile0.R0, profile0.R1, nr, th.copy()),
    )


def dominates_comparison(trace: RadialTrace, params: LdGParams,
                         certificate: BlowupCertificate, rtol: float = 0.01) -> bool:
    """Check the recorded sign-split series against the comparison solution.

    True iff the recorded y (y_minus for L4 < 0, y_plus else) stays above
    the comparison ODE solution started from the same y0, within a relative
    slack rtol at every recorded time.
    """
    rec = trace.y_minus if params.L4 < 0.0 else trace.y_plus
    comp, _ = comparison_lower_bound(
        certificate.M0, params.a, certificate.F0, certificate.y0, trace.t
    )
    comp = np.asarray(comp)
    slack = rtol * np.maximum(np.abs(comp), max(certificate.y0, 1e-300))
    finite = np.isfinite(comp)
    return bool(np.all(rec[finite] >= comp[finite] - slack[finite]))


def _theta_derivatives(theta):
    """Normalize the profile argument to (theta, theta', theta'') callables.

    Accepts a CubicSpline-like object with .derivative(), or a tuple/list of
    three callables.
    """
    if isinstance(theta, (tuple, list)):
        if len(theta) != 3:
            raise ValueError("expected (theta, theta', theta'') callables")
        return theta[0], theta[1], theta[2]
    if hasattr(theta, "derivative"):
        d1 = theta.derivative(1)
        d2 = theta.derivative(2)
        return theta, d1, d2
    raise TypeError("theta must provide derivatives (spline or callable triple)")


def hedgehog_consistency_check(theta, params: LdGParams, sample_points,
                               h_s: float, r_bounds=None) -> float:
    """Max componentwise mismatch between the 2D stencil RHS and the radial one.

    At each sample point x the hedgehog field theta(|y|) S(y) is evaluated
    on a local 5x5 stencil of spacing h_s, the full 2D RHS is formed by the
    solver's central differences at the stencil center, and compared against
    the analytic radial RHS times S(x).  The mismatch is O(h_s^2) for smooth
    theta.  Samples closer than 3 h_s to the annulus boundary are rejected
    when r_bounds = (R0, R1) is given.
    """
    th, dth, ddth = _theta_derivatives(theta)
    samples = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if samples.shape[1] != 2:
        raise ValueError("sample points must be 2-vectors")
    offsets = (np.arange(5) - 2.0) * h_s
    worst = 0.0
    for x in samples:
        rc = math.hypot(x[0], x[1])
        if rc == 0.0:
            raise ValueError("sample point at the origin")
        if r_bounds is not None:
            R0, R1 = r_bounds
            if rc < R0 + 3.0 * h_s or rc > R1 - 3.0 * h_s:
                raise ValueError(
                    f"sample at r={rc:.6g} is within 3 h_s of the annulus boundary"
                )
        xs = x[0] + offsets[:, None]
        ys = x[1] + offsets[None, :]
        rr2 = xs * xs + ys * ys
        tt = np.asarray(th(np.sqrt(rr2)), dtype=float)
        p = tt * (xs * xs / rr2 - 0.5)
        q = tt * xs * ys / rr2
        grid = Grid2D(nx=3, ny=3, hx=h_s, hy=h_s, x0=x[0] - 2 * h_s, y0=x[1] - 2 * h_s)
        dp, dq = rhs_pq(Field2D(grid, p, q), params)
        val = theta_rhs_pointwise(
            float(th(rc)), float(dth(rc)), float(ddth(rc)), rc, params
        )
        s11 = x[0] * x[0] / (rc * rc) - 0.5
        s12 = x[0] * x[1] / (rc * rc)
        mism = max(abs(dp[1, 1] - val * s11), abs(dq[1, 1] - val * s12))
        worst = max(worst, mism)
    return worst
