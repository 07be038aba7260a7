"""Backward Riccati solvers for the mean-field game with regime-switching noise.

The value function of the generic player in state ``y`` is

    v_y(x, t, mu, nu) = a_y x^2 - 2 a_y x mu + k_y mu^2 + b_y nu + c_y,

with ``(a, b, c, k)`` solving a 4-kappa system of ODEs coupled through the
generator ``Q``. Trajectory arrays are time-major: ``a[k, y]`` is the value at
grid node ``k`` in state ``y``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from ._integrate import integrate_backward, tail_integral
from .errors import DomainError, NoConvergence, OutOfRange
from .model import InitialLaw, ModelSpec, TimeGrid, scalar_model


def fmt(x: float) -> str:
    return f"{x:.17g}"


class _Coefficients:
    """Evaluates ``b1`` and ``b2**2`` per state, caching the constant case."""

    def __init__(self, spec: ModelSpec):
        curves = spec.curves
        self._curves = curves
        self._b1 = curves.at_time("b1", 0.0) if curves.is_constant("b1") else None
        self._b2sq = curves.at_time("b2", 0.0) ** 2 if curves.is_constant("b2") else None

    def b1(self, t: float) -> np.ndarray:
        return self._b1 if self._b1 is not None else self._curves.at_time("b1", t)

    def b2sq(self, t: float) -> np.ndarray:
        return self._b2sq if self._b2sq is not None else self._curves.at_time("b2", t) ** 2


@dataclass(frozen=True, eq=False)
class RiccatiMFG:
    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    k_coef: np.ndarray
    grid: TimeGrid
    scheme: str = "rk4"
    dim: int = 1

    @property
    def kappa(self) -> int:
        return self.a.shape[1]

    def interp(self, name: str, t) -> np.ndarray:
        """Linear interpolation of a trajectory, shape ``np.shape(t) + (kappa,)``."""
        arr = getattr(self, name)
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t[0] - 1e-12) or np.any(t > self.t[-1] + 1e-12):
            raise OutOfRange(f"time outside [0, {self.t[-1]}]")
        return np.stack([np.interp(t, self.t, arr[:, y]) for y in range(self.kappa)], axis=-1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,state,a,b,c,k\n")
        for n, tn in enumerate(self.t):
            for y in range(self.kappa):
                vals = (self.a[n, y], self.b[n, y], self.c[n, y], self.k_coef[n, y])
                buf.write(",".join([fmt(tn), str(y), *map(fmt, vals)]) + "\n")
        return buf.getvalue()


def _mfg_rhs(spec: ModelSpec, dim: int):
    coef = _Coefficients(spec)
    qt = spec.q.T
    h = spec.h

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        a, b, c, k = y
        b1, b2sq = coef.b1(t), coef.b2sq(t)
        da = -(2 * b1 * a - 2 * b2sq * a * a + a @ qt + h)
        db = -((2 * b1 - 4 * b2sq * a) * b + b @ qt + h)
        dc = -(dim * a + dim * b + c @ qt)
        dk = -(-2 * b2sq * a * a + 4 * b2sq * a * b + 2 * b1 * k + k @ qt)
        return np.stack([da, db, dc, dk])

    return rhs


def _solve(spec: ModelSpec, dim: int, scheme: str) -> RiccatiMFG:
    t = spec.grid.nodes
    g = spec.g
    zero = np.zeros_like(g)
    y = integrate_backward(_mfg_rhs(spec, dim), np.stack([g, g, zero, zero]), t, scheme)
    return RiccatiMFG(t, y[:, 0], y[:, 1], y[:, 2], y[:, 3], spec.grid, scheme, dim)


def solve_mfg_riccati(spec: ModelSpec, scheme: str = "rk4") -> RiccatiMFG:
    """Solve the 4-kappa mean-field Riccati system backward from ``T``.

    Raises:
        BlowUp: a coefficient exceeded ``1e12`` in magnitude.
    """
    return _solve(spec, 1, scheme)


def solve_multidim_riccati(spec: ModelSpec, dim: int, scheme: str = "rk4") -> RiccatiMFG:
    """Same system for a ``dim``-dimensional state; only ``c`` scales with ``dim``."""
    if int(dim) != dim or dim < 1:
        raise OutOfRange(f"dim must be a positive integer, got {dim}")
    return _solve(spec, int(dim), scheme)


def value_function_U(ric: RiccatiMFG, m0: InitialLaw, y: int, x: float) -> float:
    """Equilibrium value at time 0 for a player at ``x`` in state ``y``."""
    a, b, c, k = ric.a[0, y], ric.b[0, y], ric.c[0, y], ric.k_coef[0, y]
    return float(a * x * x - 2 * a * x * m0.mu0 + k * m0.mu0**2 + b * m0.nu0 + c)


# -- extended 7-kappa system -------------------------------------------------

EXTENDED_FIELDS = ("a", "d", "e", "f", "k", "b", "c")


@dataclass(frozen=True, eq=False)
class ExtendedRiccati:
    t: np.ndarray
    a: np.ndarray
    d: np.ndarray
    e: np.ndarray
    f: np.ndarray
    k_coef: np.ndarray
    b: np.ndarray
    c: np.ndarray
    w: np.ndarray  # (6, n+1, kappa)
    grid: TimeGrid

    @property
    def max_abs_d(self) -> float:
        return float(np.max(np.abs(self.d)))

    @property
    def max_abs_e(self) -> float:
        return float(np.max(np.abs(self.e)))

    @property
    def max_f_plus_2a(self) -> float:
        return float(np.max(np.abs(self.f + 2 * self.a)))

    def deviations(self) -> dict[str, float]:
        return {"d": self.max_abs_d, "e": self.max_abs_e, "f+2a": self.max_f_plus_2a}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,state,a,b,c,k,d,e,f," + ",".join(f"w{i}" for i in range(6)) + "\n")
        for n, tn in enumerate(self.t):
            for y in range(self.a.shape[1]):
                vals = [self.a[n, y], self.b[n, y], self.c[n, y], self.k_coef[n, y], self.d[n, y], self.e[n, y], self.f[n, y]]
                vals += list(self.w[:, n, y])
                buf.write(",".join([fmt(tn), str(y), *map(fmt, vals)]) + "\n")
        return buf.getvalue()


def _w_coefficients(b1, b2sq, a, d, f) -> np.ndarray:
    return np.stack(
        [
            b1 - 2 * b2sq * a - b2sq * f,
            -b2sq * d,
            -2 * b2sq * d,
            -4 * b2sq * a + 2 * b1,
            -2 * b2sq * f,
            np.ones_like(a),
        ]
    )


def solve_extended_riccati(spec: ModelSpec, scheme: str = "rk4") -> ExtendedRiccati:
    """Solve the self-contained 7-kappa system with the ``w`` feedback substituted.

    Its solution certifies the reduction to four unknowns: ``d`` and ``e``
    should vanish and ``f`` should equal ``-2 a``.
    """
    coef = _Coefficients(spec)
    qt = spec.q.T
    h = spec.h

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        a, d, e, f, k, b, c = y
        b1, b2sq = coef.b1(t), coef.b2sq(t)
        w0, w1, w2, w3, w4, w5 = _w_coefficients(b1, b2sq, a, d, f)
        da = -(2 * b1 * a - 2 * b2sq * a * a + a @ qt + h)
        dd = -(b1 * d - 2 * b2sq * a * d + f * w1 + d @ qt)
        de = -(-b2sq * d * f + 2 * k * w1 + e * w0 + b * w2 + e @ qt)
        df = -(b1 * f - 2 * b2sq * a * f + f * w0 + f @ qt - 2 * h)
        dk = -(-0.5 * b2sq * f * f + 2 * k * w0 + b * w4 + k @ qt)
        db = -(b * w3 + b @ qt + h)
        dc = -(a - 0.5 * b2sq * d * d + e * w1 + b * w5 + c @ qt)
        return np.stack([da, dd, de, df, dk, db, dc])

    t = spec.grid.nodes
    g = spec.g
    z = np.zeros_like(g)
    y = integrate_backward(rhs, np.stack([g, z, z, -2 * g, z, g, z]), t, scheme)
    a, d, e, f, k, b, c = (y[:, i] for i in range(7))
    b1 = spec.curves.on_times("b1", t)
    b2sq = spec.curves.on_times("b2", t) ** 2
    w = _w_coefficients(b1, b2sq, a, d, f)
    return ExtendedRiccati(t, a, d, e, f, k, b, c, w, spec.grid)


def compute_w(ext: ExtendedRiccati) -> np.ndarray:
    """The six feedback coefficients ``w0..w5``, shape ``(6, n+1, kappa)``."""
    return ext.w


# -- a-priori bound and truncated Picard ------------------------------------


def a_priori_bound(spec: ModelSpec) -> float:
    """``exp(K T) (sum g + T sum h)`` with ``K = 2 sup|b1| + max_i sum_y |q[y, i]|``."""
    K = 2.0 * spec.curves.sup_abs("b1") + float(np.max(np.abs(spec.q).sum(axis=0)))
    return math.exp(K * spec.T) * (float(spec.g.sum()) + spec.T * float(spec.h.sum()))


@dataclass(frozen=True, eq=False)
class PicardResult:
    t: np.ndarray
    a: np.ndarray
    iterations: int
    residual: float
    truncation_active: bool


def picard_truncated_solve(
    spec: ModelSpec,
    trunc: float,
    max_iter: int = 10_000,
    tol: float = 1e-10,
    *,
    window: int = 10,
    refine: int = 4,
) -> PicardResult:
    """Fixed-point iteration of the truncated integral operator for ``a``.

    The operator is ``T[a](t) = clip(g + int_t^T (h + 2 b1 a - 2 b2^2 a^2 + Q a) ds, 0, trunc)``.
    Iterating it over the whole horizon at once only contracts for short
    horizons, so it is applied on consecutive windows of ``window`` base steps,
    sweeping backward from ``T``; each window starts from ``a = 0`` and takes its
    terminal value from the window after it. Integrals use a fourth-order rule
    on a grid ``refine`` times finer than the model grid.

    Returns:
        The ``a`` trajectory on the model grid, the total iteration count, the
        final sup-norm change and whether the clamp was ever active at the end.

    Raises:
        NoConvergence: a window did not settle to ``tol`` within ``max_iter``.
    """
    if trunc < 0:
        raise OutOfRange(f"truncation level must be nonnegative, got {trunc}")
    n = spec.grid.n_steps * refine
    dt = spec.T / n
    tf = np.linspace(0.0, spec.T, n + 1)
    b1 = spec.curves.on_times("b1", tf)
    b2sq = spec.curves.on_times("b2", tf) ** 2
    qt = spec.q.T
    h = spec.h
    a = np.zeros((n + 1, spec.kappa))
    terminal = np.clip(spec.g, 0.0, trunc)
    a[-1] = terminal
    span = max(3, window * refine)
    total_iter, last_residual, active = 0, 0.0, False
    hi = n
    while hi > 0:
        lo = max(0, hi - span)
        if hi - lo < 3 and lo > 0:
            lo = max(0, hi - 3)
        sl = slice(lo, hi + 1)
        cur = np.zeros((hi - lo + 1, spec.kappa))
        cur[-1] = terminal
        for it in range(1, max_iter + 1):
            integrand = h + 2 * b1[sl] * cur - 2 * b2sq[sl] * cur * cur + cur @ qt
            new = np.clip(terminal + tail_integral(integrand, dt), 0.0, trunc)
            residual = float(np.max(np.abs(new - cur)))
            cur = new
            if residual < tol:
                break
        else:
            raise NoConvergence(total_iter + max_iter, residual)
        total_iter += it
        last_residual = max(last_residual, residual)
        a[sl] = cur
        unclamped = terminal + tail_integral(h + 2 * b1[sl] * cur - 2 * b2sq[sl] * cur * cur + cur @ qt, dt)
        active = active or bool(np.any(unclamped < 0) or np.any(unclamped > trunc))
        terminal = cur[0]
        hi = lo
    return PicardResult(spec.grid.nodes, a[::refine].copy(), total_iter, last_residual, active)


# -- closed forms without common noise --------------------------------------


def _logcosh(x: np.ndarray) -> np.ndarray:
    x = np.abs(x)
    return x + np.log1p(np.exp(-2 * x)) - math.log(2.0)


@dataclass(frozen=True, eq=False)
class ExplicitNoCommonNoise:
    """Closed-form solution of the scalar problem without common noise.

    For ``h > 0``: ``value`` holds ``f1``, ``variance`` holds ``gamma`` and
    ``offset`` holds ``f3``. For ``h < 0`` they hold ``g1``, ``lambda`` and
    ``g3``; nodes outside the existence interval ``(t0, T]`` are NaN, and the
    variance/offset curves (integrated from time 0) are NaN throughout when
    ``t0 > 0``.
    """

    sign: str
    h: float
    sigma: float
    T: float
    t: np.ndarray
    value: np.ndarray
    variance: np.ndarray
    offset: np.ndarray
    blow_up_time: float | None

    def value_at(self, t: float) -> float:
        return float(_explicit_value(self.h, self.T, np.array([self._check(t)]))[0])

    def variance_at(self, t: float) -> float:
        self._check(t)
        if self.blow_up_time:
            raise DomainError("variance integrates from 0 across the blow-up time")
        return float(_explicit_variance(self.h, self.sigma, self.T, np.array([t]))[0])

    def _check(self, t: float) -> float:
        if not 0 <= t <= self.T:
            raise OutOfRange(f"t={t} outside [0, {self.T}]")
        if self.blow_up_time and t <= self.blow_up_time:
            raise DomainError(f"solution only exists on ({self.blow_up_time}, {self.T}]")
        return t


def _explicit_value(h: float, T: float, t: np.ndarray) -> np.ndarray:
    tau = T - t
    if h > 0:
        return math.sqrt(h / 2) * np.tanh(math.sqrt(2 * h) * tau)
    return -math.sqrt(-h / 2) * np.tan(math.sqrt(-2 * h) * tau)


def _explicit_variance(h: float, sigma: float, T: float, t: np.ndarray) -> np.ndarray:
    # exp(-4 int_0^t f1)(1 + sigma^2 int_0^t exp(4 int_0^s f1) ds) in closed form
    c = math.sqrt(2 * abs(h))
    tau = T - t
    s2 = sigma * sigma
    if h > 0:
        first = np.exp(2 * (_logcosh(c * tau) - _logcosh(c * T)))
        second = s2 / c * np.sinh(c * t) * np.exp(_logcosh(c * tau) - _logcosh(c * T))
        return first + second
    return (np.cos(c * tau) / math.cos(c * T)) ** 2 + s2 / c * np.cos(c * tau) * np.sin(c * t) / math.cos(c * T)


def explicit_no_common_noise(h: float, sigma: float, T: float, grid: TimeGrid) -> ExplicitNoCommonNoise:
    """Closed-form feedback, variance and offset curves for a single state with ``b1 = 0``, ``b2 = 1``, ``g = 0``."""
    if h == 0 or not math.isfinite(h):
        raise DomainError(f"h must be a nonzero real, got {h}")
    if not sigma > 0:
        raise OutOfRange(f"sigma must be positive, got {sigma}")
    t = grid.nodes
    if h > 0:
        value = _explicit_value(h, T, t)
        gamma = _explicit_variance(h, sigma, T, t)
        offset = tail_integral(sigma**2 * value + h * gamma, grid.dt)
        return ExplicitNoCommonNoise("positive_h", h, sigma, T, t, value, gamma, offset, None)
    c = math.sqrt(-2 * h)
    t0 = max(0.0, T - math.pi / (2 * c))
    alive = t > t0 if t0 > 0 else np.ones_like(t, dtype=bool)
    value = np.full_like(t, np.nan)
    value[alive] = _explicit_value(h, T, t[alive])
    variance = np.full_like(t, np.nan)
    offset = np.full_like(t, np.nan)
    if t0 == 0.0 and c * T < math.pi / 2:
        variance = _explicit_variance(h, sigma, T, t)
        offset = tail_integral(sigma**2 * value + h * variance, grid.dt)
    return ExplicitNoCommonNoise("negative_h", h, sigma, T, t, value, variance, offset, t0)


def scalar_riccati_a(h: float, g: float, T: float, n_steps: int, scheme: str = "rk4") -> RiccatiMFG:
    """Single-state solve with ``b1 = 0``, ``b2 = 1``; costs may be nonpositive."""
    return solve_mfg_riccati(scalar_model(h, g, T, n_steps), scheme)
