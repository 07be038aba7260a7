"""Estimators for the N-player to mean-field convergence.

The coupled gap ``E|Z^N_t - xhat_t|^2`` bounds the squared 2-Wasserstein
distance between player 1's law and the mean-field law; its root decays like
``N^{-1/2}``. Every estimator draws its randomness from counter-based streams
keyed by replica, so results do not depend on chunking or thread count and
different ``N`` share common random numbers.
"""

from __future__ import annotations

import io
import math
import os
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .ctmc import CtmcPath
from .errors import EmptySamples, NonPositiveValue, OutOfRange
from .model import ModelSpec
from .nplayer import solve_reduced
from .paths import batch_coefficients, make_noise_batch, run_coupled_batch, run_mfg_batch, run_nplayer_batch
from .riccati import RiccatiMFG, fmt, solve_mfg_riccati
from .streams import StreamFactory

THREADS_ENV = "MFG_LQG_THREADS"
DEFAULT_CHUNK = 2000


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise OutOfRange(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    return os.cpu_count() or 1


def _chunks(replicas: int, chunk: int) -> list[range]:
    return [range(lo, min(lo + chunk, replicas)) for lo in range(0, replicas, chunk)]


def _pmap(fn, items):
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


def default_eval_times(T: float) -> list[float]:
    return [T / 5, T / 2, T]


def _nodes(spec: ModelSpec, times: Sequence[float]) -> list[int]:
    return [spec.grid.index_of(t) for t in times]


# -- statistics helpers ------------------------------------------------------


def w2_empirical_1d(samples_a, samples_b) -> float:
    """Exact 2-Wasserstein distance between two equal-size empirical laws on the line."""
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySamples("need at least one sample on each side")
    if a.size != b.size:
        raise EmptySamples(f"sample counts differ ({a.size} vs {b.size})")
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float


def fit_rate(Ns: Sequence[float], values: Sequence[float]) -> RateFit:
    """Least-squares line through ``(log N, log value)``."""
    x = np.log(np.asarray(Ns, dtype=float))
    v = np.asarray(values, dtype=float)
    if len(x) != len(v) or len(x) < 3:
        raise OutOfRange("need at least three (N, value) pairs")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise NonPositiveValue(f"values must be positive, got {v.tolist()}")
    y = np.log(v)
    res = stats.linregress(x, y)
    return RateFit(float(res.slope), float(res.intercept), float(res.rvalue**2))


# -- coupled gap --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GapStats:
    """Monte Carlo statistics of the coupled gap at the evaluation times."""

    N: int
    t: np.ndarray
    gap_sq_mean: np.ndarray
    gap_sq_se: np.ndarray
    w2_marginal: np.ndarray
    replicas: int
    seed: int
    z: np.ndarray = field(repr=False)
    xhat: np.ndarray = field(repr=False)

    @property
    def gap_rms(self) -> np.ndarray:
        return np.sqrt(self.gap_sq_mean)

    @property
    def gap_se(self) -> np.ndarray:
        """Standard error of ``gap_rms`` (delta method); zero when the gap vanishes."""
        rms = self.gap_rms
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(rms > 0, self.gap_sq_se / (2 * rms), 0.0)


def _gap_stats(N, t, z, xhat, seed) -> GapStats:
    gap2 = (z - xhat) ** 2
    R = gap2.shape[0]
    w2 = np.array([w2_empirical_1d(z[:, m], xhat[:, m]) for m in range(z.shape[1])])
    return GapStats(N, np.asarray(t, dtype=float), gap2.mean(axis=0), gap2.std(axis=0, ddof=1) / math.sqrt(R), w2, R, seed, z, xhat)


def coupled_samples(
    spec: ModelSpec,
    Ns: Sequence[int],
    replicas: int,
    eval_times: Sequence[float],
    seed: int = 0,
    *,
    ric: RiccatiMFG | None = None,
    chunk: int = DEFAULT_CHUNK,
    y0: int = 0,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """``Z^N`` and ``xhat`` samples ``(replicas, len(eval_times))`` for every ``N``.

    One noise batch per replica block is shared by all ``N``.
    """
    ric = ric if ric is not None else solve_mfg_riccati(spec)
    reduceds = {N: solve_reduced(spec, N) for N in Ns}
    nodes = _nodes(spec, eval_times)
    factory = StreamFactory(seed)
    n_init = max(Ns)

    def work(block: range):
        noise = make_noise_batch(spec, factory, block, n_init=n_init, y0=y0)
        coefs = batch_coefficients(spec, ric, noise)
        out = {}
        for N in Ns:
            z, xhat, _, _ = run_coupled_batch(spec, ric, reduceds[N], noise, nodes, coefs)
            out[N] = (z, xhat)
        return out

    parts = _pmap(work, _chunks(replicas, chunk))
    return {N: (np.concatenate([p[N][0] for p in parts]), np.concatenate([p[N][1] for p in parts])) for N in Ns}


def estimate_coupled_gap(
    spec: ModelSpec,
    N: int,
    replicas: int,
    eval_times: Sequence[float] | None = None,
    seed: int = 0,
    *,
    ric: RiccatiMFG | None = None,
    chunk: int = DEFAULT_CHUNK,
) -> GapStats:
    """Mean and standard error of the squared coupled gap at each evaluation time."""
    if replicas < 100:
        raise OutOfRange(f"need at least 100 replicas, got {replicas}")
    times = default_eval_times(spec.T) if eval_times is None else list(eval_times)
    z, xhat = coupled_samples(spec, [N], replicas, times, seed, ric=ric, chunk=chunk)[N]
    return _gap_stats(N, times, z, xhat, seed)


def coefficient_gap(spec: ModelSpec, Ns: Sequence[int], *, ric: RiccatiMFG | None = None) -> dict[int, float]:
    """``sup_{t,y} |ahat1^N - a|`` for each ``N``."""
    ric = ric if ric is not None else solve_mfg_riccati(spec)
    return {N: float(np.max(np.abs(solve_reduced(spec, N).ahat1 - ric.a))) for N in Ns}


# -- full convergence study --------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    Ns: list[int]
    eval_times: list[float]
    gaps: dict[int, GapStats]
    coef_gap: dict[int, float]
    fit: RateFit | None
    fit_time: float
    replicas: int
    seed: int

    @property
    def degenerate(self) -> bool:
        return self.fit is None

    def gap_rms_at(self, t: float) -> np.ndarray:
        m = int(np.argmin(np.abs(np.asarray(self.eval_times) - t)))
        return np.array([self.gaps[N].gap_rms[m] for N in self.Ns])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("N,t,gap_rms,gap_se,coef_gap,w2_marginal\n")
        for N in self.Ns:
            g = self.gaps[N]
            for m, t in enumerate(self.eval_times):
                vals = (t, g.gap_rms[m], g.gap_se[m], self.coef_gap[N], g.w2_marginal[m])
                buf.write(f"{N}," + ",".join(map(fmt, vals)) + "\n")
        return buf.getvalue()

    def summary(self) -> str:
        if self.fit is None:
            return f"degenerate: gap_rms vanishes at t={self.fit_time:g}, slope undefined (replicas={self.replicas}, seed={self.seed})"
        f = self.fit
        return f"slope={f.slope:.6f} intercept={f.intercept:.6f} r2={f.r2:.6f} t={self.fit_time:g} replicas={self.replicas} seed={self.seed}"


def run_convergence(
    spec: ModelSpec,
    Ns: Sequence[int],
    replicas: int = 10_000,
    seed: int = 0,
    eval_times: Sequence[float] | None = None,
    *,
    chunk: int = DEFAULT_CHUNK,
    y0: int = 0,
) -> ConvergenceReport:
    """Coupled gaps on common random numbers, coefficient gaps and the fitted rate at ``T``."""
    Ns = [int(n) for n in Ns]
    if len(Ns) < 3 or any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise OutOfRange(f"need at least three strictly increasing player counts, got {Ns}")
    times = default_eval_times(spec.T) if eval_times is None else list(eval_times)
    if spec.T not in times:
        times.append(spec.T)
    ric = solve_mfg_riccati(spec)
    samples = coupled_samples(spec, Ns, replicas, times, seed, ric=ric, chunk=chunk, y0=y0)
    gaps = {N: _gap_stats(N, times, *samples[N], seed) for N in Ns}
    coef = coefficient_gap(spec, Ns, ric=ric)
    m = times.index(spec.T)
    finals = [gaps[N].gap_rms[m] for N in Ns]
    fit = fit_rate(Ns, finals) if all(v > 0 for v in finals) else None
    return ConvergenceReport(Ns, times, gaps, coef, fit, spec.T, replicas, seed)


# -- distributional and fixed-point checks ------------------------------------


@dataclass(frozen=True)
class DistributionCheck:
    statistic: float
    pvalue: float
    coupled: np.ndarray = field(repr=False)
    direct: np.ndarray = field(repr=False)


def distribution_check(
    spec: ModelSpec,
    N: int,
    replicas: int,
    seed_coupled: int,
    seed_direct: int,
    *,
    t: float | None = None,
    chunk: int = 1000,
) -> DistributionCheck:
    """Two-sample Kolmogorov-Smirnov test between ``Z^N_t`` and player 1 of a direct simulation."""
    t = spec.T if t is None else t
    z, _ = coupled_samples(spec, [N], replicas, [t], seed_coupled, chunk=chunk)[N]
    reduced = solve_reduced(spec, N)
    factory = StreamFactory(seed_direct)
    node = spec.grid.index_of(t)
    parts = _pmap(lambda blk: run_nplayer_batch(spec, reduced, factory, blk, [node])[:, 0, 0], _chunks(replicas, chunk))
    direct = np.concatenate(parts)
    res = stats.ks_2samp(z[:, 0], direct)
    return DistributionCheck(float(res.statistic), float(res.pvalue), z[:, 0], direct)


@dataclass(frozen=True, eq=False)
class FixedPointReport:
    times: np.ndarray
    mean_mc: np.ndarray
    mean_ode: np.ndarray
    mean_se: np.ndarray
    second_mc: np.ndarray
    second_ode: np.ndarray
    second_se: np.ndarray
    replicas: int

    @staticmethod
    def _z(diff, se):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(se > 0, diff / se, np.where(diff == 0, 0.0, np.inf))

    @property
    def z_mean(self) -> np.ndarray:
        return self._z(self.mean_mc - self.mean_ode, self.mean_se)

    @property
    def z_second(self) -> np.ndarray:
        return self._z(self.second_mc - self.second_ode, self.second_se)

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(self.z_mean)), np.max(np.abs(self.z_second))))


def fixed_point_check(
    spec: ModelSpec,
    ric: RiccatiMFG,
    y_path: CtmcPath,
    replicas: int,
    times: Sequence[float] = (1.0, 2.5, 5.0),
    seed: int = 0,
    *,
    chunk: int = 10_000,
    method: str = "em",
) -> FixedPointReport:
    """Compare Monte Carlo conditional moments of ``xhat`` given ``y_path`` with the moment equations."""
    from .paths import simulate_conditional_moments

    if replicas < 2:
        raise OutOfRange("need at least two replicas")
    nodes = _nodes(spec, times)
    factory = StreamFactory(seed)

    def work(block: range):
        noise = make_noise_batch(spec, factory, block, with_b=False, y_path=y_path)
        xhat, _ = run_mfg_batch(spec, ric, noise, nodes)
        return xhat

    x = np.concatenate(_pmap(work, _chunks(replicas, chunk)))
    ode = simulate_conditional_moments(spec, ric, y_path, method=method)
    mu_b, nu_b = ode.at_base()
    R = x.shape[0]
    return FixedPointReport(
        np.asarray(times, dtype=float),
        x.mean(axis=0),
        mu_b[nodes],
        x.std(axis=0, ddof=1) / math.sqrt(R),
        (x**2).mean(axis=0),
        nu_b[nodes],
        (x**2).std(axis=0, ddof=1) / math.sqrt(R),
        R,
    )
