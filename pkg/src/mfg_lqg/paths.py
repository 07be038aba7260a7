"""Monte Carlo simulation of the equilibrium dynamics.

All simulators run Euler-Maruyama on a *refined* grid: the model grid with
every jump time of the common-noise path inserted, so the regime is constant
on each step and coefficients are read at the left end of the step.

Batched kernels work on arrays of shape ``(replicas, steps)``. Replicas whose
refined grid is shorter are padded at the end with zero-length steps, which
leave every process unchanged.
"""

from __future__ import annotations

import io
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .ctmc import CtmcPath, sample_path
from .errors import GridMismatch, OutOfRange
from .model import ModelSpec, TimeGrid
from .nplayer import ReducedRiccatiN
from .riccati import RiccatiMFG, fmt
from .streams import StreamFactory

# -- refined grids ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RefinedGrid:
    """Model nodes plus jump times; ``state[j]`` is the regime on ``[t[j], t[j+1])``."""

    t: np.ndarray
    state: np.ndarray
    base_index: np.ndarray
    base: TimeGrid

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1


def refine_grid(grid: TimeGrid, path: CtmcPath) -> RefinedGrid:
    if abs(path.T - grid.T) > 1e-12:
        raise GridMismatch(f"path horizon {path.T} differs from grid horizon {grid.T}")
    nodes = grid.nodes
    jumps = path.jump_times[(path.jump_times > 0) & (path.jump_times < grid.T)]
    t = np.union1d(nodes, jumps)
    state = path.states_at(t[:-1])
    base_index = np.searchsorted(t, nodes)
    return RefinedGrid(t, state, base_index, grid)


@dataclass(frozen=True, eq=False)
class GridBatch:
    """Refined grids of several replicas padded to a common length."""

    t: np.ndarray  # (R, L+1)
    dt: np.ndarray  # (R, L)
    state: np.ndarray  # (R, L)
    base_index: np.ndarray  # (R, n+1)
    lengths: np.ndarray  # (R,) unpadded step counts

    @property
    def replicas(self) -> int:
        return self.t.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dt.shape[1]


def batch_grids(grids: Sequence[RefinedGrid]) -> GridBatch:
    lengths = np.array([g.n_steps for g in grids])
    L = int(lengths.max())
    R = len(grids)
    t = np.empty((R, L + 1))
    state = np.empty((R, L), dtype=int)
    for r, g in enumerate(grids):
        n = g.n_steps
        t[r, : n + 1] = g.t
        t[r, n + 1 :] = g.t[-1]
        state[r, :n] = g.state
        state[r, n:] = g.state[-1]
    base_index = np.stack([g.base_index for g in grids])
    return GridBatch(t, np.diff(t, axis=1), state, base_index, lengths)


def _brownian(rng: np.random.Generator, dt: np.ndarray, width: int | None = None) -> np.ndarray:
    """Increments on the steps ``dt``; ``width`` adds a trailing axis of independent copies."""
    shape = dt.shape if width is None else dt.shape + (width,)
    z = rng.standard_normal(shape)
    scale = np.sqrt(dt) if width is None else np.sqrt(dt)[..., None]
    return scale * z


def _padded_brownian(rng: np.random.Generator, dt_row: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros_like(dt_row)
    out[:n] = np.sqrt(dt_row[:n]) * rng.standard_normal(n)
    return out


# -- coefficient lookup -------------------------------------------------------


def _on_grid(curve_t: np.ndarray, curve: np.ndarray, t: np.ndarray, state: np.ndarray) -> np.ndarray:
    """``curve[:, state]`` linearly interpolated at ``t`` (shapes broadcast)."""
    out = np.empty(t.shape)
    for y in range(curve.shape[1]):
        mask = state == y
        if mask.any():
            out[mask] = np.interp(t[mask], curve_t, curve[:, y])
    return out


def _curve_on_grid(spec: ModelSpec, which: str, t: np.ndarray, state: np.ndarray) -> np.ndarray:
    vals = spec.curves.on_times(which, t)
    return np.take_along_axis(vals, state[..., None], axis=-1)[..., 0]


@dataclass(frozen=True, eq=False)
class _Coefs:
    b1: np.ndarray
    b2sq: np.ndarray
    a: np.ndarray | None
    ahat1: np.ndarray | None


def _coefficients(spec, t, state, ric=None, reduced=None) -> _Coefs:
    left = t[..., :-1]
    b1 = _curve_on_grid(spec, "b1", left, state)
    b2sq = _curve_on_grid(spec, "b2", left, state) ** 2
    a = _on_grid(ric.t, ric.a, left, state) if ric is not None else None
    ahat = _on_grid(reduced.t, reduced.ahat1, left, state) if reduced is not None else None
    return _Coefs(b1, b2sq, a, ahat)


def _em_step(x, b1, b2sq, coef, anchor, dt, dw):
    """One Euler-Maruyama step of ``dx = (b1 x - 2 b2^2 coef (x - anchor)) dt + dw``."""
    return x + (b1 * x - 2.0 * b2sq * coef * (x - anchor)) * dt + dw


# -- exponential integral and solution maps ----------------------------------


def _cumtrapz(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values, dtype=float)
    out[1:] = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(t))
    return out


def exp_integral(phi: np.ndarray, t_nodes: np.ndarray, t: float) -> float:
    """``exp(int_0^t phi)`` with the trapezoid rule on the sample nodes."""
    phi = np.asarray(phi, dtype=float)
    t_nodes = np.asarray(t_nodes, dtype=float)
    if phi.shape != t_nodes.shape:
        raise GridMismatch(f"curve has {phi.shape} samples on {t_nodes.shape} nodes")
    if not t_nodes[0] <= t <= t_nodes[-1]:
        raise OutOfRange(f"t={t} outside [{t_nodes[0]}, {t_nodes[-1]}]")
    k = int(np.searchsorted(t_nodes, t, side="right")) - 1
    total = _cumtrapz(phi, t_nodes)[k]
    if t > t_nodes[k]:
        phi_t = np.interp(t, t_nodes, phi)
        total += 0.5 * (phi[k] + phi_t) * (t - t_nodes[k])
    return math.exp(total)


def exp_integral_path(phi: np.ndarray, t_nodes: np.ndarray) -> np.ndarray:
    """``exp(int_0^{t_k} phi)`` at every node."""
    return np.exp(_cumtrapz(np.asarray(phi, dtype=float), np.asarray(t_nodes, dtype=float)))


def _check_common(t, *curves, increments=()):
    n = len(t)
    for c in curves:
        if np.shape(c) != (n,):
            raise GridMismatch(f"curve with shape {np.shape(c)} on a grid of {n} nodes")
    for w in increments:
        if np.shape(w) != (n - 1,):
            raise GridMismatch(f"increments with shape {np.shape(w)} on a grid of {n} nodes")


def solution_map_G(x: float, phi1, phi2, phi3, w_increments, t_nodes) -> np.ndarray:
    """``E(p1-p2) [x + int E(p2-p1) (p2 p3 ds + dW)]`` along the grid.

    The ``ds`` integral uses the trapezoid rule and the ``dW`` integral the
    left-point rule.
    """
    t = np.asarray(t_nodes, dtype=float)
    phi1, phi2, phi3 = (np.asarray(p, dtype=float) for p in (phi1, phi2, phi3))
    dw = np.asarray(w_increments, dtype=float)
    _check_common(t, phi1, phi2, phi3, increments=(dw,))
    log_e = _cumtrapz(phi1 - phi2, t)
    inv = np.exp(-log_e)
    drift = _cumtrapz(inv * phi2 * phi3, t)
    noise = np.concatenate([[0.0], np.cumsum(inv[:-1] * dw)])
    return np.exp(log_e) * (x + drift + noise)


def solution_map_Gbar(x: float, phi, w1_increments, w2_increments, t_nodes) -> np.ndarray:
    """``E(phi) [x + int E(-phi) d(W1 + W2)]`` along the grid (left-point rule)."""
    t = np.asarray(t_nodes, dtype=float)
    phi = np.asarray(phi, dtype=float)
    d1 = np.asarray(w1_increments, dtype=float)
    d2 = np.asarray(w2_increments, dtype=float)
    _check_common(t, phi, increments=(d1, d2))
    log_e = _cumtrapz(phi, t)
    noise = np.concatenate([[0.0], np.cumsum(np.exp(-log_e[:-1]) * (d1 + d2))])
    return np.exp(log_e) * (x + noise)


# -- single-path simulators ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class SamplePathSet:
    grid: RefinedGrid
    series: dict[str, np.ndarray]
    y_path: CtmcPath
    seeds: dict[str, int] = field(default_factory=dict)

    def at_base(self, name: str) -> np.ndarray:
        return self.series[name][..., self.grid.base_index]

    def to_csv(self, replica: int = 0, header: bool = True) -> str:
        buf = io.StringIO()
        if header:
            buf.write("t,series_name,replica,value\n")
        for name, values in self.series.items():
            for tk, v in zip(self.grid.t, values):
                buf.write(f"{fmt(tk)},{name},{replica},{fmt(v)}\n")
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class MomentODESolution:
    t: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    grid: RefinedGrid

    def at_base(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mu[self.grid.base_index], self.nu[self.grid.base_index]


def _check_solution_grid(spec: ModelSpec, *solutions) -> None:
    nodes = spec.grid.nodes
    for sol in solutions:
        if sol is not None and not np.array_equal(sol.t, nodes):
            raise GridMismatch("coefficients were solved on a different grid than the model's")


def simulate_mfg_path(spec: ModelSpec, ric: RiccatiMFG, y_path: CtmcPath, rng: np.random.Generator) -> SamplePathSet:
    """Equilibrium path ``xhat`` and mean flow ``mu`` for one draw of ``X0`` and ``W``."""
    _check_solution_grid(spec, ric)
    grid = refine_grid(spec.grid, y_path)
    x0 = spec.initial.from_normals(rng.standard_normal())
    dw = _brownian(rng, grid.dt)
    c = _coefficients(spec, grid.t, grid.state, ric=ric)
    xhat, mu = _mfg_kernel(np.array([x0]), spec.initial.mu0, c, grid.dt[None], dw[None])
    return SamplePathSet(grid, {"xhat": xhat[0], "mu": mu[0]}, y_path)


def _mfg_kernel(x0, mu0, c: _Coefs, dt, dw, record=None):
    """Run ``xhat`` and ``mu`` over all steps; returns full paths or snapshots."""
    R, L = dt.shape
    x = np.asarray(x0, dtype=float).copy()
    mu = np.full(R, float(mu0))
    rec = _Recorder(record, R, 2) if record is not None else None
    if rec is None:
        xs = np.empty((R, L + 1))
        ms = np.empty((R, L + 1))
        xs[:, 0], ms[:, 0] = x, mu
    else:
        rec.take(0, x, mu)
    a, b1, b2sq = _broadcast(c.a, R), _broadcast(c.b1, R), _broadcast(c.b2sq, R)
    for j in range(L):
        x = _em_step(x, b1[:, j], b2sq[:, j], a[:, j], mu, dt[:, j], dw[:, j])
        mu = mu + b1[:, j] * mu * dt[:, j]
        if rec is None:
            xs[:, j + 1], ms[:, j + 1] = x, mu
        else:
            rec.take(j + 1, x, mu)
    return (xs, ms) if rec is None else rec.values


def _broadcast(arr, R):
    """Coefficients of one shared grid (1-d) or per replica (2-d) as ``(R, L)``."""
    arr = np.asarray(arr)
    return np.broadcast_to(arr, (R, arr.shape[-1])) if arr.ndim == 1 else arr


class _Recorder:
    """Captures per-replica values at given refined-grid indices."""

    def __init__(self, index: np.ndarray, R: int, n_series: int):
        self.index = np.broadcast_to(index, (R, index.shape[-1]))
        self._n = n_series
        self.values: tuple[np.ndarray, ...] | None = None

    def take(self, j: int, *series):
        if self.values is None:
            self.values = tuple(np.full(self.index.shape + s.shape[1:], np.nan) for s in series)
        rows, cols = np.nonzero(self.index == j)
        if rows.size:
            for out, s in zip(self.values, series):
                out[rows, cols] = s[rows]


def simulate_conditional_moments(spec: ModelSpec, ric: RiccatiMFG, y_path: CtmcPath, method: str = "em") -> MomentODESolution:
    """Conditional mean and second moment of ``xhat`` given the regime path.

    ``method="euler"`` is the explicit Euler scheme for
    ``mu' = b1 mu`` and ``nu' = 1 + 2 b1 nu - 4 b2^2 a nu + 4 b2^2 a mu^2``.
    ``method="em"`` (default) is the exact moment recursion of the Euler-Maruyama
    scheme used by the path simulators; it is an equally consistent first-order
    discretisation of the same equations and agrees with Monte Carlo up to
    sampling error alone.
    """
    _check_solution_grid(spec, ric)
    if method not in ("em", "euler"):
        raise ValueError(f"unknown method {method!r}")
    grid = refine_grid(spec.grid, y_path)
    c = _coefficients(spec, grid.t, grid.state, ric=ric)
    dt = grid.dt
    L = len(dt)
    mu = np.empty(L + 1)
    nu = np.empty(L + 1)
    mu[0], nu[0] = spec.initial.mu0, spec.initial.nu0
    for j in range(L):
        b1, k = c.b1[j], 2.0 * c.b2sq[j] * c.a[j]
        m, v, h = mu[j], nu[j], dt[j]
        if method == "euler":
            nu[j + 1] = v + (1.0 + 2 * b1 * v - 2 * k * v + 2 * k * m * m) * h
        else:
            lin = 1.0 + (b1 - k) * h
            shift = k * m * h
            nu[j + 1] = lin * lin * v + 2 * lin * shift * m + shift * shift + h
        mu[j + 1] = m + b1 * m * h
    return MomentODESolution(grid.t, mu, nu, grid)


def simulate_nplayer(
    spec: ModelSpec,
    reduced: ReducedRiccatiN,
    y_path: CtmcPath,
    rng: np.random.Generator | None = None,
    *,
    player_rngs: Sequence[np.random.Generator] | None = None,
) -> SamplePathSet:
    """Paths of all ``N`` players under the equilibrium feedback, plus their average.

    Player ``i`` draws its initial position and then its Brownian increments
    from ``player_rngs[i]`` when given, otherwise everything comes from ``rng``.
    """
    _check_solution_grid(spec, reduced)
    N = reduced.N
    grid = refine_grid(spec.grid, y_path)
    if player_rngs is not None:
        if len(player_rngs) != N:
            raise GridMismatch(f"expected {N} player streams, got {len(player_rngs)}")
        z0 = np.array([r.standard_normal() for r in player_rngs])
        dw = np.stack([_brownian(r, grid.dt) for r in player_rngs], axis=-1)
    else:
        if rng is None:
            raise ValueError("either rng or player_rngs is required")
        z0 = rng.standard_normal(N)
        dw = _brownian(rng, grid.dt, N)
    c = _coefficients(spec, grid.t, grid.state, reduced=reduced)
    x0 = spec.initial.from_normals(z0)
    xs, xbar_direct = _nplayer_kernel(x0[None], c, grid.dt[None], dw[None], N)
    series = {f"x_{i + 1}": xs[0, :, i] for i in range(N)}
    series["xbar"] = xs[0].mean(axis=-1)
    series["xbar_direct"] = xbar_direct[0]
    return SamplePathSet(grid, series, y_path)


def _nplayer_kernel(x0, c: _Coefs, dt, dw, N, record=None):
    """``x0`` (R, N), ``dw`` (R, L, N). Returns player paths and the directly integrated mean."""
    R, L = dt.shape
    x = np.array(x0, dtype=float)
    xbar = x.mean(axis=-1)
    b1, b2sq, ahat = _broadcast(c.b1, R), _broadcast(c.b2sq, R), _broadcast(c.ahat1, R)
    rec = _Recorder(record, R, 1) if record is not None else None
    if rec is None:
        xs = np.empty((R, L + 1, N))
        xb = np.empty((R, L + 1))
        xs[:, 0], xb[:, 0] = x, xbar
    else:
        rec.take(0, x)
    for j in range(L):
        mean = x.mean(axis=-1, keepdims=True)
        h = dt[:, j, None]
        x = _em_step(x, b1[:, j, None], b2sq[:, j, None], ahat[:, j, None], mean, h, dw[:, j])
        xbar = xbar + b1[:, j] * xbar * dt[:, j] + dw[:, j].mean(axis=-1)
        if rec is None:
            xs[:, j + 1], xb[:, j + 1] = x, xbar
        else:
            rec.take(j + 1, x)
    return (xs, xb) if rec is None else rec.values[0]


@dataclass(frozen=True, eq=False)
class CouplingRun:
    """Coupled quadruple on the two-Brownian-motion space."""

    N: int
    grid: RefinedGrid
    z: np.ndarray
    xhat: np.ndarray
    xbar: np.ndarray
    mu: np.ndarray
    y_path: CtmcPath

    @property
    def gap(self) -> np.ndarray:
        return self.z - self.xhat

    def to_path_set(self) -> SamplePathSet:
        series = {"z": self.z, "xhat": self.xhat, "xbar": self.xbar, "mu": self.mu, "gap": self.gap}
        return SamplePathSet(self.grid, series, self.y_path)


def simulate_coupled_pair(
    spec: ModelSpec,
    ric: RiccatiMFG,
    reduced: ReducedRiccatiN,
    y_path: CtmcPath,
    rng: np.random.Generator,
    n_aux: int | None = None,
) -> CouplingRun:
    """Simulate ``(Z, xhat, xbar, mu)`` from shared ``W``, ``B``, regime path and initial draws.

    ``n_aux`` defaults to ``reduced.N``; the first auxiliary draw is ``X0``.
    Draw order from ``rng``: ``n_aux`` initial normals, then ``W``, then ``B``.
    """
    _check_solution_grid(spec, ric, reduced)
    N = reduced.N
    n_aux = N if n_aux is None else n_aux
    if n_aux != N:
        raise GridMismatch(f"need exactly N={N} auxiliary draws, got {n_aux}")
    grid = refine_grid(spec.grid, y_path)
    x0 = spec.initial.from_normals(rng.standard_normal(N))
    dw = _brownian(rng, grid.dt)
    db = _brownian(rng, grid.dt)
    c = _coefficients(spec, grid.t, grid.state, ric=ric, reduced=reduced)
    z, xhat, xbar, mu = _coupled_kernel(x0[None, :], spec.initial.mu0, c, grid.dt[None], dw[None], db[None], N)
    return CouplingRun(N, grid, z[0], xhat[0], xbar[0], mu[0], y_path)


def _coupled_kernel(x0_pool, mu0, c: _Coefs, dt, dw, db, N, record=None):
    """``x0_pool`` (R, >=N): column 0 is ``X0``, the first ``N`` columns give ``xbar(0)``."""
    R, L = dt.shape
    x0 = x0_pool[:, 0].astype(float)
    z = x0.copy()
    xhat = x0.copy()
    xbar = x0_pool[:, :N].mean(axis=-1)
    mu = np.full(R, float(mu0))
    b1, b2sq = _broadcast(c.b1, R), _broadcast(c.b2sq, R)
    a, ahat = _broadcast(c.a, R), _broadcast(c.ahat1, R)
    w_b = math.sqrt(N - 1) / N
    rec = _Recorder(record, R, 4) if record is not None else None
    if rec is None:
        out = [np.empty((R, L + 1)) for _ in range(4)]
        for o, v in zip(out, (z, xhat, xbar, mu)):
            o[:, 0] = v
    else:
        rec.take(0, z, xhat, xbar, mu)
    for j in range(L):
        h = dt[:, j]
        z_new = _em_step(z, b1[:, j], b2sq[:, j], ahat[:, j], xbar, h, dw[:, j])
        xhat = _em_step(xhat, b1[:, j], b2sq[:, j], a[:, j], mu, h, dw[:, j])
        xbar = xbar + b1[:, j] * xbar * h + w_b * db[:, j] + dw[:, j] / N
        mu = mu + b1[:, j] * mu * h
        z = z_new
        if rec is None:
            for o, v in zip(out, (z, xhat, xbar, mu)):
                o[:, j + 1] = v
        else:
            rec.take(j + 1, z, xhat, xbar, mu)
    return tuple(out) if rec is None else rec.values


# -- batched noise for estimators --------------------------------------------


@dataclass(frozen=True, eq=False)
class NoiseBatch:
    """Shared randomness for a block of replicas.

    ``dw``/``db`` are the ``W``/``B`` increments on each replica's refined
    grid and ``z0`` holds standard normals for the initial draws (column 0 is
    the tagged player's ``X0``). The same batch serves every ``N`` up to
    ``z0.shape[1]``, which is what makes the comparison across ``N`` use
    common random numbers.
    """

    replicas: np.ndarray
    grids: GridBatch
    y_paths: list[CtmcPath]
    dw: np.ndarray
    db: np.ndarray | None
    z0: np.ndarray

    def eval_index(self, base_nodes: Sequence[int]) -> np.ndarray:
        return self.grids.base_index[:, list(base_nodes)]


def make_noise_batch(
    spec: ModelSpec,
    factory: StreamFactory,
    replicas: Sequence[int],
    *,
    n_init: int = 1,
    with_b: bool = True,
    y_path: CtmcPath | None = None,
    y0: int = 0,
) -> NoiseBatch:
    """Draw regime paths (unless ``y_path`` is fixed), Brownian increments and initial normals."""
    replicas = np.asarray(list(replicas), dtype=np.int64)
    paths, grids = [], []
    fixed = refine_grid(spec.grid, y_path) if y_path is not None else None
    for r in replicas:
        if fixed is None:
            p = sample_path(spec.generator, y0, spec.T, factory(int(r), "Y"))
            paths.append(p)
            grids.append(refine_grid(spec.grid, p))
        else:
            paths.append(y_path)
            grids.append(fixed)
    gb = batch_grids(grids)
    R, L = gb.dt.shape
    dw = np.zeros((R, L))
    db = np.zeros((R, L)) if with_b else None
    z0 = np.empty((R, n_init))
    for k, r in enumerate(replicas):
        n = int(gb.lengths[k])
        dw[k] = _padded_brownian(factory(int(r), "W"), gb.dt[k], n)
        if with_b:
            db[k] = _padded_brownian(factory(int(r), "B"), gb.dt[k], n)
        z0[k] = factory(int(r), "init").standard_normal(n_init)
    return NoiseBatch(replicas, gb, paths, dw, db, z0)


def run_mfg_batch(spec: ModelSpec, ric: RiccatiMFG, noise: NoiseBatch, base_nodes: Sequence[int]):
    """``xhat`` and ``mu`` at the given model nodes, shape ``(R, len(base_nodes))`` each."""
    g = noise.grids
    c = _coefficients(spec, g.t, g.state, ric=ric)
    x0 = spec.initial.from_normals(noise.z0[:, 0])
    return _mfg_kernel(x0, spec.initial.mu0, c, g.dt, noise.dw, record=noise.eval_index(base_nodes))


def run_coupled_batch(
    spec: ModelSpec,
    ric: RiccatiMFG,
    reduced: ReducedRiccatiN,
    noise: NoiseBatch,
    base_nodes: Sequence[int],
    coefs: _Coefs | None = None,
):
    """``(z, xhat, xbar, mu)`` at model nodes for ``N = reduced.N``."""
    N = reduced.N
    if noise.z0.shape[1] < N or noise.db is None:
        raise GridMismatch(f"noise batch carries {noise.z0.shape[1]} initial draws, need {N} and B increments")
    g = noise.grids
    if coefs is None:
        coefs = _coefficients(spec, g.t, g.state, ric=ric, reduced=reduced)
    else:
        coefs = _Coefs(coefs.b1, coefs.b2sq, coefs.a, _on_grid(reduced.t, reduced.ahat1, g.t[:, :-1], g.state))
    pool = spec.initial.from_normals(noise.z0[:, :N])
    return _coupled_kernel(pool, spec.initial.mu0, coefs, g.dt, noise.dw, noise.db, N, record=noise.eval_index(base_nodes))


def batch_coefficients(spec: ModelSpec, ric: RiccatiMFG, noise: NoiseBatch) -> _Coefs:
    """Regime-dependent ``b1``, ``b2^2`` and ``a`` on a batch's grids (reusable across ``N``)."""
    g = noise.grids
    return _coefficients(spec, g.t, g.state, ric=ric)


def run_nplayer_batch(
    spec: ModelSpec,
    reduced: ReducedRiccatiN,
    factory: StreamFactory,
    replicas: Sequence[int],
    base_nodes: Sequence[int],
    y0: int = 0,
) -> np.ndarray:
    """Direct N-player simulation; returns positions ``(R, len(base_nodes), N)``.

    Player ``i`` of replica ``r`` uses streams ``(r, "init", i)`` and
    ``(r, "W", i)``; the regime path uses ``(r, "Y")``.
    """
    N = reduced.N
    replicas = list(replicas)
    grids = [refine_grid(spec.grid, sample_path(spec.generator, y0, spec.T, factory(r, "Y"))) for r in replicas]
    gb = batch_grids(grids)
    R, L = gb.dt.shape
    dw = np.zeros((R, L, N))
    z0 = np.empty((R, N))
    for k, r in enumerate(replicas):
        n = int(gb.lengths[k])
        for i in range(N):
            z0[k, i] = factory(r, "init", i).standard_normal()
            dw[k, :, i] = _padded_brownian(factory(r, "W", i), gb.dt[k], n)
    c = _coefficients(spec, gb.t, gb.state, reduced=reduced)
    record = gb.base_index[:, list(base_nodes)]
    return _nplayer_kernel(spec.initial.from_normals(z0), c, gb.dt, dw, N, record=record)
