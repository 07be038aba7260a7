"""Riccati systems of the symmetric N-player game.

Player ``i``'s value in state ``y`` is ``x^T A_iy x + x^T B_iy + C_iy``. The
full system evolves all ``N * kappa`` matrices; by symmetry each matrix only
takes four distinct values, which leads to the reduced two-unknown system
solved by :func:`solve_reduced`.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from ._integrate import integrate_backward
from .errors import CapExceeded, DimensionMismatch, OutOfRange, ShapeMismatch
from .model import ModelSpec, TimeGrid
from .riccati import _Coefficients, fmt

DEFAULT_CAP = 16
PATTERN_CLASSES = ("a1", "a2", "a3", "a4")


def lambda_matrix(N: int, i: int) -> np.ndarray:
    """``sum_{j != i} (e_i - e_j)(e_i - e_j)^T``."""
    lam = np.zeros((N, N))
    lam[np.diag_indices(N)] = 1.0
    lam[i, :] = -1.0
    lam[:, i] = -1.0
    lam[i, i] = N - 1.0
    return lam


@dataclass(frozen=True, eq=False)
class FullRiccatiN:
    """Trajectories ``A[k, i, y]`` (N x N), ``B[k, i, y]`` (N) and ``C[k, i, y]``."""

    N: int
    t: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    grid: TimeGrid

    def matrix(self, i: int, y: int, t: float) -> np.ndarray:
        return self.A[self.grid.index_of(t), i, y]


@dataclass(frozen=True, eq=False)
class ReducedRiccatiN:
    """Reduced coefficients ``a1``, ``a2`` and ``ahat1 = N/(N-1) a1`` per node and state.

    ``c`` is the common constant term ``C_iy``, which obeys
    ``c' + a1 + (N-1) a2 + Q c = 0`` with ``c(T) = 0``.
    """

    N: int
    t: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    c: np.ndarray
    grid: TimeGrid
    b1: np.ndarray
    b2sq: np.ndarray

    @property
    def ahat1(self) -> np.ndarray:
        return self.N / (self.N - 1) * self.a1

    @property
    def kappa(self) -> int:
        return self.a1.shape[1]

    def pattern_values(self) -> np.ndarray:
        """Predicted class values, shape ``(4, n+1, kappa)`` (``a3``/``a4`` need N >= 3)."""
        N = self.N
        a3 = -self.a1 / (N - 1)
        a4 = self.a1 / ((N - 1) * (N - 2)) - self.a2 / (N - 2) if N > 2 else np.full_like(self.a1, np.nan)
        return np.stack([self.a1, self.a2, a3, a4])

    def matrix(self, i: int, y: int, k: int) -> np.ndarray:
        """Rebuild player ``i``'s N x N matrix at node ``k`` from the pattern."""
        a1, a2, a3, a4 = self.pattern_values()[:, k, y]
        N = self.N
        m = np.full((N, N), a4 if N > 2 else 0.0)
        m[np.diag_indices(N)] = a2
        m[i, :] = a3
        m[:, i] = a3
        m[i, i] = a1
        return m

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,state,a1,a2,ahat1\n")
        ahat = self.ahat1
        for n, tn in enumerate(self.t):
            for y in range(self.kappa):
                buf.write(",".join([fmt(tn), str(y), fmt(self.a1[n, y]), fmt(self.a2[n, y]), fmt(ahat[n, y])]) + "\n")
        return buf.getvalue()


def solve_full(spec: ModelSpec, N: int, *, cap: int = DEFAULT_CAP, scheme: str = "rk4") -> FullRiccatiN:
    """Integrate the full coupled matrix system for ``3 <= N <= cap``.

    Matrices are stored whole; the right-hand side is symmetric by
    construction, so they stay exactly symmetric.

    Raises:
        OutOfRange: ``N < 3``.
        CapExceeded: ``N > cap``.
        BlowUp: the solution left the representable range.
    """
    if N < 3:
        raise OutOfRange(f"full system needs N >= 3, got {N}")
    if N > cap:
        raise CapExceeded(N, cap)
    kappa = spec.kappa
    coef = _Coefficients(spec)
    q = spec.q
    h = spec.h
    lam = np.stack([lambda_matrix(N, i) for i in range(N)])  # (N, N, N)
    idx = np.arange(N)
    nA = N * kappa * N * N
    nB = N * kappa * N

    def unpack(state):
        A = state[:nA].reshape(N, kappa, N, N)
        B = state[nA : nA + nB].reshape(N, kappa, N)
        C = state[nA + nB :].reshape(N, kappa)
        return A, B, C

    def rhs(t: float, state: np.ndarray) -> np.ndarray:
        A, B, C = unpack(state)
        b1 = coef.b1(t)[None, :, None, None]
        b2sq = coef.b2sq(t)[None, :, None, None]
        r = A[idx, :, :, idx]  # r[j, y] = column j of A_j
        R = r.transpose(1, 2, 0)  # R[y][:, j] = r[j, y]
        RA = np.einsum("ypj,iyjq->iypq", R, A)
        quad = RA + RA.transpose(0, 1, 3, 2) - np.einsum("iyp,iyq->iypq", r, r)
        QA = np.einsum("yk,ikpq->iypq", q, A)
        dA = -(2 * b1 * A - 2 * b2sq * quad + QA + (h[None, :, None, None] / N) * lam[:, None])

        beta = B[idx, :, idx]  # beta[j, y] = (B_j)_j
        b1v, b2v = b1[..., 0], b2sq[..., 0]
        coupling = np.einsum("iypq,yq->iyp", A, beta.T) + np.einsum("ypj,iyj->iyp", R, B) - r * beta[:, :, None]
        QB = np.einsum("yk,ikp->iyp", q, B)
        dB = -(b1v * B - 2 * b2v * coupling + QB)

        b2s = coef.b2sq(t)[None, :]
        trA = np.trace(A, axis1=2, axis2=3)
        cross = np.einsum("jy,iyj->iy", beta, B) - beta * beta
        dC = -(-0.5 * b2s * beta**2 - b2s * cross + trA + C @ q.T)
        return np.concatenate([dA.ravel(), dB.ravel(), dC.ravel()])

    A_T = (spec.g[None, :, None, None] / N) * lam[:, None]
    terminal = np.concatenate([np.broadcast_to(A_T, (N, kappa, N, N)).ravel(), np.zeros(nB + N * kappa)])
    t = spec.grid.nodes

    def state_of(flat: int) -> int:
        if flat < nA:
            return (flat // (N * N)) % kappa
        if flat < nA + nB:
            return ((flat - nA) // N) % kappa
        return (flat - nA - nB) % kappa

    traj = integrate_backward(rhs, terminal, t, scheme, state_of=state_of)
    n1 = len(t)
    A = traj[:, :nA].reshape(n1, N, kappa, N, N)
    B = traj[:, nA : nA + nB].reshape(n1, N, kappa, N)
    C = traj[:, nA + nB :].reshape(n1, N, kappa)
    return FullRiccatiN(N, t, A, B, C, spec.grid)


def solve_reduced(spec: ModelSpec, N: int, *, scheme: str = "rk4") -> ReducedRiccatiN:
    """Integrate the N-invariant reduced system (cost independent of ``N``).

    Raises:
        OutOfRange: ``N < 2``.
        BlowUp: the solution left the representable range.
    """
    if N < 2:
        raise OutOfRange(f"reduced system needs N >= 2, got {N}")
    coef = _Coefficients(spec)
    qt = spec.q.T
    h = spec.h
    c1 = 2.0 * (N + 1) / (N - 1)
    c2 = 2.0 / (N - 1) ** 2
    c3 = 4.0 * N / (N - 1)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        a1, a2, c = y
        b1, b2sq = coef.b1(t), coef.b2sq(t)
        da1 = -(2 * b1 * a1 - c1 * b2sq * a1 * a1 + a1 @ qt + (N - 1) * h / N)
        da2 = -(2 * b1 * a2 + c2 * b2sq * a1 * a1 - c3 * b2sq * a1 * a2 + a2 @ qt + h / N)
        dc = -(a1 + (N - 1) * a2 + c @ qt)
        return np.stack([da1, da2, dc])

    t = spec.grid.nodes
    g = spec.g
    y = integrate_backward(rhs, np.stack([(N - 1) * g / N, g / N, np.zeros_like(g)]), t, scheme)
    b1 = spec.curves.on_times("b1", t)
    b2sq = spec.curves.on_times("b2", t) ** 2
    return ReducedRiccatiN(N, t, y[:, 0], y[:, 1], y[:, 2], spec.grid, b1, b2sq)


# -- pattern verification ----------------------------------------------------


def _class_masks(N: int) -> np.ndarray:
    """Boolean masks ``(N players, 4 classes, N, N)``."""
    masks = np.zeros((N, 4, N, N), dtype=bool)
    eye = np.eye(N, dtype=bool)
    for i in range(N):
        row = np.zeros((N, N), dtype=bool)
        row[i, :] = True
        row[:, i] = True
        masks[i, 0, i, i] = True
        masks[i, 1] = eye & ~row
        masks[i, 2] = row & ~eye
        masks[i, 3] = ~row & ~eye
    return masks


@dataclass(frozen=True, eq=False)
class PatternReport:
    """Four-value decomposition of every full-system matrix.

    ``values``, ``spread`` and ``deviation`` have shape ``(n+1, kappa, 4)``:
    the class value (mean over players and entries), the within-class spread
    (max - min over players and entries) and the largest ``|entry - predicted|``.
    """

    N: int
    t: np.ndarray
    values: np.ndarray
    predicted: np.ndarray
    spread: np.ndarray
    deviation: np.ndarray

    @property
    def max_spread(self) -> float:
        return float(np.max(self.spread))

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviation))

    def at(self, t: float, y: int) -> dict[str, float]:
        k = int(np.argmin(np.abs(self.t - t)))
        return dict(zip(PATTERN_CLASSES, self.values[k, y].tolist()))

    def to_csv(self, nodes: np.ndarray | None = None) -> str:
        buf = io.StringIO()
        buf.write("t,state,class,value,predicted,deviation\n")
        ks = range(len(self.t)) if nodes is None else nodes
        for k in ks:
            for y in range(self.values.shape[1]):
                for c, name in enumerate(PATTERN_CLASSES):
                    vals = (self.values[k, y, c], self.predicted[k, y, c], self.deviation[k, y, c])
                    buf.write(",".join([fmt(self.t[k]), str(y), name, *map(fmt, vals)]) + "\n")
        return buf.getvalue()


def verify_pattern(full: FullRiccatiN, reduced: ReducedRiccatiN) -> PatternReport:
    """Compare every full-system matrix against the four-value pattern of the reduced solution."""
    if full.N != reduced.N or full.A.shape[0] != reduced.a1.shape[0] or full.A.shape[2] != reduced.kappa:
        raise ShapeMismatch(
            f"full (N={full.N}, nodes={full.A.shape[0]}, kappa={full.A.shape[2]}) vs "
            f"reduced (N={reduced.N}, nodes={reduced.a1.shape[0]}, kappa={reduced.kappa})"
        )
    if not np.array_equal(full.t, reduced.t):
        raise ShapeMismatch("full and reduced solutions live on different grids")
    N = full.N
    masks = _class_masks(N)
    pred = reduced.pattern_values().transpose(1, 2, 0)  # (n+1, kappa, 4)
    n1, kappa = pred.shape[:2]
    values = np.empty((n1, kappa, 4))
    spread = np.empty((n1, kappa, 4))
    deviation = np.empty((n1, kappa, 4))
    A = full.A  # (n+1, N, kappa, N, N)
    for c in range(4):
        m = masks[:, c]  # (N, N, N)
        entries = A.transpose(0, 2, 1, 3, 4)[:, :, m]  # (n+1, kappa, count)
        values[:, :, c] = entries.mean(axis=-1)
        spread[:, :, c] = entries.max(axis=-1) - entries.min(axis=-1)
        deviation[:, :, c] = np.max(np.abs(entries - pred[:, :, c, None]), axis=-1)
    return PatternReport(N, full.t, values, pred, spread, deviation)


# -- value function and drift ------------------------------------------------


def value_function_Vi(full: FullRiccatiN, i: int, y: int, x_vec) -> float:
    """``x^T A_iy(0) x + x^T B_iy(0) + C_iy(0)``."""
    x = np.asarray(x_vec, dtype=float)
    if x.shape != (full.N,):
        raise DimensionMismatch(f"expected {full.N} positions, got shape {x.shape}")
    return float(x @ full.A[0, i, y] @ x + x @ full.B[0, i, y] + full.C[0, i, y])


def value_function_reduced(reduced: ReducedRiccatiN, i: int, y: int, x_vec, k: int = 0) -> float:
    """Player ``i``'s value at node ``k`` using the pattern matrix (any ``N >= 2``)."""
    x = np.asarray(x_vec, dtype=float)
    if x.shape != (reduced.N,):
        raise DimensionMismatch(f"expected {reduced.N} positions, got shape {x.shape}")
    return float(x @ _pattern_quadratic(reduced, i, y, k, x) + reduced.c[k, y])


def _pattern_quadratic(reduced: ReducedRiccatiN, i: int, y: int, k: int, x: np.ndarray) -> np.ndarray:
    # A x without forming the matrix: works for large N
    N = reduced.N
    a1 = reduced.a1[k, y]
    a2 = reduced.a2[k, y]
    a3 = -a1 / (N - 1)
    a4 = a1 / ((N - 1) * (N - 2)) - a2 / (N - 2) if N > 2 else 0.0
    total = x.sum()
    others = total - x[i]
    out = a2 * x + a4 * (others - x) + a3 * x[i]
    out[i] = a1 * x[i] + a3 * others
    return out


def value_along_paths(reduced: ReducedRiccatiN, x: np.ndarray, states: np.ndarray, t: np.ndarray, i: int = 0) -> np.ndarray:
    """Player ``i``'s value ``x^T A x + C`` along a path.

    ``x`` has shape ``(L, N)``; ``states`` and ``t`` give the regime and the
    time of each row. Coefficients are interpolated linearly in time.
    """
    N = reduced.N
    states = np.asarray(states)
    t = np.asarray(t, dtype=float)

    def along(curve):
        out = np.empty(t.shape)
        for y in range(curve.shape[1]):
            m = states == y
            out[m] = np.interp(t[m], reduced.t, curve[:, y])
        return out

    a1, a2, c = along(reduced.a1), along(reduced.a2), along(reduced.c)
    a3 = -a1 / (N - 1)
    a4 = a1 / ((N - 1) * (N - 2)) - a2 / (N - 2) if N > 2 else np.zeros_like(a1)
    xi = x[..., i]
    others = x.sum(axis=-1) - xi
    sq_others = (x**2).sum(axis=-1) - xi**2
    quad = a1 * xi**2 + 2 * a3 * xi * others + a2 * sq_others + a4 * (others**2 - sq_others)
    return quad + c


def nplayer_drift(reduced: ReducedRiccatiN, y: int, t: float, x_vec) -> np.ndarray:
    """Equilibrium drift of every player: ``b1 x_i - 2 b2^2 a1 (x_i - mean of the others)``."""
    x = np.asarray(x_vec, dtype=float)
    N = reduced.N
    if x.shape != (N,):
        raise DimensionMismatch(f"expected {N} positions, got shape {x.shape}")
    if not 0 <= t <= reduced.grid.T:
        raise OutOfRange(f"t={t} outside [0, {reduced.grid.T}]")
    a1 = np.interp(t, reduced.t, reduced.a1[:, y])
    b1 = np.interp(t, reduced.t, reduced.b1[:, y])
    b2sq = np.interp(t, reduced.t, reduced.b2sq[:, y])
    mean_others = (x.sum() - x) / (N - 1)
    return b1 * x - 2 * b2sq * a1 * (x - mean_others)


def full_drift(full: FullRiccatiN, spec: ModelSpec, y: int, k: int, x_vec) -> np.ndarray:
    """Drift ``b1 x_i - 2 b2^2 (A_iy)_i^T x`` read off the full solution at node ``k``."""
    x = np.asarray(x_vec, dtype=float)
    t = full.t[k]
    b1 = spec.curves.at_time("b1", t)[y]
    b2sq = spec.curves.at_time("b2", t)[y] ** 2
    rows = full.A[k, np.arange(full.N), y, np.arange(full.N)]  # (N, N): row i of A_i
    return b1 * x - 2 * b2sq * (rows @ x)
