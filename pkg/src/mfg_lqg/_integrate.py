"""Fixed-step backward ODE integration shared by the Riccati solvers."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .errors import BlowUp

BLOWUP_THRESHOLD = 1e12
SCHEMES = ("rk4", "euler")


def integrate_backward(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    terminal: np.ndarray,
    t: np.ndarray,
    scheme: str = "rk4",
    *,
    state_axis: int = -1,
    state_of: Callable[[int], int] | None = None,
    threshold: float = BLOWUP_THRESHOLD,
) -> np.ndarray:
    """Integrate ``y' = rhs(t, y)`` from ``y(t[-1]) = terminal`` back to ``t[0]``.

    Args:
        rhs: Time derivative ``dy/dt``; must return an array shaped like ``y``.
        terminal: Value at the last node.
        t: Increasing nodes.
        scheme: ``"rk4"`` (classical Runge-Kutta) or ``"euler"`` (explicit,
            derivative taken at the later node).
        state_axis: Axis of ``y`` that indexes the CTMC state, used to report
            where a blow-up happened.
        state_of: Alternative to ``state_axis``: maps the flat index of the
            offending component to its state.
        threshold: Magnitude beyond which the solution is declared exploded.

    Returns:
        Array of shape ``(len(t),) + terminal.shape`` with ``out[k] = y(t[k])``.

    Raises:
        BlowUp: some component left ``[-threshold, threshold]`` or became non-finite.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    y = np.array(terminal, dtype=float)
    out = np.empty((len(t),) + y.shape)
    out[-1] = y
    for k in range(len(t) - 1, 0, -1):
        t1, t0 = t[k], t[k - 1]
        h = t1 - t0
        if scheme == "euler":
            y = y - h * rhs(t1, y)
        else:
            k1 = rhs(t1, y)
            k2 = rhs(t1 - 0.5 * h, y - 0.5 * h * k1)
            k3 = rhs(t1 - 0.5 * h, y - 0.5 * h * k2)
            k4 = rhs(t0, y - h * k3)
            y = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bad = ~np.isfinite(y) | (np.abs(y) > threshold)
        if bad.any():
            flat = int(np.argmax(bad))
            idx = np.unravel_index(flat, y.shape)
            if state_of is not None:
                state = state_of(flat)
            else:
                state = int(idx[state_axis]) if y.ndim else 0
            raise BlowUp(float(t0), state, float(y[idx]))
        out[k - 1] = y
    return out


def tail_integral(values: np.ndarray, dt: float) -> np.ndarray:
    """``out[k] = integral of the samples from node k to the last node``.

    Uses a fourth-order four-point rule per interval (one-sided at the ends),
    falling back to the trapezoid rule when fewer than four nodes exist.
    ``values`` has nodes along axis 0.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[0] - 1
    out = np.zeros_like(v)
    if n < 1:
        return out
    if n < 3:
        pieces = 0.5 * dt * (v[:-1] + v[1:])
    else:
        pieces = np.empty((n,) + v.shape[1:])
        pieces[1:-1] = dt / 24.0 * (-v[:-3] + 13.0 * v[1:-2] + 13.0 * v[2:-1] - v[3:])
        pieces[0] = dt / 24.0 * (9.0 * v[0] + 19.0 * v[1] - 5.0 * v[2] + v[3])
        pieces[-1] = dt / 24.0 * (9.0 * v[-1] + 19.0 * v[-2] - 5.0 * v[-3] + v[-4])
    out[:-1] = np.cumsum(pieces[::-1], axis=0)[::-1]
    return out
