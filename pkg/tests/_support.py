"""Shared helpers for the test suite: random model specs and refinement studies."""

from __future__ import annotations

import math

import numpy as np

from mfg_lqg.model import ModelSpec, load_model
from mfg_lqg.riccati import solve_mfg_riccati


def random_config(rng: np.random.Generator, *, max_kappa: int = 4, T: float | None = None, n_steps: int = 200) -> dict:
    kappa = int(rng.integers(1, max_kappa + 1))
    q = rng.uniform(0.0, 2.0, (kappa, kappa))
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    cfg = {
        "horizon": float(rng.uniform(0.5, 2.0)) if T is None else T,
        "n_steps": n_steps,
        "generator": q.tolist(),
        "b1": rng.uniform(-1.0, 1.0, kappa).tolist(),
        "b2": rng.uniform(0.5, 1.5, kappa).tolist(),
        "costs": {"h": rng.uniform(0.01, 5.0, kappa).tolist(), "g": rng.uniform(0.01, 5.0, kappa).tolist()},
    }
    mu0 = float(rng.normal())
    cfg = {**cfg}
    cfg["initial"] = {"mu0": mu0, "nu0": mu0**2 + float(rng.uniform(0.5, 2.0))}
    return cfg


def random_spec(seed: int, **kw) -> ModelSpec:
    return load_model(random_config(np.random.default_rng(seed), **kw))


def stiffness(cfg: dict) -> float:
    """Rough bound on the Jacobian scale of the mean-field Riccati flow."""
    b1 = np.abs(np.array(cfg["b1"], dtype=float))
    b2sq = np.array(cfg["b2"], dtype=float) ** 2
    h = np.array(cfg["costs"]["h"])
    g = np.array(cfg["costs"]["g"])
    q = np.array(cfg["generator"])
    a_scale = max(g.max(), math.sqrt(h.max() / (2 * b2sq.min())))
    return 4 * b2sq.max() * a_scale + 2 * b1.max() + 2 * np.abs(np.diag(q)).max()


def rk4_refinement_ratio(cfg: dict, lam_dt: float = 0.1) -> float:
    """``|y_n - y_2n| / |y_2n - y_4n|`` in sup norm on the coarsest nodes.

    The coarsest step is chosen so that ``stiffness * dt <= lam_dt`` which puts
    every level in the asymptotic regime of the scheme.
    """
    n0 = int(math.ceil(cfg["horizon"] * stiffness(cfg) / lam_dt))
    sols = []
    for m in (1, 2, 4):
        ric = solve_mfg_riccati(load_model({**cfg, "n_steps": n0 * m}))
        sols.append(np.stack([ric.a, ric.b, ric.c, ric.k_coef])[:, ::m])
    return float(np.max(np.abs(sols[0] - sols[1])) / np.max(np.abs(sols[1] - sols[2])))
