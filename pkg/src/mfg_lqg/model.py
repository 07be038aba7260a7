"""Model ingredients: CTMC generator, coefficient curves, costs, initial law, grid.

Every object here is immutable once built; numpy arrays are stored read-only.
States are indexed ``0 .. kappa-1``.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ModelError, NegativeOffDiagonal, OutOfRange, RowSumNonzero, SchemaError

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml

ROW_SUM_TOL = 1e-12


def _frozen(values: Any, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Generator:
    """Rate matrix of the common-noise Markov chain."""

    q: np.ndarray

    @property
    def kappa(self) -> int:
        return self.q.shape[0]

    def holding_rates(self) -> np.ndarray:
        return -np.diag(self.q)


def validate_generator(q: Any) -> Generator:
    """Check ``q`` is a CTMC generator and wrap it.

    Raises:
        NegativeOffDiagonal: some ``q[i][j] < 0`` with ``i != j``.
        RowSumNonzero: a row does not sum to zero within ``1e-12``.
    """
    try:
        arr = np.array(q, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"not a real matrix: {exc}", "generator") from None
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise ModelError(f"generator must be a non-empty square matrix, got shape {arr.shape}", "generator")
    if not np.all(np.isfinite(arr)):
        raise ModelError("generator entries must be finite", "generator")
    kappa = arr.shape[0]
    for i in range(kappa):
        for j in range(kappa):
            if i != j and arr[i, j] < 0:
                raise NegativeOffDiagonal(i, j, float(arr[i, j]))
    for i in range(kappa):
        residual = math.fsum(arr[i])
        if abs(residual) > ROW_SUM_TOL:
            raise RowSumNonzero(i, residual)
    return Generator(_frozen(arr))


@dataclass(frozen=True, eq=False)
class CoefficientCurves:
    """Piecewise-linear drift/control coefficients, one knot list per state.

    ``b1_knots[y]`` and ``b1_values[y]`` hold the knots of the drift
    coefficient in state ``y``; likewise for ``b2``.
    """

    horizon: float
    b1_knots: tuple[np.ndarray, ...]
    b1_values: tuple[np.ndarray, ...]
    b2_knots: tuple[np.ndarray, ...]
    b2_values: tuple[np.ndarray, ...]

    def __post_init__(self):
        for which in ("b1", "b2"):
            knots, values = self._pair(which)
            if len(knots) != len(values):
                raise ModelError("knot and value lists differ in length", f"curves.{which}")
            for y, (tk, vk) in enumerate(zip(knots, values)):
                path = f"curves.{which}[{y}]"
                if tk.ndim != 1 or tk.shape != vk.shape or tk.size == 0:
                    raise ModelError("knots and values must be matching 1-d arrays", path)
                if not (np.all(np.isfinite(tk)) and np.all(np.isfinite(vk))):
                    raise ModelError("every sample must be finite", path)
                if tk.size > 1 and np.any(np.diff(tk) <= 0):
                    raise ModelError("knots must be strictly increasing", path)
                if tk[0] > 0 or tk[-1] < self.horizon:
                    raise ModelError(f"knots must cover [0, {self.horizon}]", path)

    @classmethod
    def constant(cls, horizon: float, b1: Sequence[float], b2: Sequence[float]) -> CoefficientCurves:
        knots = _frozen([0.0, horizon])
        return cls(
            horizon,
            tuple(knots for _ in b1),
            tuple(_frozen([v, v]) for v in b1),
            tuple(knots for _ in b2),
            tuple(_frozen([v, v]) for v in b2),
        )

    @property
    def kappa(self) -> int:
        return len(self.b1_knots)

    def _pair(self, which: str) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
        if which == "b1":
            return self.b1_knots, self.b1_values
        if which == "b2":
            return self.b2_knots, self.b2_values
        raise ValueError(f"unknown coefficient {which!r}, expected 'b1' or 'b2'")

    def is_constant(self, which: str) -> bool:
        _, values = self._pair(which)
        return all(np.all(v == v[0]) for v in values)

    def at_time(self, which: str, t: float) -> np.ndarray:
        """All states' values at a single time, shape ``(kappa,)``."""
        knots, values = self._pair(which)
        return np.array([np.interp(t, tk, vk) for tk, vk in zip(knots, values)])

    def on_times(self, which: str, t: np.ndarray) -> np.ndarray:
        """Values on an array of times, shape ``t.shape + (kappa,)``."""
        knots, values = self._pair(which)
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, tk, vk) for tk, vk in zip(knots, values)], axis=-1)

    def sup_abs(self, which: str) -> float:
        _, values = self._pair(which)
        return max(float(np.max(np.abs(v))) for v in values)

    def max_slope(self, which: str) -> float:
        knots, values = self._pair(which)
        slopes = [np.max(np.abs(np.diff(v) / np.diff(tk))) for tk, v in zip(knots, values) if tk.size > 1]
        return float(max(slopes, default=0.0))


def eval_coefficient(curves: CoefficientCurves, which: str, y: int, t: float) -> float:
    """Piecewise-linear value of ``b1``/``b2`` in state ``y`` at time ``t``."""
    if not 0.0 <= t <= curves.horizon:
        raise OutOfRange(f"t={t} outside [0, {curves.horizon}]")
    if not 0 <= y < curves.kappa:
        raise OutOfRange(f"state {y} outside 0..{curves.kappa - 1}")
    knots, values = curves._pair(which)
    return float(np.interp(t, knots[y], values[y]))


@dataclass(frozen=True, eq=False)
class CostParams:
    """Running (``h``) and terminal (``g``) mean-field cost weights per state.

    ``strict=False`` lifts the positivity requirement; the solvers then run on
    whatever is given and report blow-up if the Riccati flow explodes.
    """

    h: np.ndarray
    g: np.ndarray
    strict: bool = True

    def __post_init__(self):
        for name in ("h", "g"):
            arr = getattr(self, name)
            if arr.ndim != 1:
                raise ModelError("must be a per-state array", f"costs.{name}")
            if not np.all(np.isfinite(arr)):
                raise ModelError("entries must be finite", f"costs.{name}")
            if self.strict and np.any(arr <= 0):
                raise ModelError(f"entries must be positive, got {arr.tolist()}", f"costs.{name}")
        if self.h.shape != self.g.shape:
            raise ModelError("h and g must have one entry per state", "costs")


@dataclass(frozen=True)
class InitialLaw:
    mu0: float
    nu0: float
    family: str = "gaussian"

    def __post_init__(self):
        if not (math.isfinite(self.mu0) and math.isfinite(self.nu0)):
            raise ModelError("moments must be finite", "initial")
        if self.nu0 - self.mu0**2 < 0:
            raise ModelError(f"nu0 - mu0^2 = {self.nu0 - self.mu0**2} is negative", "initial.nu0")
        if self.family != "gaussian":
            raise ModelError(f"unsupported family {self.family!r}", "initial.family")

    @property
    def variance(self) -> float:
        return max(self.nu0 - self.mu0**2, 0.0)

    def from_normals(self, z: np.ndarray) -> np.ndarray:
        """Map standard normal draws to draws from this law."""
        return self.mu0 + math.sqrt(self.variance) * z

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.from_normals(rng.standard_normal(size))


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ModelError(f"horizon must be positive, got {self.T}", "horizon")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ModelError(f"n_steps must be a positive integer, got {self.n_steps}", "n_steps")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.T
        return t

    def index_of(self, t: float) -> int:
        """Index of the node nearest to ``t``."""
        if not -1e-12 <= t <= self.T + 1e-12:
            raise OutOfRange(f"t={t} outside [0, {self.T}]")
        return int(round(t / self.dt))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    generator: Generator
    curves: CoefficientCurves
    costs: CostParams
    initial: InitialLaw
    grid: TimeGrid

    def __post_init__(self):
        kappa = self.generator.kappa
        if self.curves.kappa != kappa or len(self.curves.b2_knots) != kappa:
            raise ModelError(f"expected {kappa} coefficient curves", "curves")
        if self.costs.h.shape[0] != kappa:
            raise ModelError(f"expected {kappa} entries", "costs.h")
        if abs(self.curves.horizon - self.grid.T) > 0:
            raise ModelError("curve horizon differs from grid horizon", "curves")

    @property
    def kappa(self) -> int:
        return self.generator.kappa

    @property
    def q(self) -> np.ndarray:
        return self.generator.q

    @property
    def h(self) -> np.ndarray:
        return self.costs.h

    @property
    def g(self) -> np.ndarray:
        return self.costs.g

    @property
    def T(self) -> float:
        return self.grid.T

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return to_config(self) == to_config(other) and self.costs.strict == other.costs.strict

    __hash__ = None  # type: ignore[assignment]

    def replace(self, **overrides: Any) -> ModelSpec:
        """Copy with config-level overrides, e.g. ``replace(h=[0, 0], n_steps=100)``."""
        cfg = to_config(self)
        strict = overrides.pop("strict", self.costs.strict)
        for key, value in overrides.items():
            if key in ("h", "g"):
                cfg["costs"][key] = value
            elif key in ("mu0", "nu0", "family"):
                cfg["initial"][key] = value
            else:
                cfg[key] = value
        return load_model(cfg, strict=strict)


# -- configuration documents -------------------------------------------------

_TOP_LEVEL = {"horizon", "n_steps", "generator", "b1", "b2", "h", "g", "costs", "initial", "dt"}


def _parse_text(text: str) -> dict:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from None
    try:
        return _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise SchemaError(f"invalid TOML: {exc}") from None


def _require(doc: Mapping, key: str, path: str) -> Any:
    if key not in doc:
        raise SchemaError("missing required field", path)
    return doc[key]


def _real(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"expected a real number, got {value!r}", path)
    return float(value)


def _real_list(value: Any, path: str) -> list[float]:
    if not isinstance(value, (list, tuple)):
        raise SchemaError(f"expected an array, got {value!r}", path)
    return [_real(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _curves(value: Any, kappa: int, horizon: float, path: str) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value] * kappa
    if not isinstance(value, (list, tuple)) or len(value) != kappa:
        raise SchemaError(f"expected {kappa} per-state entries", path)
    knots, values = [], []
    for y, entry in enumerate(value):
        epath = f"{path}[{y}]"
        if isinstance(entry, (list, tuple)):
            if not entry:
                raise SchemaError("empty knot list", epath)
            pairs = []
            for i, pair in enumerate(entry):
                if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                    raise SchemaError("knots must be [t, value] pairs", f"{epath}[{i}]")
                pairs.append((_real(pair[0], f"{epath}[{i}][0]"), _real(pair[1], f"{epath}[{i}][1]")))
            knots.append(_frozen([p[0] for p in pairs]))
            values.append(_frozen([p[1] for p in pairs]))
        else:
            v = _real(entry, epath)
            knots.append(_frozen([0.0, horizon]))
            values.append(_frozen([v, v]))
    return knots, values


def load_model(config_document: str | bytes | Mapping[str, Any], *, strict: bool = True) -> ModelSpec:
    """Build a validated :class:`ModelSpec` from a JSON/TOML document or a mapping.

    Costs may be given either as top-level ``h``/``g`` arrays or inside a
    ``costs`` table; errors name the field as ``costs.h``/``costs.g`` either way.
    """
    if isinstance(config_document, bytes):
        config_document = config_document.decode()
    doc = _parse_text(config_document) if isinstance(config_document, str) else dict(config_document)
    if not isinstance(doc, Mapping):
        raise SchemaError("configuration must be a table/object")
    unknown = set(doc) - _TOP_LEVEL
    if unknown:
        raise SchemaError(f"unknown field(s) {sorted(unknown)}", sorted(unknown)[0])

    horizon = _real(_require(doc, "horizon", "horizon"), "horizon")
    if "n_steps" in doc:
        n_steps = doc["n_steps"]
        if isinstance(n_steps, bool) or not isinstance(n_steps, int):
            raise SchemaError(f"expected an integer, got {n_steps!r}", "n_steps")
    elif "dt" in doc:
        n_steps = max(1, round(horizon / _real(doc["dt"], "dt")))
    else:
        raise SchemaError("missing required field", "n_steps")
    grid = TimeGrid(horizon, n_steps)

    q = _require(doc, "generator", "generator")
    if not isinstance(q, (list, tuple)):
        raise SchemaError("expected an array of rows", "generator")
    generator = validate_generator([_real_list(row, f"generator[{i}]") for i, row in enumerate(q)])
    kappa = generator.kappa

    b1k, b1v = _curves(_require(doc, "b1", "b1"), kappa, horizon, "b1")
    b2k, b2v = _curves(_require(doc, "b2", "b2"), kappa, horizon, "b2")
    curves = CoefficientCurves(horizon, tuple(b1k), tuple(b1v), tuple(b2k), tuple(b2v))

    costs_doc = doc.get("costs", {})
    if not isinstance(costs_doc, Mapping):
        raise SchemaError("expected a table", "costs")
    cost_arrays = {}
    for name in ("h", "g"):
        raw = costs_doc[name] if name in costs_doc else doc.get(name)
        if raw is None:
            raise SchemaError("missing required field", f"costs.{name}")
        arr = _real_list(raw, f"costs.{name}")
        if len(arr) != kappa:
            raise SchemaError(f"expected {kappa} entries, got {len(arr)}", f"costs.{name}")
        cost_arrays[name] = _frozen(arr)
    costs = CostParams(cost_arrays["h"], cost_arrays["g"], strict=strict)

    init = _require(doc, "initial", "initial")
    if not isinstance(init, Mapping):
        raise SchemaError("expected a table", "initial")
    initial = InitialLaw(
        _real(_require(init, "mu0", "initial.mu0"), "initial.mu0"),
        _real(_require(init, "nu0", "initial.nu0"), "initial.nu0"),
        str(init.get("family", "gaussian")),
    )
    return ModelSpec(generator, curves, costs, initial, grid)


def load_model_file(path: str | Path, *, strict: bool = True) -> ModelSpec:
    return load_model(Path(path).read_text(), strict=strict)


def to_config(spec: ModelSpec) -> dict[str, Any]:
    """Config mapping that :func:`load_model` turns back into ``spec``."""

    def curve(knots, values):
        out = []
        for tk, vk in zip(knots, values):
            out.append([[float(t), float(v)] for t, v in zip(tk, vk)])
        return out

    return {
        "horizon": spec.grid.T,
        "n_steps": spec.grid.n_steps,
        "generator": spec.q.tolist(),
        "b1": curve(spec.curves.b1_knots, spec.curves.b1_values),
        "b2": curve(spec.curves.b2_knots, spec.curves.b2_values),
        "costs": {"h": spec.h.tolist(), "g": spec.g.tolist()},
        "initial": {"mu0": spec.initial.mu0, "nu0": spec.initial.nu0, "family": spec.initial.family},
    }


def dump_model(spec: ModelSpec) -> str:
    return json.dumps(to_config(spec), indent=2)


def two_regime_config() -> dict[str, Any]:
    """Two-regime benchmark: T=5, Q=[[-.5,.5],[.6,-.6]], b1=0, b2=1, h=(2,5), g=(3,1)."""
    return {
        "horizon": 5.0,
        "n_steps": 500,
        "generator": [[-0.5, 0.5], [0.6, -0.6]],
        "b1": [0.0, 0.0],
        "b2": [1.0, 1.0],
        "costs": {"h": [2.0, 5.0], "g": [3.0, 1.0]},
        "initial": {"mu0": 0.0, "nu0": 2.0},
    }


def two_regime_example() -> ModelSpec:
    return load_model(two_regime_config())


def scalar_model(
    h: float,
    g: float,
    T: float,
    n_steps: int,
    *,
    b1: float = 0.0,
    b2: float = 1.0,
    mu0: float = 0.0,
    nu0: float = 1.0,
    strict: bool = False,
) -> ModelSpec:
    """Single-state model (no common noise)."""
    return load_model(
        {
            "horizon": T,
            "n_steps": n_steps,
            "generator": [[0.0]],
            "b1": [b1],
            "b2": [b2],
            "costs": {"h": [h], "g": [g]},
            "initial": {"mu0": mu0, "nu0": nu0},
        },
        strict=strict,
    )
