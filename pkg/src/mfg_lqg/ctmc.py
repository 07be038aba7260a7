"""Exact simulation of the common-noise Markov chain."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import OutOfRange, SchemaError
from .model import Generator


@dataclass(frozen=True, eq=False)
class CtmcPath:
    """Right-continuous piecewise-constant path on ``[0, T]``."""

    initial_state: int
    jump_times: np.ndarray
    post_jump_states: np.ndarray
    T: float

    def __post_init__(self):
        jt, st = self.jump_times, self.post_jump_states
        if jt.shape != st.shape or jt.ndim != 1:
            raise OutOfRange("jump times and states must be matching 1-d arrays")
        if jt.size:
            if np.any(np.diff(jt) <= 0) or jt[0] <= 0 or jt[-1] > self.T:
                raise OutOfRange("jump times must be strictly increasing in (0, T]")
            prev = np.concatenate([[self.initial_state], st[:-1]])
            if np.any(prev == st):
                raise OutOfRange("consecutive states must differ")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CtmcPath):
            return NotImplemented
        return (
            self.initial_state == other.initial_state
            and self.T == other.T
            and np.array_equal(self.jump_times, other.jump_times)
            and np.array_equal(self.post_jump_states, other.post_jump_states)
        )

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def constant(cls, state: int, T: float) -> CtmcPath:
        return cls(int(state), np.empty(0), np.empty(0, dtype=int), float(T))

    def states_at(self, t) -> np.ndarray:
        """Vectorised :func:`state_at`."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.T):
            raise OutOfRange(f"time outside [0, {self.T}]")
        states = np.concatenate([[self.initial_state], self.post_jump_states]).astype(int)
        return states[np.searchsorted(self.jump_times, t, side="right")]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"y0,T\n{int(self.initial_state)},{float(self.T)!r}\njump_time,new_state\n")
        for tj, yj in zip(self.jump_times, self.post_jump_states):
            buf.write(f"{float(tj)!r},{int(yj)}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> CtmcPath:
        lines = [ln.strip() for ln in text.strip().splitlines()]
        if len(lines) < 3 or lines[0] != "y0,T" or lines[2] != "jump_time,new_state":
            raise SchemaError("not a path CSV")
        y0, T = lines[1].split(",")
        rows = [ln.split(",") for ln in lines[3:] if ln]
        times = np.array([float(r[0]) for r in rows])
        states = np.array([int(r[1]) for r in rows], dtype=int)
        return cls(int(y0), times, states, float(T))


def sample_path(gen: Generator, y0: int, T: float, rng: np.random.Generator) -> CtmcPath:
    """Gillespie simulation: exponential holding times, embedded jump chain."""
    if not 0 <= y0 < gen.kappa:
        raise OutOfRange(f"initial state {y0} outside 0..{gen.kappa - 1}")
    jump = np.clip(gen.q, 0.0, None)
    np.fill_diagonal(jump, 0.0)
    cdf = np.cumsum(jump, axis=1).tolist()
    rates = jump.sum(axis=1).tolist()
    last = gen.kappa - 1
    times, states = [], []
    t, y = 0.0, int(y0)
    while True:
        rate = rates[y]
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t > T:
            break
        u = rng.random() * rate
        row = cdf[y]
        nxt = 0
        while nxt < last and (row[nxt] <= u or jump[y, nxt] == 0.0):
            nxt += 1
        if jump[y, nxt] == 0.0:  # u rounded up to the row total
            nxt = int(np.flatnonzero(jump[y])[-1])
        y = nxt
        times.append(t)
        states.append(y)
    return CtmcPath(int(y0), np.array(times, dtype=float), np.array(states, dtype=int), float(T))


def state_at(path: CtmcPath, t: float) -> int:
    """State in force at ``t`` (the state after the last jump ``<= t``)."""
    return int(path.states_at(t))


def transition_probability_oracle(gen: Generator, t: float) -> np.ndarray:
    """``exp(Q t)`` by scaling and squaring."""
    if t < 0:
        raise OutOfRange(f"t must be nonnegative, got {t}")
    return scipy.linalg.expm(gen.q * t)
