"""Network parameters, the constrained state lattice and moment helpers.

A node holds ``n = (n_1, ..., n_K)`` customers with ``sum_k A_k n_k <= C``.
States are listed in lexicographic order; every other module refers to a
state by its position in that list.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

DEFAULT_STATE_CAP = 10**6
STATE_CAP_ENV = "LOSSNET_STATE_CAP"
NORMALIZATION_TOL = 1e-12

_PARAM_KEYS = ("K", "A", "C", "lambda", "gamma", "mu")


class ModelError(ValueError):
    """Invalid model parameters or malformed parameter file."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class UnsupportedModelError(ModelError):
    """The requested analysis is undefined for these parameters (e.g. a zero transfer rate)."""


class StateSpaceCapError(RuntimeError):
    """The state lattice would exceed the configured size cap."""


def state_cap() -> int:
    raw = os.environ.get(STATE_CAP_ENV)
    if raw is None:
        return DEFAULT_STATE_CAP
    try:
        return int(raw)
    except ValueError as exc:
        raise ModelError(f"{STATE_CAP_ENV} must be an integer, got {raw!r}") from exc


@dataclass(frozen=True)
class NetworkParams:
    """Model tuple ``(K, A, C, lambda, gamma, mu)``.

    ``lam``, ``gamma`` and ``mu`` are per-node external arrival rates,
    per-customer transfer rates and per-customer service rates. Arrays are
    stored as read-only float (rates) or int (requirements) vectors.
    """

    A: np.ndarray
    C: int
    lam: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A)
        if A.ndim != 1 or A.size == 0:
            raise ModelError("A must be a non-empty 1-d sequence", key="A")
        if not np.all(np.equal(np.mod(A, 1), 0)):
            raise ModelError("A must contain integers", key="A")
        A = A.astype(np.int64)
        K = A.size
        if isinstance(self.C, bool) or int(self.C) != self.C or self.C < 1:
            raise ModelError(f"C must be a positive integer, got {self.C!r}", key="C")
        C = int(self.C)
        if np.any(A < 1):
            raise ModelError("capacity requirements A_k must be >= 1", key="A")
        if np.any(A > C):
            bad = int(np.argmax(A > C))
            raise ModelError(
                f"class {bad} requires A={A[bad]} > C={C}; it could never be accepted",
                key="A",
            )
        rates = {}
        for name, key in (("lam", "lambda"), ("gamma", "gamma"), ("mu", "mu")):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (K,):
                raise ModelError(f"{key} must have length K={K}", key=key)
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ModelError(f"{key} must be finite and nonnegative", key=key)
            v = v.copy()
            v.setflags(write=False)
            rates[name] = v
        if np.any(rates["mu"] + rates["gamma"] <= 0):
            bad = int(np.argmax(rates["mu"] + rates["gamma"] <= 0))
            raise ModelError(
                f"class {bad} has mu + gamma = 0: accepted customers never leave",
                key="mu",
            )
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        for name, v in rates.items():
            object.__setattr__(self, name, v)

    @property
    def K(self) -> int:
        return int(self.A.size)

    @property
    def alpha(self) -> np.ndarray:
        """``lambda_k / gamma_k``; requires every ``gamma_k > 0``."""
        return self.lam / self.gamma

    @property
    def beta(self) -> np.ndarray:
        """``(gamma_k + mu_k) / gamma_k``; requires every ``gamma_k > 0``."""
        return (self.gamma + self.mu) / self.gamma

    @property
    def has_transfers(self) -> bool:
        return bool(np.all(self.gamma > 0))

    def replace(self, **changes: Any) -> "NetworkParams":
        current = dict(A=self.A, C=self.C, lam=self.lam, gamma=self.gamma, mu=self.mu)
        current.update(changes)
        return NetworkParams(**current)

    def to_dict(self) -> dict[str, Any]:
        return {
            "K": self.K,
            "A": [int(a) for a in self.A],
            "C": self.C,
            "lambda": [float(x) for x in self.lam],
            "gamma": [float(x) for x in self.gamma],
            "mu": [float(x) for x in self.mu],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NetworkParams":
        if not isinstance(data, dict):
            raise ModelError("parameter file must hold a JSON object")
        for key in _PARAM_KEYS:
            if key not in data:
                raise ModelError(f"missing key {key!r}", key=key)
        unknown = set(data) - set(_PARAM_KEYS)
        if unknown:
            key = sorted(unknown)[0]
            raise ModelError(f"unknown key {key!r}", key=key)
        K = data["K"]
        if isinstance(K, bool) or not isinstance(K, int) or K < 1:
            raise ModelError(f"K must be a positive integer, got {K!r}", key="K")
        for key in ("A", "lambda", "gamma", "mu"):
            v = data[key]
            if not isinstance(v, list) or len(v) != K:
                raise ModelError(f"{key!r} must be a list of length K={K}", key=key)
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
                raise ModelError(f"{key!r} must contain numbers", key=key)
        return cls(
            A=np.array(data["A"]),
            C=data["C"],
            lam=np.array(data["lambda"], dtype=float),
            gamma=np.array(data["gamma"], dtype=float),
            mu=np.array(data["mu"], dtype=float),
        )

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "NetworkParams":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ModelError(f"malformed JSON in {path}: {exc}") from exc
        return cls.from_dict(data)


def make_params(
    A: Sequence[int],
    C: int,
    lam: Sequence[float],
    gamma: Sequence[float],
    mu: Sequence[float],
) -> NetworkParams:
    return NetworkParams(A=np.asarray(A), C=C, lam=np.asarray(lam, float),
                         gamma=np.asarray(gamma, float), mu=np.asarray(mu, float))


def _count_states(A: np.ndarray, C: int) -> int:
    # dynamic programme over classes: number of vectors using exactly j units
    ways = np.zeros(C + 1, dtype=object)
    ways[0] = 1
    for a in A:
        for j in range(a, C + 1):
            ways[j] += ways[j - a]
    return int(sum(ways))


@dataclass(frozen=True, eq=False)
class StateSpace:
    """The lattice ``X`` with lexicographic ordering and neighbour tables.

    ``up[i, k]`` is the index of ``states[i] + f_k`` or -1 when that vector
    violates the capacity constraint; ``down[i, k]`` is the index of
    ``states[i] - f_k`` or -1 when ``n_k = 0``.
    """

    params: NetworkParams
    states: np.ndarray
    index: dict[tuple[int, ...], int] = field(repr=False)
    up: np.ndarray = field(repr=False)
    down: np.ndarray = field(repr=False)
    occupancy: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.states.shape[0])

    def __len__(self) -> int:
        return self.size

    def state_index(self, n: Sequence[int]) -> int:
        return self.index[tuple(int(x) for x in n)]

    def labels(self) -> list[str]:
        return ["(" + ",".join(str(int(x)) for x in row) + ")" for row in self.states]

    @property
    def log_factorial(self) -> np.ndarray:
        from scipy.special import gammaln

        return gammaln(self.states + 1.0).sum(axis=1)


def enumerate_statespace(params: NetworkParams, cap: int | None = None) -> StateSpace:
    """List every ``n`` with ``A . n <= C`` in lexicographic order."""
    cap = state_cap() if cap is None else cap
    A, C, K = params.A, params.C, params.K
    size = _count_states(A, C)
    if size > cap:
        raise StateSpaceCapError(
            f"|X| = {size} exceeds the state-space cap of {cap} "
            f"(raise it with {STATE_CAP_ENV})"
        )
    states = np.zeros((size, K), dtype=np.int64)
    row = 0
    n = [0] * K

    def rec(k: int, remaining: int) -> None:
        nonlocal row
        if k == K:
            states[row] = n
            row += 1
            return
        for v in range(remaining // A[k] + 1):
            n[k] = v
            rec(k + 1, remaining - v * A[k])
        n[k] = 0

    rec(0, C)
    index = {tuple(int(x) for x in s): i for i, s in enumerate(states)}
    up = np.full((size, K), -1, dtype=np.int64)
    down = np.full((size, K), -1, dtype=np.int64)
    for i, s in enumerate(states):
        for k in range(K):
            t = list(s)
            t[k] += 1
            up[i, k] = index.get(tuple(int(x) for x in t), -1)
            if s[k] > 0:
                t[k] -= 2
                down[i, k] = index[tuple(int(x) for x in t)]
    occupancy = states @ A
    for arr in (states, up, down, occupancy):
        arr.setflags(write=False)
    return StateSpace(params=params, states=states, index=index, up=up, down=down,
                      occupancy=occupancy)


def check_distribution(y: np.ndarray, space: StateSpace, tol: float = NORMALIZATION_TOL) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (space.size,):
        raise ValueError(f"distribution has shape {y.shape}, expected ({space.size},)")
    if np.any(y < 0):
        raise ValueError("distribution has negative entries")
    if abs(y.sum() - 1.0) > tol:
        raise ValueError(f"distribution sums to {y.sum():.17g}, not 1")
    return y


def renormalize(y: np.ndarray) -> np.ndarray:
    y = np.clip(np.asarray(y, dtype=float), 0.0, None)
    return y / y.sum()


def point_mass(space: StateSpace, n: Sequence[int] | int = 0) -> np.ndarray:
    i = n if isinstance(n, (int, np.integer)) else space.state_index(n)
    y = np.zeros(space.size)
    y[i] = 1.0
    return y


def uniform(space: StateSpace) -> np.ndarray:
    return np.full(space.size, 1.0 / space.size)


def _check_dims(y: np.ndarray, space: StateSpace) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (space.size,):
        raise ValueError(f"distribution has shape {y.shape}, expected ({space.size},)")
    return y


def class_moment(y: np.ndarray, k: int, space: StateSpace) -> float:
    """Mean number of class-``k`` customers per node, ``sum_n n_k y_n``."""
    y = _check_dims(y, space)
    return float(space.states[:, k] @ y)


def class_moments(y: np.ndarray, space: StateSpace) -> np.ndarray:
    y = _check_dims(y, space)
    return y @ space.states


def cross_moment(y: np.ndarray, k: int, l: int, space: StateSpace) -> float:
    y = _check_dims(y, space)
    return float((space.states[:, k] * space.states[:, l]) @ y)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
