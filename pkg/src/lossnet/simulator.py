"""Event-driven simulation of the N-node network on node counts per state.

Nodes are exchangeable, so the chain is run on ``counts[i]`` = number of
nodes in lattice state ``i``. From a node in state ``n``:

* class-``k`` arrival, rate ``lambda_k`` when ``n + f_k`` fits (blocked
  arrivals are thinned out and never simulated);
* class-``k`` service completion, rate ``mu_k n_k``;
* class-``k`` transfer, rate ``gamma_k n_k``: the customer leaves, and a
  destination is drawn uniformly among the other ``N - 1`` nodes; it joins
  if it fits there and is lost otherwise.

The destination is drawn with the source counted in its post-departure
state ``n - f_k`` and excluded; that is the same law as excluding it in its
pre-departure state, since both pick uniformly among the other nodes.

Randomness: ``numpy.random.Generator`` over the counter-based ``Philox``
bit generator, seeded through ``SeedSequence(seed)``. Replica ``r`` of an
ensemble uses ``SeedSequence(seed).spawn(R)[r]``.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numba
import numpy as np

from .model import NetworkParams, StateSpace, check_distribution

logger = logging.getLogger(__name__)

ARRIVAL, SERVICE, TRANSFER = 0, 1, 2
FAMILIES = ("arrival", "service", "transfer")
RECHECK_EVERY = 100_000
RATE_DRIFT_TOL = 1e-9


class SimulationHalted(RuntimeError):
    """Every event rate is zero: the state is absorbing."""


class InsufficientDataError(ValueError):
    pass


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def replica_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


# ---------------------------------------------------------------- state and config


@dataclass(frozen=True)
class EmpiricalState:
    counts: np.ndarray
    N: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        if int(counts.sum()) != self.N:
            raise ValueError(f"counts sum to {counts.sum()}, expected N={self.N}")
        if self.N < 2:
            raise ValueError("need N >= 2 nodes (transfers pick among the N - 1 other nodes)")
        counts = counts.copy()
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def y(self) -> np.ndarray:
        return self.counts / self.N


def init_state(y0, N: int, space: StateSpace, seed=None, method: str = "round") -> EmpiricalState:
    """Counts for ``N`` nodes distributed like ``y0``.

    ``method="round"`` uses largest-remainder rounding of ``N y0`` (ties go to
    the lower state index); ``"multinomial"`` samples ``Multinomial(N, y0)``.
    """
    if N < 2:
        raise ValueError("need N >= 2 nodes (transfers pick among the N - 1 other nodes)")
    y0 = check_distribution(y0, space, tol=1e-9)
    if method == "round":
        raw = N * y0
        counts = np.floor(raw).astype(np.int64)
        short = N - int(counts.sum())
        order = np.lexsort((np.arange(space.size), -(raw - counts)))
        counts[order[:short]] += 1
    elif method == "multinomial":
        counts = make_rng(seed).multinomial(N, y0 / y0.sum()).astype(np.int64)
    else:
        raise ValueError(f"unknown initialisation method {method!r}")
    return EmpiricalState(counts=counts, N=N)


@dataclass
class SimConfig:
    """Run settings. ``observables`` names are resolved by :func:`observable_weights`."""

    seed: int = 0
    t_max: float = 10.0
    sample_dt: float = 0.1
    observables: list[str] = field(default_factory=lambda: ["states"])
    switch_thresholds: tuple[float, float] | None = None
    switch_observable: str | None = None
    N: int | None = None
    initial: str | list[float] = "empty"
    init_method: str = "round"

    def __post_init__(self):
        if not 0 < self.sample_dt <= self.t_max:
            raise ValueError("need 0 < sample_dt <= t_max")
        if self.switch_thresholds is not None:
            lo, hi = self.switch_thresholds
            if not lo < hi:
                raise ValueError("switch thresholds need theta_lo < theta_hi")
            self.switch_thresholds = (float(lo), float(hi))

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["switch_thresholds"] is not None:
            d["switch_thresholds"] = list(d["switch_thresholds"])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config key {sorted(unknown)[0]!r}")
        data = dict(data)
        if data.get("switch_thresholds") is not None:
            data["switch_thresholds"] = tuple(data["switch_thresholds"])
        return cls(**data)


# ---------------------------------------------------------------- observables


def observable_weights(names: Sequence[str], space: StateSpace) -> tuple[list[str], np.ndarray]:
    """Expand observable names into rows of a matrix ``W`` so that value = ``W @ counts / N``.

    Supported names (class indices are 0-based):

    ``states``       fraction of nodes in every state (expands to ``state:<i>``)
    ``state:<i>``    fraction of nodes in state ``i``
    ``mean:<k>``     mean class-``k`` occupancy per node
    ``second:<k>``   mean of ``n_k^2`` per node
    ``zero:<k>``     fraction of nodes with ``n_k = 0``
    """
    X = space.states
    out_names: list[str] = []
    rows: list[np.ndarray] = []
    for name in names:
        kind, _, arg = name.partition(":")
        if kind == "states" and not arg:
            for i in range(space.size):
                out_names.append(f"state:{i}")
                rows.append(np.eye(space.size)[i])
            continue
        try:
            j = int(arg)
        except ValueError:
            raise ValueError(f"bad observable {name!r}") from None
        if kind == "state":
            if not 0 <= j < space.size:
                raise ValueError(f"state index out of range in {name!r}")
            rows.append(np.eye(space.size)[j])
        elif kind in ("mean", "second", "zero"):
            if not 0 <= j < X.shape[1]:
                raise ValueError(f"class index out of range in {name!r}")
            col = X[:, j].astype(float)
            rows.append({"mean": col, "second": col**2, "zero": (col == 0).astype(float)}[kind])
        else:
            raise ValueError(f"unknown observable {name!r}")
        out_names.append(name)
    return out_names, np.array(rows, dtype=float).reshape(len(rows), space.size)


def default_switch_observable(params: NetworkParams) -> str:
    """Fraction of nodes holding no customer of the second class (or the only class)."""
    return f"zero:{min(1, params.K - 1)}"


# ---------------------------------------------------------------- numba kernels


def _rate_tables(params: NetworkParams, space: StateSpace):
    K = params.K
    ev = np.zeros((space.size, 3 * K))
    for i, n in enumerate(space.states):
        for k in range(K):
            if space.up[i, k] >= 0:
                ev[i, ARRIVAL * K + k] = params.lam[k]
            ev[i, SERVICE * K + k] = params.mu[k] * n[k]
            ev[i, TRANSFER * K + k] = params.gamma[k] * n[k]
    return ev, ev.sum(axis=1)


@numba.njit(cache=True, nogil=True)
def _jump(counts, N, total, node_rate, ev, up, down, rng):
    """Choose an event with probability proportional to its rate and apply it in place.

    The holding time is drawn by the caller, before this is called. Returns
    ``(new_total, code, src, dst, lost)`` with ``code = family * K + k``.
    """
    nstates = counts.shape[0]
    K = up.shape[1]
    u = rng.random() * total
    i = 0
    acc = 0.0
    for i in range(nstates):
        acc += counts[i] * node_rate[i]
        if u < acc and counts[i] > 0:
            break
    while counts[i] == 0 or node_rate[i] == 0.0:
        i -= 1
    v = rng.random() * node_rate[i]
    code = 0
    acc = 0.0
    last = 0
    for code in range(3 * K):
        r = ev[i, code]
        if r > 0.0:
            last = code
            acc += r
            if v < acc:
                break
    if ev[i, code] == 0.0:
        code = last
    family = code // K
    k = code % K
    dst = -1
    lost = False
    if family == 0:
        j = up[i, k]
    else:
        j = down[i, k]
    counts[i] -= 1
    counts[j] += 1
    total += node_rate[j] - node_rate[i]
    if family == 0:
        dst = j
    elif family == 2:
        r = rng.integers(0, N - 1)
        m = 0
        acc_i = 0
        for m in range(nstates):
            acc_i += counts[m] - (1 if m == j else 0)
            if r < acc_i:
                break
        dst = m
        t = up[m, k]
        if t >= 0:
            counts[m] -= 1
            counts[t] += 1
            total += node_rate[t] - node_rate[m]
        else:
            lost = True
    return total, code, i, dst, lost


@numba.njit(cache=True, nogil=True)
def _run(counts, N, node_rate, ev, up, down, rng, t_max, sample_dt, n_samples, weights, recheck):
    nstates = counts.shape[0]
    n_obs = weights.shape[0]
    samples = np.empty((n_samples, n_obs))
    occupation = np.zeros(nstates)
    total = 0.0
    for i in range(nstates):
        total += counts[i] * node_rate[i]
    t = 0.0
    s = 0
    n_events = 0
    max_drift = 0.0
    halted = False
    while True:
        if total <= 0.0:
            halted = True
            t_next = np.inf
        else:
            # peek at the holding time before applying the jump
            t_next = t + rng.standard_exponential() / total
        while s < n_samples and s * sample_dt < t_next:
            for o in range(n_obs):
                acc = 0.0
                for i in range(nstates):
                    acc += weights[o, i] * counts[i]
                samples[s, o] = acc / N
            s += 1
        t_stop = t_next if t_next < t_max else t_max
        for i in range(nstates):
            occupation[i] += counts[i] * (t_stop - t)
        if t_next >= t_max:
            break
        t = t_next
        total, _code, _src, _dst, _lost = _jump(counts, N, total, node_rate, ev, up, down, rng)
        n_events += 1
        if n_events % recheck == 0:
            fresh = 0.0
            for i in range(nstates):
                fresh += counts[i] * node_rate[i]
            if fresh > 0.0:
                drift = abs(fresh - total) / fresh
                if drift > max_drift:
                    max_drift = drift
            total = fresh
    return samples, occupation, n_events, max_drift, halted


# ---------------------------------------------------------------- Python API


@dataclass(frozen=True)
class Event:
    family: str
    k: int
    source: int
    destination: int
    lost: bool


def total_rate(state: EmpiricalState, params: NetworkParams, space: StateSpace) -> float:
    _, node_rate = _rate_tables(params, space)
    return float(state.counts @ node_rate)


def step(state: EmpiricalState, params: NetworkParams, space: StateSpace,
         rng: np.random.Generator) -> tuple[EmpiricalState, float, Event]:
    """Advance the chain by one event; returns the new state, holding time and event."""
    ev, node_rate = _rate_tables(params, space)
    counts = np.array(state.counts, dtype=np.int64)
    total = float(counts @ node_rate)
    if total <= 0.0:
        raise SimulationHalted("total event rate is zero; the state is absorbing")
    dt = rng.standard_exponential() / total
    _, code, src, dst, lost = _jump(counts, state.N, total, node_rate, ev,
                                    space.up, space.down, rng)
    family, k = divmod(int(code), params.K)
    event = Event(FAMILIES[family], k, int(src), int(dst), bool(lost))
    return EmpiricalState(counts=counts, N=state.N), float(dt), event


@dataclass
class SwitchReport:
    crossings: list[tuple[float, str]]
    dwell_times: list[float]
    levels: tuple[float, float] | None
    thresholds: tuple[float, float]
    observable: str

    def to_dict(self) -> dict:
        return {
            "observable": self.observable,
            "thresholds": list(self.thresholds),
            "crossings": [[t, d] for t, d in self.crossings],
            "dwell_times": list(self.dwell_times),
            "levels": None if self.levels is None else list(self.levels),
        }


def detect_switches(times: np.ndarray, values: np.ndarray, thresholds: tuple[float, float],
                    observable: str = "") -> SwitchReport:
    """Hysteresis regime detection on a sampled observable.

    The process enters the upper regime when it rises to ``theta_hi`` or
    above and the lower regime when it falls to ``theta_lo`` or below;
    values inside the band keep the current regime. The first regime entered
    is not a crossing. ``levels`` are the sample means of the observable over
    the time spent in the lower and upper regimes.
    """
    lo, hi = thresholds
    regime = np.zeros(len(values), dtype=np.int8)  # -1 lower, +1 upper, 0 undecided
    current = 0
    crossings: list[tuple[float, str]] = []
    for i, v in enumerate(values):
        if v >= hi and current != 1:
            if current == -1:
                crossings.append((float(times[i]), "up"))
            current = 1
        elif v <= lo and current != -1:
            if current == 1:
                crossings.append((float(times[i]), "down"))
            current = -1
        regime[i] = current
    dwell = [b[0] - a[0] for a, b in zip(crossings, crossings[1:])]
    levels = None
    if np.any(regime == -1) and np.any(regime == 1):
        levels = (float(values[regime == -1].mean()), float(values[regime == 1].mean()))
    return SwitchReport(crossings=crossings, dwell_times=dwell, levels=levels,
                        thresholds=(float(lo), float(hi)), observable=observable)


@dataclass
class SimResult:
    times: np.ndarray
    names: list[str]
    values: np.ndarray
    time_average: np.ndarray
    n_events: int
    halted: bool
    seed: int | None
    switches: SwitchReport | None = None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


def simulate(state0: EmpiricalState, params: NetworkParams, space: StateSpace,
             config: SimConfig, seed=None, extra_observables: Sequence[str] = ()) -> SimResult:
    """Run the chain up to ``config.t_max``, sampling observables every ``config.sample_dt``.

    Observables are recorded at ``0, dt, 2 dt, ...`` with the state in force
    at that instant. ``time_average`` is the exact time-weighted empirical
    distribution over ``[0, t_max]``. Identical seeds give bit-identical runs.
    """
    seed = config.seed if seed is None else seed
    rng = make_rng(seed)
    ev, node_rate = _rate_tables(params, space)
    names = list(config.observables) + list(extra_observables)
    switch_name = None
    if config.switch_thresholds is not None:
        switch_name = config.switch_observable or default_switch_observable(params)
        if switch_name not in names:
            names.append(switch_name)
    names, W = observable_weights(names, space)
    n_samples = int(np.floor(config.t_max / config.sample_dt + 1e-9)) + 1
    counts = np.array(state0.counts, dtype=np.int64)
    samples, occupation, n_events, drift, halted = _run(
        counts, state0.N, node_rate, ev, space.up, space.down, rng,
        float(config.t_max), float(config.sample_dt), n_samples, W, RECHECK_EVERY)
    if drift > RATE_DRIFT_TOL:
        raise RuntimeError(f"incremental total rate drifted by {drift:.3e} (relative)")
    times = np.arange(n_samples) * config.sample_dt
    result = SimResult(times=times, names=names, values=samples,
                       time_average=occupation / (state0.N * config.t_max),
                       n_events=int(n_events), halted=bool(halted),
                       seed=seed if isinstance(seed, int) else None)
    if switch_name is not None:
        result.switches = detect_switches(times, result.column(switch_name),
                                          config.switch_thresholds, switch_name)
    return result


def run_replicas(state0: EmpiricalState, params: NetworkParams, space: StateSpace,
                 config: SimConfig, n_replicas: int, workers: int = 1,
                 extra_observables: Sequence[str] = ()) -> list[SimResult]:
    """Independent replicas on spawned seed streams; results ordered by replica index."""
    seeds = replica_seeds(config.seed, n_replicas)

    def one(r):
        return simulate(state0, params, space, config, seed=seeds[r],
                        extra_observables=extra_observables)

    if workers <= 1:
        return [one(r) for r in range(n_replicas)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(n_replicas)))


# ---------------------------------------------------------------- pair correlation


@dataclass(frozen=True)
class PairCovariance:
    covariance: np.ndarray
    stderr: np.ndarray


def _pair_cov(first: np.ndarray, second: np.ndarray, N: int) -> np.ndarray:
    # E[X_1 X_2] for a uniform pair of distinct nodes is (S^2 - Q) / (N (N - 1))
    cross = (N * first**2 - second) / (N - 1)
    return cross.mean(axis=0) - first.mean(axis=0) ** 2


def pair_covariance_from_moments(first, second, N: int, blocks: int = 20) -> PairCovariance:
    """Covariance of ``n_k`` at two distinct nodes from per-sample node averages.

    ``first[s, k]`` and ``second[s, k]`` are the averages of ``n_k`` and
    ``n_k^2`` over the ``N`` nodes in sample ``s``. The standard error is a
    delete-one-block jackknife over contiguous blocks.
    """
    first = np.asarray(first, dtype=float).reshape(len(first), -1)
    second = np.asarray(second, dtype=float).reshape(len(second), -1)
    if N < 2:
        raise ValueError("need N >= 2 nodes for a distinct pair")
    n = first.shape[0]
    if n < 10:
        raise InsufficientDataError(f"need at least 10 samples, got {n}")
    est = _pair_cov(first, second, N)
    B = min(blocks, n)
    edges = np.linspace(0, n, B + 1).astype(int)
    jack = []
    for b in range(B):
        keep = np.ones(n, dtype=bool)
        keep[edges[b]:edges[b + 1]] = False
        jack.append(_pair_cov(first[keep], second[keep], N))
    jack = np.array(jack)
    se = np.sqrt((B - 1) / B * ((jack - jack.mean(axis=0)) ** 2).sum(axis=0))
    return PairCovariance(covariance=est, stderr=se)


def pair_correlation(samples: np.ndarray, space: StateSpace, N: int, blocks: int = 20) -> PairCovariance:
    """Per-class covariance between two distinct nodes from sampled state fractions.

    ``samples[s, i]`` is the fraction of the ``N`` nodes in state ``i`` at
    sample ``s`` (the ``states`` observable of :func:`simulate`).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != space.size:
        raise ValueError("samples must have shape (n_samples, |X|)")
    if samples.shape[0] < 10:
        raise InsufficientDataError(f"need at least 10 samples, got {samples.shape[0]}")
    X = space.states.astype(float)
    return pair_covariance_from_moments(samples @ X, samples @ X**2, N, blocks)


# ---------------------------------------------------------------- files


def write_trajectory_csv(path, result: SimResult) -> None:
    header = ",".join(["t"] + result.names)
    data = np.column_stack([result.times, result.values])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def replay_document(params: NetworkParams, config: SimConfig) -> str:
    return json.dumps({"params": params.to_dict(), "config": config.to_dict()}, indent=2, sort_keys=True)
