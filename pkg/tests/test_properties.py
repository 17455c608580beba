import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import oracles
from lossnet.dynamics import dissipation, integrate_ode, lyapunov_g, vector_field
from lossnet.equilibrium import fixed_point_residual, grad_phi, newton_refine, picard_solve
from lossnet.kelly import kelly_objective
from lossnet.model import (
    class_moment,
    enumerate_statespace,
    make_params,
)
from lossnet.productform import (
    blocking_probabilities,
    erlang_b,
    nu_rho,
    occupancy_distribution,
    partition_function,
    product_form_moments,
)
from lossnet.simulator import EmpiricalState, detect_switches, init_state, make_rng, step

rates = st.floats(0.05, 3.0)


@st.composite
def instances(draw, max_K=3, max_C=10, equal_A=False, transfers=True):
    K = draw(st.integers(1, max_K))
    C = draw(st.integers(1, max_C))
    if equal_A:
        A = [draw(st.integers(1, C))] * K
    else:
        A = draw(st.lists(st.integers(1, C), min_size=K, max_size=K))
    lam = draw(st.lists(rates, min_size=K, max_size=K))
    gamma = draw(st.lists(rates if transfers else st.just(0.0), min_size=K, max_size=K))
    mu = draw(st.lists(st.floats(0.0, 2.0) if transfers else rates, min_size=K, max_size=K))
    return make_params(A, C, lam, gamma, mu)


def loads(params, draw):
    return np.array(draw(st.lists(st.floats(0.01, 20.0), min_size=params.K, max_size=params.K)))


@given(instances())
def test_lattice_closed_and_indexed(p):
    sp = enumerate_statespace(p)
    assert sp.size == len(oracles.lattice(tuple(p.A), p.C))
    for i, n in enumerate(sp.states):
        assert sp.state_index(n) == i
        for k in range(p.K):
            m = n.copy()
            m[k] += 1
            inside = m @ p.A <= p.C
            assert (sp.up[i, k] >= 0) == inside


@given(instances(), st.data())
def test_moment_bounds(p, data):
    sp = enumerate_statespace(p)
    w = np.array(data.draw(st.lists(st.floats(0, 1), min_size=sp.size, max_size=sp.size)))
    assume(w.sum() > 0)
    y = w / w.sum()
    for k in range(p.K):
        assert -1e-12 <= class_moment(y, k, sp) <= p.C / p.A[k] + 1e-12


@given(instances(), st.data())
def test_recursion_agrees_with_enumeration(p, data):
    rho = loads(p, data.draw)
    sp = enumerate_statespace(p)
    assert partition_function(rho, p) >= 1.0
    assert partition_function(rho, p) == pytest.approx(oracles.partition(tuple(p.A), p.C, rho), rel=1e-10)
    assert blocking_probabilities(rho, p) == pytest.approx(oracles.blocking(tuple(p.A), p.C, rho), rel=1e-10, abs=1e-14)
    nu = nu_rho(rho, sp)
    q = occupancy_distribution(rho, p)
    assert q == pytest.approx(np.bincount(sp.occupancy, weights=nu, minlength=p.C + 1), rel=1e-10, abs=1e-15)


@given(instances(), st.data())
def test_mean_load_identity(p, data):
    rho = loads(p, data.draw)
    first, _ = product_form_moments(rho, p)
    B = blocking_probabilities(rho, p)
    assert first == pytest.approx(rho * (1 - B), rel=1e-12, abs=1e-300)
    sp = enumerate_statespace(p)
    nu = nu_rho(rho, sp)
    for k in range(p.K):
        assert class_moment(nu, k, sp) == pytest.approx(rho[k] * (1 - B[k]), rel=1e-10)


@given(instances(equal_A=True), st.data())
def test_equal_requirements_reduce_to_erlang(p, data):
    rho = loads(p, data.draw)
    B = blocking_probabilities(rho, p)
    S = rho.sum()
    assert B == pytest.approx(np.full(p.K, erlang_b(S, p.C // int(p.A[0]))), rel=1e-10)
    perm = np.roll(rho, 1)
    assert blocking_probabilities(perm, p) == pytest.approx(B, rel=1e-10)


@given(instances(), st.data())
def test_residual_is_scaled_gradient(p, data):
    rho = loads(p, data.draw)
    assert fixed_point_residual(rho, p) == pytest.approx(-rho * p.gamma * grad_phi(rho, p), rel=1e-9, abs=1e-12)


@given(instances(max_K=2, max_C=8), st.data())
def test_refined_points_satisfy_both_criteria(p, data):
    start = loads(p, data.draw)
    try:
        cp = newton_refine(p, start)
    except Exception:
        assume(False)
    res = np.max(np.abs(fixed_point_residual(cp.rho, p)))
    scale = np.max(p.mu + p.gamma)
    assert (cp.grad_norm < 1e-10) == (res < 1e-9 * scale) or abs(cp.grad_norm - 1e-10) < 1e-11


@given(instances(transfers=False), st.data())
def test_picard_without_transfers(p, data):
    rho = picard_solve(p, loads(p, data.draw), damping=1.0)
    assert rho == pytest.approx(p.lam / p.mu, rel=1e-14)


@given(instances(), st.floats(0.0, 10.0), st.floats(1e-3, 1.0))
def test_kelly_objective_decreasing(p, x, dx):
    assume(np.all(p.mu > 1e-3))
    assert kelly_objective(x + dx, p) < kelly_objective(x, p)


@given(instances(max_C=8), st.data())
def test_flux_conservation_and_dissipation(p, data):
    sp = enumerate_statespace(p)
    w = np.array(data.draw(st.lists(st.floats(0.01, 1), min_size=sp.size, max_size=sp.size)))
    y = w / w.sum()
    assert abs(vector_field(y, p, sp).sum()) < 1e-13
    assert dissipation(y, p, sp) <= 1e-12


@given(instances(max_K=2, max_C=6), st.data())
def test_lyapunov_decreases_along_trajectories(p, data):
    sp = enumerate_statespace(p)
    w = np.array(data.draw(st.lists(st.floats(0.01, 1), min_size=sp.size, max_size=sp.size)))
    tr = integrate_ode(w / w.sum(), p, sp, T=5.0, output_interval=0.05)
    g = tr.g_values
    assert np.all(np.diff(g) <= 1e-8 * (1 + np.abs(g[:-1])))
    assert np.all(tr.points > 0)
    assert lyapunov_g(tr.final, p, sp) == pytest.approx(g[-1])


@given(instances(max_C=6), st.integers(2, 40), st.integers(0, 2**32 - 1))
def test_step_conserves_nodes(p, N, seed):
    sp = enumerate_statespace(p)
    rng = make_rng(seed)
    s = init_state(np.ones(sp.size) / sp.size, N, sp)
    for _ in range(50):
        s, dt, _ = step(s, p, sp, rng)
        assert s.counts.sum() == N and s.counts.min() >= 0 and dt > 0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.floats(0.05, 0.45), st.floats(0.55, 0.95))
def test_crossings_alternate(values, lo, hi):
    rep = detect_switches(np.arange(len(values), dtype=float), np.array(values), (lo, hi))
    dirs = [d for _, d in rep.crossings]
    assert all(a != b for a, b in zip(dirs, dirs[1:]))
    assert len(rep.dwell_times) == max(0, len(dirs) - 1)


@given(instances(max_C=8), st.data())
def test_init_state_total(p, data):
    sp = enumerate_statespace(p)
    w = np.array(data.draw(st.lists(st.floats(0, 1), min_size=sp.size, max_size=sp.size)))
    assume(w.sum() > 0)
    N = data.draw(st.integers(2, 10_000))
    s = init_state(w / w.sum(), N, sp)
    assert s.counts.sum() == N
    assert np.all(np.abs(s.counts - N * w / w.sum()) < 1.0)
