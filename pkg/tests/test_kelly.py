import math

import numpy as np
import pytest

from lossnet.kelly import kelly_objective, kelly_omega, kelly_table
from lossnet.model import UnsupportedModelError, make_params


def test_closed_form_single_class():
    lim = kelly_omega(make_params([1], 1, [2], [1], [1]))
    assert lim.omega == pytest.approx(math.log(1.5), abs=1e-11)
    assert lim.rho_bar == pytest.approx([1.5], rel=1e-11)


def test_pure_loss_system():
    assert kelly_omega(make_params([1], 1, [2], [0], [1])).omega == pytest.approx(math.log(2), abs=1e-11)


def test_light_traffic_has_zero_omega():
    p = make_params([1, 2], 2, [0.2, 0.1], [1, 3], [1, 1])
    lim = kelly_omega(p)
    assert lim.omega == 0.0
    assert lim.rho_bar == pytest.approx(p.lam / p.mu)


def test_needs_service():
    with pytest.raises(UnsupportedModelError, match="mu"):
        kelly_omega(make_params([1], 1, [2], [1], [0]))


def test_objective_decreasing():
    p = make_params([1, 3], 3, [1.3, 0.4], [0.5, 2.0], [0.2, 0.7])
    xs = np.linspace(0, 5, 200)
    vals = [kelly_objective(x, p) for x in xs]
    assert np.all(np.diff(vals) < 0)
    lim = kelly_omega(p)
    assert kelly_objective(lim.omega, p) == pytest.approx(1.0, abs=1e-10)


def test_table_converges():
    lim, rows = kelly_table(make_params([1], 1, [2], [1], [1]), [50, 100, 200, 400])
    errs = [r.error for r in rows]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    r200 = rows[2]
    assert r200.tail_ratio[0] == pytest.approx(math.exp(-lim.omega), rel=0.02)
