import logging

import numpy as np
import pytest

from gflnet.core import ModelError
from gflnet.inverter import (
    RawInverterGains,
    TimeConstants,
    check_pll_condition,
    derive_time_constants,
    eps_family_constants,
    epsilon,
    lc_time_constants,
    line_time_constants,
    stack_constants,
)
from gflnet.netgraph import Line
from gflnet.spl import example1_spec

V_G = 120 * np.sqrt(2)
S_NOM = 1000.0
OMEGA = 120 * np.pi


def raw_gains(**overrides):
    params = dict(
        omega_c_pll=1e5,
        kp_pll=1.0,
        ki_pll=10.0,
        omega_s=50.0,
        kp_s=0.1,
        ki_s=1.0,
        kp_c=2.0,
        ki_c=1e3,
        l_f=1e-3,
        c_f=2e-3,
    )
    params.update(overrides)
    return RawInverterGains(**params)


def uniform_constants(c):
    return TimeConstants(
        tau_pll=c,
        tau_p_pll=c,
        t_pll=c,
        tau_s=c,
        tau_p_s=1.0,
        t_s=c,
        tau_c=c ** 2,
        t_c=c ** 2,
        tau_lc=c ** 2,
        tau_p_lc=c ** 2,
        tau_pp_lc=0.5,
    )


def test_raw_gains_must_be_positive():
    with pytest.raises(ValueError):
        raw_gains(kp_pll=0.0)
    with pytest.raises(ValueError):
        raw_gains(c_f=-1e-3)


def test_pll_low_pass_reciprocal():
    tc = derive_time_constants(raw_gains(), V_G, S_NOM, OMEGA)
    assert tc.tau_pll == pytest.approx(1e-5)


def test_derived_constants_formulas(rng):
    for _ in range(10):
        g = raw_gains(
            kp_pll=rng.uniform(0.1, 5),
            ki_pll=rng.uniform(1, 50),
            kp_s=rng.uniform(0.01, 1),
            ki_s=rng.uniform(0.1, 10),
            kp_c=rng.uniform(0.5, 5),
            ki_c=rng.uniform(1e2, 1e4),
        )
        tc = derive_time_constants(g, V_G, S_NOM, OMEGA)
        assert tc.tau_p_pll == pytest.approx(1.0 / (V_G * g.kp_pll), rel=1e-14)
        assert tc.t_pll == pytest.approx(g.kp_pll / g.ki_pll, rel=1e-14)
        assert tc.tau_s == pytest.approx(1.0 / g.omega_s, rel=1e-14)
        assert tc.tau_p_s == pytest.approx(1.0 / (V_G * g.ki_s), rel=1e-14)
        assert tc.t_s == pytest.approx(g.kp_s / g.ki_s, rel=1e-14)
        assert tc.tau_c == pytest.approx(V_G ** 2 / (g.ki_c * S_NOM), rel=1e-14)
        assert tc.t_c == pytest.approx(g.kp_c / g.ki_c, rel=1e-14)
        assert tc.tau_pp_lc == pytest.approx(g.c_f * OMEGA * V_G ** 2 / S_NOM, rel=1e-14)


def test_derived_constants_reject_bad_grid():
    with pytest.raises(ModelError):
        derive_time_constants(raw_gains(), 0.0, S_NOM, OMEGA)


def test_lc_time_constants_direct():
    l_f, c_f = 1e-3, 2e-3
    tau_lc, tau_p_lc, _ = lc_time_constants(l_f, c_f, V_G, S_NOM, OMEGA)
    x_l = OMEGA * l_f
    x_c = 1.0 / (OMEGA * c_f)
    assert tau_lc == pytest.approx(l_f / np.sqrt(x_c ** 2 + x_l ** 2))
    assert tau_p_lc == pytest.approx(c_f / np.sqrt((OMEGA * c_f) ** 2 + (1.0 / x_l) ** 2))


def test_filter_values_recovered():
    tc = derive_time_constants(raw_gains(), V_G, S_NOM, OMEGA)
    stripped = tc.model_copy(update={"l_f": None, "c_f": None})
    l_f, c_f = stripped.filter_values(V_G, S_NOM, OMEGA)
    assert l_f == pytest.approx(1e-3, rel=1e-9)
    assert c_f == pytest.approx(2e-3, rel=1e-9)


def test_line_time_constants():
    lines = [Line(bus_from=0, bus_to=1, r_ohm=0.02, l_henry=2e-5)]
    tau_e, tau_p_e = line_time_constants(lines, V_G, S_NOM, OMEGA)
    mag = np.hypot(0.02, OMEGA * 2e-5)
    assert tau_e == [pytest.approx(2e-5 / mag)]
    assert tau_p_e == [pytest.approx(S_NOM * mag / V_G ** 2)]
    assert tau_e[0] <= 1.0 / OMEGA


def test_uniform_epsilon():
    report = epsilon(uniform_constants(0.01))
    assert report.eps == pytest.approx(0.01)
    assert report.eps == max(report.eps_i, report.eps_e)


def test_eps_family_is_dominated_by_power_pi_ratio():
    tc = eps_family_constants(0.001, V_G, S_NOM, OMEGA, 1e-3, 2e-3)
    assert tc.tau_pll == pytest.approx(1e-6)
    assert tc.tau_p_s == pytest.approx(0.1 * V_G)
    report = epsilon(tc)
    assert report.eps_i == pytest.approx(0.01)
    assert report.dominant in ("t_s", "tau_lc", "tau_p_lc")


def test_eps_family_rejects_nonpositive():
    with pytest.raises(ModelError):
        eps_family_constants(0.0, V_G, S_NOM, OMEGA, 1e-3, 2e-3)


def test_published_column():
    tc = example1_spec().constants
    report = epsilon(tc)
    assert report.eps_i == pytest.approx(0.125)
    assert report.dominant == "t_pll"
    assert report.eps_e <= 0.1
    assert check_pll_condition(tc).tolist() == [True]


def test_epsilon_is_monotone():
    base = uniform_constants(0.01)
    bigger = base.model_copy(update={"tau_c": 0.04})
    assert epsilon(bigger).eps >= epsilon(base).eps
    assert epsilon(bigger).dominant == "tau_c"


def test_epsilon_includes_lines():
    report = epsilon(uniform_constants(0.001), tau_e=[0.0004])
    assert report.eps_e == pytest.approx(0.02)
    assert report.dominant == "tau_e"


def test_pll_condition_boundary_excluded():
    tc = uniform_constants(0.01)
    assert not check_pll_condition(tc)[0]
    family = eps_family_constants(0.01, V_G, S_NOM, OMEGA, 1e-3, 2e-3)
    assert check_pll_condition([family, tc]).tolist() == [True, False]


def test_stack_constants_broadcast():
    stacked = stack_constants(uniform_constants(0.1), n=4)
    assert stacked["tau_pll"].shape == (4,)
    with pytest.raises(ModelError):
        stack_constants([uniform_constants(0.1)] * 2, n=3)
    with pytest.raises(ModelError):
        stack_constants([])


def test_remark_bounds(caplog):
    tc = eps_family_constants(0.001, V_G, S_NOM, OMEGA, 1e-3, 2e-3)
    with caplog.at_level(logging.WARNING):
        bounds = tc.remark_bounds(OMEGA, logger=logging.getLogger("gflnet.tests"))
    assert set(bounds) == {"tau_lc", "tau_p_lc", "tau_e"}
    for name, ok in bounds.items():
        assert ok or f"violated for {name}" in caplog.text
