import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spdemc import (DomainSpec, TimeGrid, check_coercivity, load_scenario,
                    serialize_scenario, signed_distance)
from spdemc.scenario import MASTER_SEED_ENV, ScenarioError, default_probe_points

from conftest import make_scenario, manual_coefficients

MINIMAL = json.dumps({
    "name": "minimal",
    "domain": {"kind": "interval", "a": 0.0, "b": 1.0},
    "time": {"T": 0.5, "n_steps": 8},
    "m": 0,
    "coefficients": {"family": "zero"},
})


def test_load_minimal_interval():
    cfg = load_scenario(MINIMAL)
    assert cfg.d == 1
    assert (cfg.domain.a, cfg.domain.b) == (0.0, 1.0)
    assert cfg.time.T == 0.5


def test_roundtrip_identity():
    cfg = load_scenario(MINIMAL)
    again = load_scenario(serialize_scenario(cfg))
    assert again == cfg


def test_nonpositive_steps_rejected():
    bad = json.loads(MINIMAL)
    bad["time"]["n_steps"] = 0
    with pytest.raises(ScenarioError, match="n_steps must be positive"):
        load_scenario(json.dumps(bad))


def test_negative_radius_rejected():
    bad = json.loads(MINIMAL)
    bad["domain"] = {"kind": "ball", "center": [0.0, 0.0], "radius": -1.0}
    with pytest.raises(ScenarioError, match="radius > 0"):
        load_scenario(json.dumps(bad))


def test_malformed_text_rejected():
    with pytest.raises(ScenarioError, match="malformed"):
        load_scenario("{not json")


def test_master_seed_env_override(monkeypatch):
    monkeypatch.setenv(MASTER_SEED_ENV, "99")
    cfg = load_scenario(MINIMAL)
    assert cfg.master_seed == 99


def test_signed_distance_interval():
    dom = DomainSpec(kind="interval", dimension=1, a=0.0, b=1.0)
    assert signed_distance(dom, np.array([[0.3]]))[0] == pytest.approx(0.3)
    assert signed_distance(dom, np.array([[1.0]]))[0] == 0.0


def test_signed_distance_ball():
    dom = DomainSpec(kind="ball", dimension=2, center=(0.0, 0.0), radius=2.0)
    assert signed_distance(dom, np.array([[3.0, 0.0]]))[0] == pytest.approx(-1.0)


def test_whole_space_membership_always_inside():
    dom = DomainSpec(kind="whole_space", dimension=1, half_width=4.0)
    assert dom.contains(np.array([[1e6]])).all()


@given(st.floats(0.01, 0.99), st.floats(1.01, 3.0))
def test_boundary_bisection(x_in, x_out):
    """Continuity of the membership boundary: bisecting an inside/outside
    pair converges to a point with tiny |signed distance|."""
    dom = DomainSpec(kind="interval", dimension=1, a=0.0, b=1.0)
    a, b = np.array([x_in]), np.array([x_out])
    assert dom.signed_distance(a[None, :])[0] > 0
    assert dom.signed_distance(b[None, :])[0] < 0
    for _ in range(60):
        mid = 0.5 * (a + b)
        if dom.signed_distance(mid[None, :])[0] > 0:
            a = mid
        else:
            b = mid
    assert abs(dom.signed_distance((0.5 * (a + b))[None, :])[0]) <= 1e-12


def test_timegrid_nodes_exact_endpoints():
    for T, n in [(0.5, 512), (0.1, 3), (0.7, 7)]:
        grid = TimeGrid(T=T, n_steps=n)
        nodes = grid.nodes
        assert nodes[0] == 0.0
        assert nodes[-1] == T
        assert np.all(np.diff(nodes) > 0)


def test_coercivity_constant_passes():
    coeffs = manual_coefficients(
        rho=lambda t, x: 0.8 * np.broadcast_to(np.eye(1), x.shape[:-1] + (1, 1)))
    dom = DomainSpec(kind="interval", dimension=1, a=0.0, b=1.0)
    probes = [(0.0, np.array([0.5])), (0.5, np.array([0.1]))]
    rep = check_coercivity(coeffs, dom, probes, lam=0.5)
    assert rep.passed
    assert rep.min_eigenvalue == pytest.approx(0.64)


def test_coercivity_zero_fails_everywhere():
    coeffs = manual_coefficients()
    dom = DomainSpec(kind="interval", dimension=1, a=0.0, b=1.0)
    probes = [(0.0, np.array([0.5])), (0.5, np.array([0.9]))]
    rep = check_coercivity(coeffs, dom, probes, lam=0.1)
    assert not rep.passed
    assert len(rep.violations) == len(probes)


def test_coercivity_degenerate_diagonal():
    def rho(t, x):
        x = np.asarray(x)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = x[..., 0]
        return out

    coeffs = manual_coefficients(d=2, rho=rho)
    dom = DomainSpec(kind="ball", dimension=2, center=(0.0, 0.0), radius=1.0)
    rep = check_coercivity(coeffs, dom, [(0.0, np.array([0.1, 0.0]))], lam=0.5)
    assert not rep.passed
    assert rep.min_eigenvalue == pytest.approx(0.01)


def test_default_probes_stay_in_collar():
    cfg = make_scenario({"family": "zero"})
    pts = default_probe_points(cfg.domain, cfg.time)
    for _, x in pts:
        assert cfg.domain.signed_distance(x[None, :])[0] >= -0.5 - 1e-12


def test_scenario_validation_errors():
    with pytest.raises(ScenarioError, match="m must be"):
        make_scenario({"family": "zero"}, m=-1)
    with pytest.raises(ScenarioError, match="samples"):
        make_scenario({"family": "zero"}, samples=0)
    with pytest.raises(ScenarioError, match="exit rule"):
        make_scenario({"family": "zero"}, exit_rule="nope")
