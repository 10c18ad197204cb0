import numpy as np
import pytest

from spdemc import (DomainSpec, NoisePlan, SpaceGrid, TimeGrid,
                    builtin_family, compare, fd_solve, fd_solve_whole_space)
from spdemc.reference import StabilityError, check_stability
from spdemc.representation import RepresentationEstimate

from conftest import manual_coefficients, unit_interval

DOM = unit_interval()


def _heat_coeffs(dom=DOM):
    return builtin_family(
        "constant", {"rho": 1.0, "psi": {"kind": "trig", "amp": 1.0}},
        domain=dom, m=0)


def test_zero_data_is_zero():
    coeffs = builtin_family("constant", {"rho": 1.0}, domain=DOM, m=0)
    grid = TimeGrid(T=0.25, n_steps=32)
    u = fd_solve(coeffs, None, SpaceGrid(domain=DOM, n_cells=32), grid)
    assert np.all(u.values == 0.0)


def test_heat_matches_eigenfunction_oracle():
    """u(t,x) = exp(-pi^2 t / 2) sin(pi x) within 1% at the reference
    resolution (separation-of-variables oracle)."""
    grid = TimeGrid(T=0.5, n_steps=2048)  # dt = 2^-12
    space = SpaceGrid(domain=DOM, n_cells=256)
    u = fd_solve(_heat_coeffs(), None, space, grid)
    xs = space.nodes[:, 0]
    exact = np.exp(-np.pi**2 * 0.5 / 2.0) * np.sin(np.pi * xs)
    err = np.max(np.abs(u.values[-1] - exact))
    assert err <= 0.01 * np.max(np.abs(exact))
    assert np.all(u.values[1:, 0] == 0.0)
    assert np.all(u.values[1:, -1] == 0.0)
    np.testing.assert_allclose(u.values[0], np.sin(np.pi * xs) *
                               _heat_coeffs().psi(space.nodes) /
                               np.maximum(np.sin(np.pi * xs), 1e-300),
                               atol=1e-12)


def test_degenerate_zeroth_order_only():
    # sigma = rho = 0 (stability guard relaxed): du = c u dt per node
    c0 = 0.5
    coeffs = manual_coefficients(
        c=lambda t, x: np.full(np.asarray(x).shape[:-1], c0),
        psi=lambda x: np.sin(np.pi * np.asarray(x)[..., 0]))
    grid = TimeGrid(T=0.5, n_steps=512)
    space = SpaceGrid(domain=DOM, n_cells=16)
    u = fd_solve(coeffs, None, space, grid, relax_stability=True)
    xs = space.nodes[1:-1, 0]
    expect = np.exp(c0 * 0.5) * np.sin(np.pi * xs)
    np.testing.assert_allclose(u.values[-1][1:-1], expect, rtol=2e-3)


def test_whole_space_box_doubling():
    dom8 = DomainSpec(kind="whole_space", dimension=1, half_width=8.0)
    dom16 = DomainSpec(kind="whole_space", dimension=1, half_width=16.0)
    grid = TimeGrid(T=0.25, n_steps=64)
    spec = {"rho": 1.0, "psi": {"kind": "bump", "amp": 1.0, "center": [0.0],
                                "width": 1.0}}
    u8 = fd_solve_whole_space(builtin_family("constant", spec, domain=dom8, m=0),
                              None, grid, half_width=8.0, n_cells=512)
    u16 = fd_solve_whole_space(builtin_family("constant", spec, domain=dom16, m=0),
                               None, grid, half_width=16.0, n_cells=1024)
    ax8 = u8.space.axis_nodes
    ax16 = u16.space.axis_nodes
    keep8 = np.abs(ax8) <= 4.0
    keep16 = np.abs(ax16) <= 4.0
    sup = np.max(np.abs(u8.values[-1]))
    diff = np.max(np.abs(u8.values[-1][keep8] - u16.values[-1][keep16]))
    assert diff <= 1e-6 * sup


def test_whole_space_gaussian_evolution_oracle():
    # psi = exp(-x^2/w^2): heat solution stays Gaussian,
    # u(t,x) = s0/sqrt(s0^2+t) exp(-x^2/(2(s0^2+t))), s0^2 = w^2/2
    w0 = 1.0
    dom = DomainSpec(kind="whole_space", dimension=1, half_width=10.0)
    coeffs = builtin_family(
        "constant",
        {"rho": 1.0, "psi": {"kind": "gauss", "amp": 1.0, "center": [0.0],
                             "width": w0}}, domain=dom, m=0)
    grid = TimeGrid(T=0.25, n_steps=256)
    u = fd_solve_whole_space(coeffs, None, grid, half_width=10.0, n_cells=1280)
    xs = u.space.axis_nodes
    s0sq = w0**2 / 2.0
    exact = np.sqrt(s0sq / (s0sq + grid.T)) * np.exp(-xs**2 / (2 * (s0sq + grid.T)))
    err = np.max(np.abs(u.values[-1] - exact))
    assert err <= 0.01 * np.max(exact)


def test_pathwise_linearity_in_data():
    grid = TimeGrid(T=0.25, n_steps=256)
    space = SpaceGrid(domain=DOM, n_cells=64)
    w = NoisePlan(master_seed=3, m=1, d=1).sample_w(grid)

    def solve(psi, f, g):
        coeffs = builtin_family(
            "smooth_bump",
            {"rho": {"kind": "flat", "amp": 0.8}, "sigma": 0.4, "mu": 0.1,
             "psi": psi, "f": f, "g": g}, domain=DOM)
        return fd_solve(coeffs, w, space, grid, K=2.0).values

    both = solve(1.0, 0.6, 0.4)
    parts = solve(0.7, 0.2, 0.3) + solve(0.3, 0.4, 0.1)
    np.testing.assert_allclose(both, parts, rtol=1e-10, atol=1e-13)


def test_grid_self_convergence():
    """halving dx and dt together shrinks the self-difference by >= 1.5."""
    diffs = []
    levels = [(64, 64), (128, 128), (256, 256)]
    plan = NoisePlan(master_seed=5, m=1, d=1)
    finest_n = 512
    fine_grid = TimeGrid(T=0.25, n_steps=finest_n)
    w_fine = plan.sample_w(fine_grid)

    def coarsen(dw, factor):
        n = dw.shape[0] // factor
        return dw.reshape(n, factor, -1).sum(axis=1)

    sols = []
    for cells, n in levels:
        grid = TimeGrid(T=0.25, n_steps=n)
        w = type(w_fine)(grid=grid, dw=coarsen(w_fine.dw, finest_n // n))
        coeffs = builtin_family(
            "smooth_bump",
            {"rho": {"kind": "flat", "amp": 0.8}, "sigma": 0.4, "mu": 0.1,
             "psi": 1.0, "f": 0.5}, domain=DOM)
        space = SpaceGrid(domain=DOM, n_cells=cells)
        sols.append(fd_solve(coeffs, w, space, grid, K=2.0))
    for a, b in zip(sols[:-1], sols[1:]):
        stride = b.space.n_cells // a.space.n_cells
        tstride = b.time.n_steps // a.time.n_steps
        diffs.append(np.max(np.abs(a.values[-1] - b.values[-1][::stride])))
    assert diffs[0] / diffs[1] >= 1.5


def test_stability_guard_refuses():
    grid = TimeGrid(T=0.25, n_steps=4)  # dt huge vs dx
    with pytest.raises(StabilityError, match="dx"):
        check_stability(grid, dx=1.0 / 64, K=1.0, m=1)
    check_stability(grid, dx=1.0 / 64, K=1.0, m=0)          # no modes: fine
    check_stability(grid, dx=1.0 / 64, K=1.0, m=1, relax=True)


def test_whole_space_support_heuristic_guard():
    dom = DomainSpec(kind="whole_space", dimension=1, half_width=2.0)
    coeffs = builtin_family("constant", {"rho": 1.0}, domain=dom, m=0)
    grid = TimeGrid(T=1.0, n_steps=16)
    with pytest.raises(ValueError, match="half-width"):
        fd_solve_whole_space(coeffs, None, grid, half_width=2.0, n_cells=64)


def test_compare_exact_and_mismatch():
    grid = TimeGrid(T=0.25, n_steps=32)
    space = SpaceGrid(domain=DOM, n_cells=32)
    u = fd_solve(_heat_coeffs(), None, space, grid)
    ests = [RepresentationEstimate(
        t=0.25, t_index=32, x=np.array([x]), samples=1,
        mean=u.at_node(32, [x]), stderr=0.01)
        for x in (0.25, 0.5, 0.75)]
    rep = compare(u, ests, norm="sup")
    assert rep.error == 0.0
    rep2 = compare(u, ests, norm="l2")
    assert rep2.error == 0.0
    with pytest.raises(ValueError, match="grid node"):
        bad = RepresentationEstimate(t=0.25, t_index=32,
                                     x=np.array([0.2501234]), samples=1,
                                     mean=0.0, stderr=0.0)
        compare(u, [bad])


def test_grid_solution_csv_dump(tmp_path):
    grid = TimeGrid(T=0.25, n_steps=8)
    space = SpaceGrid(domain=DOM, n_cells=8)
    u = fd_solve(_heat_coeffs(), None, space, grid)
    path = tmp_path / "u.csv"
    u.dump_csv(str(path), time_stride=4)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# kind: grid_solution")
    assert lines[2] == "t,x0,value"
    assert len(lines) == 3 + 3 * 9  # 3 stored times x 9 nodes


def test_d2_deterministic_heat_square():
    """d = 2 sparse path: u = exp(-pi^2 t) sin(pi x) sin(pi y) on the unit
    square (staircase-free box domain)."""
    dom = DomainSpec(kind="whole_space", dimension=2, half_width=0.5)
    # box (-1/2, 1/2)^2; eigenvalue of a Laplacian with a = 1/2 is pi^2
    coeffs = manual_coefficients(
        d=2, m=0,
        rho=lambda t, x: np.broadcast_to(np.eye(2), np.asarray(x).shape[:-1] + (2, 2)),
        psi=lambda x: np.cos(np.pi * np.asarray(x)[..., 0])
        * np.cos(np.pi * np.asarray(x)[..., 1]))
    grid = TimeGrid(T=0.1, n_steps=64)
    space = SpaceGrid(domain=dom, n_cells=32)
    u = fd_solve(coeffs, None, space, grid)
    exact = np.exp(-np.pi**2 * grid.T) * coeffs.psi(space.nodes)
    err = np.max(np.abs(u.values[-1] - exact))
    assert err <= 0.03 * np.max(np.abs(exact))
