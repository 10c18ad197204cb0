"""Pathwise finite-difference reference solver.

Semi-implicit scheme for du = [Lu + f]dt + [M^k u + g^k]dw^k: the
second-order part of L is implicit (coercivity makes it dominate), the
stochastic M-part and the forcing are explicit Euler-Maruyama in time:

    (I - dt L_h(t_i)) u_{i+1} = u_i + dt f(t_i) + sum_k (M^k_h u_i + g^k(t_i)) dw^k_i

L discretized in non-divergence form with central second differences for
a^{ij} D_i D_j (a = (sigma sigma* + rho rho*)/2) and central first
differences for b^i D_i; M^k_h uses central first differences. Dirichlet
rows are pinned to zero. d = 1 solves tridiagonal systems; d = 2 goes
through a sparse LU.

The explicit M-part needs dt <= dx/(K m); the solver refuses to run
otherwise unless explicitly overridden (used only by degenerate tests).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .coefficients import CoefficientSet
from .noise import WienerPath
from .scenario import DomainSpec, TimeGrid
from .representation import RepresentationEstimate


class StabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform node grid covering the closed domain (or its bounding box)."""

    domain: DomainSpec
    n_cells: int

    @property
    def d(self) -> int:
        return self.domain.dimension

    @property
    def dx(self) -> float:
        lo, hi = self.domain.bounding_interval()
        return (hi - lo) / self.n_cells

    @property
    def axis_nodes(self) -> np.ndarray:
        lo, hi = self.domain.bounding_interval()
        return np.linspace(lo, hi, self.n_cells + 1)

    @property
    def nodes(self) -> np.ndarray:
        """All nodes, shape (n_nodes, d)."""
        ax = self.axis_nodes
        if self.d == 1:
            return ax[:, None]
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def boundary_mask(self) -> np.ndarray:
        """Nodes pinned by the Dirichlet condition."""
        if self.d == 1:
            mask = np.zeros(self.n_cells + 1, dtype=bool)
            mask[0] = mask[-1] = True
            return mask
        pts = self.nodes
        n = self.n_cells + 1
        idx = np.arange(pts.shape[0])
        coords = np.stack(np.unravel_index(idx, (n,) * self.d), axis=-1)
        mask = np.any((coords == 0) | (coords == n - 1), axis=-1)
        if self.domain.kind == "ball":
            mask |= self.domain.signed_distance(pts) <= 0.0
        return mask


@dataclass
class GridSolution:
    space: SpaceGrid
    time: TimeGrid
    values: np.ndarray        # (n_steps+1, n_nodes)
    bc: str                   # "dirichlet_zero"
    w_checksum: str = ""

    def at_node(self, t_index: int, x) -> float:
        """Value at a grid node given by coordinates (exact match)."""
        pts = self.space.nodes
        x = np.atleast_1d(np.asarray(x, dtype=float))
        dist = np.linalg.norm(pts - x[None, :], axis=-1)
        j = int(np.argmin(dist))
        if dist[j] > 1e-9 * max(1.0, self.space.dx):
            raise ValueError(f"{x} is not a grid node (nearest at {dist[j]:.2e})")
        return float(self.values[t_index, j])

    def dump_csv(self, path: str, time_stride: int = 1) -> None:
        """Write rows (t, node coordinates, value) for the plots component."""
        pts = self.space.nodes
        cols = [f"x{k}" for k in range(self.space.d)]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# kind: grid_solution\n# w_checksum: {self.w_checksum}\n")
            fh.write("t," + ",".join(cols) + ",value\n")
            for i in range(0, self.values.shape[0], time_stride):
                t = self.time.node(i)
                for j in range(pts.shape[0]):
                    coords = ",".join(f"{c:.17g}" for c in pts[j])
                    fh.write(f"{t:.17g},{coords},{self.values[i, j]:.17g}\n")


def check_stability(grid: TimeGrid, dx: float, K: float, m: int,
                    relax: bool = False) -> None:
    if m >= 1 and K > 0 and not relax:
        bound = dx / (K * m)
        if grid.dt > bound:
            raise StabilityError(
                f"dt={grid.dt:g} exceeds the explicit-part bound dx/(K m)={bound:g}; "
                f"refine the time grid or pass relax_stability=True")


def fd_solve(coeffs: CoefficientSet, w: Optional[WienerPath], space: SpaceGrid,
             grid: TimeGrid, K: float = 1.0, relax_stability: bool = False) -> GridSolution:
    """Dirichlet-zero pathwise solve on the space grid for one w path."""
    check_stability(grid, space.dx, K, coeffs.m, relax_stability)
    if space.d == 1:
        return _solve_1d(coeffs, w, space, grid)
    return _solve_nd(coeffs, w, space, grid)


def _increments(w, grid, m):
    if w is None or w.dw is None:
        return np.zeros((grid.n_steps, m))
    if w.grid.n_steps != grid.n_steps:
        raise ValueError("w path grid disagrees with the solve grid")
    return w.dw


def _solve_1d(coeffs, w, space, grid):
    x = space.nodes                      # (N+1, 1)
    N = space.n_cells
    dx = space.dx
    dt = grid.dt
    dw = _increments(w, grid, coeffs.m)
    n_t = grid.n_steps

    u = np.empty((n_t + 1, N + 1))
    u[0] = coeffs.psi(x)
    cur = u[0].copy()
    static_cache = None
    for i in range(n_t):
        t = grid.node(i)
        if static_cache is None or not coeffs.time_static:
            sig = coeffs.sigma(t, x)[:, 0, :]          # (N+1, m)
            rho = coeffs.rho(t, x)[:, 0, :]            # (N+1, d)
            a = 0.5 * ((sig * sig).sum(-1) + (rho * rho).sum(-1))
            bb = coeffs.b(t, x)[:, 0]
            cc = coeffs.c(t, x)
            mu = coeffs.mu(t, x)                        # (N+1, m)
            ab = np.zeros((3, N + 1))
            ab[1] = 1.0 + 2.0 * dt * a / dx**2 - dt * cc
            up = -dt * (a / dx**2 + bb / (2.0 * dx))
            lo = -dt * (a / dx**2 - bb / (2.0 * dx))
            ab[0, 1:] = up[:-1]     # superdiagonal entries for rows 0..N-1
            ab[2, :-1] = lo[1:]     # subdiagonal entries for rows 1..N
            # Dirichlet rows
            ab[1, 0] = ab[1, -1] = 1.0
            ab[0, 1] = 0.0
            ab[2, -2] = 0.0
            if coeffs.time_static:
                static_cache = (sig, mu, ab)
        else:
            sig, mu, ab = static_cache

        ff = coeffs.f(t, x)
        gg = coeffs.g(t, x)                             # (N+1, m)
        du = np.zeros(N + 1)
        du[1:-1] = (cur[2:] - cur[:-2]) / (2.0 * dx)
        rhs = cur + dt * ff
        if coeffs.m:
            stoch = (sig * du[:, None] + mu * cur[:, None] + gg) @ dw[i]
            rhs = rhs + stoch
        rhs[0] = rhs[-1] = 0.0
        cur = solve_banded((1, 1), ab, rhs)
        cur[0] = cur[-1] = 0.0  # pin Dirichlet rows exactly
        if not np.all(np.isfinite(cur)):
            raise RuntimeError(f"FD solution became non-finite at step {i}")
        u[i + 1] = cur
    return GridSolution(space=space, time=grid, values=u, bc="dirichlet_zero",
                        w_checksum="" if w is None else w.checksum())


def _solve_nd(coeffs, w, space, grid):
    pts = space.nodes
    n_nodes = pts.shape[0]
    d = space.d
    n_ax = space.n_cells + 1
    dx = space.dx
    dt = grid.dt
    dw = _increments(w, grid, coeffs.m)
    boundary = space.boundary_mask()
    interior = ~boundary

    shape = (n_ax,) * d
    strides = [int(np.prod(shape[k + 1:], dtype=int)) for k in range(d)]

    u = np.empty((grid.n_steps + 1, n_nodes))
    u[0] = coeffs.psi(pts)
    u[0, boundary] = u[0, boundary]  # psi kept at nodes, pinned from i >= 1
    cur = u[0].copy()

    idx = np.arange(n_nodes)
    coords = np.stack(np.unravel_index(idx, shape), axis=-1)

    def shifted(vals, axis, step):
        c = coords[:, axis] + step
        ok = (c >= 0) & (c < n_ax)
        j = idx + step * strides[axis]
        out = np.zeros(n_nodes)
        out[ok] = vals[j[ok]]
        return out

    lu = None
    for i in range(grid.n_steps):
        t = grid.node(i)
        sig = coeffs.sigma(t, pts)           # (n, d, m)
        rho = coeffs.rho(t, pts)             # (n, d, d)
        a = 0.5 * (np.einsum("nik,njk->nij", sig, sig)
                   + np.einsum("nir,njr->nij", rho, rho))
        bb = coeffs.b(t, pts)
        cc = coeffs.c(t, pts)
        mu = coeffs.mu(t, pts)

        if lu is None or not coeffs.time_static:
            rows, cols, vals = [], [], []

            def add(r_mask, c_idx, v):
                rows.append(idx[r_mask])
                cols.append(c_idx[r_mask])
                vals.append(v[r_mask])

            diag = 1.0 - dt * cc + dt * np.sum(
                [2.0 * a[:, k, k] / dx**2 for k in range(d)], axis=0)
            ok_int = interior
            add(ok_int, idx, diag)
            for k in range(d):
                ck = coords[:, k]
                for sgn in (+1, -1):
                    nb = idx + sgn * strides[k]
                    valid = ok_int & (ck + sgn >= 0) & (ck + sgn < n_ax)
                    v = -dt * (a[:, k, k] / dx**2 + sgn * bb[:, k] / (2.0 * dx))
                    add(valid, nb, v)
            for k in range(d):
                for l in range(k + 1, d):
                    for sk in (+1, -1):
                        for sl in (+1, -1):
                            nb = idx + sk * strides[k] + sl * strides[l]
                            valid = (ok_int
                                     & (coords[:, k] + sk >= 0) & (coords[:, k] + sk < n_ax)
                                     & (coords[:, l] + sl >= 0) & (coords[:, l] + sl < n_ax))
                            v = -dt * (sk * sl) * 2.0 * a[:, k, l] / (4.0 * dx**2)
                            add(valid, nb, v)
            add(boundary, idx, np.ones(n_nodes))
            mat = csc_matrix((np.concatenate(vals),
                              (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n_nodes, n_nodes))
            lu = splu(mat)

        rhs = cur + dt * coeffs.f(t, pts)
        if coeffs.m:
            grad = np.stack([(shifted(cur, k, +1) - shifted(cur, k, -1)) / (2.0 * dx)
                             for k in range(d)], axis=-1)   # (n, d)
            m_u = np.einsum("nik,ni->nk", sig, grad) + mu * cur[:, None]
            rhs = rhs + (m_u + coeffs.g(t, pts)) @ dw[i]
        rhs[boundary] = 0.0
        cur = lu.solve(rhs)
        cur[boundary] = 0.0  # pin Dirichlet rows exactly
        if not np.all(np.isfinite(cur)):
            raise RuntimeError(f"FD solution became non-finite at step {i}")
        u[i + 1] = cur
    return GridSolution(space=space, time=grid, values=u, bc="dirichlet_zero",
                        w_checksum="" if w is None else w.checksum())


def fd_solve_whole_space(coeffs: CoefficientSet, w: Optional[WienerPath],
                         grid: TimeGrid, half_width: float, n_cells: int,
                         K: float = 1.0, support_radius: float = 1.0,
                         relax_support_check: bool = False,
                         dimension: int = 1) -> GridSolution:
    """Whole-space solve via a large Dirichlet-zero box.

    The box must comfortably enclose the data support plus the diffusion
    spread: half-width >= support + 6 sqrt(K T) (validated by box-doubling
    in the test suite).
    """
    need = support_radius + 6.0 * np.sqrt(max(K, 1e-12) * grid.T)
    if half_width < need and not relax_support_check:
        raise ValueError(
            f"bounding half-width {half_width:g} below the documented "
            f"heuristic {need:g}")
    box = DomainSpec(kind="whole_space", dimension=dimension,
                     half_width=half_width)
    space = SpaceGrid(domain=box, n_cells=n_cells)
    return fd_solve(coeffs, w, space, grid, K=K)


@dataclass(frozen=True)
class ComparisonReport:
    norm: str
    error: float
    stderr_band: float        # the same norm applied to the stderr field
    n_queries: int
    sup_reference: float

    @property
    def error_over_band(self) -> float:
        return self.error / max(self.stderr_band, 1e-300)


def compare(u: GridSolution, estimates: Sequence[RepresentationEstimate],
            norm: str = "sup") -> ComparisonReport:
    """Norm of (u - v_hat) over the estimator's query set."""
    if norm not in ("sup", "l2"):
        raise ValueError("norm must be 'sup' or 'l2'")
    diffs = []
    bands = []
    refs = []
    for est in estimates:
        uval = u.at_node(est.t_index, est.x)
        diffs.append(uval - est.mean)
        bands.append(est.stderr)
        refs.append(uval)
    diffs = np.asarray(diffs)
    bands = np.asarray(bands)
    if norm == "sup":
        err = float(np.max(np.abs(diffs)))
        band = float(np.max(bands))
    else:
        err = float(np.sqrt(np.mean(diffs**2)))
        band = float(np.sqrt(np.mean(bands**2)))
    return ComparisonReport(norm=norm, error=err, stderr_band=band,
                            n_queries=len(diffs),
                            sup_reference=float(np.max(np.abs(refs))))
