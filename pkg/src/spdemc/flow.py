"""Forward characteristic flow: integration, Jacobians, spatial inversion.

The flow solves dY = beta dt - sigma^k dw^k - rho^r dw_hat^r (both noise
terms carry minus signs) with Euler-Maruyama on the scenario grid. Euler
composition over a shared grid is exact, so split-composition identities
hold bit-for-bit and the inverse trajectory can be built by re-integrating
from the inverted start point with the same increments.

Inversion is Newton iteration on the continuously-seeded flow map: each
iteration re-integrates the flow from the current candidate with the SAME
noise (an inverse-flow SDE would need backward stochastic integration,
which is exactly what is ill-defined for adapted coefficients).

Seeds and inversion stay within the D^1 collar: the coefficients vanish
beyond it, so the flow is the identity out there.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coefficients import CoefficientSet
from .noise import WienerPath
from .scenario import TimeGrid


class FlowError(RuntimeError):
    pass


class BlowupError(FlowError):
    def __init__(self, step: int, lane: int):
        super().__init__(f"non-finite flow state at step {step}, seed lane {lane}")
        self.step = step
        self.lane = lane


class InversionError(FlowError):
    pass


@dataclass(frozen=True)
class FlowField:
    """Trajectories Y_{t_s, t_i}(y_j) for seeds y_j from node start_index.

    states[i] holds the positions at node start_index + i; states[0] is the
    seed array itself.
    """

    grid: TimeGrid
    start_index: int
    seeds: np.ndarray                      # (n_seeds, d)
    states: np.ndarray                     # (L+1, n_seeds, d)
    jacobians: Optional[np.ndarray] = None  # (L+1, n_seeds, d, d)

    @property
    def n_nodes(self) -> int:
        return self.states.shape[0]

    def state(self, node: int) -> np.ndarray:
        """Positions at absolute grid node index."""
        return self.states[node - self.start_index]


def _parts(w: Optional[WienerPath], what: Optional[WienerPath], n: int,
           m: int, d: int):
    dw = None if w is None else w.dw
    dwh = None if what is None else what.dw_hat
    if dw is None:
        dw = np.zeros((n, m))
    if dwh is None:
        dwh = np.zeros((n, d))
    return dw, dwh


def euler_step(coeffs: CoefficientSet, t: float, y: np.ndarray, dt: float,
               dw_i: np.ndarray, dwh_i: np.ndarray) -> np.ndarray:
    """One Euler-Maruyama step of the characteristics, batched over y."""
    out = y + coeffs.beta(t, y) * dt
    if dw_i.size:
        out -= np.einsum("...jk,...k->...j", coeffs.sigma(t, y), dw_i)
    if dwh_i.size:
        out -= np.einsum("...jr,...r->...j", coeffs.rho(t, y), dwh_i)
    return out


def beta_jacobian(coeffs: CoefficientSet, t: float, y: np.ndarray,
                  h: float = 1e-6) -> np.ndarray:
    """D_i beta^j by central differences, shape (..., d, d), axis -1 = i.

    beta contains first derivatives of sigma and rho, so its own gradient
    would need second derivatives; finite differences of the analytic beta
    avoid requiring those from coefficient families.
    """
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    out = np.empty(y.shape[:-1] + (d, d))
    for i in range(d):
        yp = y.copy()
        ym = y.copy()
        yp[..., i] += h
        ym[..., i] -= h
        out[..., i] = (coeffs.beta(t, yp) - coeffs.beta(t, ym)) / (2.0 * h)
    return out


def _jacobian_step(coeffs, t, y, jac, dt, dw_i, dwh_i):
    dj = np.einsum("...ji,...il->...jl", beta_jacobian(coeffs, t, y), jac) * dt
    if dw_i.size:
        dj -= np.einsum("...jki,...il,...k->...jl", coeffs.dsigma(t, y), jac, dw_i)
    if dwh_i.size:
        dj -= np.einsum("...jri,...il,...r->...jl", coeffs.drho(t, y), jac, dwh_i)
    return jac + dj


def integrate_flow(coeffs: CoefficientSet, w: Optional[WienerPath],
                   what: Optional[WienerPath], seeds,
                   start_index: int = 0, end_index: Optional[int] = None,
                   with_jacobians: bool = False,
                   grid: Optional[TimeGrid] = None) -> FlowField:
    """Integrate Y from the given seeds over grid nodes [start, end].

    w and what are indexed on the full grid; start_index selects the first
    increment row, so a later start uses the same increments and times as
    the corresponding tail of a full integration (bit-exact composition).
    """
    grid = grid or (w.grid if w is not None else what.grid)
    n = grid.n_steps
    end_index = n if end_index is None else end_index
    if not (0 <= start_index <= end_index <= n):
        raise IndexError("bad node range")
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    d = seeds.shape[-1]
    dw, dwh = _parts(w, what, n, coeffs.m, d)
    dt = grid.dt

    L = end_index - start_index
    states = np.empty((L + 1,) + seeds.shape)
    states[0] = seeds
    jacs = None
    if with_jacobians:
        jacs = np.empty((L + 1,) + seeds.shape + (d,))
        jacs[0] = np.eye(d)
    y = seeds.copy()
    jac = None if jacs is None else np.broadcast_to(
        np.eye(d), seeds.shape + (d,)).copy()
    for s in range(L):
        i = start_index + s
        t = grid.node(i)
        if with_jacobians:
            jac = _jacobian_step(coeffs, t, y, jac, dt, dw[i], dwh[i])
        y = euler_step(coeffs, t, y, dt, dw[i], dwh[i])
        if not np.all(np.isfinite(y)):
            lane = int(np.argwhere(~np.isfinite(y))[0][0])
            raise BlowupError(i, lane)
        states[s + 1] = y
        if with_jacobians:
            jacs[s + 1] = jac
    return FlowField(grid=grid, start_index=start_index, seeds=seeds,
                     states=states, jacobians=jacs)


def integrate_flow_from(coeffs, w, what, start_index: int, seeds,
                        **kw) -> FlowField:
    """Flow started at node start_index (restricted-noise integration)."""
    return integrate_flow(coeffs, w, what, seeds, start_index=start_index, **kw)


def flow_map(coeffs, w, what, seeds, start_index: int = 0,
             end_index: Optional[int] = None, with_jacobian: bool = False,
             grid: Optional[TimeGrid] = None):
    """Terminal state (and optional terminal Jacobian) without storing the path."""
    grid = grid or (w.grid if w is not None else what.grid)
    n = grid.n_steps
    end_index = n if end_index is None else end_index
    y = np.atleast_2d(np.asarray(seeds, dtype=float)).copy()
    d = y.shape[-1]
    dw, dwh = _parts(w, what, n, coeffs.m, d)
    dt = grid.dt
    jac = np.broadcast_to(np.eye(d), y.shape + (d,)).copy() if with_jacobian else None
    for i in range(start_index, end_index):
        t = grid.node(i)
        if with_jacobian:
            jac = _jacobian_step(coeffs, t, y, jac, dt, dw[i], dwh[i])
        y = euler_step(coeffs, t, y, dt, dw[i], dwh[i])
    if with_jacobian:
        return y, jac
    return y


def default_seed_lattice(domain, spacing: Optional[float] = None,
                         pad: float = 1.05) -> np.ndarray:
    """Warm-start lattice, spacing ~ diam(D)/32, covering the full D^1 collar.

    The inverse point of any x in D lies inside D^1: the coefficients vanish
    beyond it, the flow is the identity there, and an outside preimage would
    map to itself outside D.
    """
    lo, hi = domain.bounding_interval()
    if spacing is None:
        spacing = max(domain.diameter(), 1e-6) / 32.0
    n = int(np.ceil((hi - lo + 2 * pad) / spacing)) + 1
    side = np.linspace(lo - pad, hi + pad, n)
    if domain.dimension == 1:
        return side[:, None]
    mesh = np.meshgrid(*([side] * domain.dimension), indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    if domain.kind == "ball":
        pts = pts[domain.signed_distance(pts) >= -(pad + 0.05)]
    return pts


@dataclass
class InversionResult:
    y: np.ndarray           # (B, d) inverted points
    residual: np.ndarray    # (B,) |Y_{0,t}(y) - x|
    iterations: int
    converged: np.ndarray   # (B,) bool


def invert_points(coeffs, w, what, t_index: int, x, tolerance: float,
                  seeds: Optional[np.ndarray] = None, max_iter: int = 50,
                  grid: Optional[TimeGrid] = None,
                  warm_start: Optional[np.ndarray] = None) -> InversionResult:
    """Vectorized Newton inversion of the flow map at node t_index.

    Re-integrates the flow from each candidate with the same increments;
    warm start is the lattice seed whose image is nearest to the target.
    """
    grid = grid or (w.grid if w is not None else what.grid)
    X = np.atleast_2d(np.asarray(x, dtype=float))
    d = X.shape[-1]
    if seeds is None:
        if coeffs.domain is None:
            lo = X.min() - 1.0
            hi = X.max() + 1.0
            seeds = np.linspace(lo, hi, 33)[:, None] if d == 1 else None
        else:
            seeds = default_seed_lattice(coeffs.domain)
    if warm_start is not None:
        y = np.atleast_2d(np.asarray(warm_start, dtype=float)).copy()
    else:
        images = flow_map(coeffs, w, what, seeds, end_index=t_index, grid=grid)
        dist = np.linalg.norm(images[None, :, :] - X[:, None, :], axis=-1)
        y = seeds[np.argmin(dist, axis=1)].copy()

    B = X.shape[0]
    converged = np.zeros(B, dtype=bool)
    residual = np.full(B, np.inf)
    it = 0
    for it in range(1, max_iter + 1):
        F, J = flow_map(coeffs, w, what, y, end_index=t_index,
                        with_jacobian=True, grid=grid)
        r = X - F
        residual = np.linalg.norm(r, axis=-1)
        converged = residual <= tolerance
        if converged.all():
            break
        try:
            delta = np.linalg.solve(J, r[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise InversionError(f"singular flow Jacobian: {exc}") from exc
        active = ~converged
        y[active] += delta[active]
        if not np.all(np.isfinite(y)):
            raise InversionError("Newton iterate diverged to non-finite values")
    return InversionResult(y=y, residual=residual, iterations=it, converged=converged)


def invert_flow(coeffs, w, what, t_index: int, x, tolerance: float = 1e-10,
                seeds: Optional[np.ndarray] = None, max_iter: int = 50,
                grid: Optional[TimeGrid] = None) -> np.ndarray:
    """Single-point inversion: y with |Y_{0,t}(y) - x| <= tolerance."""
    res = invert_points(coeffs, w, what, t_index, np.asarray(x)[None, :],
                        tolerance, seeds=seeds, max_iter=max_iter, grid=grid)
    if not res.converged[0]:
        raise InversionError(
            f"no convergence after {res.iterations} iterations "
            f"(residual {res.residual[0]:.3e}); target may be outside the "
            f"seed-image range")
    return res.y[0]


def inverse_trajectory(coeffs, w, what, t_index: int, x,
                       tolerance: float = 1e-10,
                       seeds: Optional[np.ndarray] = None,
                       grid: Optional[TimeGrid] = None):
    """Trajectory s -> Y^{-1}_{s,t}(x) = Y_{0,s}(Y^{-1}_{0,t}(x)) for s <= t.

    Returns (y_star, z) with z of shape (t_index+1, d) and z[t_index] == x
    within the inversion tolerance.
    """
    y_star = invert_flow(coeffs, w, what, t_index, x, tolerance, seeds=seeds,
                         grid=grid)
    field = integrate_flow(coeffs, w, what, y_star[None, :],
                           end_index=t_index, grid=grid)
    z = field.states[:, 0, :]
    return y_star, z
