"""Feynman-Kac estimator: exit times, payoffs, conditional Monte Carlo.

The estimator fixes the adapted path w and averages the payoff

    psi(y*) eta_t 1_{gamma=0} + (U_t - U_gamma eta_t / eta_gamma)

over replicates of the auxiliary noise w_hat, where y* is the flow inverse
at the query, gamma the exit time of the inverse trajectory, and eta, U the
weights along it. gamma is NOT a stopping time; whole paths are realized
before it is read off, and no early-stopping shortcut is taken (it would
change the estimator).

Exit rules:
  grid    last grid node s in (0, t] with signed_distance <= 0 (default,
          O(sqrt(dt)) one-sided bias);
  interp  grid detection, with the crossing time and the weights at gamma
          refined by linear interpolation of the signed distance inside the
          straddling step;
  bridge  conditional expectation of the payoff under the exit-time law
          refined with Brownian-bridge crossing probabilities
          q = exp(-2 d_k d_{k+1} / (s^2 dt)) per step, s^2 the boundary-
          normal variance rate n.(sigma sigma* + rho rho*)n. Removes the
          O(sqrt(dt)) bias (exact reasoning for rho-driven noise; leading
          order otherwise).

The vectorized engine processes replicates in chunks; per-replicate noise
streams and a fixed pairwise reduction make results bit-stable regardless
of chunk size.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .coefficients import CoefficientSet
from .flow import (InversionError, default_seed_lattice, invert_points,
                   inverse_trajectory)
from .noise import NoisePlan, WienerPath
from .scenario import DomainSpec, ScenarioConfig, TimeGrid
from .weights import weight_paths

EXIT_RULES = ("grid", "interp", "bridge")

_Q_MAX = float(np.nextafter(1.0, 0.0))  # largest float64 below 1


def exit_time(trajectory, t_index: int, domain: DomainSpec, grid: TimeGrid):
    """Largest grid node s in (0, t] with the trajectory outside D.

    trajectory[i] is the position at node i (node 0 = the inverse point,
    which the sup convention excludes). Returns (gamma, gamma_index);
    gamma = 0 when every node in (0, t] is strictly inside.
    """
    z = np.asarray(trajectory, dtype=float)
    if z.shape[0] < t_index + 1:
        raise ValueError("trajectory shorter than t_index")
    sd = domain.signed_distance(z[1:t_index + 1])
    outside = sd <= 0.0
    if not outside.any():
        return 0.0, 0
    idx = int(np.max(np.nonzero(outside)[0])) + 1
    return grid.node(idx), idx


@dataclass(frozen=True)
class CharacteristicBundle:
    """Everything the payoff needs for one query and one replicate."""

    t_index: int
    t: float
    x: np.ndarray
    y_star: np.ndarray
    trajectory: np.ndarray   # (t_index+1, d), trajectory[-1] ~ x
    gamma: float
    gamma_index: int
    phi: np.ndarray          # (t_index+1,)
    eta: np.ndarray
    U: np.ndarray

    @property
    def inversion_residual(self) -> float:
        return float(np.linalg.norm(self.trajectory[-1] - self.x))


def build_bundle(coeffs: CoefficientSet, domain: DomainSpec, w: WienerPath,
                 what: WienerPath, t_index: int, x,
                 tolerance: float = 1e-10,
                 seeds: Optional[np.ndarray] = None) -> CharacteristicBundle:
    x = np.asarray(x, dtype=float)
    grid = w.grid if w is not None else what.grid
    if w is None:  # noise-free adapted part (m = 0)
        w = WienerPath(grid=grid, dw=np.zeros((grid.n_steps, coeffs.m)))
    y_star, z = inverse_trajectory(coeffs, w, what, t_index, x, tolerance,
                                   seeds=seeds, grid=grid)
    gamma, gamma_index = exit_time(z, t_index, domain, grid)
    wp = weight_paths(coeffs, w, z[:, None, :])
    return CharacteristicBundle(
        t_index=t_index, t=grid.node(t_index), x=x, y_star=y_star,
        trajectory=z, gamma=gamma, gamma_index=gamma_index,
        phi=wp.phi[:, 0], eta=wp.eta[:, 0], U=wp.U[:, 0])


def payoff(bundle: CharacteristicBundle, coeffs: CoefficientSet) -> float:
    """Grid-rule payoff of one bundle (the default exit semantics)."""
    k = bundle.gamma_index
    n = bundle.t_index
    eta_ratio = np.exp(bundle.phi[n] - bundle.phi[k])
    val = bundle.U[n] - bundle.U[k] * eta_ratio
    if k == 0:
        val += float(coeffs.psi(bundle.y_star[None, :])[0]) * bundle.eta[n]
    return float(val)


@dataclass
class RepresentationEstimate:
    """Monte Carlo estimate of v_t(x) for one query."""

    t: float
    t_index: int
    x: np.ndarray
    samples: int
    mean: float
    stderr: float
    inversion_failures: int = 0
    max_residual: float = 0.0
    payoffs: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# fused chunked engine (d = 1 fast path; generic-d fallback below)

class _StepEval:
    """One step's coefficient evaluations; identically-zero fields are None."""

    __slots__ = ("beta", "sigma", "rho", "c_bar", "f_bar", "mu", "g")

    def __init__(self, coeffs, t, z, need_weights):
        self.sigma = None if coeffs.is_zero("sigma") else coeffs.sigma(t, z)
        self.rho = None if coeffs.is_zero("rho") else coeffs.rho(t, z)
        self.beta = coeffs.beta(t, z)
        if need_weights:
            self.mu = None if coeffs.is_zero("mu") else coeffs.mu(t, z)
            self.g = None if coeffs.is_zero("g") else coeffs.g(t, z)
            self.c_bar = coeffs.c_bar(t, z)
            self.f_bar = coeffs.f_bar(t, z)


def _flow_step(ev, y, dt, dw_i, dwhat_lane):
    if y.shape[-1] == 1 and dw_i.size <= 1:
        acc = y[..., 0] + ev.beta[..., 0] * dt
        if ev.sigma is not None and dw_i.size:
            acc = acc - ev.sigma[..., 0, 0] * dw_i[0]
        if ev.rho is not None:
            acc = acc - ev.rho[..., 0, 0] * dwhat_lane[..., 0]
        return acc[..., None]
    y = y + ev.beta * dt
    if ev.sigma is not None and dw_i.size:
        y = y - np.einsum("...jk,k->...j", ev.sigma, dw_i)
    if ev.rho is not None:
        y = y - np.einsum("...jr,...r->...j", ev.rho, dwhat_lane)
    return y


def _flow_sweep(coeffs, grid, t_index, dw, dwhat, rep_idx, y0):
    """Terminal flow state for lanes with per-lane auxiliary noise."""
    y = y0.copy()
    dt = grid.dt
    for i in range(t_index):
        t = grid.node(i)
        ev = _StepEval(coeffs, t, y, need_weights=False)
        y = _flow_step(ev, y, dt, dw[i], dwhat[rep_idx, i])
    return y


def _payoff_sweep(coeffs, domain, grid, t_index, dw, dwhat, rep_idx, y_star,
                  x_target, exit_rule):
    """Trajectory + weights + exit bookkeeping in one pass over the steps.

    Returns (payoffs, residuals) for the lanes.
    """
    L = y_star.shape[0]
    N = t_index
    dt = grid.dt
    y = y_star.copy()
    phi = np.zeros(L)
    U = np.zeros(L)
    psi_val = coeffs.psi(y_star)
    if N == 0:
        resid = np.linalg.norm(y - x_target, axis=-1)
        return psi_val.copy(), resid

    sd_prev = domain.signed_distance(y)
    gamma_idx = np.zeros(L, dtype=np.int64)
    gamma_phi = np.zeros(L)
    gamma_U = np.zeros(L)
    gamma_sd = np.zeros(L)
    next_phi = np.zeros(L)
    next_U = np.zeros(L)
    next_sd = np.zeros(L)
    have_next = np.zeros(L, dtype=bool)
    if exit_rule == "bridge":
        # sparse (lane, node) records of steps with non-negligible crossing
        # probability; q = exp(e) vanishes in float64 once e < -745
        br_lane, br_node, br_logq, br_phi, br_U = [], [], [], [], []

    m1 = dw.shape[1] == 1
    for i in range(N):
        t = grid.node(i)
        ev = _StepEval(coeffs, t, y, need_weights=True)
        dwi = dw[i]
        have_mu = ev.mu is not None and dwi.size
        have_g = ev.g is not None and dwi.size
        if m1:
            mudw = ev.mu[..., 0] * dwi[0] if have_mu else 0.0
            gdw = ev.g[..., 0] * dwi[0] if have_g else 0.0
        else:
            mudw = ev.mu @ dwi if have_mu else 0.0
            gdw = ev.g @ dwi if have_g else 0.0
        if ev.mu is not None:
            mu2 = ev.mu[..., 0] ** 2 if m1 \
                else np.einsum("...k,...k->...", ev.mu, ev.mu)
            dphi = (ev.c_bar - 0.5 * mu2) * dt + mudw
        else:
            dphi = ev.c_bar * dt
        dU = ev.f_bar * dt
        if have_g:
            dU = dU + gdw
            if ev.mu is not None:
                gmu = ev.g[..., 0] * ev.mu[..., 0] if m1 \
                    else np.einsum("...k,...k->...", ev.g, ev.mu)
                dU = dU + 0.5 * (gdw * mudw - gmu * dt)
        U = np.exp(dphi) * U + dU
        phi = phi + dphi

        if exit_rule == "bridge":
            if y.shape[-1] == 1:
                # 1D: the boundary normal is a unit scalar
                s2 = np.zeros(L)
                if ev.sigma is not None:
                    s2 = s2 + (ev.sigma[:, 0, :] ** 2).sum(-1)
                if ev.rho is not None:
                    s2 = s2 + (ev.rho[:, 0, :] ** 2).sum(-1)
            else:
                n_vec = domain.grad_signed_distance(y)
                s2 = np.zeros(L)
                if ev.sigma is not None:
                    s2 += (np.einsum("...jk,...j->...k", ev.sigma, n_vec) ** 2).sum(-1)
                if ev.rho is not None:
                    s2 += (np.einsum("...jr,...j->...r", ev.rho, n_vec) ** 2).sum(-1)
            s2 = np.maximum(s2, 1e-300)

        y = _flow_step(ev, y, dt, dwi, dwhat[rep_idx, i])

        sd = domain.signed_distance(y)
        node = i + 1
        if exit_rule == "bridge":
            e_exp = (-2.0 / dt) * np.maximum(sd_prev, 0.0) * np.maximum(sd, 0.0) / s2
            cand = np.nonzero(e_exp > -45.0)[0]
            if cand.size:
                br_lane.append(cand)
                br_node.append(np.full(cand.size, node, dtype=np.int64))
                q = np.exp(e_exp[cand])
                # clamp below 1 so log1p stays finite (sure-crossing steps
                # then carry survival weight ~2e-16 instead of exactly 0)
                br_logq.append(np.log1p(-np.minimum(q, _Q_MAX)))
                br_phi.append(phi[cand])
                br_U.append(U[cand])
        if exit_rule == "interp":
            cap = (~have_next) & (gamma_idx == node - 1) & (gamma_idx > 0)
            if cap.any():
                next_phi[cap] = phi[cap]
                next_U[cap] = U[cap]
                next_sd[cap] = sd[cap]
                have_next[cap] = True
        out = sd <= 0.0
        if out.any():
            gamma_idx[out] = node
            gamma_phi[out] = phi[out]
            gamma_U[out] = U[out]
            gamma_sd[out] = sd[out]
            have_next[out] = False
        sd_prev = sd

    residual = np.linalg.norm(y - x_target, axis=-1)
    eta_N = np.exp(phi)

    if exit_rule == "bridge":
        entries = None
        if br_lane:
            entries = (np.concatenate(br_lane), np.concatenate(br_node),
                       np.concatenate(br_logq), np.concatenate(br_phi),
                       np.concatenate(br_U))
        pay = _bridge_payoff(psi_val, phi, U, gamma_idx, gamma_phi, gamma_U,
                             entries)
        return pay, residual

    if exit_rule == "interp":
        refine = (gamma_idx > 0) & (gamma_idx < N) & have_next
        if refine.any():
            theta = -gamma_sd[refine] / (next_sd[refine] - gamma_sd[refine])
            gamma_phi[refine] += theta * (next_phi[refine] - gamma_phi[refine])
            gamma_U[refine] += theta * (next_U[refine] - gamma_U[refine])

    pay = U - gamma_U * np.exp(phi - gamma_phi)
    hit0 = gamma_idx == 0
    pay[hit0] += psi_val[hit0] * eta_N[hit0]
    return pay, residual


def _bridge_payoff(psi_val, phi_N, U_N, gamma_idx, gamma_phi, gamma_U, entries):
    """Average the grid-rule payoff over the bridge-refined exit-time law.

    Grid-detected exits keep their gamma atom (the last outside node,
    held in the gamma registers); sparse (lane, node) dip records at nodes
    strictly after the re-entry step redistribute mass to their right node:
    P(gamma = node) = q_node * prod_{later valid nodes} (1 - q).
    """
    L = phi_N.shape[0]
    eta_N = np.exp(phi_N)
    atom = U_N - gamma_U * np.exp(phi_N - gamma_phi)
    atom = atom + np.where(gamma_idx == 0, psi_val * eta_N, 0.0)
    if entries is None:
        return atom
    lane, node, logq, phi_e, U_e = entries
    start = np.where(gamma_idx > 0, gamma_idx + 2, 1)
    keep = node >= start[lane]
    if not keep.any():
        return atom
    lane, node, logq, phi_e, U_e = (a[keep] for a in (lane, node, logq,
                                                      phi_e, U_e))
    # entries were appended in node order; a stable sort by lane groups
    # them per lane with nodes still ascending
    order = np.argsort(lane, kind="stable")
    lane, node, logq, phi_e, U_e = (a[order] for a in (lane, node, logq,
                                                       phi_e, U_e))
    n_e = lane.size
    seg_start = np.zeros(n_e, dtype=bool)
    seg_start[0] = True
    seg_start[1:] = lane[1:] != lane[:-1]
    cs = np.cumsum(logq)
    first_idx = np.maximum.accumulate(np.where(seg_start, np.arange(n_e), 0))
    offset = (cs - logq)[first_idx]        # cumsum before each lane segment
    prefix_incl = cs - offset              # per-lane inclusive prefix
    total = np.zeros(L)
    np.add.at(total, lane, logq)
    suffix_after = total[lane] - prefix_incl
    q = -np.expm1(logq)
    p_dip = q * np.exp(suffix_after)
    contrib = p_dip * (U_N[lane] - U_e * np.exp(phi_N[lane] - phi_e))
    pay = np.exp(total) * atom
    np.add.at(pay, lane, contrib)
    return pay


def _resolve_queries(grid: TimeGrid, d: int, queries):
    out = []
    for t, x in queries:
        idx = int(round(float(t) / grid.dt))
        if idx < 0 or idx > grid.n_steps:
            raise ValueError(f"query time {t} outside [0, T]")
        if abs(grid.node(idx) - float(t)) > 1e-9 * max(1.0, grid.T):
            raise ValueError(f"query time {t} is not a grid node")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (d,):
            raise ValueError(f"query point must have shape ({d},)")
        out.append((idx, x))
    return out


def estimate_v(scenario: ScenarioConfig, coeffs: CoefficientSet,
               w: Optional[WienerPath], queries: Sequence,
               samples: Optional[int] = None,
               exit_rule: Optional[str] = None,
               keep_payoffs: bool = False,
               chunk_bytes: int = 512 << 20,
               max_attempts: int = 5,
               use_jit: Optional[bool] = None,
               aux_seed: Optional[int] = None) -> list:
    """Monte Carlo estimates of v_t(x) for queries (t, x) sharing one w path.

    Deterministic given (master seed, samples): replicate j always consumes
    stream ("what", j, attempt), so growing the sample count never perturbs
    existing replicates. Replicates whose flow inversion fails are
    resampled on a fresh attempt stream; the run aborts if more than 1% of
    them needed resampling. aux_seed reseeds only the auxiliary-noise
    streams (the estimation target, fixed by w, is unchanged).
    """
    domain = scenario.domain
    grid = scenario.time
    d = scenario.d
    M = int(samples if samples is not None else scenario.samples)
    rule = exit_rule if exit_rule is not None else scenario.exit_rule
    if rule not in EXIT_RULES:
        raise ValueError(f"unknown exit rule {rule!r}")
    plan = NoisePlan(scenario.master_seed if aux_seed is None else int(aux_seed),
                     m=scenario.m, d=d)
    resolved = _resolve_queries(grid, d, queries)
    if d != 1:
        return _estimate_v_generic(scenario, coeffs, w, resolved, M, rule,
                                   plan, keep_payoffs)

    tol = scenario.inversion_tolerance
    # coarse warm-start lattice; per-lane Newton convergence is verified, so
    # density only trades iterations against the lattice sweep cost
    lattice = default_seed_lattice(domain,
                                   spacing=(domain.diameter() + 2.1) / 12.0) \
        if domain.kind != "whole_space" \
        else np.linspace(min(x[0] for _, x in resolved) - 2.0,
                         max(x[0] for _, x in resolved) + 2.0, 13)[:, None]
    if w is not None and w.grid.n_steps != grid.n_steps:
        raise ValueError("w path grid disagrees with the scenario grid")
    dw = w.dw if (w is not None and w.dw is not None) \
        else np.zeros((grid.n_steps, scenario.m))

    groups: dict = {}
    for qi, (t_idx, x) in enumerate(resolved):
        groups.setdefault(t_idx, []).append((qi, x))

    all_pay = np.empty((len(resolved), M))
    all_resid = np.zeros(len(resolved))
    failures = 0

    for t_idx, items in groups.items():
        q_ids = [qi for qi, _ in items]
        X = np.stack([x for _, x in items])  # (Q, d)
        Q = X.shape[0]
        per_lane = grid.n_steps * 8 * (5 if rule == "bridge" else 1) + 2048
        C = max(1, min(M, int(chunk_bytes // (per_lane * Q))))
        j0 = 0
        while j0 < M:
            j1 = min(M, j0 + C)
            reps = list(range(j0, j1))
            pays, resid, failed = _run_chunk(
                scenario, coeffs, domain, grid, t_idx, dw, plan, reps,
                [0] * len(reps), X, lattice, rule, tol, use_jit=use_jit)
            for attempt in range(1, max_attempts + 1):
                if not failed:
                    break
                failures += len(failed)
                sub = sorted(failed)
                p2, r2, failed = _run_chunk(
                    scenario, coeffs, domain, grid, t_idx, dw, plan, sub,
                    [attempt] * len(sub), X, lattice, rule, tol,
                    use_jit=use_jit)
                rows = [reps.index(j) for j in sub]
                pays[rows] = p2
                resid[rows] = r2
            if failed:
                raise InversionError(
                    f"replicates {sorted(failed)[:5]}... failed inversion "
                    f"after {max_attempts} attempts")
            for qc, qi in enumerate(q_ids):
                all_pay[qi, j0:j1] = pays[:, qc]
                all_resid[qi] = max(all_resid[qi], float(resid[:, qc].max()))
            j0 = j1

    if failures > 0.01 * M:
        raise InversionError(
            f"{failures} inversion failures exceed 1% of {M} replicates")

    out = []
    for qi, (t_idx, x) in enumerate(resolved):
        p = all_pay[qi]
        mean = float(np.sum(p) / M)
        stderr = float(np.std(p, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
        out.append(RepresentationEstimate(
            t=grid.node(t_idx), t_index=t_idx, x=x, samples=M, mean=mean,
            stderr=stderr, inversion_failures=failures,
            max_residual=float(all_resid[qi]),
            payoffs=p.copy() if keep_payoffs else None))
    return out


def _use_kernels(coeffs, use_jit):
    if use_jit is False:
        return False
    jp = getattr(coeffs, "jit_params", None)
    if jp is None:
        return False
    from . import _kernels
    return _kernels.jit_available()


def _run_chunk(scenario, coeffs, domain, grid, t_idx, dw, plan, reps, attempts,
               X, lattice, rule, tol, use_jit=None):
    """Process one chunk of replicates for one t-group of queries.

    Returns (payoffs (C, Q), residuals (C, Q), failed replicate ids).
    """
    C = len(reps)
    Q = X.shape[0]
    dwhat = plan.sample_w_hat_block(grid, reps, attempts=attempts)
    if _use_kernels(coeffs, use_jit):
        return _run_chunk_jit(coeffs, grid, t_idx, dw, dwhat, reps, X,
                              lattice, rule, tol)

    S = lattice.shape[0]
    rep_lat = np.repeat(np.arange(C), S)
    lat0 = np.tile(lattice, (C, 1))
    images = _flow_sweep(coeffs, grid, t_idx, dw, dwhat, rep_lat, lat0)
    images = images.reshape(C, S)

    # warm start: nearest lattice image plus a secant slope correction
    dist = np.abs(images[:, :, None] - X[None, None, :, 0])
    idx = np.argmin(dist, axis=1)  # (C, Q)
    lo = np.maximum(idx - 1, 0)
    hi = np.minimum(idx + 1, S - 1)
    img_lo = np.take_along_axis(images, lo, axis=1)
    img_hi = np.take_along_axis(images, hi, axis=1)
    seed_span = (lattice[hi, 0] - lattice[lo, 0])
    slope = (img_hi - img_lo) / np.where(seed_span != 0, seed_span, 1.0)
    slope = np.where(np.abs(slope) > 1e-8, slope, 1.0)
    y = lattice[idx, 0] + (X[None, :, 0] - np.take_along_axis(images, idx, axis=1)) / slope

    lanes = C * Q
    rep_q = np.repeat(np.arange(C), Q)
    y = y.reshape(lanes, 1)
    slope = slope.reshape(lanes)
    x_flat = np.tile(X[:, 0], C)
    target = x_flat[:, None]

    # secant iterations on the shrinking set of unconverged lanes
    act = np.arange(lanes)
    y_act = y[:, 0].copy()
    slope_act = slope.copy()
    F_prev = None
    y_prev = None
    for _ in range(24):
        F = _flow_sweep(coeffs, grid, t_idx, dw, dwhat, rep_q[act],
                        y_act[:, None])[:, 0]
        resid = x_flat[act] - F
        done = np.abs(resid) <= tol
        if done.any():
            y[act[done], 0] = y_act[done]
        if done.all():
            act = act[:0]
            break
        if F_prev is not None:
            dy = y_act - y_prev
            dF = F - F_prev
            good = np.abs(dy) > 1e-14
            upd = np.where(good, dF / np.where(good, dy, 1.0), slope_act)
            slope_act = np.where(np.abs(upd) > 1e-8, upd, slope_act)
        keep = ~done
        step = np.clip(resid / slope_act, -0.5, 0.5)  # stay inside the collar
        y_prev = y_act[keep]
        F_prev = F[keep]
        y_act = y_act[keep] + step[keep]
        slope_act = slope_act[keep]
        act = act[keep]
    if act.size:
        y[act, 0] = y_act  # unconverged; the measured residual flags them

    pays, resid = _payoff_sweep(coeffs, domain, grid, t_idx, dw, dwhat, rep_q,
                                y, target, rule)
    # the payoff sweep recomputes |Y_{0,t}(y*) - x|; that measured residual,
    # not the quasi-Newton bookkeeping, decides acceptance
    ok = (resid <= max(tol, 1e-8)) & np.isfinite(pays)
    failed = sorted({reps[rep_q[k]] for k in np.nonzero(~ok)[0]})
    return pays.reshape(C, Q), resid.reshape(C, Q), failed


def _run_chunk_jit(coeffs, grid, t_idx, dw, dwhat, reps, X, lattice, rule, tol):
    """Compiled per-lane path (structured 1D coefficients)."""
    from . import _kernels
    jp = coeffs.jit_params
    params = _kernels.pack_params(jp["fields"])
    geo = jp["geometry"]
    C = len(reps)
    Q = X.shape[0]
    S = lattice.shape[0]
    tnodes = grid.nodes
    dt = grid.dt
    dw1 = dw[:, 0].copy() if dw.shape[1] else np.zeros(grid.n_steps)
    m1 = dw.shape[1] == 1
    dwh = dwhat[:, :, 0].copy()

    rep_lat = np.repeat(np.arange(C), S)
    lat0 = np.tile(lattice[:, 0], C)
    images = _kernels.flow_map_lanes(
        params, geo["cut_active"], geo["a"], geo["b"], tnodes, dt, t_idx, m1,
        dw1, dwh, rep_lat, lat0).reshape(C, S)

    dist = np.abs(images[:, :, None] - X[None, None, :, 0])
    idx = np.argmin(dist, axis=1)
    lo = np.maximum(idx - 1, 0)
    hi = np.minimum(idx + 1, S - 1)
    img_lo = np.take_along_axis(images, lo, axis=1)
    img_hi = np.take_along_axis(images, hi, axis=1)
    seed_span = lattice[hi, 0] - lattice[lo, 0]
    slope = (img_hi - img_lo) / np.where(seed_span != 0, seed_span, 1.0)
    slope = np.where(np.abs(slope) > 1e-8, slope, 1.0)
    y_warm = lattice[idx, 0] + (X[None, :, 0]
                                - np.take_along_axis(images, idx, axis=1)) / slope

    lanes = C * Q
    rep_q = np.repeat(np.arange(C), Q)
    x_flat = np.tile(X[:, 0], C)
    pay = np.empty(lanes)
    resid = np.empty(lanes)
    n = grid.n_steps
    qbuf = np.empty(n)
    ubuf = np.empty(n)
    pbuf = np.empty(n)
    rule_code = {"grid": 0, "interp": 1, "bridge": 2}[rule]
    _kernels.estimate_lanes(
        params, geo["cut_active"], geo["a"], geo["b"], geo["dom_kind"],
        tnodes, dt, t_idx, m1, dw1, dwh, rep_q, y_warm.reshape(lanes),
        slope.reshape(lanes), x_flat, tol, 24, rule_code, pay, resid,
        qbuf, ubuf, pbuf)
    ok = (resid <= max(tol, 1e-8)) & np.isfinite(pay)
    failed = sorted({reps[rep_q[k]] for k in np.nonzero(~ok)[0]})
    return pay.reshape(C, Q), resid.reshape(C, Q), failed


def _estimate_v_generic(scenario, coeffs, w, resolved, M, rule, plan,
                        keep_payoffs):
    """Per-replicate path for d >= 2 (true-Newton inversion; small M only)."""
    domain = scenario.domain
    grid = scenario.time
    seeds = default_seed_lattice(domain, spacing=max(domain.diameter(), 1e-6) / 8.0)
    dw = w.dw if (w is not None and w.dw is not None) \
        else np.zeros((grid.n_steps, scenario.m))
    groups: dict = {}
    for qi, (t_idx, x) in enumerate(resolved):
        groups.setdefault(t_idx, []).append((qi, x))
    all_pay = np.empty((len(resolved), M))
    all_resid = np.zeros(len(resolved))
    failures = 0
    for t_idx, items in groups.items():
        q_ids = [qi for qi, _ in items]
        X = np.stack([x for _, x in items])
        for j in range(M):
            done = False
            for attempt in range(5):
                what = plan.sample_w_hat(grid, j, attempt=attempt)
                inv = invert_points(coeffs, w, what, t_idx, X,
                                    scenario.inversion_tolerance, seeds=seeds,
                                    grid=grid)
                if not inv.converged.all():
                    failures += 1
                    continue
                pays, resid = _payoff_sweep(
                    coeffs, domain, grid, t_idx, dw, what.dw_hat[None],
                    np.zeros(X.shape[0], dtype=np.int64), inv.y, X, rule)
                if np.isfinite(pays).all():
                    done = True
                    break
                failures += 1
            if not done:
                raise InversionError(f"replicate {j} failed inversion")
            for qc, qi in enumerate(q_ids):
                all_pay[qi, j] = pays[qc]
                all_resid[qi] = max(all_resid[qi], float(resid[qc]))
    if failures > 0.01 * M * max(1, len(groups)):
        raise InversionError("inversion failure rate above 1%")
    out = []
    for qi, (t_idx, x) in enumerate(resolved):
        p = all_pay[qi]
        mean = float(np.sum(p) / M)
        stderr = float(np.std(p, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
        out.append(RepresentationEstimate(
            t=grid.node(t_idx), t_index=t_idx, x=np.asarray(x), samples=M,
            mean=mean, stderr=stderr, inversion_failures=failures,
            max_residual=float(all_resid[qi]),
            payoffs=p.copy() if keep_payoffs else None))
    return out
