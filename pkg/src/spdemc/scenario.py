"""Scenario configuration: domain geometry, time grid, and run parameters.

Everything downstream (noise, coefficients, flow, estimator, FD reference)
is configured from a single ScenarioConfig, loadable from JSON text. All
objects here are immutable after construction and safe to share across
workers.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

MASTER_SEED_ENV = "SPDEMC_MASTER_SEED"


class ScenarioError(ValueError):
    """Raised when configuration text violates a scenario invariant."""


@dataclass(frozen=True)
class DomainSpec:
    """Bounded C^2 domain (interval or ball) or the whole space.

    signed_distance is positive strictly inside, negative outside, zero on
    the boundary. A point with signed_distance == 0 counts as OUTSIDE (the
    domain is open; boundary touching events have measure zero, so the
    tie-break does not bias estimates).

    whole_space carries a bounding half-width used only by the reference
    solver; its membership test always returns inside.
    """

    kind: str  # "interval" | "ball" | "whole_space"
    dimension: int
    a: float = 0.0
    b: float = 1.0
    center: tuple = ()
    radius: float = 0.0
    half_width: float = 0.0

    def __post_init__(self):
        if self.kind not in ("interval", "ball", "whole_space"):
            raise ScenarioError(f"unknown domain kind {self.kind!r}")
        if self.dimension < 1:
            raise ScenarioError("dimension must be a positive integer")
        if self.kind == "interval":
            if self.dimension != 1:
                raise ScenarioError("interval requires d = 1")
            if not self.a < self.b:
                raise ScenarioError("interval requires a < b")
        if self.kind == "ball":
            if self.radius <= 0:
                raise ScenarioError("radius > 0")
            if len(self.center) != self.dimension:
                raise ScenarioError("ball center must have length d")
        if self.kind == "whole_space" and self.half_width <= 0:
            raise ScenarioError("whole_space bounding half-width must be > 0")

    @property
    def d(self) -> int:
        return self.dimension

    def signed_distance(self, x) -> np.ndarray:
        """Signed distance to the boundary for points of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dimension:
            raise ValueError(f"points must have last axis {self.dimension}")
        if self.kind == "interval":
            xi = x[..., 0]
            return np.minimum(xi - self.a, self.b - xi)
        if self.kind == "ball":
            c = np.asarray(self.center, dtype=float)
            return self.radius - np.linalg.norm(x - c, axis=-1)
        return np.full(x.shape[:-1], np.inf)

    def grad_signed_distance(self, x) -> np.ndarray:
        """Gradient of signed_distance, shape (..., d).

        Smooth away from the medial axis; at the axis an arbitrary
        subgradient is returned (callers only use this inside the collar,
        which stays clear of the axis).
        """
        x = np.asarray(x, dtype=float)
        if self.kind == "interval":
            xi = x[..., 0]
            g = np.where(xi - self.a < self.b - xi, 1.0, -1.0)
            return g[..., None]
        if self.kind == "ball":
            c = np.asarray(self.center, dtype=float)
            v = x - c
            r = np.linalg.norm(v, axis=-1, keepdims=True)
            return -v / np.where(r > 0, r, 1.0)
        return np.zeros_like(x)

    def contains(self, x) -> np.ndarray:
        """Open-domain membership; boundary points count as outside."""
        return self.signed_distance(x) > 0.0

    def bounding_interval(self) -> tuple[float, float]:
        """1D extent used by reference solvers and probe lattices."""
        if self.kind == "interval":
            return (self.a, self.b)
        if self.kind == "ball":
            c = np.asarray(self.center, dtype=float)
            return (float(c[0] - self.radius), float(c[0] + self.radius))
        return (-self.half_width, self.half_width)

    def diameter(self) -> float:
        if self.kind == "interval":
            return self.b - self.a
        if self.kind == "ball":
            return 2.0 * self.radius
        return 2.0 * self.half_width

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dimension": self.dimension}
        if self.kind == "interval":
            out.update(a=self.a, b=self.b)
        elif self.kind == "ball":
            out.update(center=list(self.center), radius=self.radius)
        else:
            out.update(half_width=self.half_width)
        return out

    @staticmethod
    def from_dict(spec: dict) -> "DomainSpec":
        kind = spec.get("kind")
        if kind == "interval":
            return DomainSpec(kind="interval", dimension=int(spec.get("dimension", 1)),
                              a=float(spec["a"]), b=float(spec["b"]))
        if kind == "ball":
            center = tuple(float(v) for v in spec["center"])
            return DomainSpec(kind="ball", dimension=int(spec.get("dimension", len(center))),
                              center=center, radius=float(spec["radius"]))
        if kind == "whole_space":
            return DomainSpec(kind="whole_space", dimension=int(spec.get("dimension", 1)),
                              half_width=float(spec["half_width"]))
        raise ScenarioError(f"unknown domain kind {kind!r}")


def signed_distance(domain: DomainSpec, x) -> np.ndarray:
    return domain.signed_distance(x)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_n = T with dt = T/n_steps.

    dt_override propagates the parent grid's exact dt float to restricted
    sub-grids so that split integrations use bit-identical steps.
    """

    T: float
    n_steps: int
    dt_override: Optional[float] = None

    def __post_init__(self):
        if self.n_steps <= 0:
            raise ScenarioError("n_steps must be positive")
        if self.T <= 0:
            raise ScenarioError("T must be positive")

    @property
    def dt(self) -> float:
        if self.dt_override is not None:
            return self.dt_override
        return self.T / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.T / self.n_steps
        t[0] = 0.0
        t[-1] = self.T  # pin the endpoint: (n*T)/n can drift for awkward T
        return t

    def node(self, i: int) -> float:
        if i == self.n_steps:
            return self.T
        return i * self.T / self.n_steps

    def to_dict(self) -> dict:
        return {"T": self.T, "n_steps": self.n_steps}

    @staticmethod
    def from_dict(spec: dict) -> "TimeGrid":
        return TimeGrid(T=float(spec["T"]), n_steps=int(spec["n_steps"]))


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated, immutable description of one experiment setup."""

    name: str
    domain: DomainSpec
    time: TimeGrid
    m: int
    coefficients: dict
    gradient_mode: str = "analytic"   # "analytic" | "central_difference"
    cd_step: Optional[float] = None   # None = 1e-5 * (1 + |x|)
    inversion_tolerance: float = 1e-10
    samples: int = 1000               # Monte Carlo replicate count M_hat
    master_seed: int = 2024
    lam: float = 0.0                  # coercivity floor lambda
    K: float = 1.0                    # uniform coefficient bound
    alpha: float = 1.0
    exit_rule: str = "grid"           # "grid" | "interp" | "bridge"

    def __post_init__(self):
        if self.m < 0:
            raise ScenarioError("m must be >= 0")
        if self.samples < 1:
            raise ScenarioError("samples must be >= 1")
        if self.inversion_tolerance <= 0:
            raise ScenarioError("inversion tolerance must be positive")
        if self.gradient_mode not in ("analytic", "central_difference"):
            raise ScenarioError(f"unknown gradient mode {self.gradient_mode!r}")
        if self.exit_rule not in ("grid", "interp", "bridge"):
            raise ScenarioError(f"unknown exit rule {self.exit_rule!r}")
        if self.lam < 0:
            raise ScenarioError("lambda must be >= 0")

    @property
    def d(self) -> int:
        return self.domain.dimension

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "domain": self.domain.to_dict(),
            "time": self.time.to_dict(),
            "m": self.m,
            "coefficients": self.coefficients,
            "gradient_mode": self.gradient_mode,
            "cd_step": self.cd_step,
            "inversion_tolerance": self.inversion_tolerance,
            "samples": self.samples,
            "master_seed": self.master_seed,
            "lambda": self.lam,
            "K": self.K,
            "alpha": self.alpha,
            "exit_rule": self.exit_rule,
        }

    def with_master_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, master_seed=int(seed))


def serialize_scenario(cfg: ScenarioConfig) -> str:
    """Inverse of load_scenario up to JSON key order (sorted here)."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


def load_scenario(source: str) -> ScenarioConfig:
    """Parse and validate scenario configuration text (JSON schema).

    The master seed may be overridden by the SPDEMC_MASTER_SEED env var.
    """
    try:
        raw = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed scenario text: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario text must be a JSON object")
    try:
        domain = DomainSpec.from_dict(raw["domain"])
        time = TimeGrid.from_dict(raw["time"])
        cfg = ScenarioConfig(
            name=str(raw.get("name", "scenario")),
            domain=domain,
            time=time,
            m=int(raw.get("m", 0)),
            coefficients=raw.get("coefficients", {"family": "zero"}),
            gradient_mode=raw.get("gradient_mode", "analytic"),
            cd_step=raw.get("cd_step"),
            inversion_tolerance=float(raw.get("inversion_tolerance", 1e-10)),
            samples=int(raw.get("samples", 1000)),
            master_seed=int(raw.get("master_seed", 2024)),
            lam=float(raw.get("lambda", 0.0)),
            K=float(raw.get("K", 1.0)),
            alpha=float(raw.get("alpha", 1.0)),
            exit_rule=raw.get("exit_rule", "grid"),
        )
    except KeyError as exc:
        raise ScenarioError(f"missing scenario field: {exc}") from exc
    env_seed = os.environ.get(MASTER_SEED_ENV)
    if env_seed is not None:
        cfg = cfg.with_master_seed(int(env_seed))
    return cfg


def load_scenario_file(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read())


@dataclass(frozen=True)
class CoercivityReport:
    """Result of probing min eig(rho rho*) >= lambda on D^{1/2}."""

    lam: float
    n_probes: int
    min_eigenvalue: float
    violations: tuple = field(default_factory=tuple)  # (t, x, min_eig) rows

    @property
    def passed(self) -> bool:
        return len(self.violations) == 0


def check_coercivity(coeffs, domain: DomainSpec, probes, lam: float) -> CoercivityReport:
    """Report-only check of the coercivity floor at (t, x) probe points.

    probes: iterable of (t, x) with x inside D^{1/2} = {x : d(x, D) <= 1/2}.
    """
    violations = []
    min_seen = np.inf
    n = 0
    for t, x in probes:
        x = np.asarray(x, dtype=float)
        rho = coeffs.rho(t, x[None, :])[0]
        eig = np.linalg.eigvalsh(rho @ rho.T)
        low = float(eig[0])
        min_seen = min(min_seen, low)
        if low < lam:
            violations.append((float(t), tuple(x.tolist()), low))
        n += 1
    return CoercivityReport(lam=lam, n_probes=n, min_eigenvalue=min_seen,
                            violations=tuple(violations))


def default_probe_points(domain: DomainSpec, grid: TimeGrid, n_space: int = 9,
                         n_time: int = 3):
    """Probe lattice on [0,T] x D^{1/2} for assumption checks."""
    lo, hi = domain.bounding_interval()
    pad = 0.5 if domain.kind != "whole_space" else 0.0
    ts = np.linspace(0.0, grid.T, n_time)
    if domain.dimension == 1:
        xs = np.linspace(lo - pad, hi + pad, n_space)[:, None]
    else:
        side = np.linspace(lo - pad, hi + pad, n_space)
        mesh = np.meshgrid(*([side] * domain.dimension), indexing="ij")
        xs = np.stack([g.ravel() for g in mesh], axis=-1)
        if domain.kind == "ball":
            keep = domain.signed_distance(xs) >= -0.5
            xs = xs[keep]
    return [(float(t), x) for t in ts for x in xs]
