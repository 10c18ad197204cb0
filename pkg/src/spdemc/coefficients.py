"""Coefficient fields of the stochastic Dirichlet problem.

A CoefficientSet bundles the operator coefficients sigma, rho, b, c, mu,
the data f, g, psi, and the spatial derivatives needed by the
characteristics. Shape conventions (batch axes lead):

    x               (..., d)
    sigma(t, x)     (..., d, m)      columns sigma^k
    rho(t, x)       (..., d, d)      columns rho^r
    b(t, x)         (..., d)
    c(t, x), f(t, x), psi(x)   (...,)
    mu(t, x), g(t, x)          (..., m)
    dsigma(t, x)    (..., d, m, d)   last axis = derivative direction i
    drho(t, x)      (..., d, d, d)
    dmu(t, x), dg(t, x)        (..., m, d)

For bounded domains every field is multiplied by a C^2 cutoff that is
identically 1 up to distance 1/2 outside D (so the coercivity region
D^{1/2} is untouched) and vanishes beyond distance 1, enforcing support in
D^1. Whole-space scenarios carry no cutoff.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .noise import WienerPath
from .scenario import DomainSpec, TimeGrid

FAMILIES = ("zero", "constant", "smooth_bump", "trig", "adapted_piecewise", "custom")
FIELD_NAMES = ("sigma", "rho", "b", "c", "mu", "f", "g", "psi")

CUTOFF_FLAT = 0.5  # collar distance with cutoff == 1; support ends at 1


class CoefficientError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientSet:
    """Container of coefficient callables plus their metadata.

    zero_fields lists fields known to vanish identically; vectorized hot
    loops may skip their terms. Hand-built sets can leave it empty.
    """

    d: int
    m: int
    sigma: Callable
    rho: Callable
    b: Callable
    c: Callable
    mu: Callable
    f: Callable
    g: Callable
    psi: Callable
    dsigma: Callable
    drho: Callable
    dmu: Callable
    dg: Callable
    time_static: bool = True
    domain: Optional[DomainSpec] = None
    zero_fields: frozenset = frozenset()
    jit_params: Optional[dict] = None  # structured 1D pack for _kernels

    def is_zero(self, name: str) -> bool:
        return name in self.zero_fields

    def beta(self, t: float, y: np.ndarray) -> np.ndarray:
        """Drift of the forward characteristics.

        Component j: -b^j + sum_{k,i} sigma^{ik} D_i sigma^{jk}
        + sum_{r,i} rho^{ri} D_i rho^{jr} + sum_k sigma^{jk} mu^k.
        """
        y = np.asarray(y, dtype=float)
        if self.d == 1 and self.m <= 1:
            acc = np.zeros(y.shape[:-1])
            if not self.is_zero("b"):
                acc = acc - self.b(t, y)[..., 0]
            if self.m == 1 and not self.is_zero("sigma"):
                s = self.sigma(t, y)[..., 0, 0]
                acc = acc + s * self.dsigma(t, y)[..., 0, 0, 0]
                if not self.is_zero("mu"):
                    acc = acc + s * self.mu(t, y)[..., 0]
            if not self.is_zero("rho"):
                acc = acc + self.rho(t, y)[..., 0, 0] * self.drho(t, y)[..., 0, 0, 0]
            return acc[..., None]
        out = np.zeros(y.shape)
        if not self.is_zero("b"):
            out -= self.b(t, y)
        if not self.is_zero("sigma"):
            s = self.sigma(t, y)
            out += np.einsum("...ik,...jki->...j", s, self.dsigma(t, y))
            if not self.is_zero("mu"):
                out += np.einsum("...jk,...k->...j", s, self.mu(t, y))
        if not self.is_zero("rho"):
            r = self.rho(t, y)
            out += np.einsum("...ri,...jri->...j", r, self.drho(t, y))
        return out

    def c_bar(self, t: float, x: np.ndarray) -> np.ndarray:
        """c - sigma^{ik} D_i mu^k (zeroth-order weight drift)."""
        out = self.c(t, x)
        if not (self.is_zero("sigma") or self.is_zero("mu")):
            out = out - np.einsum("...ik,...ki->...",
                                  self.sigma(t, x), self.dmu(t, x))
        return out

    def f_bar(self, t: float, x: np.ndarray) -> np.ndarray:
        """f - sigma^{ik} D_i g^k (forcing seen by the weight U)."""
        out = self.f(t, x)
        if not (self.is_zero("sigma") or self.is_zero("g")):
            out = out - np.einsum("...ik,...ki->...",
                                  self.sigma(t, x), self.dg(t, x))
        return out


def beta(coeffs: CoefficientSet, t: float, y: np.ndarray) -> np.ndarray:
    return coeffs.beta(t, y)


def c_bar(coeffs: CoefficientSet, t: float, x: np.ndarray) -> np.ndarray:
    return coeffs.c_bar(t, x)


def f_bar(coeffs: CoefficientSet, t: float, x: np.ndarray) -> np.ndarray:
    return coeffs.f_bar(t, x)


# ---------------------------------------------------------------------------
# spatial profiles (scalar fields with analytic gradients)

def _smoothstep(u):
    # quintic: value/1st/2nd derivatives vanish at both ends -> C^2 glue
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def _smoothstep_d(u):
    return 30.0 * u * u * (1.0 - u) * (1.0 - u)


class Cutoff:
    """C^2 collar profile: 1 on {d(x,D) <= 1/2}, 0 on {d(x,D) >= 1}.

    Repeated evaluations at the identical array object are cached (hot
    loops evaluate several fields at the same points each step); holding
    the reference keeps the id stable.
    """

    def __init__(self, domain: Optional[DomainSpec]):
        self.domain = domain
        self.active = domain is not None and domain.kind != "whole_space"
        self._last_x = None
        self._last = None

    def _values(self, x):
        if x is self._last_x:
            return self._last
        q = -self.domain.signed_distance(x)  # distance outside D (<=0 inside)
        u = (q - CUTOFF_FLAT) / (1.0 - CUTOFF_FLAT)
        # the transition shell is usually sparse; evaluate the quintic there only
        transition = (u > 0.0) & (u < 1.0)
        val = np.where(u <= 0.0, 1.0, 0.0)
        idx = np.nonzero(transition)
        if idx[0].size:
            val[idx] = 1.0 - _smoothstep(u[idx])
        self._last_x = x
        self._last = (val, u, transition, idx)
        return self._last

    def __call__(self, x):
        if not self.active:
            return np.ones(np.asarray(x).shape[:-1])
        return self._values(x)[0]

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if not self.active:
            return np.zeros_like(x)
        _, u, transition, idx = self._values(x)
        out = np.zeros_like(x)
        if idx[0].size:
            scale = _smoothstep_d(u[idx]) / (1.0 - CUTOFF_FLAT)
            out[idx] = scale[..., None] * self.domain.grad_signed_distance(x[idx])
        return out


class Profile:
    """Scalar spatial profile value(x) -> (...,), grad(x) -> (..., d).

    Amplitude lives in the owning field, so fields sharing a shape (the
    common case: one bump for several coefficients) share one Profile
    instance, and the same-x cache makes the shape computation once per
    integrator step.
    """

    def __init__(self, spec: dict, domain: Optional[DomainSpec], d: int,
                 cutoff: Optional[Cutoff] = None):
        self.kind = spec.get("kind", "zero")
        self.d = d
        self.cutoff = cutoff if cutoff is not None else Cutoff(domain)
        self._last_x = None
        self._last = None
        self._last_val_x = None
        self._last_val = None
        self._last_grad_x = None
        self._last_grad = None
        if self.kind in ("bump", "gauss"):
            if domain is not None and domain.kind == "interval":
                default_center = [(domain.a + domain.b) / 2.0]
                default_width = (domain.b - domain.a) / 2.0
            elif domain is not None and domain.kind == "ball":
                default_center = list(domain.center)
                default_width = domain.radius
            else:
                default_center = [0.0] * d
                default_width = 1.0
            self.center = np.asarray(spec.get("center", default_center), dtype=float)
            self.width = float(spec.get("width", default_width))
        if self.kind == "trig":
            ref = 0.0
            if domain is not None and domain.kind == "interval":
                ref = domain.a
            self.freq = float(spec.get("freq", 1.0))
            self.phase = float(spec.get("phase", 0.0))
            self.ref = float(spec.get("ref", ref))
        if self.kind == "linear":
            self.ref = float(spec.get("ref", 0.0))
        if self.kind not in ("zero", "flat", "bump", "trig", "gauss", "linear"):
            raise CoefficientError(f"unknown profile kind {self.kind!r}")

    def shape_key(self, spec: dict) -> tuple:
        key = [self.kind]
        if self.kind in ("bump", "gauss"):
            key += [tuple(self.center.tolist()), self.width]
        if self.kind == "trig":
            key += [self.freq, self.phase, self.ref]
        if self.kind == "linear":
            key += [self.ref]
        return tuple(key)

    def _raw(self, x):
        x = np.asarray(x, dtype=float)
        if x is self._last_x:
            return self._last
        if self.kind == "zero":
            out = np.zeros(x.shape[:-1]), np.zeros_like(x)
        elif self.kind == "flat":
            out = np.ones(x.shape[:-1]), np.zeros_like(x)
        elif self.kind == "bump":
            v = (x - self.center) / self.width
            r2 = np.sum(v * v, axis=-1)
            core = np.where(r2 < 1.0, 1.0 - r2, 0.0)
            val = core ** 3
            grad = (-6.0 / self.width**2) * core[..., None] ** 2 * (x - self.center)
            out = val, grad
        elif self.kind == "gauss":
            v = (x - self.center) / self.width
            r2 = np.sum(v * v, axis=-1)
            val = np.exp(-r2)
            grad = (-2.0 / self.width**2) * val[..., None] * (x - self.center)
            out = val, grad
        elif self.kind == "trig":
            arg = self.freq * np.pi * (x[..., 0] - self.ref) + self.phase
            val = np.sin(arg)
            grad = np.zeros_like(x)
            grad[..., 0] = self.freq * np.pi * np.cos(arg)
            out = val, grad
        else:  # linear
            val = x[..., 0] - self.ref
            grad = np.zeros_like(x)
            grad[..., 0] = 1.0
            out = val, grad
        self._last_x = x
        self._last = out
        return out

    def __call__(self, x):
        if x is self._last_val_x:
            return self._last_val
        val, _ = self._raw(x)
        out = val * self.cutoff(x)
        self._last_val_x = x
        self._last_val = out
        return out

    def grad(self, x):
        if x is self._last_grad_x:
            return self._last_grad
        val, grad = self._raw(x)
        cut = self.cutoff(x)
        out = grad * cut[..., None] + val[..., None] * self.cutoff.grad(x)
        self._last_grad_x = x
        self._last_grad = out
        return out


class TimeFactor:
    def __init__(self, spec: Optional[dict]):
        if spec is None:
            self.amp = 0.0
            self.period = 1.0
            self.phase = 0.0
        else:
            self.amp = float(spec.get("amp", 0.0))
            self.period = float(spec.get("period", 1.0))
            self.phase = float(spec.get("phase", 0.0))
            if abs(self.amp) >= 1.0:
                raise CoefficientError("time modulation amplitude must be < 1")

    @property
    def static(self) -> bool:
        return self.amp == 0.0

    def __call__(self, t: float) -> float:
        if self.amp == 0.0:
            return 1.0
        return 1.0 + self.amp * np.sin(2.0 * np.pi * t / self.period + self.phase)


def _structure(spec: dict, shape: tuple, default_diag: bool) -> np.ndarray:
    """Constant structure matrix/vector multiplying the scalar profile."""
    if "matrix" in spec:
        arr = np.asarray(spec["matrix"], dtype=float)
    elif "vector" in spec:
        arr = np.asarray(spec["vector"], dtype=float)
    elif len(shape) == 2 and default_diag:
        arr = np.zeros(shape)
        for i in range(min(shape)):
            arr[i, i] = 1.0
    else:
        arr = np.ones(shape)
    if arr.shape != shape:
        raise CoefficientError(f"structure shape {arr.shape} != expected {shape}")
    return arr


@dataclass
class _Field:
    profile: Profile
    amp: float
    structure: np.ndarray  # () | (d,) | (m,) | (d,m) | (d,d)
    tmod: TimeFactor

    def __post_init__(self):
        # scalar-equivalent structures fold into the amplitude
        self._flat = self.structure.size == 1
        self._scalar = self.amp * (float(self.structure.reshape(-1)[0])
                                   if self._flat else 1.0)
        self._amp_struct = self.amp * self.structure

    def value(self, t, x):
        tfac = 1.0 if self.tmod.static else self.tmod(t)
        prof = self.profile(x)
        if self.structure.ndim == 0:
            return (self._scalar * tfac) * prof
        if self._flat:
            return ((self._scalar * tfac) * prof)[
                (...,) + (None,) * self.structure.ndim]
        return (tfac * prof)[(...,) + (None,) * self.structure.ndim] \
            * self._amp_struct

    def grad(self, t, x):
        tfac = 1.0 if self.tmod.static else self.tmod(t)
        g = self.profile.grad(x)  # (..., d)
        if self.structure.ndim == 0:
            return (self._scalar * tfac) * g
        expand = (...,) + (None,) * self.structure.ndim + (slice(None),)
        if self._flat:
            return ((self._scalar * tfac) * g)[expand]
        s_expand = self._amp_struct[(...,) + (None,)]
        return (tfac * g)[expand] * s_expand


def _normalize_family(spec: dict) -> dict:
    """Expand a family preset into per-field profile specs."""
    spec = dict(spec)
    family = spec.pop("family", "custom")
    if family not in FAMILIES:
        raise CoefficientError(f"unknown coefficient family {family!r}")
    if family == "adapted_piecewise":
        base = spec.get("base")
        if base is None:
            raise CoefficientError("adapted_piecewise needs a 'base' family spec")
        inner = _normalize_family(base)
        inner["_adapted"] = {"eps": float(spec.get("eps", 0.3)),
                             "scale": float(spec.get("scale", 1.0))}
        return inner

    fields = {name: {"kind": "zero"} for name in FIELD_NAMES}
    if family == "zero":
        pass
    elif family in ("constant", "smooth_bump", "trig"):
        kind = {"constant": "flat", "smooth_bump": "bump", "trig": "trig"}[family]
        for name in FIELD_NAMES:
            if name in spec and spec[name] is not None:
                val = spec[name]
                if isinstance(val, dict):
                    fields[name] = dict(val)
                else:
                    fields[name] = {"kind": kind, "amp": float(val)}
    if family == "custom" or "fields" in spec:
        for name, fs in spec.get("fields", {}).items():
            if name not in FIELD_NAMES:
                raise CoefficientError(f"unknown coefficient field {name!r}")
            fields[name] = dict(fs)
    # per-field overrides given as dicts at the top level win over presets
    for name in FIELD_NAMES:
        if isinstance(spec.get(name), dict):
            fields[name] = dict(spec[name])
    out = {"fields": fields}
    if "K" in spec:
        out["K"] = float(spec["K"])
    return out


def builtin_family(name: str, params: Optional[dict] = None,
                   domain: Optional[DomainSpec] = None, d: int = 1, m: int = 1,
                   grid: Optional[TimeGrid] = None,
                   w_path: Optional[WienerPath] = None) -> CoefficientSet:
    """Construct a CoefficientSet from a named family plus parameters."""
    spec = {"family": name}
    spec.update(params or {})
    return build_coefficients(spec, domain=domain, d=d, m=m, grid=grid, w_path=w_path)


def build_coefficients(spec: dict, domain: Optional[DomainSpec] = None,
                       d: int = 1, m: int = 1, grid: Optional[TimeGrid] = None,
                       w_path: Optional[WienerPath] = None,
                       gradient_mode: str = "analytic",
                       cd_step: Optional[float] = None) -> CoefficientSet:
    norm = _normalize_family(spec)
    fields = norm["fields"]
    shapes = {"sigma": (d, m), "rho": (d, d), "b": (d,), "c": (), "mu": (m,),
              "f": (), "g": (m,), "psi": ()}
    built = {}
    shared_cutoff = Cutoff(domain)
    profile_pool: dict = {}
    zero_fields = set()
    for name, shape in shapes.items():
        fs = fields[name]
        amp = float(fs.get("amp", 0.0 if fs.get("kind", "zero") == "zero" else 1.0))
        profile = Profile(fs, domain, d, cutoff=shared_cutoff)
        profile = profile_pool.setdefault(profile.shape_key(fs), profile)
        structure = _structure(fs, shape, default_diag=name in ("sigma", "rho"))
        tmod = TimeFactor(fs.get("tmod"))
        if "K" in norm:
            bound = abs(amp) * (1.0 + abs(tmod.amp)) * np.max(np.abs(structure), initial=0.0)
            if bound > norm["K"]:
                raise CoefficientError(
                    f"field {name!r} bound {bound:g} exceeds K={norm['K']:g}")
        if profile.kind == "zero" or amp == 0.0 or not np.any(structure):
            zero_fields.add(name)
        built[name] = _Field(profile, amp, structure, tmod)

    time_static = all(built[n].tmod.static for n in FIELD_NAMES)

    def field_fn(name):
        fld = built[name]
        return lambda t, x: fld.value(t, x)

    def grad_fn(name):
        fld = built[name]
        return lambda t, x: fld.grad(t, x)

    jit_params = _jit_pack(built, domain, d, m, time_static,
                           adapted="_adapted" in norm,
                           analytic=gradient_mode == "analytic")
    coeffs = CoefficientSet(
        d=d, m=m,
        sigma=field_fn("sigma"), rho=field_fn("rho"), b=field_fn("b"),
        c=field_fn("c"), mu=field_fn("mu"), f=field_fn("f"), g=field_fn("g"),
        psi=(lambda x, _f=built["psi"]: _f.value(0.0, x)),
        dsigma=grad_fn("sigma"), drho=grad_fn("rho"),
        dmu=grad_fn("mu"), dg=grad_fn("g"),
        time_static=time_static, domain=domain,
        zero_fields=frozenset(zero_fields),
        jit_params=jit_params,
    )
    if gradient_mode == "central_difference":
        coeffs = with_central_differences(coeffs, cd_step)
    if "_adapted" in norm:
        if grid is None or w_path is None:
            raise CoefficientError(
                "adapted_piecewise coefficients need the time grid and the realized w path")
        coeffs = apply_adapted_modulation(coeffs, grid, w_path,
                                          eps=norm["_adapted"]["eps"],
                                          scale=norm["_adapted"]["scale"])
    return coeffs


def _jit_pack(built, domain, d, m, time_static, adapted, analytic):
    """Structured parameter pack for the compiled 1D kernels, or None.

    Qualifies when every field is a scalar-structure profile in one space
    dimension with at most one adapted mode, static in time, analytic
    gradients, and no path-dependent modulation.
    """
    if d != 1 or m > 1 or adapted or not time_static or not analytic:
        return None
    pack = {}
    for name, fld in built.items():
        if fld.structure.size != 1:
            return None
        p = fld.profile
        spec = {"kind": p.kind, "amp": fld._scalar}
        if p.kind in ("bump", "gauss"):
            spec["center"] = float(p.center[0])
            spec["width"] = p.width
        if p.kind == "trig":
            spec.update(freq=p.freq, phase=p.phase, ref=p.ref)
        if p.kind == "linear":
            spec["ref"] = p.ref
        pack[name] = spec
    if domain is None:
        geo = {"dom_kind": 1, "a": 0.0, "b": 0.0, "cut_active": False}
    elif domain.kind == "interval":
        geo = {"dom_kind": 0, "a": domain.a, "b": domain.b, "cut_active": True}
    elif domain.kind == "ball":  # d == 1 ball is an interval
        c0 = float(domain.center[0])
        geo = {"dom_kind": 0, "a": c0 - domain.radius, "b": c0 + domain.radius,
               "cut_active": True}
    else:
        geo = {"dom_kind": 1, "a": 0.0, "b": 0.0, "cut_active": False}
    return {"fields": pack, "geometry": geo}


def build_scenario_coefficients(scenario, w_path: Optional[WienerPath] = None) -> CoefficientSet:
    """CoefficientSet for a ScenarioConfig (w path needed for adapted families)."""
    return build_coefficients(
        scenario.coefficients, domain=scenario.domain, d=scenario.d, m=scenario.m,
        grid=scenario.time, w_path=w_path, gradient_mode=scenario.gradient_mode,
        cd_step=scenario.cd_step)


# ---------------------------------------------------------------------------
# gradient fallback and adapted modulation

def with_central_differences(coeffs: CoefficientSet,
                             step: Optional[float] = None) -> CoefficientSet:
    """Replace analytic derivatives with central differences of the fields.

    Default step 1e-5 * (1 + |x|) balances truncation and rounding for
    64-bit floats.
    """

    def make(fn):
        def deriv(t, x):
            x = np.asarray(x, dtype=float)
            d = x.shape[-1]
            base = np.asarray(fn(t, x))
            h = step if step is not None else 1e-5 * (1.0 + np.linalg.norm(x, axis=-1))
            h = np.broadcast_to(np.asarray(h), x.shape[:-1])
            out = np.empty(base.shape + (d,))
            for i in range(d):
                xp = x.copy()
                xm = x.copy()
                xp[..., i] += h
                xm[..., i] -= h
                denom = (2.0 * h)[(...,) + (None,) * (base.ndim - x.ndim + 1)]
                out[..., i] = (np.asarray(fn(t, xp)) - np.asarray(fn(t, xm))) / denom
            return out
        return deriv

    return replace(coeffs, dsigma=make(coeffs.sigma), drho=make(coeffs.rho),
                   dmu=make(coeffs.mu), dg=make(coeffs.g), jit_params=None)


class _Multiplier:
    """Piecewise-constant-in-time predictable factor from the realized w.

    On [t_i, t_{i+1}) the factor is 1 + eps * tanh(scale * w^1_{t_i}), an
    F_{t_i}-measurable functional; perturbing increments at steps >= i
    leaves all values on [0, t_i] bit-identical.
    """

    def __init__(self, grid: TimeGrid, w_path: WienerPath, eps: float, scale: float):
        self.grid = grid
        self.eps = eps
        self.scale = scale
        if w_path.dw is None or w_path.m == 0:
            self.cum = np.zeros(grid.n_steps + 1)
        else:
            self.cum = w_path.cumulative_w()[:, 0]

    def __call__(self, t: float) -> float:
        i = int(np.floor(t / self.grid.dt + 1e-12))
        i = min(max(i, 0), self.grid.n_steps)
        return 1.0 + self.eps * np.tanh(self.scale * self.cum[i])


def apply_adapted_modulation(base: CoefficientSet, grid: TimeGrid,
                             w_path: WienerPath, eps: float = 0.3,
                             scale: float = 1.0) -> CoefficientSet:
    """Wrap a CoefficientSet in the predictable class-H modulation.

    sigma, b, c, mu, f, g (and their gradients) are scaled; rho is left
    alone so the coercivity floor survives, and psi is F_0-measurable
    already.
    """
    mult = _Multiplier(grid, w_path, eps, scale)

    def wrap(fn):
        return lambda t, x: mult(t) * fn(t, x)

    return replace(
        base,
        sigma=wrap(base.sigma), b=wrap(base.b), c=wrap(base.c),
        mu=wrap(base.mu), f=wrap(base.f), g=wrap(base.g),
        dsigma=wrap(base.dsigma), dmu=wrap(base.dmu), dg=wrap(base.dg),
        time_static=False, jit_params=None,
    )
