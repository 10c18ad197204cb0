import numpy as np
import pytest

from spdemc import DomainSpec, ScenarioConfig, TimeGrid
from spdemc.coefficients import CoefficientSet


def unit_interval() -> DomainSpec:
    return DomainSpec(kind="interval", dimension=1, a=0.0, b=1.0)


def make_scenario(coefficients, *, T=0.25, n_steps=64, m=1, samples=200,
                  seed=2024, exit_rule="grid", lam=0.0, K=4.0,
                  domain=None, name="test") -> ScenarioConfig:
    return ScenarioConfig(
        name=name, domain=domain or unit_interval(),
        time=TimeGrid(T=T, n_steps=n_steps), m=m, coefficients=coefficients,
        samples=samples, master_seed=seed, lam=lam, K=K, exit_rule=exit_rule)


def manual_coefficients(d=1, m=1, *, sigma=None, rho=None, b=None, c=None,
                        mu=None, f=None, g=None, psi=None, dsigma=None,
                        drho=None, dmu=None, dg=None, domain=None):
    """Hand-built CoefficientSet from plain callables (t, x) -> arrays.

    Unspecified fields are zero; unspecified derivatives are zero (only
    valid when the matching field is spatially constant).
    """
    def zval(shape):
        def fn(t, x):
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape[:-1] + shape)
        return fn

    return CoefficientSet(
        d=d, m=m,
        sigma=sigma or zval((d, m)), rho=rho or zval((d, d)),
        b=b or zval((d,)), c=c or zval(()), mu=mu or zval((m,)),
        f=f or zval(()), g=g or zval((m,)),
        psi=psi or (lambda x: np.zeros(np.asarray(x).shape[:-1])),
        dsigma=dsigma or zval((d, m, d)), drho=drho or zval((d, d, d)),
        dmu=dmu or zval((m, d)), dg=dg or zval((m, d)),
        domain=domain)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
