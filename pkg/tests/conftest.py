"""Shared fixtures and hand-construction helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from lcscreen.core_types import ModelConfig
from lcscreen.sampler import DrawStore, EndpointParams, ParameterDraw


def make_endpoint_params(beta0, beta1, beta2, tau_s, beta0_base=0.0,
                         tau_w=1.0, tau_e=1.0, n_sites=2,
                         n_subjects=3) -> EndpointParams:
    beta0 = np.asarray(beta0, dtype=np.float64)
    C = beta0.size
    return EndpointParams(
        beta0=beta0,
        beta1=np.asarray(beta1, dtype=np.float64),
        beta2=np.asarray(beta2, dtype=np.float64),
        tau_s=np.asarray(tau_s, dtype=np.float64),
        beta0_base=float(beta0_base),
        tau_w=float(tau_w), tau_e=float(tau_e),
        tau0=1.0, tau1=1.0, tau2=1.0, tau_0base=1.0,
        v=np.zeros((n_sites, C)), w=np.zeros(n_subjects))


def make_store(draw_specs: list[dict]) -> DrawStore:
    """Build a DrawStore from a list of per-draw keyword dicts.

    Each dict supplies ``pi`` plus per-endpoint parameter dicts under keys
    ``x`` and ``y`` (forwarded to :func:`make_endpoint_params`).
    """
    draws = []
    n_sites = 2
    for spec in draw_specs:
        pi = np.asarray(spec["pi"], dtype=np.float64)
        C = pi.size
        draws.append(ParameterDraw(
            x=make_endpoint_params(n_sites=n_sites, **spec["x"]),
            y=make_endpoint_params(n_sites=n_sites, **spec["y"]),
            pi=pi,
            p=np.full((n_sites, C), 1.0 / n_sites),
            z=np.ones(3, dtype=np.intp),
            alpha=2.0))
    config = ModelConfig(n_classes=len(draw_specs[0]["pi"]))
    return DrawStore(config=config, draws=tuple(draws))


def random_store(rng: np.random.Generator, n_draws: int, n_classes: int,
                 mean_scale: float = 4.0) -> DrawStore:
    """A randomized but well-conditioned DrawStore for property tests."""
    specs = []
    for _ in range(n_draws):
        spec = {"pi": rng.dirichlet(np.ones(n_classes) * 3.0)}
        for name in ("x", "y"):
            spec[name] = {
                "beta0": rng.normal(0.0, mean_scale, size=n_classes),
                "beta1": rng.normal(0.0, 0.5, size=n_classes),
                "beta2": rng.normal(0.0, 0.02, size=n_classes),
                "tau_s": rng.uniform(0.5, 2.0, size=n_classes),
                "beta0_base": rng.normal(0.0, 0.3),
                "tau_w": rng.uniform(0.5, 2.0),
                "tau_e": rng.uniform(0.5, 2.0),
            }
        specs.append(spec)
    return make_store(specs)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)
