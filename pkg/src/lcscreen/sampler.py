"""Metropolis-within-Gibbs sampler for the latent-class joint model.

Each sweep updates, in fixed order: class memberships z (categorical, via
Gumbel-max), mixture weights pi (Dirichlet), per-class site profiles p
(Dirichlet), all regression coefficients (scalar conjugate normals), site
and subject effects (conjugate normals), precisions (conjugate gammas), the
concentration alpha (random-walk Metropolis with reflection on its uniform
support), and the hyper-precisions (conjugate gammas).

A single chain is strictly sequential and, for a fixed (dataset, configs,
seed), bit-for-bit reproducible: the RNG is consumed in a fixed order with
fixed draw shapes every sweep.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .core_types import (Dataset, ModelConfig, ValidationError,
                         validate_dataset, write_dataset_csv)

__all__ = [
    "EndpointParams",
    "ParameterDraw",
    "DrawStore",
    "McmcConfig",
    "NumericError",
    "fit",
    "conditional_class_prob",
    "save_drawstore",
    "load_drawstore",
]

ENDPOINTS = ("x", "y")


class NumericError(RuntimeError):
    """Non-finite value encountered during sampling (an implementation bug)."""


@dataclass(frozen=True)
class McmcConfig:
    burn_in: int
    keep: int
    thin: int = 1
    seed: int = 0
    alpha_step: float = 0.25

    def __post_init__(self) -> None:
        if self.burn_in < 0 or self.keep < 1 or self.thin < 1:
            raise ValueError("burn_in >= 0, keep >= 1, thin >= 1 required")


@dataclass(frozen=True)
class EndpointParams:
    """One endpoint's slice of a posterior draw."""

    beta0: np.ndarray        # (C,)
    beta1: np.ndarray        # (C,)
    beta2: np.ndarray        # (C,)
    tau_s: np.ndarray        # (C,)
    beta0_base: float
    tau_w: float
    tau_e: float
    tau0: float
    tau1: float
    tau2: float
    tau_0base: float
    v: np.ndarray            # (M, C) site-by-class effects
    w: np.ndarray            # (n,) subject effects


@dataclass(frozen=True)
class ParameterDraw:
    x: EndpointParams
    y: EndpointParams
    pi: np.ndarray           # (C,)
    p: np.ndarray            # (M, C), columns sum to 1
    z: np.ndarray            # (n,) class labels, 1-based
    alpha: float

    def endpoint(self, name: str) -> EndpointParams:
        return self.x if name == "x" else self.y

    def validate(self, config: ModelConfig) -> None:
        C = config.n_classes
        if abs(float(self.pi.sum()) - 1.0) > 1e-10:
            raise ValueError("pi must sum to 1")
        if np.max(np.abs(self.p.sum(axis=0) - 1.0)) > 1e-10:
            raise ValueError("columns of p must sum to 1")
        if not (np.all(self.z >= 1) and np.all(self.z <= C)):
            raise ValueError("z entries must lie in 1..C")
        if not config.alpha_lo <= self.alpha <= config.alpha_hi:
            raise ValueError("alpha outside its prior support")
        for name in ENDPOINTS:
            ep = self.endpoint(name)
            if np.any(ep.tau_s <= 0) or min(ep.tau_w, ep.tau_e, ep.tau0,
                                            ep.tau1, ep.tau2, ep.tau_0base) <= 0:
                raise ValueError(f"non-positive precision in endpoint {name}")


@dataclass
class DrawStore:
    """Retained posterior draws plus the configuration that produced them."""

    config: ModelConfig
    draws: tuple[ParameterDraw, ...]
    provenance: dict[str, object] = field(default_factory=dict)
    _stacked: dict | None = field(default=None, repr=False, compare=False)

    @property
    def n_draws(self) -> int:
        return len(self.draws)

    def stacked(self) -> dict[str, np.ndarray]:
        """Draw-major arrays of the parameters the predictive needs.

        Keys: ``pi`` (Q, C) and, per endpoint ``e``, ``beta0_e``/``beta1_e``/
        ``beta2_e``/``tau_s_e`` (Q, C) and ``beta0_base_e``/``tau_w_e``/
        ``tau_e_e`` (Q,).
        """
        if self._stacked is None:
            out = {"pi": np.array([d.pi for d in self.draws])}
            for name in ENDPOINTS:
                eps = [d.endpoint(name) for d in self.draws]
                out[f"beta0_{name}"] = np.array([e.beta0 for e in eps])
                out[f"beta1_{name}"] = np.array([e.beta1 for e in eps])
                out[f"beta2_{name}"] = np.array([e.beta2 for e in eps])
                out[f"tau_s_{name}"] = np.array([e.tau_s for e in eps])
                out[f"beta0_base_{name}"] = np.array([e.beta0_base for e in eps])
                out[f"tau_w_{name}"] = np.array([e.tau_w for e in eps])
                out[f"tau_e_{name}"] = np.array([e.tau_e for e in eps])
            self._stacked = out
        return self._stacked

    def concat(self, other: "DrawStore") -> "DrawStore":
        return DrawStore(config=self.config, draws=self.draws + other.draws,
                         provenance=dict(self.provenance))


def conditional_class_prob(counts: np.ndarray, alpha: float, C: int,
                           n: int) -> np.ndarray:
    """Prior class-membership probabilities for one subject given the rest.

    Component c is ``(counts[c] + alpha / C) / (n - 1 + alpha)`` where
    ``counts`` are the class sizes excluding the subject (summing to n - 1).
    """
    counts = np.asarray(counts, dtype=np.float64)
    return (counts + alpha / C) / (n - 1 + alpha)


# ---------------------------------------------------------------------------
# internal fitting machinery


class _EndpointData:
    """Flattened observation arrays for one endpoint."""

    def __init__(self, d: Dataset, name: str):
        vals, ts, subj = [], [], []
        baseline = np.zeros(len(d.subjects))
        for i, s in enumerate(d.subjects):
            series = s.series_x if name == "x" else s.series_y
            baseline[i] = s.baseline_x if name == "x" else s.baseline_y
            for t, v in series:
                vals.append(v)
                ts.append(t)
                subj.append(i)
        self.val = np.asarray(vals, dtype=np.float64)
        self.t = np.asarray(ts, dtype=np.float64)
        self.t2 = self.t * self.t
        self.subj = np.asarray(subj, dtype=np.intp)
        self.baseline = baseline
        self.baseline_obs = baseline[self.subj]
        self.n_obs_total = self.val.size
        self.n_obs = np.bincount(self.subj, minlength=len(d.subjects)).astype(np.float64)


class _EndpointState:
    def __init__(self, C: int, M: int, n: int, tau_e: float):
        self.beta0 = np.zeros(C)
        self.beta1 = np.zeros(C)
        self.beta2 = np.zeros(C)
        self.beta0_base = 0.0
        self.tau_s = np.ones(C)
        self.tau_w = 1.0
        self.tau_e = tau_e
        self.tau0 = 1.0
        self.tau1 = 1.0
        self.tau2 = 1.0
        self.tau_0base = 1.0
        self.v = np.zeros((M, C))
        self.w = np.zeros(n)


class _Chain:
    def __init__(self, d: Dataset, mc: ModelConfig, run: McmcConfig):
        self.mc = mc
        self.run = run
        self.C = mc.n_classes
        self.M = d.n_sites
        self.n = len(d.subjects)
        self.rng = np.random.default_rng(run.seed)
        self.site0 = np.array([s.site - 1 for s in d.subjects], dtype=np.intp)
        self.data = {name: _EndpointData(d, name) for name in ENDPOINTS}
        for ed in self.data.values():
            ed.site_obs = self.site0[ed.subj]
        tau_e0 = mc.fix_residual_precision or 1.0
        self.state = {name: _EndpointState(self.C, self.M, self.n, tau_e0)
                      for name in ENDPOINTS}
        self.pi = np.full(self.C, 1.0 / self.C)
        self.p = np.full((self.M, self.C), 1.0 / self.M)
        self.alpha = 0.5 * (mc.alpha_lo + mc.alpha_hi)
        self.z = self._init_z()
        self.alpha_accepted = 0
        self.alpha_proposed = 0

    # -- initialization

    def _init_z(self) -> np.ndarray:
        """K-means-style seeding on per-subject least-squares quadratic fits."""
        feats = np.zeros((self.n, 6))
        for k, name in enumerate(ENDPOINTS):
            ed = self.data[name]
            for i in range(self.n):
                idx = np.flatnonzero(ed.subj == i)
                if idx.size == 0:
                    continue
                X = np.column_stack([np.ones(idx.size), ed.t[idx], ed.t2[idx]])
                # ridge-regularized so short series stay well-posed
                A = X.T @ X + 1e-6 * np.eye(3)
                feats[i, 3 * k:3 * k + 3] = np.linalg.solve(A, X.T @ ed.val[idx])
        scale = feats.std(axis=0)
        scale[scale == 0] = 1.0
        feats = feats / scale
        centers = feats[self.rng.choice(self.n, size=min(self.C, self.n),
                                        replace=False)]
        if centers.shape[0] < self.C:
            centers = np.vstack([centers,
                                 np.zeros((self.C - centers.shape[0], 6))])
        labels = np.zeros(self.n, dtype=np.intp)
        for _ in range(10):
            dist = ((feats[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            labels = np.argmin(dist, axis=1)
            for c in range(self.C):
                members = feats[labels == c]
                if members.size:
                    centers[c] = members.mean(axis=0)
        return labels

    # -- per-update steps

    def _subject_loglik(self, name: str) -> np.ndarray:
        """(n, C) log likelihood of each subject's series under each class."""
        ed = self.data[name]
        st = self.state[name]
        ll = np.zeros((self.n, self.C))
        fixed = st.beta0_base * ed.baseline_obs + st.w[ed.subj]
        for c in range(self.C):
            mean = (st.beta0[c] + st.beta1[c] * ed.t + st.beta2[c] * ed.t2
                    + fixed + st.v[ed.site_obs, c])
            r = ed.val - mean
            ll[:, c] = np.bincount(ed.subj, weights=r * r, minlength=self.n)
        ll *= -0.5 * st.tau_e
        ll += 0.5 * ed.n_obs[:, None] * math.log(st.tau_e / (2.0 * math.pi))
        return ll

    def _update_z(self) -> None:
        logits = (np.log(self.pi)[None, :] + np.log(self.p)[self.site0]
                  + self._subject_loglik("x") + self._subject_loglik("y"))
        if not np.all(np.isfinite(logits)):
            raise NumericError("non-finite class log-weights")
        gumbel = self.rng.gumbel(size=logits.shape)
        self.z = np.argmax(logits + gumbel, axis=1)

    def _update_pi(self) -> None:
        counts = np.bincount(self.z, minlength=self.C)
        self.pi = self.rng.dirichlet(self.alpha / self.C + counts)

    def _update_p(self) -> None:
        counts = np.zeros((self.M, self.C))
        np.add.at(counts, (self.site0, self.z), 1.0)
        for c in range(self.C):
            self.p[:, c] = self.rng.dirichlet(1.0 + counts[:, c])

    def _update_betas(self, name: str, hyp) -> None:
        ed = self.data[name]
        st = self.state[name]
        z_obs = self.z[ed.subj]
        for c in range(self.C):
            idx = np.flatnonzero(z_obs == c)
            val = ed.val[idx]
            t = ed.t[idx]
            t2 = ed.t2[idx]
            offset = (st.beta0_base * ed.baseline_obs[idx]
                      + st.v[ed.site_obs[idx], c] + st.w[ed.subj[idx]])
            # beta0
            r = val - (st.beta1[c] * t + st.beta2[c] * t2 + offset)
            prec = st.tau0 + st.tau_e * idx.size
            st.beta0[c] = self.rng.normal(st.tau_e * r.sum() / prec,
                                          math.sqrt(1.0 / prec))
            # beta1
            r = val - (st.beta0[c] + st.beta2[c] * t2 + offset)
            prec = st.tau1 + st.tau_e * float(t @ t)
            st.beta1[c] = self.rng.normal(st.tau_e * float(t @ r) / prec,
                                          math.sqrt(1.0 / prec))
            # beta2
            r = val - (st.beta0[c] + st.beta1[c] * t + offset)
            prec = st.tau2 + st.tau_e * float(t2 @ t2)
            st.beta2[c] = self.rng.normal(st.tau_e * float(t2 @ r) / prec,
                                          math.sqrt(1.0 / prec))
        # common baseline coefficient
        mean_wo_base = (st.beta0[z_obs] + st.beta1[z_obs] * ed.t
                        + st.beta2[z_obs] * ed.t2
                        + st.v[ed.site_obs, z_obs] + st.w[ed.subj])
        r = ed.val - mean_wo_base
        b = ed.baseline_obs
        prec = st.tau_0base + st.tau_e * float(b @ b)
        mean = (st.tau_0base * hyp.mu_0base + st.tau_e * float(b @ r)) / prec
        st.beta0_base = self.rng.normal(mean, math.sqrt(1.0 / prec))

    def _fitted_fixed(self, name: str) -> np.ndarray:
        """Fixed-effect part of the mean for every observation."""
        ed = self.data[name]
        st = self.state[name]
        z_obs = self.z[ed.subj]
        return (st.beta0[z_obs] + st.beta0_base * ed.baseline_obs
                + st.beta1[z_obs] * ed.t + st.beta2[z_obs] * ed.t2)

    def _update_effects(self, name: str) -> None:
        ed = self.data[name]
        st = self.state[name]
        z_obs = self.z[ed.subj]
        fixed = self._fitted_fixed(name)
        if not self.mc.fix_site_effects:
            r = ed.val - fixed - st.w[ed.subj]
            key = ed.site_obs * self.C + z_obs
            sums = np.bincount(key, weights=r, minlength=self.M * self.C)
            counts = np.bincount(key, minlength=self.M * self.C).astype(np.float64)
            prec = st.tau_s[None, :] + st.tau_e * counts.reshape(self.M, self.C)
            mean = st.tau_e * sums.reshape(self.M, self.C) / prec
            st.v = self.rng.normal(mean, np.sqrt(1.0 / prec))
        if not self.mc.fix_subject_effects:
            r = ed.val - fixed - st.v[ed.site_obs, z_obs]
            sums = np.bincount(ed.subj, weights=r, minlength=self.n)
            prec = st.tau_w + st.tau_e * ed.n_obs
            st.w = self.rng.normal(st.tau_e * sums / prec, np.sqrt(1.0 / prec))

    def _update_precisions(self, name: str, hyp) -> None:
        ed = self.data[name]
        st = self.state[name]
        z_obs = self.z[ed.subj]
        if not self.mc.fix_site_effects:
            rate = hyp.gamma_sc + 0.5 * (st.v ** 2).sum(axis=0)
            st.tau_s = self.rng.gamma(hyp.gamma_sc + 0.5 * self.M,
                                      1.0 / rate, size=self.C)
        if not self.mc.fix_subject_effects:
            rate = hyp.gamma_w + 0.5 * float(st.w @ st.w)
            st.tau_w = self.rng.gamma(hyp.gamma_w + 0.5 * self.n, 1.0 / rate)
        if self.mc.fix_residual_precision is None:
            resid = (ed.val - self._fitted_fixed(name)
                     - st.v[ed.site_obs, z_obs] - st.w[ed.subj])
            rate = hyp.gamma_e + 0.5 * float(resid @ resid)
            st.tau_e = self.rng.gamma(hyp.gamma_e + 0.5 * ed.n_obs_total,
                                      1.0 / rate)

    def _update_alpha(self) -> None:
        lo, hi = self.mc.alpha_lo, self.mc.alpha_hi
        span = hi - lo

        def log_target(a: float) -> float:
            return (gammaln(a) - self.C * gammaln(a / self.C)
                    + (a / self.C - 1.0) * float(np.log(self.pi).sum()))

        prop = self.alpha + self.run.alpha_step * self.rng.normal()
        # reflect at the bounds until inside [lo, hi]
        while prop < lo or prop > hi:
            if prop < lo:
                prop = 2 * lo - prop
            else:
                prop = 2 * hi - prop
        assert span > 0
        self.alpha_proposed += 1
        if math.log(self.rng.uniform()) < log_target(prop) - log_target(self.alpha):
            self.alpha = prop
            self.alpha_accepted += 1

    def _update_hyper_precisions(self, name: str, hyp) -> None:
        if self.mc.fix_hyper_precisions:
            return
        st = self.state[name]
        half_c = 0.5 * self.C
        st.tau0 = self.rng.gamma(hyp.gamma_0 + half_c,
                                 1.0 / (hyp.gamma_0 + 0.5 * float(st.beta0 @ st.beta0)))
        st.tau1 = self.rng.gamma(hyp.gamma_1 + half_c,
                                 1.0 / (hyp.gamma_1 + 0.5 * float(st.beta1 @ st.beta1)))
        st.tau2 = self.rng.gamma(hyp.gamma_2 + half_c,
                                 1.0 / (hyp.gamma_2 + 0.5 * float(st.beta2 @ st.beta2)))
        dev = st.beta0_base - hyp.mu_0base
        st.tau_0base = self.rng.gamma(hyp.gamma_0base + 0.5,
                                      1.0 / (hyp.gamma_0base + 0.5 * dev * dev))

    def sweep(self) -> None:
        self._update_z()
        self._update_pi()
        self._update_p()
        for name in ENDPOINTS:
            self._update_betas(name, self.mc.hypers(name))
        for name in ENDPOINTS:
            self._update_effects(name)
        for name in ENDPOINTS:
            self._update_precisions(name, self.mc.hypers(name))
        self._update_alpha()
        for name in ENDPOINTS:
            self._update_hyper_precisions(name, self.mc.hypers(name))

    def snapshot(self) -> ParameterDraw:
        eps = {}
        for name in ENDPOINTS:
            st = self.state[name]
            eps[name] = EndpointParams(
                beta0=st.beta0.copy(), beta1=st.beta1.copy(), beta2=st.beta2.copy(),
                tau_s=st.tau_s.copy(), beta0_base=st.beta0_base,
                tau_w=st.tau_w, tau_e=st.tau_e,
                tau0=st.tau0, tau1=st.tau1, tau2=st.tau2, tau_0base=st.tau_0base,
                v=st.v.copy(), w=st.w.copy())
        return ParameterDraw(x=eps["x"], y=eps["y"], pi=self.pi.copy(),
                             p=self.p.copy(), z=self.z + 1, alpha=self.alpha)


def dataset_digest(d: Dataset) -> str:
    buf = io.StringIO()
    write_dataset_csv(d, buf)
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()


def fit(d: Dataset, mc: ModelConfig, run: McmcConfig) -> DrawStore:
    """Run the chain and return the retained post-burn-in draws."""
    violations = validate_dataset(d)
    if violations:
        raise ValidationError("invalid dataset: " + "; ".join(violations))
    if not d.subjects:
        raise ValueError("empty dataset")
    for s in d.subjects:
        if not s.series_x and not s.series_y:
            raise ValueError(f"subject {s.subject_id!r} has no observations")

    chain = _Chain(d, mc, run)
    draws = []
    total = run.burn_in + run.keep * run.thin
    for it in range(total):
        try:
            chain.sweep()
        except NumericError as exc:
            raise NumericError(f"iteration {it}: {exc}") from None
        if it >= run.burn_in and (it - run.burn_in + 1) % run.thin == 0:
            draw = chain.snapshot()
            draw.validate(mc)
            draws.append(draw)
    provenance = {
        "seed": run.seed,
        "burn_in": run.burn_in,
        "keep": run.keep,
        "thin": run.thin,
        "alpha_step": run.alpha_step,
        "dataset_digest": dataset_digest(d),
        "n_subjects": len(d.subjects),
        "n_sites": d.n_sites,
        "alpha_acceptance": (chain.alpha_accepted / chain.alpha_proposed
                             if chain.alpha_proposed else 0.0),
    }
    return DrawStore(config=mc, draws=tuple(draws), provenance=provenance)


# ---------------------------------------------------------------------------
# persistence: newline-delimited JSON, one draw per line after a header


def _config_to_dict(mc: ModelConfig) -> dict:
    out = {"n_classes": mc.n_classes, "alpha_lo": mc.alpha_lo,
           "alpha_hi": mc.alpha_hi,
           "fix_site_effects": mc.fix_site_effects,
           "fix_subject_effects": mc.fix_subject_effects,
           "fix_residual_precision": mc.fix_residual_precision,
           "fix_hyper_precisions": mc.fix_hyper_precisions}
    for name in ENDPOINTS:
        h = mc.hypers(name)
        out[name] = {k: getattr(h, k) for k in (
            "gamma_0", "gamma_1", "gamma_2", "gamma_sc", "gamma_w",
            "gamma_e", "mu_0base", "gamma_0base")}
    return out


def _config_from_dict(data: dict) -> ModelConfig:
    from .core_types import EndpointHypers
    return ModelConfig(
        n_classes=data["n_classes"],
        x=EndpointHypers(**data["x"]),
        y=EndpointHypers(**data["y"]),
        alpha_lo=data["alpha_lo"], alpha_hi=data["alpha_hi"],
        fix_site_effects=data["fix_site_effects"],
        fix_subject_effects=data["fix_subject_effects"],
        fix_residual_precision=data["fix_residual_precision"],
        fix_hyper_precisions=data["fix_hyper_precisions"])


def _draw_to_dict(draw: ParameterDraw) -> dict:
    out = {"record": "draw", "pi": draw.pi.tolist(), "p": draw.p.tolist(),
           "z": draw.z.tolist(), "alpha": draw.alpha}
    for name in ENDPOINTS:
        ep = draw.endpoint(name)
        out[name] = {
            "beta0": ep.beta0.tolist(), "beta1": ep.beta1.tolist(),
            "beta2": ep.beta2.tolist(), "tau_s": ep.tau_s.tolist(),
            "beta0_base": ep.beta0_base, "tau_w": ep.tau_w, "tau_e": ep.tau_e,
            "tau0": ep.tau0, "tau1": ep.tau1, "tau2": ep.tau2,
            "tau_0base": ep.tau_0base,
            "v": ep.v.tolist(), "w": ep.w.tolist()}
    return out


def _draw_from_dict(data: dict) -> ParameterDraw:
    eps = {}
    for name in ENDPOINTS:
        e = data[name]
        eps[name] = EndpointParams(
            beta0=np.asarray(e["beta0"]), beta1=np.asarray(e["beta1"]),
            beta2=np.asarray(e["beta2"]), tau_s=np.asarray(e["tau_s"]),
            beta0_base=e["beta0_base"], tau_w=e["tau_w"], tau_e=e["tau_e"],
            tau0=e["tau0"], tau1=e["tau1"], tau2=e["tau2"],
            tau_0base=e["tau_0base"],
            v=np.asarray(e["v"]), w=np.asarray(e["w"]))
    return ParameterDraw(x=eps["x"], y=eps["y"],
                         pi=np.asarray(data["pi"]), p=np.asarray(data["p"]),
                         z=np.asarray(data["z"], dtype=np.intp),
                         alpha=data["alpha"])


def save_drawstore(store: DrawStore, path: str) -> None:
    """Write a ``.draws.ndjson`` file atomically (temp file + rename).

    JSON float serialization uses the shortest round-trip representation,
    so reloading reproduces every value exactly.
    """
    header = {"record": "header", "format": "lcscreen-draws", "version": 1,
              "config": _config_to_dict(store.config),
              "provenance": store.provenance}
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(json.dumps(header) + "\n")
            for draw in store.draws:
                fh.write(json.dumps(_draw_to_dict(draw)) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_drawstore(path: str) -> DrawStore:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("record") != "header":
            raise ValueError("missing header record")
        draws = tuple(_draw_from_dict(json.loads(line))
                      for line in fh if line.strip())
    if not draws:
        raise ValueError("draw store holds no draws")
    return DrawStore(config=_config_from_dict(header["config"]), draws=draws,
                     provenance=header["provenance"])
