"""Synthetic pivotal-study generator with ground-truth class labels.

Generates paired longitudinal endpoints from the quadratic latent-class
model: per-class fixed curves plus site, subject, and residual noise, with
a fixed visit schedule and an early-termination mechanism (each subject
keeps at least the first few visits, and the final attended visit is drawn
from a completion distribution).

Randomness comes from ``numpy.random.default_rng`` (PCG64 seeded through
``SeedSequence``), so distinct seeds give independent streams and a fixed
seed is bit-for-bit reproducible.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .core_types import Dataset, SubjectRecord

__all__ = [
    "EndpointScheme",
    "SimScheme",
    "TruthLabels",
    "default_sim_scheme",
    "simulate_study",
    "split_train_test",
    "write_truth_csv",
    "read_truth_csv",
]


@dataclass(frozen=True)
class EndpointScheme:
    """True generating parameters for one endpoint."""

    beta0: tuple[float, ...]          # per class
    beta1: tuple[float, ...]
    beta2: tuple[float, ...]
    site_var: tuple[float, ...]       # per class, variance of the site effect
    beta0_base: float
    mu_0base: float
    tau_0base: float
    tau_w: float
    tau_e: float


@dataclass(frozen=True)
class SimScheme:
    n_sites: int
    n_subjects: int
    class_probs: tuple[float, ...]
    x: EndpointScheme
    y: EndpointScheme
    treatment_shift: tuple[float, float]  # added to placebo (beta1, beta2)
    visit_times: tuple[float, ...]
    min_postbaseline_visits: int
    final_visit_candidates: tuple[float, ...]
    completion_probs: tuple[float, ...]
    train_fraction: float = 0.7

    def __post_init__(self) -> None:
        if abs(sum(self.class_probs) - 1.0) > 1e-9:
            raise ValueError("class_probs must sum to 1")
        if abs(sum(self.completion_probs) - 1.0) > 1e-9:
            raise ValueError("completion_probs must sum to 1")
        if any(b <= a for a, b in zip(self.visit_times, self.visit_times[1:])):
            raise ValueError("visit_times must be strictly increasing")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


@dataclass(frozen=True)
class TruthLabels:
    """Sidecar ground truth; kept apart from Dataset so fitting cannot leak it."""

    subject_ids: tuple[str, ...]
    true_class: tuple[int, ...]       # 1-based
    arm: tuple[str, ...]              # "treatment" / "placebo"
    final_visit: tuple[float, ...]
    site_effects_x: np.ndarray = field(default=None, repr=False)  # (n_sites, K)
    site_effects_y: np.ndarray = field(default=None, repr=False)

    def subset(self, subject_ids: set[str]) -> "TruthLabels":
        keep = [i for i, sid in enumerate(self.subject_ids) if sid in subject_ids]
        return TruthLabels(
            subject_ids=tuple(self.subject_ids[i] for i in keep),
            true_class=tuple(self.true_class[i] for i in keep),
            arm=tuple(self.arm[i] for i in keep),
            final_visit=tuple(self.final_visit[i] for i in keep),
            site_effects_x=self.site_effects_x,
            site_effects_y=self.site_effects_y,
        )


def default_sim_scheme() -> SimScheme:
    """The reference pivotal-study scheme: 50 sites, 700 subjects, 6 classes."""
    return SimScheme(
        n_sites=50,
        n_subjects=700,
        class_probs=(1 / 8, 1 / 8, 1 / 4, 1 / 4, 1 / 8, 1 / 8),
        x=EndpointScheme(
            beta0=(1.74, -0.10, 5.53, 1.01, 2.16, 6.51),
            beta1=(-0.38, -0.17, -1.18, -0.19, -0.07, 0.16),
            beta2=(0.016, 0.007, 0.049, 0.011, 0.023, -0.006),
            site_var=(0.75, 0.75, 1.25, 1.25, 2.0, 2.0),
            beta0_base=-0.4,
            mu_0base=10.0,
            tau_0base=1 / 12,
            tau_w=1.0,
            tau_e=1.0,
        ),
        y=EndpointScheme(
            beta0=(4.05, -0.69, 10.52, 2.37, 4.02, 10.73),
            beta1=(-0.81, -0.43, -0.67, -0.26, 0.11, 0.17),
            beta2=(0.032, 0.017, 0.000, 0.017, 0.018, -0.011),
            site_var=(0.9375, 0.9375, 1.5625, 1.5625, 2.5, 2.5),
            beta0_base=-0.6,
            mu_0base=16.0,
            tau_0base=1 / 12,
            tau_w=1.25,
            tau_e=1.25,
        ),
        treatment_shift=(0.25, -0.0025),
        visit_times=(2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0),
        min_postbaseline_visits=3,
        final_visit_candidates=(6.0, 8.0, 10.0, 12.0, 14.0),
        completion_probs=(0.01, 0.02, 0.04, 0.08, 0.85),
        train_fraction=0.7,
    )


def scaled_sim_scheme(n_subjects: int, n_sites: int) -> SimScheme:
    """Reference scheme with the study size overridden."""
    return replace(default_sim_scheme(), n_subjects=n_subjects, n_sites=n_sites)


def simulate_study(scheme: SimScheme, seed: int) -> tuple[Dataset, TruthLabels]:
    """Draw one synthetic study.

    Site-assignment probabilities are drawn once from a flat Dirichlet and
    then fixed; each subject gets a class, an arm (fair coin), baselines,
    site/subject effects, and a quadratic trajectory with residual noise.
    Placebo subjects get the treatment shift added to their class's
    (beta1, beta2) on both endpoints.
    """
    rng = np.random.default_rng(seed)
    n = scheme.n_subjects
    n_classes = len(scheme.class_probs)

    site_probs = rng.dirichlet(np.ones(scheme.n_sites))
    sites = rng.choice(scheme.n_sites, size=n, p=site_probs)          # 0-based
    classes = rng.choice(n_classes, size=n, p=np.asarray(scheme.class_probs))
    arms = rng.integers(0, 2, size=n)                                 # 1 = treatment

    per_endpoint = {}
    for name, ep in (("x", scheme.x), ("y", scheme.y)):
        per_endpoint[name] = {
            "baseline": rng.normal(ep.mu_0base, np.sqrt(1.0 / ep.tau_0base), size=n),
            # one effect realization per (site, class), with that class's variance
            "v": rng.normal(0.0, 1.0, size=(scheme.n_sites, n_classes))
                 * np.sqrt(np.asarray(ep.site_var)),
            "w": rng.normal(0.0, np.sqrt(1.0 / ep.tau_w), size=n),
        }

    finals = rng.choice(np.asarray(scheme.final_visit_candidates), size=n,
                        p=np.asarray(scheme.completion_probs))

    visit_times = np.asarray(scheme.visit_times)
    shift1, shift2 = scheme.treatment_shift
    subjects = []
    width = max(4, len(str(n)))
    for i in range(n):
        times = visit_times[visit_times <= finals[i]]
        c = classes[i]
        series = {}
        for name, ep in (("x", scheme.x), ("y", scheme.y)):
            parts = per_endpoint[name]
            b1 = ep.beta1[c] + (shift1 if arms[i] == 0 else 0.0)
            b2 = ep.beta2[c] + (shift2 if arms[i] == 0 else 0.0)
            mean = (ep.beta0[c] + ep.beta0_base * parts["baseline"][i]
                    + b1 * times + b2 * times ** 2)
            noise = rng.normal(0.0, np.sqrt(1.0 / ep.tau_e), size=times.size)
            values = mean + parts["v"][sites[i], c] + parts["w"][i] + noise
            series[name] = tuple(zip(times.tolist(), values.tolist()))
        subjects.append(SubjectRecord(
            subject_id=f"S{i + 1:0{width}d}",
            site=int(sites[i]) + 1,
            baseline_x=float(per_endpoint["x"]["baseline"][i]),
            baseline_y=float(per_endpoint["y"]["baseline"][i]),
            series_x=series["x"],
            series_y=series["y"],
            arm="treatment" if arms[i] == 1 else "placebo",
        ))

    dataset = Dataset(subjects=tuple(subjects), n_sites=scheme.n_sites,
                      metadata={"generator": "simgen", "seed": str(seed)})
    labels = TruthLabels(
        subject_ids=tuple(s.subject_id for s in subjects),
        true_class=tuple(int(c) + 1 for c in classes),
        arm=tuple(s.arm for s in subjects),
        final_visit=tuple(float(f) for f in finals),
        site_effects_x=per_endpoint["x"]["v"],
        site_effects_y=per_endpoint["y"]["v"],
    )
    return dataset, labels


def split_train_test(d: Dataset, labels: TruthLabels, fraction: float,
                     seed: int) -> tuple[Dataset, Dataset, TruthLabels, TruthLabels]:
    """Subject-level random split; train size is round(n * fraction)."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    n = len(d.subjects)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(n * fraction))
    train_idx = set(perm[:n_train].tolist())
    train = tuple(s for i, s in enumerate(d.subjects) if i in train_idx)
    test = tuple(s for i, s in enumerate(d.subjects) if i not in train_idx)
    train_ds = Dataset(subjects=train, n_sites=d.n_sites, metadata=dict(d.metadata))
    test_ds = Dataset(subjects=test, n_sites=d.n_sites, metadata=dict(d.metadata))
    train_ids = {s.subject_id for s in train}
    test_ids = {s.subject_id for s in test}
    return train_ds, test_ds, labels.subset(train_ids), labels.subset(test_ids)


def write_truth_csv(labels: TruthLabels, sink: io.TextIOBase) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["subject_id", "true_class", "arm", "final_visit"])
    for sid, c, arm, fv in zip(labels.subject_ids, labels.true_class,
                               labels.arm, labels.final_visit):
        writer.writerow([sid, c, arm, repr(fv)])


def read_truth_csv(source: io.TextIOBase | str) -> TruthLabels:
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source)
    rows = list(reader)
    return TruthLabels(
        subject_ids=tuple(r["subject_id"] for r in rows),
        true_class=tuple(int(r["true_class"]) for r in rows),
        arm=tuple(r["arm"] for r in rows),
        final_visit=tuple(float(r["final_visit"]) for r in rows),
    )
