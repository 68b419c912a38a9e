"""RFS density containers and reduction primitives.

The landmark map is represented as a Poisson multi-Bernoulli mixture: a
uniform-intensity Poisson point process per landmark type for undetected
landmarks, plus a weighted mixture of multi-Bernoulli hypotheses for
landmarks detected at least once.  Each Bernoulli carries an existence
probability and, per landmark type, a type probability with a Gaussian
over the 3-D position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any, Optional

import numpy as np

from .geometry import TYPE_ORDER, LandmarkType


class DegenerateDensityError(ValueError):
    """All probability mass vanished (no hypotheses or all-zero weights)."""


def symmetrize(cov: np.ndarray) -> np.ndarray:
    """Numerical hygiene after updates: (C + C^T) / 2."""
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class GaussianComponent:
    """Gaussian belief with mean vector and covariance matrix."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "covariance",
                           np.asarray(self.covariance, dtype=float))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class TypeComponent:
    """One landmark type's share of a belief: probability + position Gaussian."""

    weight: float
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "covariance",
                           np.asarray(self.covariance, dtype=float))


def _ordered_types(types: dict) -> dict:
    return {k: types[k] for k in TYPE_ORDER if k in types}


@dataclass(frozen=True)
class LandmarkBelief:
    """Mixture over landmark types; type probabilities sum to one."""

    types: dict  # LandmarkType -> TypeComponent

    def __post_init__(self):
        object.__setattr__(self, "types", _ordered_types(self.types))

    def type_probs(self) -> dict:
        return {k: c.weight for k, c in self.types.items()}

    def dominant_type(self) -> LandmarkType:
        return max(self.types, key=lambda k: self.types[k].weight)

    def dominant(self) -> TypeComponent:
        return self.types[self.dominant_type()]

    @classmethod
    def single(cls, kind: LandmarkType, mean, covariance) -> "LandmarkBelief":
        return cls({kind: TypeComponent(1.0, mean, covariance)})


@dataclass(frozen=True)
class Bernoulli:
    """A potentially existing landmark: existence probability + belief."""

    existence: float
    belief: LandmarkBelief


@dataclass(frozen=True)
class GlobalHypothesis:
    """One data-association hypothesis: weight + its Bernoulli components.

    ``assoc`` optionally records the association vector that produced this
    hypothesis within the current step (needed by the PMB reduction).
    """

    weight: float
    bernoullis: tuple
    assoc: Optional[Any] = None

    def __post_init__(self):
        object.__setattr__(self, "bernoullis", tuple(self.bernoullis))


@dataclass(frozen=True)
class PmbmDensity:
    """PPP intensity rates per type plus the weighted hypothesis mixture."""

    ppp_intensity: dict  # LandmarkType -> rate (expected landmarks / volume)
    hypotheses: tuple

    def __post_init__(self):
        object.__setattr__(self, "ppp_intensity",
                           _ordered_types(dict(self.ppp_intensity)))
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))

    def best_hypothesis(self) -> GlobalHypothesis:
        return max(self.hypotheses, key=lambda h: h.weight)


#: Default map-region volume for the uniform PPP: x, y in [-200, 200] m,
#: z in [0, 40] m.
MAP_REGION_VOLUME = 400.0 * 400.0 * 40.0


def default_ppp_intensity(expected_undetected: float = 10.0,
                          volume: float = MAP_REGION_VOLUME) -> dict:
    """Uniform birth intensity: zero for the known BS, equal for VA and SP."""
    rate = expected_undetected / volume
    return {LandmarkType.BS: 0.0, LandmarkType.VA: rate, LandmarkType.SP: rate}


def normalize_weights(density: PmbmDensity) -> PmbmDensity:
    """Rescale hypothesis weights to sum to one."""
    if not density.hypotheses:
        raise DegenerateDensityError("no hypotheses to normalize")
    total = sum(h.weight for h in density.hypotheses)
    if total <= 0.0:
        raise DegenerateDensityError("all hypothesis weights are zero")
    hyps = tuple(replace(h, weight=h.weight / total) for h in density.hypotheses)
    return replace(density, hypotheses=hyps)


def prune(density: PmbmDensity, bernoulli_threshold: float,
          hypothesis_threshold: float, max_hypotheses: int) -> PmbmDensity:
    """Drop low-existence Bernoullis and low-weight hypotheses, cap, renormalize."""
    if not (0.0 <= bernoulli_threshold < 1.0 and 0.0 <= hypothesis_threshold < 1.0):
        raise ValueError("thresholds must lie in [0, 1)")
    kept = []
    for hyp in density.hypotheses:
        berns = tuple(b for b in hyp.bernoullis
                      if b.existence >= bernoulli_threshold)
        kept.append(replace(hyp, bernoullis=berns))
    kept = [h for h in kept if h.weight >= hypothesis_threshold]
    kept.sort(key=lambda h: -h.weight)
    kept = kept[:max_hypotheses]
    if not kept:
        raise DegenerateDensityError("pruning removed every hypothesis")
    return normalize_weights(replace(density, hypotheses=tuple(kept)))


def _merge_pair_gate(a: Bernoulli, b: Bernoulli, threshold: float) -> bool:
    ka, kb = a.belief.dominant_type(), b.belief.dominant_type()
    if ka is not kb:
        return False
    ca, cb = a.belief.types[ka], b.belief.types[kb]
    d = ca.mean - cb.mean
    try:
        da = float(d @ np.linalg.solve(ca.covariance, d))
        db = float(d @ np.linalg.solve(cb.covariance, d))
    except np.linalg.LinAlgError:
        return False
    return max(da, db) <= threshold


def _moment_match_types(members: list) -> LandmarkBelief:
    """Existence-and-type-weighted moment matching of Bernoulli beliefs."""
    total_r = sum(b.existence for b in members)
    types = {}
    for kind in TYPE_ORDER:
        weights, comps = [], []
        for b in members:
            comp = b.belief.types.get(kind)
            if comp is None:
                continue
            weights.append(b.existence * comp.weight)
            comps.append(comp)
        if not comps:
            continue
        wsum = sum(weights)
        psi = wsum / total_r if total_r > 0 else 0.0
        if wsum <= 0.0:
            types[kind] = TypeComponent(psi, comps[0].mean, comps[0].covariance)
            continue
        mean = sum(w * c.mean for w, c in zip(weights, comps)) / wsum
        cov = sum(w * (c.covariance + np.outer(c.mean - mean, c.mean - mean))
                  for w, c in zip(weights, comps)) / wsum
        types[kind] = TypeComponent(psi, mean, symmetrize(cov))
    return LandmarkBelief(types)


def merge_bernoullis(hypothesis: GlobalHypothesis,
                     mahalanobis_threshold: float) -> GlobalHypothesis:
    """Merge same-dominant-type Bernoullis that are statistically close.

    The gate is the symmetrized squared Mahalanobis distance between the
    dominant-type position means (evaluated under each covariance, maximum
    taken).  Merged components are moment matched with existence-and-type
    weights; existence adds up, clamped at one.
    """
    if mahalanobis_threshold <= 0.0:
        raise ValueError("merge threshold must be positive")
    remaining = list(hypothesis.bernoullis)
    merged = []
    while remaining:
        # Seed with the strongest remaining component for determinism.
        seed_idx = max(range(len(remaining)),
                       key=lambda i: remaining[i].existence)
        seed = remaining.pop(seed_idx)
        group = [seed]
        rest = []
        for b in remaining:
            if _merge_pair_gate(seed, b, mahalanobis_threshold):
                group.append(b)
            else:
                rest.append(b)
        remaining = rest
        if len(group) == 1:
            merged.append(seed)
            continue
        r = min(1.0, sum(b.existence for b in group))
        merged.append(Bernoulli(r, _moment_match_types(group)))
    return replace(hypothesis, bernoullis=tuple(merged))


# ---------------------------------------------------------------------------
# Validation helpers (used by the invariant test suite)

def check_density(density: PmbmDensity, tol: float = 1e-9) -> None:
    """Raise AssertionError when a structural invariant is violated."""
    weights = [h.weight for h in density.hypotheses]
    assert abs(sum(weights) - 1.0) <= tol, "hypothesis weights must sum to 1"
    for rate in density.ppp_intensity.values():
        assert rate >= 0.0, "PPP intensity must be nonnegative"
    for hyp in density.hypotheses:
        for bern in hyp.bernoullis:
            assert -tol <= bern.existence <= 1.0 + tol, "existence out of [0, 1]"
            psis = list(bern.belief.type_probs().values())
            assert abs(sum(psis) - 1.0) <= tol, "type probabilities must sum to 1"
            for comp in bern.belief.types.values():
                c = comp.covariance
                assert np.max(np.abs(c - c.T)) <= tol, "covariance asymmetric"
                assert np.min(np.linalg.eigvalsh(symmetrize(c))) >= -tol, \
                    "covariance indefinite"


# ---------------------------------------------------------------------------
# JSON serialization

def density_to_dict(density: PmbmDensity) -> dict:
    return {
        "ppp": {k.value: v for k, v in density.ppp_intensity.items()},
        "hypotheses": [
            {
                "weight": h.weight,
                "bernoullis": [
                    {
                        "r": b.existence,
                        "types": {
                            k.value: {
                                "psi": c.weight,
                                "mean": c.mean.tolist(),
                                "cov": c.covariance.tolist(),
                            }
                            for k, c in b.belief.types.items()
                        },
                    }
                    for b in h.bernoullis
                ],
            }
            for h in density.hypotheses
        ],
    }


def density_from_dict(doc: dict) -> PmbmDensity:
    hyps = []
    for h in doc["hypotheses"]:
        berns = []
        for b in h["bernoullis"]:
            types = {
                LandmarkType(k): TypeComponent(
                    v["psi"], np.array(v["mean"]), np.array(v["cov"]))
                for k, v in b["types"].items()
            }
            berns.append(Bernoulli(b["r"], LandmarkBelief(types)))
        hyps.append(GlobalHypothesis(h["weight"], tuple(berns)))
    ppp = {LandmarkType(k): v for k, v in doc["ppp"].items()}
    return PmbmDensity(ppp, tuple(hyps))


def save_density(density: PmbmDensity, path) -> None:
    with open(path, "w") as fh:
        json.dump(density_to_dict(density), fh, indent=2, sort_keys=True)


def load_density(path) -> PmbmDensity:
    with open(path) as fh:
        return density_from_dict(json.load(fh))
