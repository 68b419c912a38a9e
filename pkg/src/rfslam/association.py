"""Data association: local weights, cost matrix, ranked k-best assignment.

Each previously detected landmark can be detected again, misdetected, or a
measurement can start a new landmark (or be clutter).  The resulting
assignment problem is solved for the best ``gamma`` associations per global
hypothesis by Murty's ranked partitioning on top of an optimal-assignment
kernel (scipy's Jonker-Volgenant-style solver), in negative-log-weight
(cost) domain.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linear_sum_assignment

from .density import Bernoulli, GaussianComponent, GlobalHypothesis
from .geometry import DegenerateGeometryError, LandmarkType

LOG_2PI = math.log(2.0 * math.pi)

#: Default ellipsoidal gate on squared Mahalanobis innovation distance.
DEFAULT_GATE = 30.0


class InfeasibleAssignmentError(ValueError):
    """A measurement row admits no finite-cost assignment."""


def chol_logpdf(residual: np.ndarray, cov: np.ndarray) -> tuple[float, float]:
    """(log Gaussian density, squared Mahalanobis) of a residual.

    Raises LinAlgError with context when the covariance is not positive
    definite.
    """
    try:
        factor = cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"singular innovation covariance ({cov.shape[0]}x{cov.shape[0]}): {exc}"
        ) from exc
    mahal = float(residual @ cho_solve(factor, residual))
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    k = residual.size
    return -0.5 * (k * LOG_2PI + logdet + mahal), mahal


@dataclass(frozen=True)
class TypePrediction:
    """Per-type predicted measurement and its sensor+landmark covariance part."""

    p_detect: float
    z_pred: Optional[np.ndarray]   # None when the geometry is degenerate
    hph: Optional[np.ndarray]      # H blkdiag(P, C) H^T (without R)
    H_s: Optional[np.ndarray] = None
    H_x: Optional[np.ndarray] = None


def predict_types(bern: Bernoulli, sensor: GaussianComponent, model) -> dict:
    """Predicted measurement statistics for every type of a Bernoulli."""
    preds = {}
    for kind, comp in bern.belief.types.items():
        pd = model.detection_probability(sensor.mean, comp.mean, kind)
        try:
            z_pred = model.predict(sensor.mean, comp.mean, kind)
            H_s, H_x = model.jacobians(sensor.mean, comp.mean, kind)
        except DegenerateGeometryError:
            preds[kind] = TypePrediction(0.0, None, None)
            continue
        hph = H_s @ sensor.covariance @ H_s.T + H_x @ comp.covariance @ H_x.T
        preds[kind] = TypePrediction(pd, z_pred, hph, H_s, H_x)
    return preds


def weight_detected(prior: Bernoulli, meas, sensor: GaussianComponent,
                    model) -> float:
    """Local weight for "detected again": r * sum_type psi pd N(z; h, S)."""
    preds = predict_types(prior, sensor, model)
    total = 0.0
    for kind, comp in prior.belief.types.items():
        pred = preds[kind]
        if pred.p_detect <= 0.0 or comp.weight <= 0.0 or pred.z_pred is None:
            continue
        S = pred.hph + meas.covariance
        v = model.wrap_residual(meas.z - pred.z_pred)
        loglik, _ = chol_logpdf(v, S)
        total += comp.weight * pred.p_detect * math.exp(loglik)
    return prior.existence * total


def weight_misdetected(prior: Bernoulli, sensor: GaussianComponent,
                       model) -> float:
    """Local weight for "not detected": (1 - r) + r sum_type psi (1 - pd)."""
    survive = 0.0
    for kind, comp in prior.belief.types.items():
        pd = min(model.detection_probability(sensor.mean, comp.mean, kind),
                 1.0 - 1e-9)
        survive += comp.weight * (1.0 - pd)
    return (1.0 - prior.existence) + prior.existence * survive


@dataclass(frozen=True)
class BirthCandidate:
    """Everything needed to append a newborn Bernoulli for one measurement."""

    meas_index: int            # 0-based measurement index
    log_weight: float          # ln l_B = ln(clutter + sum_type rho)
    existence: float           # rho_B / l_B
    types: dict                # LandmarkType -> TypeComponent (psi_B, mean, cov)
    rho_by_type: dict          # LandmarkType -> rho contribution


def weight_birth(meas, sensor: GaussianComponent, ppp: dict,
                 clutter_intensity: float, model,
                 birth_types=None, meas_index: int = 0):
    """Local weight for "detected for the first time" plus birth data.

    Returns ``(l_birth, BirthCandidate)``.  Types whose geometric inversion
    fails contribute nothing; when no type survives the measurement is
    clutter-only (weight floor ``clutter_intensity``).
    """
    from .update import birth_from_measurement  # deferred: avoids module cycle
    from .density import TypeComponent

    if clutter_intensity < 0.0:
        raise ValueError("clutter intensity must be nonnegative")
    if birth_types is None:
        birth_types = [k for k, rate in ppp.items()
                       if rate > 0.0 and k is not LandmarkType.BS]
    rho = {}
    comps = {}
    for kind in birth_types:
        rate = ppp.get(kind, 0.0)
        if rate <= 0.0:
            continue
        component = birth_from_measurement(meas, sensor, kind, model)
        if component is None:
            continue
        pd = model.detection_probability(sensor.mean, component.mean, kind)
        if pd <= 0.0:
            continue
        try:
            z_pred = model.predict(sensor.mean, component.mean, kind)
            H_s, H_x = model.jacobians(sensor.mean, component.mean, kind)
        except DegenerateGeometryError:
            continue
        S = (H_s @ sensor.covariance @ H_s.T
             + H_x @ component.covariance @ H_x.T + meas.covariance)
        v = model.wrap_residual(meas.z - z_pred)
        loglik, _ = chol_logpdf(v, S)
        rho[kind] = rate * pd * math.exp(loglik)
        comps[kind] = component
    rho_total = sum(rho.values())
    weight = clutter_intensity + rho_total
    types = {}
    if rho_total > 0.0:
        from .multimodel import birth_type_probs
        psi = birth_type_probs(rho)
        types = {k: TypeComponent(psi[k], comps[k].mean, comps[k].covariance)
                 for k in rho}
    existence = rho_total / weight if weight > 0.0 else 0.0
    log_weight = math.log(weight) if weight > 0.0 else -math.inf
    return weight, BirthCandidate(meas_index, log_weight, existence, types, rho)


@dataclass(frozen=True)
class CostMatrix:
    """Negative-log-weight assignment costs.

    Rows are measurements; the first ``n_prior`` columns are previously
    detected landmarks (costs of detected-again over misdetected), the
    trailing square block is diagonal with new-landmark costs and +inf
    elsewhere.
    """

    matrix: np.ndarray
    n_prior: int

    @property
    def n_meas(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class AssociationVector:
    """Slot-to-measurement mapping for one data association.

    ``sigma`` has one entry per prior landmark then one per measurement
    (birth slots).  Prior entries are 1-based measurement indices or 0 for
    misdetection; birth entries are the slot's own measurement index or
    None when no landmark is born.
    """

    n_prior: int
    sigma: tuple

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(self.sigma))

    @property
    def n_meas(self) -> int:
        return len(self.sigma) - self.n_prior

    def detected_pairs(self):
        """0-based (landmark, measurement) pairs for re-detections."""
        return [(i, p - 1) for i, p in enumerate(self.sigma[:self.n_prior])
                if p and p > 0]

    def misdetected(self):
        return [i for i, p in enumerate(self.sigma[:self.n_prior]) if p == 0]

    def born_measurements(self):
        """0-based measurement indices that spawn a new landmark."""
        return [p - 1 for p in self.sigma[self.n_prior:] if p is not None]

    def validate(self) -> None:
        seen = []
        for t, entry in enumerate(self.sigma):
            if t < self.n_prior:
                if entry is None or entry < 0 or entry > self.n_meas:
                    raise ValueError(f"bad prior-slot entry {entry!r}")
                if entry > 0:
                    seen.append(entry)
            else:
                expected = t - self.n_prior + 1
                if entry is not None and entry != expected:
                    raise ValueError(f"birth slot {t} must map to {expected}")
                if entry is not None:
                    seen.append(entry)
        if sorted(seen) != list(range(1, self.n_meas + 1)):
            raise ValueError("each measurement must appear exactly once")


@dataclass(frozen=True)
class AssociationContext:
    """Reusable per-hypothesis association statistics.

    Collected while building the cost matrix so the joint update and the
    type-probability updates do not recompute predictions.
    """

    type_preds: tuple        # per landmark: dict kind -> TypePrediction
    pair_logliks: dict       # (landmark, measurement) -> dict kind -> loglik
    log_misdetect: tuple     # per landmark: ln l^{i,0}
    births: tuple            # per measurement: BirthCandidate


def build_cost_matrix(hypothesis: GlobalHypothesis, measurements,
                      sensor: GaussianComponent, ppp: dict,
                      clutter_intensity: float, model,
                      gate: Optional[float] = DEFAULT_GATE,
                      birth_types=None):
    """Assemble the assignment costs for one global hypothesis.

    Returns ``(CostMatrix, misdetect_log_sum, AssociationContext)`` where
    the second element, sum_i ln l^{i,0}, recovers unnormalized hypothesis
    weights from assignment costs.
    """
    berns = hypothesis.bernoullis
    n_prior, n_meas = len(berns), len(measurements)
    matrix = np.full((n_meas, n_prior + n_meas), np.inf)

    type_preds = tuple(predict_types(b, sensor, model) for b in berns)
    log_misdetect = []
    pair_logliks = {}
    for i, bern in enumerate(berns):
        l0 = 0.0
        for kind, comp in bern.belief.types.items():
            pd = min(type_preds[i][kind].p_detect, 1.0 - 1e-9)
            l0 += comp.weight * (1.0 - pd)
        l0 = (1.0 - bern.existence) + bern.existence * l0
        log_l0 = math.log(l0)
        log_misdetect.append(log_l0)
        if bern.existence <= 0.0:
            continue
        for p, meas in enumerate(measurements):
            terms = []
            logliks = {}
            best_mahal = np.inf
            for kind, comp in bern.belief.types.items():
                pred = type_preds[i][kind]
                if pred.p_detect <= 0.0 or comp.weight <= 0.0 or pred.z_pred is None:
                    continue
                S = pred.hph + meas.covariance
                v = model.wrap_residual(meas.z - pred.z_pred)
                loglik, mahal = chol_logpdf(v, S)
                logliks[kind] = loglik
                best_mahal = min(best_mahal, mahal)
                terms.append(math.log(comp.weight) + math.log(pred.p_detect)
                             + loglik)
            if not terms or (gate is not None and best_mahal > gate):
                continue
            log_l = math.log(bern.existence) + _logsumexp(terms)
            pair_logliks[(i, p)] = logliks
            matrix[p, i] = log_l0 - log_l

    births = []
    for p, meas in enumerate(measurements):
        _, cand = weight_birth(meas, sensor, ppp, clutter_intensity, model,
                               birth_types=birth_types, meas_index=p)
        births.append(cand)
        matrix[p, n_prior + p] = -cand.log_weight

    ctx = AssociationContext(type_preds=type_preds, pair_logliks=pair_logliks,
                             log_misdetect=tuple(log_misdetect), births=tuple(births))
    return CostMatrix(matrix, n_prior), float(sum(log_misdetect)), ctx


def _logsumexp(terms) -> float:
    m = max(terms)
    if not math.isfinite(m):
        return m
    return m + math.log(sum(math.exp(t - m) for t in terms))


def _solve_assignment(matrix: np.ndarray):
    """Optimal assignment or None when infeasible; deterministic."""
    try:
        rows, cols = linear_sum_assignment(matrix)
    except ValueError:
        return None
    cost = float(matrix[rows, cols].sum())
    if not math.isfinite(cost):
        return None
    assignment = np.empty(matrix.shape[0], dtype=int)
    assignment[rows] = cols
    return assignment, cost


def _sigma_from_assignment(assignment: np.ndarray, n_prior: int,
                           n_meas: int) -> AssociationVector:
    sigma = [0] * n_prior + [None] * n_meas
    for r in range(n_meas):
        c = int(assignment[r])
        if c < n_prior:
            sigma[c] = r + 1
        else:
            # Birth block: the diagonal structure ties column to row.
            sigma[n_prior + r] = r + 1
    return AssociationVector(n_prior, tuple(sigma))


def murty_kbest(costs: CostMatrix, gamma: int):
    """Ranked ``gamma``-best data associations by nondecreasing total cost.

    The first solution is the optimal assignment.  Ties are resolved by
    expansion order, which is deterministic.
    """
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    n_meas, n_cols = costs.matrix.shape
    n_prior = costs.n_prior
    if n_meas == 0:
        return [(AssociationVector(n_prior, (0,) * n_prior), 0.0)]
    if np.any(~np.isfinite(costs.matrix.min(axis=1))):
        raise InfeasibleAssignmentError("a measurement row has no finite cost")

    first = _solve_assignment(costs.matrix)
    if first is None:
        raise InfeasibleAssignmentError("no feasible assignment exists")

    counter = 0
    heap = []
    heapq.heappush(heap, (first[1], counter, costs.matrix, first[0]))
    results = []
    while heap and len(results) < gamma:
        cost, _, matrix, assignment = heapq.heappop(heap)
        results.append((_sigma_from_assignment(assignment, n_prior, n_meas),
                        float(cost)))
        # Partition: child k forbids assignment pair k and forces pairs < k.
        partition = matrix
        for r in range(n_meas):
            c = int(assignment[r])
            child = partition.copy()
            child[r, c] = np.inf
            solved = _solve_assignment(child)
            if solved is not None:
                counter += 1
                heapq.heappush(heap, (solved[1], counter, child, solved[0]))
            # Force (r, c) for subsequent children.
            partition = partition.copy()
            forced_value = partition[r, c]
            partition[r, :] = np.inf
            partition[:, c] = np.inf
            partition[r, c] = forced_value
    return results


def hypothesis_weights(parent_weight: float, solutions,
                       misdetect_constant: float):
    """Unnormalized child-hypothesis weights, one per ranked association.

    Proportional to ``parent_weight * exp(misdetect_constant - cost)``; the
    caller normalizes jointly across every parent's children.
    """
    if not solutions:
        raise ValueError("need at least one association solution")
    return [parent_weight * math.exp(misdetect_constant - cost)
            for _, cost in solutions]
