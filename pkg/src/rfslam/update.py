"""Filter core: EK prediction, joint sensor-landmark update, step loop.

One step runs the recursion: predict the sensor through the constant-turn
model (the map is static, so its prediction is the identity), then for each
global hypothesis build the association cost matrix, rank the best
``gamma`` associations, and perform a joint extended-Kalman update of the
sensor together with every re-detected landmark (all landmark types
stacked, the measurement replicated per type with a fully correlated noise
block).  Newborn landmarks are appended from measurement inversions; the
sensor posterior is the moment-matched mixture over all children.  In PMB
mode the resulting mixture is reduced back to a single hypothesis by the
track-oriented recombination in :mod:`rfslam.reduction`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import association as assoc_mod
from .association import (
    AssociationContext,
    AssociationVector,
    build_cost_matrix,
    murty_kbest,
    predict_types,
)
from .density import (
    Bernoulli,
    DegenerateDensityError,
    GaussianComponent,
    GlobalHypothesis,
    LandmarkBelief,
    PmbmDensity,
    TypeComponent,
    merge_bernoullis,
    prune,
    symmetrize,
)
from .geometry import DegenerateGeometryError, LandmarkType, wrap_angle
from .multimodel import TypePosteriorInput, update_type_probs

EK_PMB = "ek-pmb"
EK_PMBM = "ek-pmbm"


@dataclass(frozen=True)
class FilterConfig:
    """Everything a filter step needs besides the densities themselves."""

    model: object                       # measurement model (e.g. ChannelModel)
    process_noise: np.ndarray           # Q over the 5-D sensor state
    speed: float = 22.22                # translation speed (m/s)
    turn_rate: float = math.pi / 10.0   # rad/s
    dt: float = 0.5                     # sampling interval (s)
    gamma: int = 10                     # ranked associations per hypothesis
    filter_kind: str = EK_PMB
    clutter_intensity: float = 1.0 / (800.0 * math.pi ** 4)
    ppp_rates: dict = field(default_factory=dict)
    prune_existence: float = 1e-4
    prune_hypothesis: float = 1e-4
    max_hypotheses: int = 50
    merge_threshold: float = 50.0
    gate: Optional[float] = assoc_mod.DEFAULT_GATE
    birth_types: tuple = (LandmarkType.VA, LandmarkType.SP)
    multi_model: bool = True            # False: hard type decision at birth
    misdetect_psi_printed: bool = False
    joseph_form: bool = False
    # Per-type constants for PPP thinning.  None derives them from the
    # model: the per-type detection probability, scaled for SPs by the
    # FOV-to-region volume fraction (an undetected SP drawn uniformly over
    # the region is almost surely outside the field of view, so its
    # intensity must not decay at the in-FOV rate).
    thinning_p_detect: Optional[dict] = None
    region_volume: float = 400.0 * 400.0 * 40.0
    # Landmark-type components below this posterior probability are dropped
    # (their replicated measurement rows would otherwise keep enforcing a
    # stale zero-noise cross-type constraint on the sensor).  0 keeps every
    # type component forever.
    type_prune: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "process_noise",
                           np.asarray(self.process_noise, dtype=float))
        if self.dt < 0.0:
            raise ValueError("dt must be nonnegative")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.filter_kind not in (EK_PMB, EK_PMBM):
            raise ValueError(f"unknown filter kind {self.filter_kind!r}")


def sensor_transition(state: np.ndarray, config: FilterConfig) -> np.ndarray:
    """Constant turn-rate transition of [x, y, z, heading, bias]."""
    x, y, z, heading, bias = state
    w, dt = config.turn_rate, config.dt
    if abs(w) < 1e-9:
        dx = config.speed * dt * math.cos(heading)
        dy = config.speed * dt * math.sin(heading)
        d_heading = w * dt
    else:
        ratio = config.speed / w
        dx = ratio * (math.sin(heading + w * dt) - math.sin(heading))
        dy = ratio * (-math.cos(heading + w * dt) + math.cos(heading))
        d_heading = w * dt
    return np.array([x + dx, y + dy, z, wrap_angle(heading + d_heading), bias])


def sensor_transition_jacobian(state: np.ndarray,
                               config: FilterConfig) -> np.ndarray:
    heading = state[3]
    w, dt = config.turn_rate, config.dt
    F = np.eye(5)
    if abs(w) < 1e-9:
        F[0, 3] = -config.speed * dt * math.sin(heading)
        F[1, 3] = config.speed * dt * math.cos(heading)
    else:
        ratio = config.speed / w
        F[0, 3] = ratio * (math.cos(heading + w * dt) - math.cos(heading))
        F[1, 3] = ratio * (math.sin(heading + w * dt) - math.sin(heading))
    return F


def predict_sensor(belief: GaussianComponent,
                   config: FilterConfig) -> GaussianComponent:
    """EK prediction through the turn model: mean v(m), covariance FPF^T + Q."""
    mean = sensor_transition(belief.mean, config)
    F = sensor_transition_jacobian(belief.mean, config)
    cov = symmetrize(F @ belief.covariance @ F.T + config.process_noise)
    return GaussianComponent(mean, cov)


def predict_map(density: PmbmDensity) -> PmbmDensity:
    """Landmarks are static: the map prediction is the identity."""
    return density


def thin_ppp(ppp: dict, config: FilterConfig) -> dict:
    """Scale undetected-landmark rates by the constant misdetection mass."""
    p_detect = config.thinning_p_detect
    if p_detect is None:
        p_detect = dict(getattr(config.model, "p_detect", {}))
        fov = getattr(config.model, "fov_radius", None)
        if fov is not None and LandmarkType.SP in p_detect:
            half_ball = (2.0 / 3.0) * math.pi * fov ** 3
            fraction = min(1.0, half_ball / config.region_volume)
            p_detect[LandmarkType.SP] = p_detect[LandmarkType.SP] * fraction
    return {kind: rate * (1.0 - p_detect.get(kind, 0.0))
            for kind, rate in ppp.items()}


def birth_from_measurement(meas, sensor: GaussianComponent,
                           kind: LandmarkType, model):
    """Newborn landmark Gaussian from a single measurement.

    Mean by geometric inversion at the sensor mean; covariance from the
    infinite-prior EK update, i.e. the inverse Fisher-style form
    (Hx^T (Hs P Hs^T + R)^-1 Hx)^-1.  Returns None when the measurement
    does not determine a position (caller treats it as clutter-only).
    """
    mean = model.invert(meas.z, sensor.mean, kind)
    if mean is None:
        return None
    try:
        H_s, H_x = model.jacobians(sensor.mean, mean, kind)
    except DegenerateGeometryError:
        return None
    gain_cov = H_s @ sensor.covariance @ H_s.T + meas.covariance
    try:
        info = H_x.T @ cho_solve(cho_factor(gain_cov, lower=True), H_x)
        cov = cho_solve(cho_factor(info, lower=True), np.eye(info.shape[0]))
    except np.linalg.LinAlgError:
        return None
    return GaussianComponent(np.asarray(mean, dtype=float), symmetrize(cov))


def marginalize_sensor(children) -> GaussianComponent:
    """Moment-matched sensor Gaussian over weighted per-association posteriors."""
    children = list(children)
    weights = np.array([w for w, _ in children])
    if abs(weights.sum() - 1.0) > 1e-6:
        raise ValueError("child weights must sum to 1 within 1e-6")
    if len(children) == 1:
        return children[0][1]
    mean = sum(w * g.mean for w, g in children)
    cov = sum(w * (g.covariance + np.outer(g.mean - mean, g.mean - mean))
              for w, g in children)
    return GaussianComponent(mean, symmetrize(cov))


_FAILED_BIRTH_COV = 1e6


def _birth_bernoulli(candidate, config: FilterConfig) -> Bernoulli:
    if not candidate.types:
        # Measurement explained as clutter: keep the slot with zero existence.
        types = {k: TypeComponent(1.0 / len(config.birth_types), np.zeros(3),
                                  _FAILED_BIRTH_COV * np.eye(3))
                 for k in config.birth_types}
        return Bernoulli(0.0, LandmarkBelief(types))
    types = candidate.types
    if not config.multi_model and len(types) > 1:
        kind = max(types, key=lambda k: types[k].weight)
        types = {kind: types[kind]}
    psi = _prune_type_probs({k: c.weight for k, c in types.items()},
                            config.type_prune)
    types = {k: TypeComponent(psi[k], types[k].mean, types[k].covariance)
             for k in psi}
    return Bernoulli(candidate.existence, LandmarkBelief(types))


def _misdetected_bernoulli(bern: Bernoulli, preds: dict,
                           config: FilterConfig) -> Bernoulli:
    p_detect = {k: min(preds[k].p_detect, 1.0 - 1e-9)
                for k in bern.belief.types}
    survive = sum(comp.weight * (1.0 - p_detect[k])
                  for k, comp in bern.belief.types.items())
    denom = (1.0 - bern.existence) + bern.existence * survive
    existence = bern.existence * survive / denom if denom > 0.0 else 0.0
    psi = update_type_probs(TypePosteriorInput(
        prior_probs=bern.belief.type_probs(), p_detect=p_detect, logliks=None,
        misdetect_printed=config.misdetect_psi_printed))
    psi = _prune_type_probs(psi, config.type_prune)
    types = {k: TypeComponent(psi[k], bern.belief.types[k].mean,
                              bern.belief.types[k].covariance)
             for k in psi}
    return Bernoulli(existence, LandmarkBelief(types))


@dataclass
class JointState:
    """Stacked sensor+landmark workspace of one joint update."""

    mean: np.ndarray
    covariance: np.ndarray
    slices: dict          # (landmark index, type) -> state slice


def _assemble_joint(sensor: GaussianComponent, berns, stack_kinds: dict):
    ds = sensor.dim
    dims = [ds]
    slices = {}
    for i, kinds in stack_kinds.items():
        for kind in kinds:
            comp = berns[i].belief.types[kind]
            start = sum(dims)
            dims.append(comp.mean.size)
            slices[(i, kind)] = slice(start, start + comp.mean.size)
    total = sum(dims)
    mean = np.zeros(total)
    cov = np.zeros((total, total))
    mean[:ds] = sensor.mean
    cov[:ds, :ds] = sensor.covariance
    for (i, kind), sl in slices.items():
        comp = berns[i].belief.types[kind]
        mean[sl] = comp.mean
        cov[sl, sl] = comp.covariance
    return JointState(mean, cov, slices)


def _prune_type_probs(psi: dict, threshold: float) -> dict:
    """Drop negligible-probability types (always keeping the strongest)."""
    kept = {k: v for k, v in psi.items() if v >= threshold}
    if not kept:
        best = max(psi, key=psi.get)
        kept = {best: psi[best]}
    total = sum(kept.values())
    return {k: v / total for k, v in kept.items()}


def joint_update(hypothesis: GlobalHypothesis, sigma: AssociationVector,
                 sensor_prior: GaussianComponent, measurements,
                 config: FilterConfig,
                 ctx: Optional[AssociationContext] = None):
    """Joint EK update of the sensor and all landmarks under one association.

    Returns ``(child hypothesis, sensor posterior, info)``.  The child
    keeps the parent weight; callers reweight.  Raises
    ``numpy.linalg.LinAlgError`` when the innovation covariance stays
    singular after regularization (the association is then discarded).
    """
    sigma.validate()
    berns = hypothesis.bernoullis
    if len(berns) != sigma.n_prior or len(measurements) != sigma.n_meas:
        raise ValueError("association vector inconsistent with inputs")
    detected = sigma.detected_pairs()

    if ctx is not None:
        type_preds = ctx.type_preds
    else:
        type_preds = tuple(predict_types(b, sensor_prior, config.model)
                           for b in berns)

    info = {"regularized": False, "detected": detected,
            "births": sigma.born_measurements()}
    model = config.model

    # Posterior type probabilities first: type components whose probability
    # collapses are dropped from the stack, so their replicated-measurement
    # rows cannot force a stale cross-type constraint onto the sensor.
    psi_post = {}
    for i, p in detected:
        bern = berns[i]
        if ctx is not None and (i, p) in ctx.pair_logliks:
            logliks = ctx.pair_logliks[(i, p)]
        else:
            logliks = _pair_logliks(bern, measurements[p], type_preds[i], model)
        p_detect = {k: type_preds[i][k].p_detect for k in bern.belief.types}
        psi = update_type_probs(TypePosteriorInput(
            prior_probs=bern.belief.type_probs(), p_detect=p_detect,
            logliks=logliks, misdetect_printed=config.misdetect_psi_printed))
        psi_post[i] = _prune_type_probs(psi, config.type_prune)

    if detected:
        stack_kinds = {}
        for i, p in detected:
            kinds = [k for k in psi_post[i]
                     if type_preds[i][k].z_pred is not None]
            if not kinds:
                raise np.linalg.LinAlgError(
                    f"landmark {i} detected but no type has valid geometry")
            stack_kinds[i] = kinds
        joint = _assemble_joint(sensor_prior, berns, stack_kinds)
        n_state = joint.mean.size
        row_dims = [(i, p, stack_kinds[i]) for i, p in detected]
        n_rows = sum(len(kinds) * measurements[p].covariance.shape[0]
                     for _, p, kinds in row_dims)
        H = np.zeros((n_rows, n_state))
        R = np.zeros((n_rows, n_rows))
        innovation = np.zeros(n_rows)
        row = 0
        ds = sensor_prior.dim
        for i, p, kinds in row_dims:
            meas = measurements[p]
            dz = meas.z.size
            block = slice(row, row + len(kinds) * dz)
            # Replicated measurement noise is fully correlated across types.
            R[block, block] = np.tile(meas.covariance, (len(kinds), len(kinds)))
            for kind in kinds:
                pred = type_preds[i][kind]
                rows = slice(row, row + dz)
                H[rows, :ds] = pred.H_s
                H[rows, joint.slices[(i, kind)]] = pred.H_x
                innovation[rows] = model.wrap_residual(meas.z - pred.z_pred)
                row += dz
        S = H @ joint.covariance @ H.T + R
        try:
            factor = cho_factor(symmetrize(S), lower=True)
        except np.linalg.LinAlgError:
            info["regularized"] = True
            S = S + 1e-9 * np.eye(n_rows)
            factor = cho_factor(symmetrize(S), lower=True)
        PHt = joint.covariance @ H.T
        gain = cho_solve(factor, PHt.T).T
        post_mean = joint.mean + gain @ innovation
        if config.joseph_form:
            A = np.eye(n_state) - gain @ H
            post_cov = A @ joint.covariance @ A.T + gain @ R @ gain.T
        else:
            post_cov = joint.covariance - gain @ PHt.T
        post_cov = symmetrize(post_cov)
        sensor_post = GaussianComponent(post_mean[:ds],
                                        symmetrize(post_cov[:ds, :ds]))
        posterior_comp = {
            key: (post_mean[sl], symmetrize(post_cov[sl, sl]))
            for key, sl in joint.slices.items()
        }
    else:
        sensor_post = sensor_prior
        posterior_comp = {}

    detected_by_landmark = dict(detected)
    new_berns = []
    for i, bern in enumerate(berns):
        if i in detected_by_landmark:
            types = {}
            for kind, psi in psi_post[i].items():
                if (i, kind) in posterior_comp:
                    mean, cov = posterior_comp[(i, kind)]
                else:
                    comp = bern.belief.types[kind]
                    mean, cov = comp.mean, comp.covariance
                types[kind] = TypeComponent(psi, mean, cov)
            new_berns.append(Bernoulli(1.0, LandmarkBelief(types)))
        else:
            new_berns.append(_misdetected_bernoulli(bern, type_preds[i], config))

    for p in sigma.born_measurements():
        if ctx is not None:
            candidate = ctx.births[p]
        else:
            _, candidate = assoc_mod.weight_birth(
                measurements[p], sensor_prior,
                getattr(config, "ppp_rates", {}), config.clutter_intensity,
                model, birth_types=config.birth_types, meas_index=p)
        new_berns.append(_birth_bernoulli(candidate, config))

    child = GlobalHypothesis(hypothesis.weight, tuple(new_berns), assoc=sigma)
    return child, sensor_post, info


def _pair_logliks(bern: Bernoulli, meas, preds: dict, model) -> dict:
    logliks = {}
    for kind, comp in bern.belief.types.items():
        pred = preds[kind]
        if pred.z_pred is None:
            continue
        S = pred.hph + meas.covariance
        v = model.wrap_residual(meas.z - pred.z_pred)
        try:
            loglik, _ = assoc_mod.chol_logpdf(v, S)
        except np.linalg.LinAlgError:
            continue
        logliks[kind] = loglik
    return logliks


def predict_step(density: PmbmDensity, sensor: GaussianComponent,
                 config: FilterConfig):
    """Prediction half of one filter step."""
    return predict_map(density), predict_sensor(sensor, config)


def update_step(density: PmbmDensity, sensor_pred: GaussianComponent,
                measurements, config: FilterConfig, diag: Optional[dict] = None):
    """Measurement-update half of one filter step.

    Runs association, the per-association joint updates, the sensor
    marginalization, the PMB reduction when configured, PPP thinning, and
    the pruning/merging housekeeping.
    """
    from .reduction import (align_hypotheses, average_conditionals,
                            tomb_recombine)

    children = []
    for hyp in density.hypotheses:
        costs, log_const, ctx = build_cost_matrix(
            hyp, measurements, sensor_pred, density.ppp_intensity,
            config.clutter_intensity, config.model, gate=config.gate,
            birth_types=config.birth_types)
        solutions = murty_kbest(costs, config.gamma)
        for sigma, cost in solutions:
            log_weight = math.log(hyp.weight) + log_const - cost
            try:
                child, child_sensor, info = joint_update(
                    hyp, sigma, sensor_pred, measurements, config, ctx)
            except np.linalg.LinAlgError:
                continue  # weight redistributed over surviving associations
            children.append((log_weight, child, child_sensor))
    if not children:
        raise DegenerateDensityError("every association failed numerically")

    log_weights = np.array([lw for lw, _, _ in children])
    peak = log_weights.max()
    weights = np.exp(log_weights - peak)
    weights /= weights.sum()

    sensor_post = marginalize_sensor(
        [(w, sensor) for w, (_, _, sensor) in zip(weights, children)])

    ppp_post = thin_ppp(density.ppp_intensity, config)
    hypotheses = tuple(replace(child, weight=w)
                       for w, (_, child, _) in zip(weights, children))
    posterior = PmbmDensity(ppp_post, hypotheses)

    if config.filter_kind == EK_PMB:
        table = align_hypotheses(posterior)
        table = average_conditionals(table, posterior)
        if diag is not None:
            diag["beta_rows"] = table.beta_row_sums()
        mb = tomb_recombine(table)
        posterior = PmbmDensity(ppp_post, (mb,))

    posterior = prune(posterior, config.prune_existence,
                      config.prune_hypothesis, config.max_hypotheses)
    posterior = replace(posterior, hypotheses=tuple(
        merge_bernoullis(h, config.merge_threshold)
        for h in posterior.hypotheses))
    return posterior, sensor_post


def step(density: PmbmDensity, sensor: GaussianComponent, measurements,
         config: FilterConfig, diag: Optional[dict] = None):
    """One full prediction + update cycle."""
    density_pred, sensor_pred = predict_step(density, sensor, config)
    return update_step(density_pred, sensor_pred, measurements, config, diag)
