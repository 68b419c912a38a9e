"""Ground-truth scenario generation and measurement synthesis.

The reference scenario mirrors a bistatic urban setup: one BS, four
reflecting walls (virtual anchors mirrored across them), four scatterers
near the walls, and a UE driving a counterclockwise constant-turn loop
around the BS.  Measurements are synthesized directly at the channel-
parameter level: per-landmark detections with additive Gaussian noise plus
uniform Poisson clutter over the measurement space.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .density import GaussianComponent
from .geometry import (
    Landmark,
    LandmarkType,
    Measurement,
    Plane,
    UEState,
    detection_probability,
    measure,
    mirror_bs,
    wrap_angle,
)

#: Measurement-space volume for clutter: range 200 m x azimuth 2pi x
#: elevation pi, twice (arrival and departure).  Intensity = mean / volume.
CLUTTER_VOLUME = 200.0 * (2.0 * math.pi) ** 2 * math.pi ** 2
SENSING_RANGE = 200.0


@dataclass(frozen=True)
class Scenario:
    """Ground truth: landmarks, UE initialization, motion and noise models."""

    bs: Landmark
    vas: tuple          # (Landmark, Plane) pairs
    sps: tuple          # Landmark
    ue_init: GaussianComponent       # over [x, y, z, heading, bias]
    process_noise: np.ndarray        # 5x5
    speed: float
    turn_rate: float
    dt: float
    steps: int
    noise_std: np.ndarray            # per-channel-parameter std, 5-vector
    p_detect: dict = field(default_factory=lambda: {
        LandmarkType.BS: 0.9, LandmarkType.VA: 0.9, LandmarkType.SP: 0.9})
    fov_radius: float = 50.0
    clutter_mean: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "process_noise",
                           np.asarray(self.process_noise, dtype=float))
        object.__setattr__(self, "noise_std",
                           np.asarray(self.noise_std, dtype=float))
        object.__setattr__(self, "vas", tuple(self.vas))
        object.__setattr__(self, "sps", tuple(self.sps))
        for va, plane in self.vas:
            mirrored = mirror_bs(self.bs.position, plane.point, plane.normal)
            if not np.allclose(mirrored, va.position, atol=1e-9):
                raise ValueError("VA inconsistent with its reflecting surface")

    @property
    def clutter_intensity(self) -> float:
        return self.clutter_mean / CLUTTER_VOLUME

    def landmarks(self):
        return ([self.bs] + [va for va, _ in self.vas] + list(self.sps))

    def measurement_covariance(self) -> np.ndarray:
        return np.diag(self.noise_std ** 2)


def default_scenario(seed: int = 0, noise_toa: float = 0.1,
                     noise_angle: float = 0.005, steps: int = 40) -> Scenario:
    """The reference scenario: BS at [0, 0, 40], four walls, four scatterers.

    The UE starts at [70.7285, 0, 0] heading north with a 300 m clock bias
    and loops counterclockwise around the BS in 40 half-second steps.
    """
    bs = Landmark(LandmarkType.BS, [0.0, 0.0, 40.0])
    walls = [
        Plane([100.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
        Plane([-100.0, 0.0, 0.0], [-1.0, 0.0, 0.0]),
        Plane([0.0, 100.0, 0.0], [0.0, 1.0, 0.0]),
        Plane([0.0, -100.0, 0.0], [0.0, -1.0, 0.0]),
    ]
    vas = tuple(
        (Landmark(LandmarkType.VA, mirror_bs(bs.position, p.point, p.normal)), p)
        for p in walls)
    sps = tuple(Landmark(LandmarkType.SP, pos) for pos in
                ([99.0, 0.0, 10.0], [-99.0, 0.0, 10.0],
                 [0.0, 99.0, 10.0], [0.0, -99.0, 10.0]))
    ue_init = GaussianComponent(
        np.array([70.7285, 0.0, 0.0, math.pi / 2, 300.0]),
        np.diag([0.3, 0.3, 0.0, 0.0052, 0.3]))
    return Scenario(
        bs=bs, vas=vas, sps=sps, ue_init=ue_init,
        process_noise=np.diag([0.2, 0.2, 0.0, 0.001, 0.2]),
        speed=22.22, turn_rate=math.pi / 10.0, dt=0.5, steps=steps,
        noise_std=np.array([noise_toa, noise_angle, noise_angle,
                            noise_angle, noise_angle]),
        seed=seed)


def _sample_gaussian(rng, cov: np.ndarray) -> np.ndarray:
    # Eigen-based sampling: tolerates the zero rows of a singular Q.
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    scale = np.sqrt(np.clip(vals, 0.0, None))
    return vecs @ (scale * rng.standard_normal(cov.shape[0]))


def simulate_trajectory(scenario: Scenario, rng=None):
    """Ground-truth UE states [s_0 .. s_steps] under the noisy turn model."""
    from .update import FilterConfig, sensor_transition

    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    cfg = FilterConfig(model=None, process_noise=scenario.process_noise,
                       speed=scenario.speed, turn_rate=scenario.turn_rate,
                       dt=scenario.dt)
    states = [UEState.from_vector(scenario.ue_init.mean)]
    for _ in range(scenario.steps):
        vec = sensor_transition(states[-1].as_vector(), cfg)
        vec = vec + _sample_gaussian(rng, scenario.process_noise)
        vec[3] = wrap_angle(vec[3])
        states.append(UEState.from_vector(vec))
    return states


@dataclass(frozen=True)
class MeasurementSet:
    """Measurements of one step plus diagnostic truth labels.

    ``labels[i]`` is the index into ``scenario.landmarks()`` that produced
    measurement ``i``, or -1 for clutter.  Labels are never shown to the
    filter.
    """

    measurements: tuple
    labels: tuple


def generate_measurements(ue: UEState, scenario: Scenario,
                          rng) -> MeasurementSet:
    """Detections with additive noise, plus uniform Poisson clutter, shuffled."""
    cov = scenario.measurement_covariance()
    std = scenario.noise_std
    items = []
    for idx, lm in enumerate(scenario.landmarks()):
        pd = detection_probability(ue, lm, scenario.p_detect,
                                   scenario.fov_radius)
        if rng.uniform() >= pd:
            continue
        z = measure(ue, lm, scenario.bs.position)
        z = z + std * rng.standard_normal(5)
        z[1] = wrap_angle(z[1])
        z[3] = wrap_angle(z[3])
        z[2] = float(np.clip(z[2], -math.pi / 2, math.pi / 2))
        z[4] = float(np.clip(z[4], -math.pi / 2, math.pi / 2))
        items.append((Measurement(z, cov), idx))
    for _ in range(rng.poisson(scenario.clutter_mean)):
        z = np.array([
            rng.uniform(0.0, SENSING_RANGE),
            rng.uniform(-math.pi, math.pi),
            rng.uniform(-math.pi / 2, math.pi / 2),
            rng.uniform(-math.pi, math.pi),
            rng.uniform(-math.pi / 2, math.pi / 2),
        ])
        items.append((Measurement(z, cov), -1))
    order = rng.permutation(len(items))
    return MeasurementSet(
        measurements=tuple(items[i][0] for i in order),
        labels=tuple(items[i][1] for i in order))


# ---------------------------------------------------------------------------
# Scenario and ground-truth files

def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "bs": scenario.bs.position.tolist(),
        "vas": [{"position": va.position.tolist(),
                 "plane_point": plane.point.tolist(),
                 "plane_normal": plane.normal.tolist()}
                for va, plane in scenario.vas],
        "sps": [sp.position.tolist() for sp in scenario.sps],
        "ue_init": {"mean": scenario.ue_init.mean.tolist(),
                    "cov": scenario.ue_init.covariance.tolist()},
        "process_noise": scenario.process_noise.tolist(),
        "speed": scenario.speed,
        "turn_rate": scenario.turn_rate,
        "dt": scenario.dt,
        "steps": scenario.steps,
        "noise_std": scenario.noise_std.tolist(),
        "p_detect": {k.value: v for k, v in scenario.p_detect.items()},
        "fov_radius": scenario.fov_radius,
        "clutter_mean": scenario.clutter_mean,
        "seed": scenario.seed,
    }


def scenario_from_dict(doc: dict) -> Scenario:
    vas = tuple(
        (Landmark(LandmarkType.VA, entry["position"]),
         Plane(entry["plane_point"], entry["plane_normal"]))
        for entry in doc["vas"])
    return Scenario(
        bs=Landmark(LandmarkType.BS, doc["bs"]),
        vas=vas,
        sps=tuple(Landmark(LandmarkType.SP, pos) for pos in doc["sps"]),
        ue_init=GaussianComponent(np.array(doc["ue_init"]["mean"]),
                                  np.array(doc["ue_init"]["cov"])),
        process_noise=np.array(doc["process_noise"]),
        speed=float(doc["speed"]),
        turn_rate=float(doc["turn_rate"]),
        dt=float(doc["dt"]),
        steps=int(doc["steps"]),
        noise_std=np.array(doc["noise_std"]),
        p_detect={LandmarkType(k): float(v)
                  for k, v in doc.get("p_detect", {}).items()},
        fov_radius=float(doc.get("fov_radius", 50.0)),
        clutter_mean=float(doc.get("clutter_mean", 1.0)),
        seed=int(doc.get("seed", 0)),
    )


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2, sort_keys=True)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def write_truth_csv(path, trajectory) -> None:
    """Ground-truth dump: one row per step with the five state fields."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "x", "y", "z", "heading", "clock_bias"])
        for k, state in enumerate(trajectory):
            writer.writerow([k, repr(state.position[0]),
                             repr(state.position[1]), repr(state.position[2]),
                             repr(state.heading), repr(state.clock_bias)])
