"""Batch experiment runner: seeded Monte-Carlo campaigns and report export.

``rfslam run`` simulates the scenario, runs the selected filter over every
Monte-Carlo realization, and writes a metrics CSV, a JSON report, and SVG
plots.  ``rfslam compare`` builds a side-by-side table from run reports of
the same scenario.

Exit codes: 2 configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from .density import (
    Bernoulli,
    DegenerateDensityError,
    GaussianComponent,
    GlobalHypothesis,
    LandmarkBelief,
    PmbmDensity,
    TypeComponent,
    default_ppp_intensity,
)
from .geometry import ChannelModel, LandmarkType, wrap_angle
from .metrics import (
    GospaParams,
    extract_map,
    gospa,
    rmse,
    write_gospa_decomposition_csv,
    write_rmse_csv,
)
from .sim import (
    Scenario,
    default_scenario,
    generate_measurements,
    load_scenario,
    save_scenario,
    scenario_to_dict,
    simulate_trajectory,
)
from .svgplot import save_chart
from .update import EK_PMB, EK_PMBM, FilterConfig, predict_step, update_step

REPORT_SCHEMA = "rfslam-report/v1"

METRICS_HEADER = ("step,gospa_va,gospa_sp,mae_pos,mae_heading,mae_bias,"
                  "ms_predict,ms_update")

#: Columns of the metrics CSV that carry wall-clock values; everything else
#: is bit-reproducible for a fixed (config, seed).
TIMING_COLUMNS = ("ms_predict", "ms_update")


class ConfigError(ValueError):
    """Invalid run configuration or scenario content."""


@dataclass(frozen=True)
class RunConfig:
    """One Monte-Carlo campaign: scenario, filter selection, output target."""

    scenario: str = "default"
    filter_kind: str = EK_PMB
    gamma: int = 10
    mc_runs: int = 100
    seed: int = 0
    out_dir: str = "."
    multi_model: bool = True
    joseph_form: bool = False
    gate: float | None = 30.0
    noise_toa: float | None = None
    noise_angle: float | None = None
    extract_threshold: float = 0.5
    jobs: int = 1

    def __post_init__(self):
        if self.mc_runs < 1:
            raise ConfigError("mc_runs must be >= 1")
        if self.gamma < 1:
            raise ConfigError("gamma must be >= 1")
        if self.filter_kind not in (EK_PMB, EK_PMBM):
            raise ConfigError(f"unknown filter kind {self.filter_kind!r}")

    def to_dict(self) -> dict:
        # The output directory is environment, not experiment identity, so
        # it stays out of the report echo.
        return {
            "scenario": self.scenario, "filter": self.filter_kind,
            "gamma": self.gamma, "mc": self.mc_runs, "seed": self.seed,
            "mm": self.multi_model,
            "joseph": self.joseph_form, "gate": self.gate,
            "noise_toa": self.noise_toa, "noise_angle": self.noise_angle,
            "extract_threshold": self.extract_threshold,
        }


def _resolve_scenario(config: RunConfig) -> Scenario:
    if config.scenario == "default":
        scenario = default_scenario(seed=config.seed)
    else:
        try:
            scenario = load_scenario(config.scenario)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario file: {exc}") from exc
    noise = scenario.noise_std.copy()
    if config.noise_toa is not None:
        noise[0] = config.noise_toa
    if config.noise_angle is not None:
        noise[1:] = config.noise_angle
    return replace(scenario, noise_std=noise)


def scenario_hash(scenario: Scenario) -> str:
    doc = json.dumps(scenario_to_dict(scenario), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


def build_filter_config(scenario: Scenario, config: RunConfig) -> FilterConfig:
    model = ChannelModel(scenario.bs.position, p_detect=dict(scenario.p_detect),
                         fov_radius=scenario.fov_radius)
    return FilterConfig(
        model=model,
        process_noise=scenario.process_noise,
        speed=scenario.speed,
        turn_rate=scenario.turn_rate,
        dt=scenario.dt,
        gamma=config.gamma,
        filter_kind=config.filter_kind,
        clutter_intensity=scenario.clutter_intensity,
        ppp_rates=default_ppp_intensity(),
        gate=config.gate,
        multi_model=config.multi_model,
        joseph_form=config.joseph_form,
    )


def initial_state(scenario: Scenario):
    """Prior density (known BS anchor) and sensor belief at k = 0."""
    anchor = Bernoulli(1.0, LandmarkBelief({
        LandmarkType.BS: TypeComponent(1.0, scenario.bs.position,
                                       1e-6 * np.eye(3))}))
    density = PmbmDensity(default_ppp_intensity(),
                          (GlobalHypothesis(1.0, (anchor,), None),))
    sensor = GaussianComponent(scenario.ue_init.mean.copy(),
                               scenario.ue_init.covariance.copy())
    return density, sensor


def run_single(scenario: Scenario, filter_cfg: FilterConfig, seed: int,
               run_index: int, extract_threshold: float) -> dict:
    """One Monte-Carlo realization; returns per-step estimates and timing."""
    rng = np.random.default_rng([seed, run_index])
    trajectory = simulate_trajectory(scenario, rng)
    density, sensor = initial_state(scenario)
    va_truth = np.array([va.position for va, _ in scenario.vas])
    sp_truth = np.array([sp.position for sp in scenario.sps])
    params = GospaParams()
    out = {"estimates": [], "truth": [], "gospa_va": [], "gospa_sp": [],
           "gospa_va_parts": [], "gospa_sp_parts": [],
           "ms_predict": [], "ms_update": []}
    for k in range(1, scenario.steps + 1):
        truth = trajectory[k]
        zset = generate_measurements(truth, scenario, rng)
        t0 = time.perf_counter()
        density_pred, sensor_pred = predict_step(density, sensor, filter_cfg)
        t1 = time.perf_counter()
        density, sensor = update_step(density_pred, sensor_pred,
                                      list(zset.measurements), filter_cfg)
        t2 = time.perf_counter()
        landmarks = extract_map(density, extract_threshold)
        est_va = [pos for pos, kind in landmarks if kind is LandmarkType.VA]
        est_sp = [pos for pos, kind in landmarks if kind is LandmarkType.SP]
        d_va, va_parts = gospa(est_va, va_truth, params)
        d_sp, sp_parts = gospa(est_sp, sp_truth, params)
        out["estimates"].append([float(v) for v in sensor.mean])
        out["truth"].append([float(v) for v in truth.as_vector()])
        out["gospa_va"].append(float(d_va))
        out["gospa_sp"].append(float(d_sp))
        out["gospa_va_parts"].append([va_parts["localization"],
                                      va_parts["missed"], va_parts["false"]])
        out["gospa_sp_parts"].append([sp_parts["localization"],
                                      sp_parts["missed"], sp_parts["false"]])
        out["ms_predict"].append((t1 - t0) * 1e3)
        out["ms_update"].append((t2 - t1) * 1e3)
    return out


def _worker(args):
    scenario, filter_cfg, seed, run_index, threshold = args
    return run_single(scenario, filter_cfg, seed, run_index, threshold)


def run(config: RunConfig) -> dict:
    """Execute the Monte-Carlo campaign and write all outputs.

    Returns the report document (also written to ``report.json``).
    """
    from pathlib import Path

    scenario = _resolve_scenario(config)
    filter_cfg = build_filter_config(scenario, config)
    jobs = max(1, config.jobs)
    tasks = [(scenario, filter_cfg, config.seed, i, config.extract_threshold)
             for i in range(config.mc_runs)]
    if jobs == 1:
        runs = [_worker(task) for task in tasks]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_worker, tasks))

    steps = scenario.steps
    est = np.array([r["estimates"] for r in runs])   # (mc, steps, 5)
    tru = np.array([r["truth"] for r in runs])
    pos_err = np.linalg.norm(est[:, :, :3] - tru[:, :, :3], axis=2)
    heading_err = wrap_angle(est[:, :, 3] - tru[:, :, 3])
    bias_err = est[:, :, 4] - tru[:, :, 4]
    gospa_va = np.array([r["gospa_va"] for r in runs])
    gospa_sp = np.array([r["gospa_sp"] for r in runs])
    ms_predict = np.array([r["ms_predict"] for r in runs])
    ms_update = np.array([r["ms_update"] for r in runs])

    va_parts = np.array([r["gospa_va_parts"] for r in runs]).mean(axis=0)
    sp_parts = np.array([r["gospa_sp_parts"] for r in runs]).mean(axis=0)
    decomposition = {
        label: {"localization": parts[:, 0].tolist(),
                "missed": parts[:, 1].tolist(),
                "false": parts[:, 2].tolist()}
        for label, parts in (("va", va_parts), ("sp", sp_parts))
    }
    per_step = {
        "step": list(range(1, steps + 1)),
        "gospa_va": gospa_va.mean(axis=0).tolist(),
        "gospa_sp": gospa_sp.mean(axis=0).tolist(),
        "gospa_decomposition": decomposition,
        "mae_pos": np.abs(pos_err).mean(axis=0).tolist(),
        "mae_heading": np.abs(heading_err).mean(axis=0).tolist(),
        "mae_bias": np.abs(bias_err).mean(axis=0).tolist(),
    }
    report = {
        "schema": REPORT_SCHEMA,
        "config": config.to_dict(),
        "scenario_hash": scenario_hash(scenario),
        "rmse": {
            "position": rmse(pos_err),
            "heading": rmse(heading_err),
            "bias": rmse(bias_err),
        },
        "gospa_final": {"va": per_step["gospa_va"][-1],
                        "sp": per_step["gospa_sp"][-1]},
        "per_step": per_step,
        "runs": [{"estimates": r["estimates"], "truth": r["truth"],
                  "gospa_va": r["gospa_va"], "gospa_sp": r["gospa_sp"]}
                 for r in runs],
        "timing": {
            "per_step_ms_predict": ms_predict.mean(axis=0).tolist(),
            "per_step_ms_update": ms_update.mean(axis=0).tolist(),
            "mean_ms_predict": float(ms_predict.mean()),
            "mean_ms_update": float(ms_update.mean()),
            "mean_ms_total": float(ms_predict.mean() + ms_update.mean()),
        },
    }

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out_dir / "metrics.csv", report)
    write_report(out_dir / "report.json", report)
    write_gospa_decomposition_csv(out_dir / "gospa_decomposition.csv",
                                  per_step["step"], decomposition)
    write_rmse_csv(out_dir / "rmse.csv", report["rmse"])
    save_scenario(scenario, out_dir / "scenario.json")
    xs = per_step["step"]
    save_chart(out_dir / "gospa_vs_step.svg",
               [("VA", xs, per_step["gospa_va"]),
                ("SP", xs, per_step["gospa_sp"])],
               "Mapping error vs time", "time step", "GOSPA distance [m]")
    save_chart(out_dir / "mae_vs_step.svg",
               [("position [m]", xs, per_step["mae_pos"]),
                ("heading [rad]", xs, per_step["mae_heading"]),
                ("clock bias [m]", xs, per_step["mae_bias"])],
               "State estimation error vs time", "time step", "MAE")
    return report


def write_metrics_csv(path, report: dict) -> None:
    per_step = report["per_step"]
    timing = report["timing"]
    lines = [METRICS_HEADER]
    for i, step_idx in enumerate(per_step["step"]):
        lines.append(",".join([
            str(step_idx),
            repr(per_step["gospa_va"][i]),
            repr(per_step["gospa_sp"][i]),
            repr(per_step["mae_pos"][i]),
            repr(per_step["mae_heading"][i]),
            repr(per_step["mae_bias"][i]),
            repr(timing["per_step_ms_predict"][i]),
            repr(timing["per_step_ms_update"][i]),
        ]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path) -> dict:
    with open(path) as fh:
        report = json.load(fh)
    if report.get("schema") != REPORT_SCHEMA:
        raise ConfigError(f"unsupported report schema in {path}")
    return report


def deterministic_metrics_view(csv_text: str) -> str:
    """The metrics CSV with wall-clock columns removed (bit-reproducible part)."""
    header = csv_text.splitlines()[0].split(",")
    keep = [i for i, name in enumerate(header) if name not in TIMING_COLUMNS]
    rows = []
    for line in csv_text.strip().splitlines():
        cells = line.split(",")
        rows.append(",".join(cells[i] for i in keep))
    return "\n".join(rows) + "\n"


def deterministic_report_view(report: dict) -> dict:
    """The report without its wall-clock subtree (bit-reproducible part)."""
    return {k: v for k, v in report.items() if k != "timing"}


def compare(reports: list) -> tuple[str, str]:
    """Side-by-side comparison of run reports: (csv text, formatted text).

    Refuses reports from different scenarios.
    """
    if len(reports) < 2:
        raise ConfigError("compare needs at least two reports")
    hashes = {r["scenario_hash"] for r in reports}
    if len(hashes) != 1:
        raise ConfigError("reports come from different scenarios; "
                          "comparison refused")
    labels = [f"{r['config']['filter']}(gamma={r['config']['gamma']})"
              for r in reports]
    rows = [
        ("position_rmse_m", [r["rmse"]["position"] for r in reports]),
        ("heading_rmse_rad", [r["rmse"]["heading"] for r in reports]),
        ("bias_rmse_m", [r["rmse"]["bias"] for r in reports]),
        ("final_gospa_va_m", [r["gospa_final"]["va"] for r in reports]),
        ("final_gospa_sp_m", [r["gospa_final"]["sp"] for r in reports]),
        ("mean_ms_predict", [r["timing"]["mean_ms_predict"] for r in reports]),
        ("mean_ms_update", [r["timing"]["mean_ms_update"] for r in reports]),
        ("mean_ms_total", [r["timing"]["mean_ms_total"] for r in reports]),
    ]
    csv_lines = ["metric," + ",".join(labels)]
    for name, values in rows:
        csv_lines.append(name + "," + ",".join(repr(v) for v in values))
    csv_text = "\n".join(csv_lines) + "\n"
    width = max(len(name) for name, _ in rows) + 2
    col = max(max(len(lbl) for lbl in labels) + 2, 14)
    text_lines = [" " * width + "".join(lbl.rjust(col) for lbl in labels)]
    for name, values in rows:
        text_lines.append(name.ljust(width)
                          + "".join(f"{v:.4f}".rjust(col) for v in values))
    return csv_text, "\n".join(text_lines) + "\n"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfslam",
        description="Radio-SLAM filter experiments: PMB/PMBM with joint "
                    "extended-Kalman updates.")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a Monte-Carlo campaign")
    runp.add_argument("--config", metavar="PATH",
                      help="JSON file with RunConfig fields; flags override")
    runp.add_argument("--filter", choices=[EK_PMB, EK_PMBM], dest="filter_kind")
    runp.add_argument("--gamma", type=int)
    runp.add_argument("--mc", type=int, dest="mc_runs")
    runp.add_argument("--seed", type=int)
    runp.add_argument("--out", dest="out_dir")
    runp.add_argument("--mm", choices=["on", "off"])
    runp.add_argument("--noise-toa", type=float, dest="noise_toa")
    runp.add_argument("--noise-angle", type=float, dest="noise_angle")
    runp.add_argument("--jobs", type=int)

    cmp_p = sub.add_parser("compare", help="compare run reports")
    cmp_p.add_argument("reports", nargs="+", metavar="REPORT_JSON")
    cmp_p.add_argument("--out", dest="out_dir", default=None)
    return parser


_CONFIG_KEYS = {
    "scenario": str, "filter": str, "gamma": int, "mc": int, "seed": int,
    "out": str, "mm": bool, "joseph": bool, "gate": (float, type(None)),
    "noise_toa": (float, type(None)), "noise_angle": (float, type(None)),
    "extract_threshold": float, "jobs": int,
}

_KEY_TO_FIELD = {"filter": "filter_kind", "mc": "mc_runs", "out": "out_dir",
                 "mm": "multi_model", "joseph": "joseph_form"}


def _config_from_sources(args) -> RunConfig:
    values: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config file: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in doc.items():
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            values[_KEY_TO_FIELD.get(key, key)] = value
    for field_name in ("filter_kind", "gamma", "mc_runs", "seed", "out_dir",
                       "noise_toa", "noise_angle", "jobs"):
        value = getattr(args, field_name, None)
        if value is not None:
            values[field_name] = value
    if getattr(args, "mm", None) is not None:
        values["multi_model"] = args.mm == "on"
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = _config_from_sources(args)
            report = run(config)
            print(f"wrote {config.out_dir}/metrics.csv, "
                  f"gospa_decomposition.csv, rmse.csv, report.json, "
                  f"gospa_vs_step.svg, mae_vs_step.svg")
            print(f"position RMSE: {report['rmse']['position']:.4f} m; "
                  f"mean step time: {report['timing']['mean_ms_total']:.2f} ms")
        elif args.command == "compare":
            reports = [load_report(p) for p in args.reports]
            csv_text, table = compare(reports)
            print(table, end="")
            if args.out_dir:
                from pathlib import Path
                out = Path(args.out_dir)
                out.mkdir(parents=True, exist_ok=True)
                (out / "comparison.csv").write_text(csv_text)
                (out / "comparison.txt").write_text(table)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except (np.linalg.LinAlgError, DegenerateDensityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
