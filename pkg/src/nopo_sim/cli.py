"""Command-line scenario runner.

Configs are flat ``key = value`` text files with ``#`` comments. Keys given
with ``--set`` override the file; every output CSV starts with a ``#``
header that lists the fully resolved config.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import default_extent, ensemble_variance, grid_axes, peak_analysis, wigner
from .fockspace import DensityMatrix, FockSpace
from .model import PARAM_FIELDS, SystemParams, locking_condition, threshold_equal_detunings
from .qsd import TrajectoryConfig, effective_model, run_ensemble
from .semiclassical import (
    ClassicalState,
    classify_long_time,
    integrate,
    numerical_threshold,
    trivial_stability,
)

SCENARIOS = ("semiclassical", "threshold", "qsd-ensemble", "wigner", "entanglement-scan")


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _optional_float(text: str):
    return None if text.strip() in ("", "none") else float(text)


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


# key -> (parser, default as text)
KEYS = {
    "scenario": (str, "semiclassical"),
    "gamma1": (float, "1"),
    "gamma2": (float, "1"),
    "delta1": (float, "0"),
    "delta2": (float, "0"),
    "chi": (float, "0"),
    "epsilon": (float, "0"),
    "lambda": (float, "0"),
    # lambda used by the quantum parts only (desk-scale override)
    "desk_lambda": (_optional_float, "none"),
    "n_max1": (_positive_int, "20"),
    "n_max2": (_positive_int, "20"),
    "dt": (float, "0.0005"),
    "t_end": (float, "10"),
    "record_stride": (_positive_int, "100"),
    "seed": (_seed, "0"),
    "snapshot_times": (_floats, ""),
    "transient": (float, "3"),
    "n_traj": (_positive_int, "100"),
    "strict": (_bool, "false"),
    "wigner_mode": (int, "1"),
    "grid_extent": (_optional_float, "none"),
    "grid_points": (_positive_int, "101"),
    "classical_dt": (float, "0.001"),
    "classical_t_end": (float, "200"),
    "classical_stride": (_positive_int, "10"),
    "seed_amplitude": (float, "0.001"),
    "scan_min": (float, "0"),
    "scan_max": (float, "20"),
    "scan_points": (_positive_int, "201"),
    "ratios": (_floats, "0.5 0.8 1.0 1.2 1.5"),
    "out": (str, "nopo_out"),
}

PRESETS = {
    "fig1": ("stationary phase locking: two-peak Wigner function above threshold",
             ("semiclassical", "wigner"),
             dict(delta1="10", delta2="10", chi="0.1", epsilon="11", **{"lambda": "0.1"},
                  desk_lambda="0.5", t_end="30", snapshot_times="10 12 14 16 18 20 22 24 26 28 30",
                  n_traj="200",
                  grid_extent="4.5")),
    "fig2": ("self-pulsing: classical trajectory and ensemble-averaged photon number",
             ("semiclassical", "qsd-ensemble"),
             dict(delta1="10", delta2="-5", chi="0.1", epsilon="4", **{"lambda": "0.1"},
                  desk_lambda="0.5", t_end="10", n_traj="200")),
    "fig3": ("self-pulsing phase diffusion: ring-shaped Wigner function",
             ("semiclassical", "wigner"),
             dict(delta1="0.1", delta2="-0.1", chi="0.5", epsilon="3", **{"lambda": "0.1"},
                  desk_lambda="0.5", t_end="12", snapshot_times="8 10 12", n_traj="200",
                  grid_extent="4.5")),
    "fig4": ("entanglement variance V versus pump over threshold",
             ("threshold", "entanglement-scan"),
             dict(delta1="10", delta2="-10", chi="0.1", epsilon="1", **{"lambda": "0.1"},
                  t_end="8", n_traj="200", scan_max="3")),
}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into a dict of raw strings."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        raw[key] = value
    return raw


def parse_overrides(items) -> dict:
    raw = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        raw[key] = value
    return raw


def resolve(raw: dict) -> dict:
    """Apply defaults and preset values, parse and validate every key."""
    raw = {("lambda" if k == "lam" else k): v for k, v in raw.items()}
    for key in raw:
        if key not in KEYS:
            raise ConfigError(f"unknown key: {key}")
    scenario = raw.get("scenario", KEYS["scenario"][1])
    merged = {k: d for k, (_, d) in KEYS.items()}
    if scenario.startswith("preset:"):
        name = scenario.split(":", 1)[1]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset: {name}")
        merged.update(PRESETS[name][2])
    elif scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario: {scenario}")
    merged.update(raw)
    cfg = {}
    for key, (parse, _) in KEYS.items():
        try:
            cfg[key] = parse(merged[key])
        except ValueError as exc:
            raise ConfigError(f"invalid value for {key}: {merged[key]!r} ({exc})") from None
    try:
        system_params(cfg)
        if cfg["desk_lambda"] is not None:
            system_params(cfg, quantum=True)
        trajectory_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["wigner_mode"] not in (1, 2):
        raise ConfigError("wigner_mode must be 1 or 2")
    return cfg


def system_params(cfg: dict, quantum: bool = False) -> SystemParams:
    kw = {f: cfg["lambda" if f == "lam" else f] for f in PARAM_FIELDS}
    if quantum and cfg["desk_lambda"] is not None:
        kw["lam"] = cfg["desk_lambda"]
    return SystemParams(**kw)


def trajectory_config(cfg: dict, snapshot_times=None) -> TrajectoryConfig:
    snaps = cfg["snapshot_times"] if snapshot_times is None else snapshot_times
    return TrajectoryConfig(dt=cfg["dt"], t_end=cfg["t_end"], record_stride=cfg["record_stride"],
                            seed=cfg["seed"], snapshot_times=snaps, strict=cfg["strict"])


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(_fmt(float(x)) for x in v)
    if v is None:
        return "none"
    return str(v)


def config_header(cfg: dict) -> list[str]:
    lines = [f"nopo-sim {__version__}"]
    # the output location does not affect results and is left out
    lines += [f"{k} = {_fmt(cfg[k])}".rstrip() for k in sorted(cfg) if k != "out"]
    if cfg["desk_lambda"] is not None:
        lines.append(f"desk_scale: quantum scenarios use lambda = {_fmt(cfg['desk_lambda'])} "
                     f"instead of {_fmt(cfg['lambda'])}")
    return lines


def write_csv(path: Path, cfg: dict, columns, rows, extra_header=()) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in config_header(cfg) + list(extra_header):
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(format(float(x), ".17g") for x in row) + "\n")


def _regime(params: SystemParams) -> dict:
    r = locking_condition(params)
    return {"locking_lhs": r.locking_lhs, "locking_rhs": r.locking_rhs,
            "is_stationary_regime": r.is_stationary_regime}


def _thresholds(params: SystemParams, hi: float = 50.0) -> dict:
    out = {"numerical": None, "closed_form": None}
    try:
        out["closed_form"] = threshold_equal_detunings(params)
    except ValueError:
        pass
    try:
        out["numerical"] = numerical_threshold(params, (0.0, hi))
    except ValueError:
        pass
    return out


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


class Runner:
    def __init__(self, cfg: dict, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.summary = {
            "version": __version__,
            "scenario": cfg["scenario"],
            "config": {k: _fmt(v) for k, v in sorted(cfg.items())},
            "seeds": {"master": cfg["seed"]},
            "runtimes": {},
            "files": [],
        }
        self.params = system_params(cfg)
        self.qparams = system_params(cfg, quantum=True)
        self.space = FockSpace(cfg["n_max1"], cfg["n_max2"])

    def _csv(self, name, columns, rows, extra_header=()):
        write_csv(self.out / name, self.cfg, columns, rows, extra_header)
        self.summary["files"].append(name)

    def run(self) -> dict:
        sc = self.cfg["scenario"]
        steps = PRESETS[sc.split(":", 1)[1]][1] if sc.startswith("preset:") else (sc,)
        self.summary["regime"] = _regime(self.params)
        self.summary["thresholds"] = _thresholds(self.params)
        for step in steps:
            t0 = time.perf_counter()
            try:
                getattr(self, "_" + step.replace("-", "_"))()
            except (ValueError, RuntimeError, FloatingPointError) as exc:
                raise RuntimeError(f"scenario {step} failed: {exc}") from exc
            self.summary["runtimes"][step] = time.perf_counter() - t0
        return self.summary

    # scenarios
    def _semiclassical(self):
        c = self.cfg
        a0 = c["seed_amplitude"]
        traj = integrate(ClassicalState(a0, a0), self.params, dt=c["classical_dt"],
                         t_end=c["classical_t_end"], stride=c["classical_stride"])
        a = traj.alpha
        n = traj.photon_numbers
        rows = np.column_stack([traj.times, a[:, 0].real, a[:, 0].imag,
                                a[:, 1].real, a[:, 1].imag, n[:, 0], n[:, 1]])
        self._csv("classical_traj.csv", ["t", "re_a1", "im_a1", "re_a2", "im_a2", "n1", "n2"], rows)
        rep = classify_long_time(traj)
        self.summary["pulsing"] = {k: _finite(v) if isinstance(v, float) else v
                                   for k, v in asdict(rep).items()}

    def _threshold(self):
        c = self.cfg
        eps = np.linspace(c["scan_min"], c["scan_max"], c["scan_points"])
        rates = [trivial_stability(self.params.replace(epsilon=float(e))).max_growth_rate
                 for e in eps]
        self._csv("threshold_scan.csv", ["epsilon", "max_growth_rate"], zip(eps, rates))

    def _ensemble(self, params, snapshot_times=None):
        cfg = trajectory_config(self.cfg, snapshot_times)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            stats = run_ensemble(effective_model(params, self.space), None, cfg, self.cfg["n_traj"])
        msgs = sorted({str(w.message) for w in caught})
        for m in msgs:
            print(f"warning: {m}", file=sys.stderr)
        return stats, msgs

    def _ensemble_rows(self, stats):
        v, se, _ = ensemble_variance(stats.samples)
        rows = np.column_stack([stats.times, stats["n1"], stats.stderr("n1"),
                                stats["n2"], stats.stderr("n2"), v, se])
        return rows, v, se

    def _v_summary(self, stats, v, se):
        late = stats.times >= self.cfg["transient"]
        if not late.any():
            late = np.ones_like(late)
        k = int(np.flatnonzero(late)[np.argmin(v[late])])
        return {"V_min": float(v[k]), "V_min_se": float(se[k]), "t_at_V_min": float(stats.times[k]),
                "V_late_mean": float(v[late].mean()), "transient": self.cfg["transient"]}

    def _record_ensemble(self, key, stats, msgs):
        self.summary["seeds"]["first_trajectory_seeds"] = [int(s) for s in stats.seeds[:4]]
        self.summary.setdefault("ensemble", {})[key] = {
            "n_traj": stats.n_traj, "n_failed": stats.n_failed,
            "max_top_population": stats.max_top_population, "warnings": msgs,
            "final_n1": float(stats["n1"][-1]), "final_n2": float(stats["n2"][-1]),
        }

    def _qsd_ensemble(self):
        stats, msgs = self._ensemble(self.qparams)
        rows, v, se = self._ensemble_rows(stats)
        self._csv("ensemble.csv", ENSEMBLE_COLUMNS, rows)
        self._record_ensemble("qsd-ensemble", stats, msgs)
        self.summary["V"] = self._v_summary(stats, v, se)

    def _wigner(self):
        c = self.cfg
        snaps = c["snapshot_times"] or (c["t_end"],)
        stats, msgs = self._ensemble(self.qparams, snaps)
        rows, v, se = self._ensemble_rows(stats)
        self._csv("ensemble.csv", ENSEMBLE_COLUMNS, rows)
        self._record_ensemble("wigner", stats, msgs)
        self.summary["V"] = self._v_summary(stats, v, se)
        rho = averaged_reduced_state(stats, snaps, c["wigner_mode"])
        n_mode = float(np.real(np.trace(rho.data @ np.diag(np.arange(rho.data.shape[0])))))
        extent = c["grid_extent"] or default_extent(math.sqrt(max(n_mode, 0.0)))
        axis = grid_axes(extent, c["grid_points"])
        w = wigner(rho, axis, axis, source=f"mode {c['wigner_mode']}")
        grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
        self._csv("wigner.csv", ["re_alpha", "im_alpha", "W"],
                  np.column_stack([grid, w.values.reshape(-1)]),
                  [f"reduced state of mode {c['wigner_mode']} averaged over t = "
                   + " ".join(_fmt(float(t)) for t in snaps)])
        rep = peak_analysis(w)
        self.summary["peaks"] = {
            "peak_count": rep.peak_count,
            "peak_locations": [[z.real, z.imag] for z in rep.peak_locations],
            "inversion_symmetric": rep.inversion_symmetric,
            "is_ring": rep.is_ring, "ring_radius": rep.ring_radius,
            "W_origin": w.at_origin(), "W_integral": w.integral(),
        }

    def _entanglement_scan(self):
        c = self.cfg
        eth = self.summary["thresholds"]["numerical"]
        if eth is None:
            raise ValueError("no threshold found in [0, 50]; cannot scale the pump")
        out_rows, scan = [], []
        for ratio in c["ratios"]:
            p = self.params.replace(epsilon=ratio * eth)
            if c["desk_lambda"] is not None:
                p = p.replace(lam=c["desk_lambda"])
            stats, msgs = self._ensemble(p)
            rows, v, se = self._ensemble_rows(stats)
            if math.isclose(ratio, 1.0):
                self._csv("ensemble.csv", ENSEMBLE_COLUMNS, rows,
                          ["pump at the numerical threshold"])
            self._record_ensemble(f"ratio={ratio!r}", stats, msgs)
            s = self._v_summary(stats, v, se)
            scan.append({"ratio": ratio, "epsilon": ratio * eth, **s})
            out_rows.append((ratio, ratio * eth, s["V_min"], s["V_min_se"], s["V_late_mean"]))
        self._csv("entanglement_scan.csv",
                  ["ratio", "epsilon", "V_min", "V_min_se", "V_late_mean"], out_rows)
        self.summary["entanglement_scan"] = scan


ENSEMBLE_COLUMNS = ["t", "n1_mean", "n1_se", "n2_mean", "n2_se", "V", "V_se"]


def averaged_reduced_state(stats, times, mode: int) -> DensityMatrix:
    """Reduced state of ``mode`` averaged over the snapshot ``times``."""
    mats = [stats.reduced(t, mode).data for t in times]
    return DensityMatrix(sum(mats) / len(mats), "single_mode")


def load_config(path: str | None, overrides) -> dict:
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        raw.update(parse_config_text(text))
    raw.update(parse_overrides(overrides))
    return resolve(raw)


def run(cfg: dict, out_dir: str | Path | None = None) -> dict:
    if out_dir is not None:
        cfg = {**cfg, "out": str(out_dir)}
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    summary = Runner(cfg, out).run()
    summary["files"].append("summary.json")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    return summary


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nopo-sim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--config", help="key = value config file")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="override a config key (repeatable)")
    r.add_argument("--out", help="output directory (overrides the 'out' key)")
    sub.add_parser("presets", help="list presets")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "presets":
        for name, (desc, steps, _) in PRESETS.items():
            print(f"preset:{name}  {desc} [{' + '.join(steps)}]")
        return 0
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        summary = run(cfg, args.out)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = args.out or cfg["out"]
    print(f"wrote {', '.join(summary['files'])} to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
