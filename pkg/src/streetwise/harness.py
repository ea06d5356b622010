"""Experiment orchestration: config file, pipeline stages, comparisons, and
plot-data export.

Every stage is idempotent: existing artifacts are reused, missing upstream
artifacts produce a configuration error naming the stage to run.  All
artifacts are timestamp-free so reruns with the same seed are byte-identical
(stage timings go to run_log.json, which is excluded from checksums).
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import load_dataset, save_dataset
from .detector import DetectorHyper, load_detector, save_detector, train_detector
from .errors import ConfigError, ContractError
from .evaluate import (
    EvalResult,
    EvalScenario,
    OpexEstimator,
    PolicyEstimator,
    StreetwiseEstimator,
    UkfEstimator,
    evaluate_policy,
)
from .netsim import FAMILIES
from .offline import IqlHyper, generate_dataset, iql_train, load_agent, save_agent
from .seeding import substream
from .shaping import SHAPING_LOG_HEADER, ShapingConfig

SCHEMA_VERSION = 1

DEFAULT_SCENARIOS = (
    {"name": "stable-clean", "family": "stable"},
    {
        "name": "random-loss-delay-shift",
        "family": "random-loss",
        "disturbance_kind": "delay-spike",
        "disturbance_mode": "permanent",
    },
    {
        "name": "burst-capacity-cut",
        "family": "burst-loss",
        "disturbance_kind": "capacity-scale",
    },
)
DEFAULT_ESTIMATORS = ("ukf", "iql", "iql+opex(0.1)", "streetwise(0.05)")


@dataclass
class ExperimentConfig:
    seed: int = 7
    out_dir: str = "runs/default"
    env: str = "netsim"
    n_train_episodes: int = 100
    episode_len: int = 400
    families: tuple[str, ...] = FAMILIES
    iql: IqlHyper = field(default_factory=IqlHyper)
    detector: DetectorHyper = field(default_factory=DetectorHyper)
    shaping: ShapingConfig = field(default_factory=ShapingConfig)
    estimators: tuple[str, ...] = DEFAULT_ESTIMATORS
    eval_episodes: int = 30
    scenarios: tuple[dict, ...] = DEFAULT_SCENARIOS

    _KEYS = {
        "schema_version", "seed", "out_dir", "env", "n_train_episodes", "episode_len",
        "families", "iql", "detector", "shaping", "estimators", "eval_episodes", "scenarios",
    }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        unknown = set(raw) - cls._KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        version = raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        kw = {}
        for key in ("seed", "out_dir", "env", "n_train_episodes", "episode_len", "eval_episodes"):
            if key in raw:
                kw[key] = raw[key]
        if "families" in raw:
            kw["families"] = tuple(raw["families"])
        if "estimators" in raw:
            kw["estimators"] = tuple(raw["estimators"])
        if "scenarios" in raw:
            kw["scenarios"] = tuple(raw["scenarios"])
        try:
            if "iql" in raw:
                kw["iql"] = IqlHyper(**{k: tuple(v) if k == "hidden" else v for k, v in raw["iql"].items()})
            if "detector" in raw:
                kw["detector"] = DetectorHyper(**raw["detector"])
            if "shaping" in raw:
                kw["shaping"] = ShapingConfig(**raw["shaping"])
        except TypeError as exc:
            raise ConfigError(f"bad config section: {exc}") from exc
        cfg = cls(**kw)
        for name in cfg.estimators:
            parse_estimator_name(name)  # fail fast on typos, before any compute
        for sc in cfg.scenarios:
            cfg.scenario(sc["name"])
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            return cls.from_dict(json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    def scenario(self, name: str) -> EvalScenario:
        for sc in self.scenarios:
            if sc["name"] == name:
                extra = set(sc) - {
                    "name", "family", "disturbance_kind", "disturbance_mode",
                    "disturbance_magnitude", "episode_len",
                }
                if extra:
                    raise ConfigError(f"unknown scenario keys in {name!r}: {sorted(extra)}")
                kw = {"env": self.env, "episode_len": self.episode_len}
                kw.update(sc)  # a scenario may override the global episode_len
                return EvalScenario(**kw)
        raise ConfigError(f"unknown scenario {name!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d


_OPEX_RE = re.compile(r"^iql\+opex\(([-0-9.eE]+)\)$")
_SW_RE = re.compile(r"^streetwise\(([-0-9.eE]+)\)$")


def parse_estimator_name(name: str) -> dict:
    """Validate an estimator string; returns {"kind", "param"}."""
    if name == "ukf":
        return {"kind": "ukf", "param": None}
    if name == "iql":
        return {"kind": "iql", "param": None}
    m = _OPEX_RE.match(name)
    if m:
        return {"kind": "opex", "param": float(m.group(1))}
    m = _SW_RE.match(name)
    if m:
        return {"kind": "streetwise", "param": float(m.group(1))}
    raise ConfigError(
        f"unknown estimator {name!r}; expected ukf | iql | iql+opex(beta) | streetwise(alpha)"
    )


def build_estimator(name: str, cfg: ExperimentConfig, agent=None, detector=None):
    spec = parse_estimator_name(name)
    if spec["kind"] == "ukf":
        return UkfEstimator()
    if agent is None:
        raise ConfigError(f"estimator {name!r} needs a trained agent; run train-rl first")
    if spec["kind"] == "iql":
        return PolicyEstimator(agent)
    if spec["kind"] == "opex":
        return OpexEstimator(agent, spec["param"])
    if detector is None:
        raise ConfigError(f"estimator {name!r} needs a detector; run train-detector first")
    sw_cfg = ShapingConfig(
        alpha=spec["param"],
        clamp=cfg.shaping.clamp,
        action_low=cfg.shaping.action_low,
        action_high=cfg.shaping.action_high,
    )
    return StreetwiseEstimator(agent, detector, sw_cfg)


# ---------------------------------------------------------------------------
# pipeline stages


def _out(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing artifact {path.name}; run the {stage!r} stage first")
    return path


def stage_gen_data(cfg: ExperimentConfig, log=print) -> Path:
    out = _out(cfg) / "dataset.swds"
    if out.exists():
        log(f"reusing {out}")
        return out
    ds = generate_dataset(
        cfg.env, cfg.n_train_episodes, cfg.seed, episode_len=cfg.episode_len, families=cfg.families
    )
    save_dataset(out, ds)
    log(f"wrote {out} ({len(ds)} transitions, {ds.n_episodes} episodes)")
    return out


def stage_train_rl(cfg: ExperimentConfig, log=print) -> Path:
    out = _out(cfg) / "agent.swag"
    if out.exists():
        log(f"reusing {out}")
        return out
    ds = load_dataset(_require(_out(cfg) / "dataset.swds", "gen-data"))
    agent, curves = iql_train(ds, cfg.iql, cfg.seed)
    save_agent(out, agent)
    _write_curves(_out(cfg) / "train_curves.csv", ("q_loss", "v_loss", "policy_obj"), curves)
    log(f"wrote {out}")
    return out


def stage_train_detector(cfg: ExperimentConfig, log=print) -> Path:
    out = _out(cfg) / "detector.swod"
    if out.exists():
        log(f"reusing {out}")
        return out
    ds = load_dataset(_require(_out(cfg) / "dataset.swds", "gen-data"))
    model, curves = train_detector(ds, cfg.detector, cfg.seed)
    save_detector(out, model)
    _write_curves(_out(cfg) / "detector_curves.csv", ("mse", "db", "scaled"), curves)
    log(f"wrote {out}")
    return out


def _write_curves(path: Path, names: tuple, curves: dict) -> None:
    lines = ["step," + ",".join(names)]
    for i in range(len(curves[names[0]])):
        lines.append(f"{i}," + ",".join(f"{curves[k][i]:.6g}" for k in names))
    path.write_text("\n".join(lines) + "\n")


def _result_path(out: Path, scenario: str, estimator: str) -> Path:
    safe = estimator.replace("(", "_").replace(")", "").replace("+", "_")
    return out / "results" / scenario / f"{safe}.json"


def stage_eval(cfg: ExperimentConfig, log=print) -> list[EvalResult]:
    out = _out(cfg)
    needs_agent = any(parse_estimator_name(n)["kind"] != "ukf" for n in cfg.estimators)
    needs_detector = any(parse_estimator_name(n)["kind"] == "streetwise" for n in cfg.estimators)
    agent = load_agent(_require(out / "agent.swag", "train-rl")) if needs_agent else None
    detector = (
        load_detector(_require(out / "detector.swod", "train-detector")) if needs_detector else None
    )
    results = []
    for sc_raw in cfg.scenarios:
        scenario = cfg.scenario(sc_raw["name"])
        for name in cfg.estimators:
            rpath = _result_path(out, scenario.name, name)
            if rpath.exists():
                log(f"reusing {rpath}")
                results.append(_load_result(rpath))
                continue
            estimator = build_estimator(name, cfg, agent, detector)
            res = evaluate_policy(estimator, scenario, cfg.eval_episodes, cfg.seed)
            _save_result(rpath, res)
            _save_traces(out, scenario.name, name, res)
            log(f"evaluated {name} on {scenario.name}: mean {res.mean_return:.4f}")
            results.append(res)
    return results


def _save_result(path: Path, res: EvalResult) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "estimator": res.estimator,
        "scenario": res.scenario,
        "master_seed": res.master_seed,
        "returns": [float(r) for r in res.returns],
        "mean": res.mean_return,
        "std": res.std_return,
    }
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _load_result(path: Path) -> EvalResult:
    payload = json.loads(path.read_text())
    return EvalResult(
        estimator=payload["estimator"],
        scenario=payload["scenario"],
        master_seed=payload["master_seed"],
        returns=np.array(payload["returns"]),
    )


def _save_traces(out: Path, scenario: str, estimator: str, res: EvalResult) -> None:
    safe = estimator.replace("(", "_").replace(")", "").replace("+", "_")
    tdir = out / "traces" / scenario
    tdir.mkdir(parents=True, exist_ok=True)
    for ep, rows in enumerate(res.traces):
        if not rows:
            continue
        fields = list(rows[0].keys())
        with (tdir / f"{safe}_call{ep:03d}.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _fmt(v) for k, v in row.items()})
    if res.shaping_log:
        sdir = out / "shaping_logs" / scenario
        sdir.mkdir(parents=True, exist_ok=True)
        (sdir / f"{safe}.csv").write_text("\n".join([SHAPING_LOG_HEADER] + res.shaping_log) + "\n")


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else v


# ---------------------------------------------------------------------------
# comparison


def gain_percent(ours: np.ndarray, theirs: np.ndarray) -> float:
    denom = float(np.mean(theirs))
    if denom == 0.0:
        raise ContractError("baseline mean return is zero; gain undefined")
    return 100.0 * (float(np.mean(ours)) - denom) / denom


def paired_bootstrap_ci(
    ours: np.ndarray,
    theirs: np.ndarray,
    rng: np.random.Generator,
    n_resamples: int = 1000,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile CI of the paired gain: episodes are resampled jointly."""
    ours = np.asarray(ours, dtype=np.float64)
    theirs = np.asarray(theirs, dtype=np.float64)
    if ours.shape != theirs.shape:
        raise ContractError("paired bootstrap needs equal-length return arrays")
    n = len(ours)
    idx = rng.integers(0, n, size=(n_resamples, n))
    gains = 100.0 * (ours[idx].mean(axis=1) - theirs[idx].mean(axis=1)) / theirs[idx].mean(axis=1)
    lo = float(np.percentile(gains, 100.0 * (1.0 - level) / 2.0))
    hi = float(np.percentile(gains, 100.0 * (1.0 + level) / 2.0))
    return lo, hi


def compare(results: list[EvalResult], ours_prefix: str = "streetwise") -> dict:
    """Gain table of the `ours` estimator against every other, per scenario,
    with paired-bootstrap 95% intervals.  Results must be paired: same
    scenario, seed, and episode count."""
    table = {"scenarios": {}}
    by_scenario: dict[str, list[EvalResult]] = {}
    for res in results:
        by_scenario.setdefault(res.scenario, []).append(res)
    for scenario, group in sorted(by_scenario.items()):
        ours = [r for r in group if r.estimator.startswith(ours_prefix)]
        if not ours:
            raise ConfigError(f"no {ours_prefix!r} result in scenario {scenario!r}")
        our = ours[0]
        entry = {
            "estimators": {
                r.estimator: {"mean": r.mean_return, "std": r.std_return} for r in group
            },
            "gains": {},
        }
        for other in group:
            if other is our:
                continue
            if other.master_seed != our.master_seed or len(other.returns) != len(our.returns):
                raise ContractError(
                    f"unpaired results: {our.estimator} vs {other.estimator} in {scenario}"
                )
            rng = substream(our.master_seed, "bootstrap", 0)
            lo, hi = paired_bootstrap_ci(our.returns, other.returns, rng)
            entry["gains"][other.estimator] = {
                "gain_pct": gain_percent(our.returns, other.returns),
                "ci95": [lo, hi],
            }
        table["scenarios"][scenario] = entry
    return table


def stage_compare(cfg: ExperimentConfig, log=print) -> dict:
    out = _out(cfg)
    results = []
    for sc in cfg.scenarios:
        for name in cfg.estimators:
            results.append(_load_result(_require(_result_path(out, sc["name"], name), "eval")))
    table = compare(results)
    (out / "results_table.json").write_text(json.dumps(table, sort_keys=True, indent=2) + "\n")
    rows = ["scenario,estimator,mean,std,gain_pct_vs,gain_pct,ci_lo,ci_hi"]
    for scenario, entry in sorted(table["scenarios"].items()):
        for name, stats in sorted(entry["estimators"].items()):
            rows.append(f"{scenario},{name},{stats['mean']:.6g},{stats['std']:.6g},,,,")
        for name, g in sorted(entry["gains"].items()):
            rows.append(
                f"{scenario},,,,{name},{g['gain_pct']:.6g},{g['ci95'][0]:.6g},{g['ci95'][1]:.6g}"
            )
    (out / "results_table.csv").write_text("\n".join(rows) + "\n")
    log(f"wrote {out / 'results_table.csv'}")
    return table


# ---------------------------------------------------------------------------
# plot data


def stage_export_plots(cfg: ExperimentConfig, log=print, downsample: int = 1) -> Path:
    out = _out(cfg)
    pdir = out / "plotdata"
    pdir.mkdir(parents=True, exist_ok=True)
    manifest = {"scenarios": {}}
    for sc in cfg.scenarios:
        scenario = sc["name"]
        calls = export_plot_data(out, scenario, cfg.estimators, pdir, downsample)
        manifest["scenarios"][scenario] = calls
    (pdir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    log(f"wrote {pdir / 'manifest.json'}")
    return pdir


def _downsample_rows(rows: list, n: int) -> list:
    if n <= 1 or len(rows) <= 2:
        return rows
    kept = rows[::n]
    if rows and kept[-1] is not rows[-1]:
        kept.append(rows[-1])  # endpoints preserved
    return kept


def export_plot_data(out: Path, scenario: str, estimators, pdir: Path, downsample: int = 1) -> list:
    """Merge per-estimator traces into aligned per-call series; absent traces
    are marked in the manifest instead of crashing."""
    tdir = out / "traces" / scenario
    calls = []
    call_files: dict[str, dict[str, Path]] = {}
    for name in estimators:
        safe = name.replace("(", "_").replace(")", "").replace("+", "_")
        for path in sorted(tdir.glob(f"{safe}_call*.csv")) if tdir.exists() else []:
            call_id = path.stem.rsplit("call", 1)[1]
            call_files.setdefault(call_id, {})[name] = path
    for call_id, by_est in sorted(call_files.items()):
        series: dict[str, list] = {}
        absent = [name for name in estimators if name not in by_est]
        truth_done = False
        for name, path in by_est.items():
            with path.open() as fh:
                rows = list(csv.DictReader(fh))
            rows = _downsample_rows(rows, downsample)
            if not truth_done:
                series["time"] = [r["time"] for r in rows]
                truth_key = "capacity" if "capacity" in rows[0] else "viscosity"
                series[truth_key] = [r[truth_key] for r in rows]
                truth_done = True
            pred_key = "send_rate" if "send_rate" in rows[0] else "action"
            series[f"prediction::{name}"] = [r[pred_key] for r in rows]
            series[f"reward::{name}"] = [r["reward"] for r in rows]
        fname = f"{scenario}_call{call_id}.csv"
        cols = list(series.keys())
        length = len(series["time"])
        with (pdir / fname).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for i in range(length):
                writer.writerow([series[c][i] for c in cols])
        calls.append({"file": fname, "absent": sorted(absent), "n_points": length})
    return calls


# ---------------------------------------------------------------------------
# checksums, run log, full pipeline


VOLATILE_FILES = {"run_log.json", "checksums.json"}


def compute_checksums(out_dir: str | Path) -> dict:
    out = Path(out_dir)
    sums = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name not in VOLATILE_FILES:
            sums[str(path.relative_to(out))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return sums


def run_pipeline(cfg: ExperimentConfig, log=print) -> dict:
    out = _out(cfg)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    timings = {}
    stages = (
        ("gen-data", stage_gen_data),
        ("train-rl", stage_train_rl),
        ("train-detector", stage_train_detector),
        ("eval", stage_eval),
        ("compare", stage_compare),
        ("export-plots", stage_export_plots),
    )
    table = None
    for name, fn in stages:
        start = time.perf_counter()
        result = fn(cfg, log=log)
        timings[name] = time.perf_counter() - start
        if name == "compare":
            table = result
        log(f"stage {name} finished in {timings[name]:.1f}s")
    sums = compute_checksums(out)
    (out / "checksums.json").write_text(json.dumps(sums, sort_keys=True, indent=2) + "\n")
    (out / "run_log.json").write_text(json.dumps({"timings_sec": timings}, indent=2) + "\n")
    return table


# ---------------------------------------------------------------------------
# alpha/beta sensitivity sweep


def sweep_alpha(
    cfg: ExperimentConfig,
    alphas=(0.01, 0.05, 0.1),
    betas=(0.01, 0.1),
    log=print,
) -> dict:
    """Evaluate Streetwise across alpha and the ungated perturbation across
    beta on the same disturbed scenario; writes sweep_alpha.csv."""
    out = _out(cfg)
    agent = load_agent(_require(out / "agent.swag", "train-rl"))
    detector = load_detector(_require(out / "detector.swod", "train-detector"))
    scenario = cfg.scenario(cfg.scenarios[-1]["name"]) if cfg.scenarios else None
    if scenario is None:
        raise ConfigError("sweep needs at least one scenario")
    rows = []
    sweep = {"alpha": {}, "beta": {}, "scenario": scenario.name}
    for alpha in alphas:
        est = build_estimator(f"streetwise({alpha:g})", cfg, agent, detector)
        res = evaluate_policy(est, scenario, cfg.eval_episodes, cfg.seed, keep_traces=False)
        sweep["alpha"][f"{alpha:g}"] = res.mean_return
        rows.append(("streetwise", alpha, res.mean_return, res.std_return))
        log(f"streetwise alpha={alpha:g}: mean {res.mean_return:.4f}")
    for beta in betas:
        est = build_estimator(f"iql+opex({beta:g})", cfg, agent, detector)
        res = evaluate_policy(est, scenario, cfg.eval_episodes, cfg.seed, keep_traces=False)
        sweep["beta"][f"{beta:g}"] = res.mean_return
        rows.append(("opex", beta, res.mean_return, res.std_return))
        log(f"opex beta={beta:g}: mean {res.mean_return:.4f}")
    lines = ["method,param,mean_return,std_return"]
    lines += [f"{m},{p:g},{mean:.6g},{std:.6g}" for m, p, mean, std in rows]
    (out / "sweep_alpha.csv").write_text("\n".join(lines) + "\n")
    (out / "sweep_alpha.json").write_text(json.dumps(sweep, sort_keys=True, indent=2) + "\n")
    return sweep
