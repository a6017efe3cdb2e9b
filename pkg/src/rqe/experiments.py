"""Experiment configuration, seeded execution, CSV output and summaries.

A run writes, into its output directory, one trajectory CSV per seed (and
per variant where an experiment has several), ``summary.csv`` with per-seed
final metrics followed by cross-seed median and IQR rows, and
``manifest.json`` holding the fully resolved configuration. A manifest is
itself a valid config, so ``--config manifest.json`` reproduces a run.

Quantiles use linear interpolation between order statistics (quartiles at
0.25 and 0.75).
"""

from __future__ import annotations

import csv
import json
import os
import platform
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .certificates import certify, closed_form_test
from .environments import gridworld_mg, inspection_game, inspection_mg, random_mg
from .errors import ConfigurationError, RQEError
from .maac import MaacConfig, train
from .maac import write_trajectory_csv as write_maac_csv
from .markov import MarkovGame, value_iteration
from .normal_form import PayoffPair
from .regularizers import RegularizerKind, RiskProfile
from .simplex import WeightVector
from .solver import lipschitz_probe, solve, write_trajectory_csv
from .two_timescale import StepSchedule, run
from .two_timescale import write_trajectory_csv as write_tt_csv


KINDS = ("certify", "normal_form_dynamics", "value_iteration", "two_timescale", "maac", "lipschitz_probe")
ENVS = ("inspection", "gridworld", "random")
OUT_ENV_VAR = "RQE_OUT_DIR"
DEFAULT_OUT = "rqe-out"
MA_WINDOW = 100

# per-kind parameters and their defaults
DEFAULT_PARAMS = {
    "certify": {"n_samples": 500, "floor": 1e-6},
    "normal_form_dynamics": {"taus": [1.0, 2.0, 5.0], "risk_neutral": True, "eta": 0.05, "tol": 1e-8,
                             "max_iter": 100_000, "record_every": 1},
    "value_iteration": {"tol": 1e-6, "max_sweeps": 10_000, "alpha": 1.0},
    "two_timescale": {"n_iter": 1000, "floor": 1e-6, "oracle_tol": 1e-12},
    "maac": {"n_episodes": 1000, "K": 64, "mode": "OnPolicy", "risk_neutral": False, "reset": False,
             "floor": 1e-6, "oracle_tol": 1e-12},
    "lipschitz_probe": {"delta": 0.01, "n_trials": 20, "tol": 1e-10},
}


class ConfigError(ConfigurationError):
    """Invalid configuration, with the offending line when known."""

    def __init__(self, message: str, source: str = None, line: int = None):
        where = f"{source}:{line}: " if source and line else (f"{source}: " if source else "")
        super().__init__(where + message)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``env`` holds ``name`` (inspection, gridworld or random) plus its
    parameters (``gamma``; ``n_states``, ``n_actions``, ``seed`` for random
    games). ``profile`` holds ``tau``, ``eps``, ``regularizer`` and ``lam``;
    ``schedule`` holds ``kind``, ``alpha``, ``beta`` and ``h``. ``params``
    carries the kind-specific settings listed in ``DEFAULT_PARAMS``.
    """

    kind: str
    env: dict = field(default_factory=lambda: {"name": "inspection", "gamma": 0.3})
    profile: dict = field(default_factory=lambda: {"tau": [5.0, 5.0], "eps": [0.2, 0.2],
                                                   "regularizer": "kl_log_barrier", "lam": [1.0, 1.0]})
    schedule: dict = field(default_factory=lambda: {"kind": "Constant", "alpha": 0.05, "beta": 0.5, "h": 1})
    seeds: list = field(default_factory=lambda: [0])
    out: str = DEFAULT_OUT
    oracle: bool = True
    params: dict = field(default_factory=dict)

    def risk_profile(self, tau=None) -> RiskProfile:
        p = self.profile
        t = p["tau"] if tau is None else [tau, tau]
        return RiskProfile(tuple(t), tuple(p["eps"]), RegularizerKind.parse(p["regularizer"]),
                           WeightVector(*p.get("lam", [1.0, 1.0])))

    def step_schedule(self) -> StepSchedule:
        s = self.schedule
        return StepSchedule(s["kind"], float(s["alpha"]), float(s["beta"]), int(s.get("h", 1)))

    def game(self) -> MarkovGame:
        e = self.env
        gamma = float(e.get("gamma", 0.9))
        if e["name"] == "inspection":
            return inspection_mg(gamma)
        if e["name"] == "gridworld":
            return gridworld_mg(gamma)
        return random_mg(int(e.get("n_states", 3)), tuple(e.get("n_actions", (2, 2))), gamma,
                         int(e.get("seed", 0)))

    def payoffs(self) -> PayoffPair:
        e = self.env
        if e["name"] == "inspection":
            return inspection_game()
        if e["name"] == "random":
            n1, n2 = e.get("n_actions", (2, 2))
            rng = np.random.default_rng(int(e.get("seed", 0)))
            return PayoffPair(rng.uniform(size=(n1, n2)), rng.uniform(size=(n1, n2)))
        raise ConfigurationError(f"environment {e['name']!r} is not a normal-form game")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-6`` (no decimal point) as a float, as JSON does."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def _lines(text: str) -> dict:
    """Map top-level and nested keys (dotted) to 1-based source lines."""
    out = {}
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(n, prefix):
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                key = f"{prefix}{k.value}"
                out[key] = k.start_mark.line + 1
                walk(v, key + ".")

    walk(node, "")
    return out


def load_config(path=None, kind: str = None, overrides: dict = None) -> ExperimentConfig:
    """Read a YAML (or JSON) config, apply overrides, fill defaults and validate.

    Raises
    ------
    ConfigError
        With ``file:line`` when the offending key can be located.
    """
    raw, lines, source = {}, {}, None
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", source) from exc
        try:
            raw = yaml.load(text, Loader=_Loader) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"malformed config: {exc}", source, mark.line + 1 if mark else None) from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping", source, 1)
        lines = _lines(text)
    raw = dict(raw)
    raw.pop("version", None)
    raw.pop("platform", None)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    if kind is not None:
        if raw.get("kind", kind) != kind:
            raise ConfigError(f"config kind {raw['kind']!r} does not match subcommand {kind!r}",
                              source, lines.get("kind"))
        raw["kind"] = kind

    def fail(msg, key):
        raise ConfigError(msg, source, lines.get(key))

    unknown = set(raw) - {f for f in ExperimentConfig.__dataclass_fields__}
    if unknown:
        k = sorted(unknown)[0]
        fail(f"unknown key {k!r}", k)
    if raw.get("kind") not in KINDS:
        fail(f"kind must be one of {', '.join(KINDS)}", "kind")
    base = ExperimentConfig(raw["kind"])
    for section in ("env", "profile", "schedule"):
        merged = dict(getattr(base, section))
        if section in raw:
            if not isinstance(raw[section], dict):
                fail(f"{section} must be a mapping", section)
            merged.update(raw[section])
        raw[section] = merged
    params = dict(DEFAULT_PARAMS[raw["kind"]])
    extra = raw.get("params") or {}
    if not isinstance(extra, dict):
        fail("params must be a mapping", "params")
    bad = set(extra) - set(params)
    if bad:
        k = sorted(bad)[0]
        fail(f"unknown parameter {k!r} for {raw['kind']}", f"params.{k}")
    params.update(extra)
    raw["params"] = params
    cfg = ExperimentConfig(**raw)

    if cfg.env.get("name") not in ENVS:
        fail(f"env.name must be one of {', '.join(ENVS)}", "env.name")
    seeds = cfg.seeds
    if isinstance(seeds, int):
        seeds = [seeds]
    if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        fail("seeds must be a non-empty list of unsigned integers", "seeds")
    cfg.seeds = list(seeds)
    checks = [("profile", cfg.risk_profile), ("env", cfg.game)]
    if cfg.kind in ("two_timescale", "maac"):
        checks.append(("schedule", cfg.step_schedule))
    if cfg.kind in ("normal_form_dynamics", "lipschitz_probe"):
        checks.append(("env.name", cfg.payoffs))
    for key, check in checks:
        try:
            check()
        except (RQEError, KeyError, TypeError, ValueError) as exc:
            fail(f"invalid {key}: {exc}", key)
    cfg.out = str(cfg.out)
    return cfg


# -- statistics ---------------------------------------------------------------


def summary_stats(values) -> dict:
    """Median, quartiles and IQR with linear interpolation."""
    v = np.asarray(values, dtype=float)
    q25, med, q75 = np.percentile(v, [25, 50, 75], method="linear")
    return {"median": float(med), "q25": float(q25), "q75": float(q75), "iqr": float(q75 - q25)}


def trailing_mean(x, window: int = MA_WINDOW) -> tuple[float, bool]:
    """Mean of the last ``window`` values; the flag is set when fewer were available."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    clipped = x.size < window
    return float(np.mean(x[-min(window, x.size):])), clipped


def moving_average(x, window: int = MA_WINDOW) -> np.ndarray:
    """Trailing moving average; the first entries average over what is available."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    k = np.arange(1, x.size + 1)
    lo = np.maximum(k - window, 0)
    return (c[k] - c[lo]) / (k - lo)


# -- pipelines ----------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if np.isnan(x) else "%.17g" % x
    return str(x)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _oracle(cfg: ExperimentConfig, mg: MarkovGame, profile: RiskProfile):
    if not cfg.oracle:
        return None
    vi = value_iteration(mg, profile, tol=cfg.params["oracle_tol"], floor=cfg.params.get("floor"))
    return vi.Q, vi.policy


def _run_certify(cfg, seed, out: Path) -> list[dict]:
    p = cfg.params
    profile = cfg.risk_profile()
    n = tuple(cfg.env.get("n_actions", (2, 2)))
    cert = certify(profile, n, floor=p["floor"], n_samples=p["n_samples"], seed=seed)
    row = {"variant": "", "seed": seed, "product_test": 16.0 * profile.product,
           "closed_form": closed_form_test(profile), "evidence": cert.evidence.value,
           "is_strict": cert.is_strict, "is_strong": cert.is_strong, "mu": cert.mu,
           "lambda1": cert.lam.lambda1, "lambda2": cert.lam.lambda2, "min_eig": cert.min_eig}
    _write_rows(out / f"certificate_seed{seed}.csv", list(row), [list(row.values())])
    print(f"seed {seed}: {cert.evidence.value} certificate, 16*eps1*eps2*tau1*tau2 = {row['product_test']:g}, "
          f"strict={cert.is_strict}, strong={cert.is_strong}, mu={cert.mu:.6g}")
    return [row]


def _run_dynamics(cfg, seed, out: Path) -> list[dict]:
    p = cfg.params
    R = cfg.payoffs()
    variants = [(f"tau{t:g}", cfg.risk_profile(t), False) for t in p["taus"]]
    if p["risk_neutral"]:
        variants.append(("risk_neutral", cfg.risk_profile(), True))
    rows = []
    for name, profile, neutral in variants:
        rep = solve(R, profile, eta=p["eta"], tol=p["tol"], max_iter=p["max_iter"], risk_neutral=neutral,
                    record=True, record_every=p["record_every"])
        write_trajectory_csv(out / f"trajectory_{name}_seed{seed}.csv", rep)
        rows.append({"variant": name, "seed": seed, "iterations": rep.iterations,
                     "converged": rep.converged, "final_step_norm": rep.final_step_norm})
    return rows


def _run_vi(cfg, seed, out: Path) -> list[dict]:
    p = cfg.params
    res = value_iteration(cfg.game(), cfg.risk_profile(), alpha=p["alpha"], tol=p["tol"],
                          max_sweeps=p["max_sweeps"])
    _write_rows(out / f"trajectory_seed{seed}.csv", ["sweep", "residual", "q_max_norm", "q_span"], res.history)
    return [{"variant": "", "seed": seed, "sweeps": res.sweeps, "residual": res.residual,
             "q_max_norm": res.Q.max_norm(), "q_span": res.Q.span()}]


def _run_tt(cfg, seed, out: Path) -> list[dict]:
    p = cfg.params
    mg, profile = cfg.game(), cfg.risk_profile()
    res = run(mg, profile, cfg.step_schedule(), p["n_iter"], oracle=_oracle(cfg, mg, profile), floor=p["floor"])
    write_tt_csv(out / f"trajectory_seed{seed}.csv", res)
    last = res.trajectory[-1] if res.trajectory else (0, np.nan, np.nan, np.nan, np.nan)
    return [{"variant": "", "seed": seed, "iterations": last[0], "q_residual": last[3], "z_distance": last[4]}]


def _run_maac(cfg, seed, out: Path) -> list[dict]:
    p = cfg.params
    mg, profile = cfg.game(), cfg.risk_profile()
    mc = MaacConfig(cfg.step_schedule(), int(p["K"]), int(p["n_episodes"]), p["mode"], seed=seed,
                    floor=p["floor"], risk_neutral=bool(p["risk_neutral"]), reset=bool(p["reset"]))
    oracle = None if p["risk_neutral"] else _oracle(cfg, mg, profile)
    res = train(mg, profile, mc, oracle=oracle)
    write_maac_csv(out / f"trajectory_seed{seed}.csv", res)
    ma, clipped = trailing_mean(res.column("mean_reward"))
    return [{"variant": "", "seed": seed, "z_distance": res.column("z_distance")[-1],
             "q_distance": res.column("q_distance")[-1], "mean_reward_ma": ma, "window_clipped": clipped}]


def _run_lipschitz(cfg, seed, out: Path) -> list[dict]:
    p = cfg.params
    profile = cfg.risk_profile()
    ratio, bound = lipschitz_probe(cfg.payoffs(), p["delta"], p["n_trials"], profile, seed=seed, tol=p["tol"])
    row = {"variant": "", "seed": seed, "max_ratio": ratio, "bound": bound, "within_bound": ratio <= bound}
    _write_rows(out / f"probe_seed{seed}.csv", list(row), [list(row.values())])
    return [row]


RUNNERS = {"certify": _run_certify, "normal_form_dynamics": _run_dynamics, "value_iteration": _run_vi,
           "two_timescale": _run_tt, "maac": _run_maac, "lipschitz_probe": _run_lipschitz}


def _run_seed(args):
    cfg, seed, out = args
    return RUNNERS[cfg.kind](cfg, seed, Path(out))


def write_summary(path, rows: list[dict]) -> None:
    """Per-seed rows, then median and IQR rows for every numeric column, per variant."""
    if not rows:
        return
    header = list(rows[0])
    for r in rows[1:]:
        header += [k for k in r if k not in header]
    body = [["per_seed"] + [r.get(k, "") for k in header] for r in rows]
    variants = list(dict.fromkeys(r.get("variant", "") for r in rows))
    for v in variants:
        group = [r for r in rows if r.get("variant", "") == v]
        stats = {}
        for k in header:
            vals = [r.get(k) for r in group]
            if k in ("seed", "variant") or not all(isinstance(x, (int, float, np.integer, np.floating))
                                                   and not isinstance(x, (bool, np.bool_)) for x in vals):
                continue
            stats[k] = summary_stats(vals)
        for stat in ("median", "iqr"):
            body.append([stat] + [v if k == "variant" else (stats[k][stat] if k in stats else "")
                                  for k in header])
    _write_rows(path, ["row"] + header, body)


def resolve_out(cfg_out: Optional[str], cli_out: Optional[str]) -> Path:
    """``--out`` beats ``$RQE_OUT_DIR``, which beats the config's ``out``."""
    if cli_out:
        return Path(cli_out)
    if os.environ.get(OUT_ENV_VAR):
        return Path(os.environ[OUT_ENV_VAR])
    return Path(cfg_out or DEFAULT_OUT)


def write_manifest(path, cfg: ExperimentConfig) -> None:
    d = asdict(cfg)
    d["version"] = __version__
    d["platform"] = {"python": platform.python_version(), "numpy": np.__version__}
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[dict]:
    """Run every seed, then write ``summary.csv`` and ``manifest.json``.

    On failure a ``FAILED`` file with the error is left next to whatever
    outputs were already written, and the exception propagates.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("FAILED",):
        (out / stale).unlink(missing_ok=True)
    write_manifest(out / "manifest.json", cfg)
    jobs = [(cfg, s, str(out)) for s in cfg.seeds]
    try:
        if threads > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(_run_seed, jobs))
        else:
            results = [_run_seed(j) for j in jobs]
    except Exception as exc:
        (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    rows = [r for res in results for r in res]
    write_summary(out / "summary.csv", rows)
    return rows


# -- summarizing trajectory files ----------------------------------------------


class SummaryInputError(RQEError):
    """A trajectory file could not be parsed."""


def read_trajectory(path) -> dict:
    """Columns of a trajectory CSV as float arrays (non-numeric columns kept as strings)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SummaryInputError(f"{path}:1: empty file") from None
        cols = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SummaryInputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for h, v in zip(header, row):
                cols[h].append(v)
    out = {}
    for h, vals in cols.items():
        try:
            out[h] = np.array([float(v) if v != "" else np.nan for v in vals])
        except ValueError:
            out[h] = np.array(vals)
    return out


def _default_metric(cols: dict) -> str:
    for name in ("mean_reward", "z_distance", "distance_to_oracle", "step_norm", "residual"):
        if name in cols:
            return name
    raise SummaryInputError("no known metric column; pass --metric")


def summarize(paths, out_path, metric: str = None, window: int = MA_WINDOW, plot_script=None) -> list[dict]:
    """Per-file final values and trailing moving averages, plus median/IQR rows.

    The moving average covers the last ``window`` rows; files with fewer rows
    use all of them and are flagged in the ``window_clipped`` column.
    """
    rows = []
    for path in paths:
        cols = read_trajectory(path)
        m = metric or _default_metric(cols)
        if m not in cols:
            raise SummaryInputError(f"{path}:1: no column {m!r}")
        x = cols[m]
        if x.dtype.kind != "f" or x.size == 0:
            raise SummaryInputError(f"{path}:2: column {m!r} is not numeric")
        ma, clipped = trailing_mean(x, window)
        rows.append({"variant": "", "file": str(path), "metric": m, "rows": int(x.size), "final": float(x[-1]),
                     "moving_average": ma, "window": min(window, x.size), "window_clipped": clipped})
    write_summary(out_path, rows)
    if plot_script is not None:
        write_plot_script(plot_script, paths, metric or _default_metric(read_trajectory(paths[0])))
    return rows


def write_plot_script(path, paths, metric: str) -> None:
    """Gnuplot script drawing ``metric`` against the first column of every file."""
    lines = ["set datafile separator ','", "set key outside autotitle columnhead", f"set ylabel '{metric}'"]
    if metric != "mean_reward":
        lines.append("set logscale y")
    plots = []
    for p in paths:
        col = list(read_trajectory(p)).index(metric) + 1
        plots.append(f"'{p}' using 1:{col} with lines title '{Path(p).stem}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    Path(path).write_text("\n".join(lines) + "\n")
