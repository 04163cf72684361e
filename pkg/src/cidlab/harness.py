"""Config-driven experiment runner and report builder.

An experiment config is an INI file::

    [experiment]
    id = polya-urn
    replicates = 3
    master_seed = 2012
    checkpoints = 1, 10, 100, 1000
    output_dir = out

    [model]
    tag = polya
    weights = 1, 1

    [diagnostic:tv_curve]
    threshold = 0.05
    expected_verdict = pass

Each ``[diagnostic:<name>]`` section names a registered diagnostic; its keys
other than ``expected_verdict`` are passed to it. List values are comma
separated; for ``targets`` individual targets are separated by ``;``.
Replicate ``i`` runs with seed ``substream_seed(master_seed, i)``.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from . import rng as rngmod
from .calibration import EMPIRICAL_GAP, POLYA_ATOM_GAP
from .diagnostics import (
    DiagnosticsSeries,
    atom_sup_gap,
    doob_check,
    empirical_gap,
    identity_pattern_search,
    lp_curve,
    martingale_residual,
    spearman,
    tv_curve,
)
from .measures import CompactWindow
from .models import (
    ModelSpec,
    Trajectory,
    WeightSequence,
    directing,
    fd_density_small_n,
    sample_trajectory,
    weight_sequence,
)


class ConfigError(ValueError):
    """Invalid experiment config; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# diagnostics registry ---------------------------------------------------

Runner = Callable[[ModelSpec, Trajectory, dict, tuple], DiagnosticsSeries]


def _window(traj: Trajectory, params: dict) -> CompactWindow:
    lo, hi = params.get("window", (-3.0, 3.0))
    if params.get("center") == "v_hat":
        shift = traj.latent["v_hat"]
        lo, hi = lo + shift, hi + shift
    return CompactWindow(lo, hi)


def _run_tv(spec, traj, params, cps):
    return tv_curve(traj, cps, threshold=params.get("threshold"))


def _run_atom_gap(spec, traj, params, cps):
    alpha = directing(spec, traj)
    vals = [atom_sup_gap(traj, int(n), alpha) for n in cps]
    thr = float(params.get("threshold", POLYA_ATOM_GAP))
    return DiagnosticsSeries.exact(
        "atom_sup_gap", cps, vals, verdict="pass" if vals[-1] <= thr else "fail",
        threshold_used=thr, seed=spec.seed,
    )


def _run_empirical_gap(spec, traj, params, cps):
    cps = tuple(n for n in cps if n >= 1)
    vals = [empirical_gap(traj, int(n)) for n in cps]
    thr = float(params.get("threshold", EMPIRICAL_GAP))
    return DiagnosticsSeries.exact(
        "empirical_gap", cps, vals, verdict="pass" if vals[-1] <= thr else "fail",
        threshold_used=thr, seed=spec.seed,
    )


def _run_lp(spec, traj, params, cps):
    return lp_curve(traj, _window(traj, params), float(params.get("p", 2.0)), cps)


def _run_martingale(spec, traj, params, cps):
    n = int(params.get("history", 10))
    targets = params.get("targets", ((0,),) if spec.tag == "polya" else (0.0,))
    if spec.tag != "polya":
        targets = [t[0] if isinstance(t, tuple) else t for t in targets]
    return martingale_residual(
        spec, traj.prefix(n), targets, int(params.get("trials", 10_000)), spec.seed
    )


def _run_doob(spec, traj, params, cps):
    lo, hi = params.get("window", (-3.0, 3.0))
    report = doob_check(
        spec, CompactWindow(lo, hi), float(params.get("p", 2.0)),
        int(params.get("n_max", 100)), int(params.get("trials", 200)), spec.seed,
    )
    return report.series


def _run_pattern(spec, traj, params, cps):
    rep = identity_pattern_search(
        spec, int(params.get("n", 2)), int(params.get("trials", 1000)), spec.seed,
        mode=str(params.get("mode", "blocks")),
    )
    return rep.to_series(spec.seed)


def _run_ratio(spec, traj, params, cps):
    from .fractal import ratio_curve

    return ratio_curve(weight_sequence(traj), spec.seed)


def _run_cover_dimension(spec, traj, params, cps):
    from .fractal import cover_series

    depths = tuple(int(d) for d in params.get("depths", (5, 10, 15, 20)))
    covers = cover_series(weight_sequence(traj), depths)
    dims = np.array([c.dim_estimate for c in covers])
    thr = float(params.get("threshold", 0.25))
    ok = bool(np.all(np.diff(dims) < 0) and dims[-1] <= thr)
    return DiagnosticsSeries.exact(
        "cover_dimension", depths, dims, verdict="pass" if ok else "fail",
        threshold_used=thr, seed=spec.seed,
        notes={"N": [c.interval_count for c in covers],
               "epsilon": [c.max_interval_length for c in covers]},
    )


def _run_cover_mass(spec, traj, params, cps):
    from .fractal import cover_mass_check

    depth = int(params.get("depth", 5))
    frac = cover_mass_check(
        weight_sequence(traj), depth, int(params.get("samples", 100_000)), spec.seed
    )
    return DiagnosticsSeries.exact(
        "cover_mass_check", [depth], [frac], verdict="pass" if frac == 1.0 else "fail",
        threshold_used=1.0, seed=spec.seed,
    )


def _run_fd_density(spec, traj, params, cps):
    depth = int(params.get("depth", 10))
    v = WeightSequence(weight_sequence(traj).values[:depth])
    dens, atom = fd_density_small_n(spec, v)
    total = dens.integral() + atom
    upper = sum(m**-m for m in range(1, depth + 1))
    outside = dens.values[(dens.x < 0) | (dens.x > upper)]
    ok = abs(total - 1.0) <= 1e-3 and np.all(dens.values >= 0) and not np.any(outside > 0)
    return DiagnosticsSeries.exact(
        "fd_density", [depth], [total], verdict="pass" if ok else "fail",
        threshold_used=1e-3, seed=spec.seed,
        notes={"atom_at_zero": atom, "continuous_mass": dens.integral()},
    )


DIAGNOSTICS: dict[str, Runner] = {
    "tv_curve": _run_tv,
    "atom_sup_gap": _run_atom_gap,
    "empirical_gap": _run_empirical_gap,
    "lp_curve": _run_lp,
    "martingale_residual": _run_martingale,
    "doob_check": _run_doob,
    "identity_pattern_search": _run_pattern,
    "ratio_curve": _run_ratio,
    "cover_dimension": _run_cover_dimension,
    "cover_mass_check": _run_cover_mass,
    "fd_density": _run_fd_density,
}

THEOREM_TAGS = {
    "tv_curve": "T1",
    "martingale_residual": "T1",
    "atom_sup_gap": "T2",
    "empirical_gap": "T2",
    "lp_curve": "T3",
    "doob_check": "T3",
    "identity_pattern_search": "Ex3",
    "ratio_curve": "Ex3",
    "cover_dimension": "Ex3",
    "cover_mass_check": "Ex3",
    "fd_density": "Ex3",
}


def theorem_tag(model_tag: str, diagnostic: str) -> str:
    # the failing c.i.d. example belongs to the atom condition
    if model_tag == "gauss-cid" and diagnostic == "tv_curve":
        return "T2"
    if model_tag == "singular":
        return "Ex3"
    return THEOREM_TAGS[diagnostic]


# config -----------------------------------------------------------------

@dataclass(frozen=True)
class DiagnosticConfig:
    name: str
    params: dict = field(default_factory=dict)
    expected_verdict: str = "pass"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    model: ModelSpec
    checkpoints: tuple[int, ...]
    replicates: int
    diagnostics: tuple[DiagnosticConfig, ...]
    output_dir: str = "out"
    master_seed: int = 0

    def __post_init__(self):
        if not self.experiment_id or "/" in self.experiment_id:
            raise ConfigError("experiment.id", "must be a non-empty name without '/'")
        if self.replicates < 1:
            raise ConfigError("experiment.replicates", "must be >= 1")
        cps = list(self.checkpoints)
        if not cps or cps != sorted(cps) or len(set(cps)) != len(cps) or cps[0] < 0:
            raise ConfigError("experiment.checkpoints", "must be distinct, ascending, >= 0")
        try:
            rngmod.check_seed(self.master_seed)
        except ValueError as exc:
            raise ConfigError("experiment.master_seed", str(exc)) from None
        for d in self.diagnostics:
            if d.name not in DIAGNOSTICS:
                raise ConfigError(f"diagnostic:{d.name}", f"unknown diagnostic: {d.name}")
            if d.expected_verdict not in ("pass", "fail", "inconclusive"):
                raise ConfigError(f"diagnostic:{d.name}.expected_verdict",
                                  f"bad verdict {d.expected_verdict!r}")

    @property
    def horizon(self) -> int:
        return max(1, self.checkpoints[-1])

    def replicate_seeds(self) -> list[int]:
        return [rngmod.substream_seed(self.master_seed, i) for i in range(self.replicates)]

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "model": {"tag": self.model.tag, "params": self.model.to_dict()["params"]},
            "checkpoints": list(self.checkpoints),
            "replicates": self.replicates,
            "diagnostics": [
                {"name": d.name, "params": _jsonable(d.params),
                 "expected_verdict": d.expected_verdict}
                for d in self.diagnostics
            ],
            "output_dir": self.output_dir,
            "master_seed": self.master_seed,
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig(**{**self.__dict__, **changes})


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _scalar(text: str):
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _value(key: str, text: str):
    if key == "targets":
        return tuple(tuple(_scalar(p) for p in t.split(",")) for t in text.split(";"))
    if "," in text:
        return tuple(_scalar(p) for p in text.split(","))
    return _scalar(text)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc)) from None
    for sec in ("experiment", "model"):
        if not cp.has_section(sec):
            raise ConfigError(sec, "missing section")
    exp = cp["experiment"]

    def get(key, cast, default=None):
        if key not in exp:
            if default is None:
                raise ConfigError(f"experiment.{key}", "missing")
            return default
        try:
            return cast(exp[key])
        except ValueError:
            raise ConfigError(f"experiment.{key}", f"cannot parse {exp[key]!r}") from None

    model_params = {k: _value(k, v) for k, v in cp["model"].items() if k != "tag"}
    if "tag" not in cp["model"]:
        raise ConfigError("model.tag", "missing")
    if "weights" in model_params and not isinstance(model_params["weights"], tuple):
        model_params["weights"] = (model_params["weights"],)
    try:
        model = ModelSpec(cp["model"]["tag"], model_params)
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None

    diags = []
    for sec in cp.sections():
        if sec.startswith("diagnostic:"):
            name = sec.split(":", 1)[1].strip()
            params = {k: _value(k, v) for k, v in cp[sec].items()}
            expected = str(params.pop("expected_verdict", "pass"))
            diags.append(DiagnosticConfig(name, params, expected))
        elif sec not in ("experiment", "model"):
            raise ConfigError(sec, "unknown section")

    def ints(s):
        return tuple(int(p) for p in s.split(","))

    return ExperimentConfig(
        experiment_id=get("id", str),
        model=model,
        checkpoints=get("checkpoints", ints),
        replicates=get("replicates", int, 1),
        diagnostics=tuple(diags),
        output_dir=get("output_dir", str, "out"),
        master_seed=get("master_seed", int, 0),
    )


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def default_configs() -> list[tuple[str, ExperimentConfig]]:
    """The shipped suite, one config per model."""
    root = resources.files("cidlab") / "configs"
    out = []
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".ini"):
            out.append((entry.name, parse_config(entry.read_text())))
    return out


# running ----------------------------------------------------------------

@dataclass
class RunManifest:
    experiment_id: str
    config_hash: str
    tool_version: str
    rng_algorithm: str
    master_seed: int
    replicate_seeds: list[int]
    files: list[str]
    errors: list[dict]
    verdicts: dict[str, dict]
    wall_clock_seconds: float
    path: str = ""

    @property
    def all_expected(self) -> bool:
        return all(v["matches_expected"] for v in self.verdicts.values())

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("path")
        d["all_expected"] = self.all_expected
        return d


def _cell(args) -> tuple[int, str, dict]:
    """One (replicate, diagnostic) cell; returns the series as plain data."""
    config, index, seed, name = args
    spec = config.model.with_seed(seed)
    diag = next(d for d in config.diagnostics if d.name == name)
    try:
        traj = sample_trajectory(spec, config.horizon)
        series = DIAGNOSTICS[name](spec, traj, dict(diag.params), config.checkpoints)
    except Exception as exc:  # recorded per cell; the run continues
        return index, name, {"error": f"{type(exc).__name__}: {exc}", "seed": seed}
    return index, name, {
        "csv": series.to_csv(),
        "verdict": series.verdict,
        "threshold_used": series.threshold_used,
        "final": series.final,
        "seed": seed,
    }


def run(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> RunManifest:
    """Run every (replicate x diagnostic) cell and write CSV/JSON artifacts."""
    t0 = time.perf_counter()
    root = Path(out_dir or config.output_dir) / config.experiment_id
    root.mkdir(parents=True, exist_ok=True)
    seeds = config.replicate_seeds()
    cells = [(config, i, s, d.name) for i, s in enumerate(seeds) for d in config.diagnostics]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell, cells))
    else:
        results = [_cell(c) for c in cells]

    files, errors = [], []
    by_diag: dict[str, list] = {d.name: [] for d in config.diagnostics}
    for index, name, res in results:
        by_diag[name].append((index, res))
        if "error" in res:
            errors.append({"replicate": index, "diagnostic": name, **res})
            continue
        fname = f"{name}.r{index:03d}.csv"
        (root / fname).write_text(res["csv"], newline="")
        files.append(fname)

    verdicts = {}
    for d in config.diagnostics:
        reps = sorted(by_diag[d.name], key=lambda r: r[0])
        rep_verdicts = [r.get("verdict", "inconclusive") for _, r in reps]
        if any(v == "fail" for v in rep_verdicts):
            agg = "fail"
        elif all(v == "pass" for v in rep_verdicts):
            agg = "pass"
        else:
            agg = "inconclusive"
        record = {
            "label": d.name,
            "verdict": agg,
            "threshold_used": next((r["threshold_used"] for _, r in reps if "verdict" in r), None),
            "seed": config.master_seed,
            "expected_verdict": d.expected_verdict,
            "matches_expected": agg == d.expected_verdict,
            "fail_as_expected": agg == "fail" and d.expected_verdict == "fail",
            "theorem": theorem_tag(config.model.tag, d.name),
            "model": config.model.tag,
            "replicates": [
                {"index": i, "seed": r["seed"], "verdict": r.get("verdict", "inconclusive"),
                 "final": r.get("final"), "error": r.get("error")}
                for i, r in reps
            ],
        }
        fname = f"{d.name}.verdict.json"
        (root / fname).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        files.append(fname)
        verdicts[d.name] = record

    manifest = RunManifest(
        experiment_id=config.experiment_id,
        config_hash=config.config_hash(),
        tool_version=__version__,
        rng_algorithm=rngmod.ALGORITHM,
        master_seed=config.master_seed,
        replicate_seeds=seeds,
        files=sorted(files),
        errors=errors,
        verdicts={k: {"verdict": v["verdict"], "expected_verdict": v["expected_verdict"],
                      "matches_expected": v["matches_expected"]} for k, v in verdicts.items()},
        wall_clock_seconds=time.perf_counter() - t0,
        path=str(root / "manifest.json"),
    )
    Path(manifest.path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest


# reporting --------------------------------------------------------------

REPORT_COLUMNS = ("experiment", "diagnostic", "theorem", "final_value", "trend",
                  "verdict", "expected", "status")


def _series_from_csv(path: Path):
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [int(r["n"]) for r in rows], [float(r["value"]) for r in rows]


def _trend(ns, values) -> str:
    rho = spearman(ns, values)
    if math.isnan(rho):
        return "flat"
    return "down" if rho < 0 else ("up" if rho > 0 else "flat")


def report(manifest_paths) -> list[dict]:
    """One row per (experiment, diagnostic) across the given manifests."""
    rows = []
    for mp in manifest_paths:
        mp = Path(mp)
        if not mp.is_file():
            rows.append({**dict.fromkeys(REPORT_COLUMNS, ""), "experiment": str(mp),
                         "status": "incomplete"})
            continue
        man = json.loads(mp.read_text())
        for name in sorted(man["verdicts"]):
            vpath = mp.parent / f"{name}.verdict.json"
            row = dict.fromkeys(REPORT_COLUMNS, "")
            row.update(experiment=man["experiment_id"], diagnostic=name)
            if not vpath.is_file():
                rows.append({**row, "status": "incomplete"})
                continue
            rec = json.loads(vpath.read_text())
            series = []
            for rep in rec["replicates"]:
                cpath = mp.parent / f"{name}.r{rep['index']:03d}.csv"
                if cpath.is_file():
                    series.append(_series_from_csv(cpath))
            if len(series) != len(rec["replicates"]) or not series:
                rows.append({**row, "theorem": rec["theorem"], "status": "incomplete"})
                continue
            ns = series[0][0]
            same = all(s[0] == ns for s in series)
            mean_vals = np.mean([s[1] for s in series], axis=0) if same else [np.nan]
            finals = [s[1][-1] for s in series]
            row.update(
                theorem=rec["theorem"],
                final_value="%.6g" % float(np.mean(finals)),
                trend=_trend(ns, mean_vals) if same else "n/a",
                verdict=rec["verdict"],
                expected=rec["expected_verdict"],
                status="ok" if rec["matches_expected"] else "mismatch",
            )
            rows.append(row)
    return rows


def report_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def report_text(rows) -> str:
    widths = [max([len(c)] + [len(str(r[c])) for r in rows]) for c in REPORT_COLUMNS]
    lines = ["  ".join(c.ljust(w) for c, w in zip(REPORT_COLUMNS, widths)).rstrip()]
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(w) for c, w in zip(REPORT_COLUMNS, widths)).rstrip())
    return "\n".join(lines) + "\n"


def run_suite(out_dir, master_seed: int | None = None, jobs: int = 1):
    """Run the shipped configs; returns (manifests, report rows, all_expected)."""
    manifests = []
    for _, cfg in default_configs():
        if master_seed is not None:
            cfg = cfg.replace(master_seed=master_seed)
        manifests.append(run(cfg, out_dir, jobs))
    rows = report([m.path for m in manifests])
    out = Path(out_dir)
    (out / "report.csv").write_text(report_csv(rows), newline="")
    (out / "report.txt").write_text(report_text(rows))
    ok = all(m.all_expected and not m.errors for m in manifests)
    return manifests, rows, ok
