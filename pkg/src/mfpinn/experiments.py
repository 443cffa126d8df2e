"""Experiment orchestration: oracle data, training runs, metrics and CSV artifacts.

Every run owns a directory ``<out>/<variant>[/n<labels>]/seed<s>`` holding its
labeled data, loss history, error field and model bundle. All CSVs start with
a comment header carrying the config hash and seed, and contain nothing that
varies between identical runs.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffnet, heat, pinn
from . import multifidelity as mf
from .config import ExperimentConfig
from .errors import ConfigurationError
from .heat import FieldSolution, LabeledSet
from .metrics import ErrorField, error_field, relative_l2

VARIANTS = ("pinn", "pinn+data", "mfpinn", "mfpinn+data")
SWEEP_COLUMNS = ["variant", "labeled_n", "seed", "rel_l2"]
# offsets keep the label draws of one seed independent of each other and of the point sets
LABEL_SEED_OFFSETS = {"high": 100, "low": 200, "cooldown": 300}


@dataclass
class Oracle:
    test_fields: dict     # fidelity -> FieldSolution on the test snapshots
    label_fields: dict    # fidelity -> FieldSolution on the denser label lattice
    grids: dict           # fidelity -> LabeledSet test grid


_ORACLES: dict = {}


def oracle(config: ExperimentConfig) -> Oracle:
    """Oracle fields for both fidelities, cached per config."""
    key = config.hash()
    if key not in _ORACLES:
        o = config.oracle
        tests, labels, grids = {}, {}, {}
        for fid in ("low", "high"):
            setup = config.setup(fid)
            kw = dict(n_elements=o.n_elements, dt=o.dt, max_step_change=o.max_step_change)
            tests[fid] = heat.solve(setup, n_snapshots=o.test_snapshots, **kw)
            labels[fid] = heat.solve(setup, n_snapshots=o.label_snapshots, **kw)
            grids[fid] = heat.test_grid(tests[fid], o.n_elements + 1, o.test_snapshots)
        _ORACLES[key] = Oracle(tests, labels, grids)
    return _ORACLES[key]


def header(config: ExperimentConfig, seed=None, **extra) -> str:
    lines = [f"config {config.hash()}"]
    if seed is not None:
        lines.append(f"seed {seed}")
    lines += [f"{k} {v}" for k, v in extra.items()]
    return "\n".join(lines)


@dataclass
class RunResult:
    variant: str
    seed: int
    labeled_n: int
    rel_l2: float
    max_abs_err: float
    max_at: tuple
    max_err_outside_cooldown: float
    max_err_cooldown: float
    directory: str = ""

    def as_dict(self) -> dict:
        return {"variant": self.variant, "seed": self.seed, "labeled_n": self.labeled_n, "rel_l2": self.rel_l2,
                "max_abs_err_C": self.max_abs_err, "max_at_x_m": self.max_at[0], "max_at_t_s": self.max_at[1],
                "max_err_outside_cooldown_C": self.max_err_outside_cooldown,
                "max_err_cooldown_C": self.max_err_cooldown, "directory": self.directory}


@dataclass
class ExperimentResult:
    variant: str
    labeled_n: int
    runs: list = field(default_factory=list)

    @property
    def median(self) -> float:
        return float(np.median([r.rel_l2 for r in self.runs]))

    def median_of(self, attr: str) -> float:
        return float(np.median([getattr(r, attr) for r in self.runs]))


def default_labels(config: ExperimentConfig, variant: str) -> int:
    return {"pinn": 0, "pinn+data": config.labels.pinn_data, "mfpinn": 0,
            "mfpinn+data": config.labels.cooldown}[variant]


def _summarize(config: ExperimentConfig, variant: str, seed: int, labeled_n: int, predict, grid: LabeledSet,
               run_dir: Path) -> tuple[RunResult, ErrorField]:
    err = error_field(predict, grid)
    lo, hi = config.labels.cooldown_window
    result = RunResult(variant, seed, labeled_n, relative_l2(predict(grid.x, grid.t), grid.temperature),
                       err.max, err.argmax, err.max_outside(lo, hi), err.max_in(lo, hi), str(run_dir))
    err.write_csv(run_dir / "error_field.csv", header(config, seed, variant=variant, labeled_n=labeled_n))
    return result, err


def _point_sets(config: ExperimentConfig, seed: int):
    return pinn.sample_points(config.points, seed)


def _train_low(config: ExperimentConfig, seed: int, out: Path):
    """Low-fidelity network for one seed, with its own artifacts under ``out/mfpinn-low``."""
    run_dir = out / "mfpinn-low" / f"seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    orc = oracle(config)
    norm = config.normalization()
    data = heat.sample_labeled(orc.label_fields["low"], config.labels.low_fidelity, seed + LABEL_SEED_OFFSETS["low"])
    heat.write_points_csv(data, run_dir / "labels.csv", header(config, seed, fidelity="low"))
    low, history = mf.train_low(config.setup("low"), data, _point_sets(config, seed), config.train_config(seed),
                                config.layer_sizes(2), norm)
    pinn.write_history_csv(history, run_dir / "history.csv", header(config, seed, fidelity="low"))
    predict = lambda x, t: mf.predict_single(low, norm, x, t)  # noqa: E731
    result, _ = _summarize(config, "mfpinn-low", seed, len(data), predict, orc.grids["low"], run_dir)
    mf.save_bundle(run_dir / "bundle", "pinn", {"net": low}, {"high": norm}, {"high": config.setup("low")},
                   {"variant": "mfpinn-low", "seed": seed, "rel_l2": result.rel_l2, "config": config.hash()})
    return low, result


def run_single(config: ExperimentConfig, variant: str, seed: int, out: str | Path | None = None,
               labeled_n: int | None = None, low_cache: dict | None = None, run_dir: Path | None = None) -> RunResult:
    """Train and evaluate one (variant, seed) and write its artifacts."""
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    out = Path(out if out is not None else config.out_dir)
    n = default_labels(config, variant) if labeled_n is None else int(labeled_n)
    if n < 0:
        raise ConfigurationError("labeled_n must be nonnegative")
    if run_dir is None:
        run_dir = out / variant / f"seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    orc = oracle(config)
    norm = config.normalization()
    setup_h = config.setup("high")
    sets = _point_sets(config, seed)
    tcfg = config.train_config(seed)
    tag = header(config, seed, variant=variant, labeled_n=n)

    if variant.startswith("pinn"):
        data = (heat.sample_labeled(orc.label_fields["high"], n, seed + LABEL_SEED_OFFSETS["high"])
                if n else LabeledSet.empty())
        heat.write_points_csv(data, run_dir / "labels.csv", tag)
        net, history = pinn.train(diffnet.init_params(config.layer_sizes(2), seed),
                                  sets.with_labels(norm.normalize_labels(data)), pinn.LossWeights(), tcfg,
                                  setup_h, norm)
        pinn.write_history_csv(history, run_dir / "history.csv", tag)
        predict = lambda x, t: mf.predict_single(net, norm, x, t)  # noqa: E731
        networks, norms, setups, kind = {"net": net}, {"high": norm}, {"high": setup_h}, "pinn"
    else:
        cache = low_cache if low_cache is not None else {}
        if seed not in cache:
            cache[seed] = _train_low(config, seed, out)[0]
        low = cache[seed]
        data = (mf.augment_cooldown(orc.label_fields["high"], n, seed + LABEL_SEED_OFFSETS["cooldown"],
                                    (config.labels.cooldown_window, None)) if n else LabeledSet.empty())
        heat.write_points_csv(data, run_dir / "labels.csv", tag)
        model = mf.MfModel(low, None, norm, norm, config.setup("low"), setup_h)
        high, history = mf.train_high(model, setup_h, data, sets, tcfg, config.layer_sizes(3))
        model.high = high
        pinn.write_history_csv(history, run_dir / "history.csv", tag)
        predict = lambda x, t: mf.predict(model, x, t)  # noqa: E731
        networks = {"low": low, "high": high}
        norms = {"low": norm, "high": norm}
        setups = {"low": config.setup("low"), "high": setup_h}
        kind = "mfpinn"

    result, _ = _summarize(config, variant, seed, n, predict, orc.grids["high"], run_dir)
    mf.save_bundle(run_dir / "bundle", kind, networks, norms, setups,
                   {"variant": variant, "seed": seed, "labeled_n": n, "rel_l2": result.rel_l2,
                    "config": config.hash()})
    return result


# pooled jobs ---------------------------------------------------------------

def _job(args) -> list[RunResult]:
    config, out, seed, tasks = args
    low_cache: dict = {}
    results = []
    for variant, n, run_dir in tasks:
        results.append(run_single(config, variant, seed, out, n, low_cache, Path(run_dir)))
    return results


def _run_jobs(config: ExperimentConfig, jobs: list) -> list[RunResult]:
    """Run per-seed job lists, in a process pool when ``config.workers`` > 1."""
    if config.workers == 1 or len(jobs) == 1:
        batches = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            batches = list(pool.map(_job, jobs))
    return [r for batch in batches for r in batch]


def run_experiment(config: ExperimentConfig, variant: str, out: str | Path | None = None,
                   labeled_n: int | None = None) -> ExperimentResult:
    """One variant over every seed of the config; per-seed results plus their median."""
    out = Path(out if out is not None else config.out_dir)
    n = default_labels(config, variant) if labeled_n is None else int(labeled_n)
    jobs = [(config, str(out), s, [(variant, n, str(out / variant / f"seed{s}"))]) for s in config.seeds]
    res = ExperimentResult(variant, n, _run_jobs(config, jobs))
    write_sweep_csv(out / f"{variant}_runs.csv", [res], config, per_seed=True)
    return res


def _group(results: list[RunResult], keys: list[tuple]) -> list[ExperimentResult]:
    groups = {k: ExperimentResult(*k) for k in keys}
    for r in results:
        groups[(r.variant, r.labeled_n)].runs.append(r)
    for g in groups.values():
        g.runs.sort(key=lambda r: r.seed)
    return list(groups.values())


def reproduce_table2(config: ExperimentConfig, out: str | Path | None = None) -> list[ExperimentResult]:
    """Vanilla PINN with growing labeled sets."""
    out = Path(out if out is not None else config.out_dir) / "table2"
    sizes = list(config.labels.sweep)
    jobs = [(config, str(out), s, [("pinn+data", n, str(out / f"n{n}" / f"seed{s}")) for n in sizes])
            for s in config.seeds]
    rows = _group(_run_jobs(config, jobs), [("pinn+data", n) for n in sizes])
    write_sweep_csv(out / "table2_runs.csv", rows, config, per_seed=True)
    write_sweep_csv(out / "table2.csv", rows, config, per_seed=False)
    return rows


def reproduce_table3(config: ExperimentConfig, out: str | Path | None = None) -> list[ExperimentResult]:
    """The four model variants; the two MFPINN variants share one low-fidelity network per seed."""
    out = Path(out if out is not None else config.out_dir) / "table3"
    keys = [(v, default_labels(config, v)) for v in VARIANTS]
    jobs = [(config, str(out), s, [(v, n, str(out / v / f"seed{s}")) for v, n in keys]) for s in config.seeds]
    rows = _group(_run_jobs(config, jobs), keys)
    write_sweep_csv(out / "table3_runs.csv", rows, config, per_seed=True)
    write_sweep_csv(out / "table3.csv", rows, config, per_seed=False)
    write_details_csv(out / "table3_details.csv", rows, config)
    return rows


# tables ---------------------------------------------------------------------

def write_sweep_csv(path: Path, rows: list[ExperimentResult], config: ExperimentConfig, per_seed: bool) -> None:
    """``variant,labeled_n,seed,rel_l2``; summary tables put "median" in the seed column."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in header(config, seeds=" ".join(map(str, config.seeds))).splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            if per_seed:
                for r in row.runs:
                    w.writerow([row.variant, row.labeled_n, r.seed, repr(r.rel_l2)])
            else:
                w.writerow([row.variant, row.labeled_n, "median", repr(row.median)])


DETAIL_COLUMNS = ["variant", "labeled_n", "seed", "rel_l2", "max_abs_err_C", "max_at_x_m", "max_at_t_s",
                  "max_err_outside_cooldown_C", "max_err_cooldown_C"]


def write_details_csv(path: Path, rows: list[ExperimentResult], config: ExperimentConfig) -> None:
    with open(path, "w", newline="") as fh:
        for line in header(config, seeds=" ".join(map(str, config.seeds))).splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETAIL_COLUMNS)
        for row in rows:
            for r in row.runs:
                w.writerow([r.variant, r.labeled_n, r.seed] + [repr(float(v)) for v in (
                    r.rel_l2, r.max_abs_err, r.max_at[0], r.max_at[1], r.max_err_outside_cooldown,
                    r.max_err_cooldown)])


def read_sweep_csv(path: str | Path) -> list[tuple]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows or rows[0] != SWEEP_COLUMNS:
        raise ConfigurationError(f"{path}: expected header {','.join(SWEEP_COLUMNS)}")
    return [(v, int(n), s if s == "median" else int(s), float(e)) for v, n, s, e in rows[1:]]


# standalone commands --------------------------------------------------------

def generate(config: ExperimentConfig, out: str | Path | None = None) -> list[Path]:
    """Oracle fields on the test lattice plus the labeled datasets of every seed."""
    out = Path(out if out is not None else config.out_dir) / "data"
    out.mkdir(parents=True, exist_ok=True)
    orc = oracle(config)
    written = []
    for fid in ("low", "high"):
        p = out / f"field_{fid}.csv"
        heat.write_field_csv(orc.test_fields[fid], p, header(config, fidelity=fid))
        written.append(p)
    lo_n, hi_n, cool_n = config.labels.low_fidelity, config.labels.pinn_data, config.labels.cooldown
    for s in config.seeds:
        sets = {
            f"labels_low_{lo_n}": heat.sample_labeled(orc.label_fields["low"], lo_n, s + LABEL_SEED_OFFSETS["low"]),
            f"labels_high_{hi_n}": heat.sample_labeled(orc.label_fields["high"], hi_n, s + LABEL_SEED_OFFSETS["high"]),
            f"cooldown_{cool_n}": mf.augment_cooldown(orc.label_fields["high"], cool_n,
                                                      s + LABEL_SEED_OFFSETS["cooldown"],
                                                      (config.labels.cooldown_window, None)),
        }
        for name, data in sets.items():
            p = out / f"seed{s}" / f"{name}.csv"
            p.parent.mkdir(exist_ok=True)
            heat.write_points_csv(data, p, header(config, s))
            written.append(p)
    return written


def _bundle_grid(config: ExperimentConfig, bundle: dict) -> tuple[LabeledSet, FieldSolution]:
    setup = bundle["setups"]["high"]
    o = config.oracle
    f = heat.solve(setup, n_elements=o.n_elements, dt=o.dt, max_step_change=o.max_step_change,
                   n_snapshots=o.test_snapshots)
    return heat.test_grid(f, o.n_elements + 1, o.test_snapshots), f


def evaluate_bundle(config: ExperimentConfig, path: str | Path, out: str | Path | None = None) -> RunResult:
    """Metrics and error field of a saved model against a fresh oracle for the bundle's setup."""
    bundle = mf.load_bundle(path)
    predict = mf.bundle_predictor(bundle)
    grid, _ = _bundle_grid(config, bundle)
    extra = bundle["extra"]
    seed = extra.get("seed", 0)
    out = Path(out if out is not None else Path(path).parent)
    out.mkdir(parents=True, exist_ok=True)
    return _summarize(config, extra.get("variant", bundle["kind"]), seed, extra.get("labeled_n", 0), predict,
                      grid, out)[0]


def midpoint(config: ExperimentConfig, path: str | Path, out: str | Path | None = None) -> Path:
    """Predicted and oracle temperature histories at mid-thickness."""
    bundle = mf.load_bundle(path)
    predict = mf.bundle_predictor(bundle)
    _, f = _bundle_grid(config, bundle)
    x_mid = bundle["setups"]["high"].thickness / 2
    t = f.t_snapshots
    pred = predict(np.full(t.size, x_mid), t)
    truth = f.at_node(x_mid)
    out = Path(out if out is not None else Path(path).parent)
    out.mkdir(parents=True, exist_ok=True)
    p = out / "midpoint.csv"
    with open(p, "w", newline="") as fh:
        for line in header(config, bundle["extra"].get("seed"), x_m=x_mid).splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "pred_C", "oracle_C"])
        for row in zip(t.tolist(), pred.tolist(), truth.tolist()):
            w.writerow([repr(float(v)) for v in row])
    return p


def write_config_json(config: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({"hash": config.hash(), **config.to_dict()}, indent=1) + "\n")
