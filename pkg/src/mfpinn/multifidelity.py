"""Two-stage multi-fidelity PINN.

A low-fidelity network f_L(xi, tau) is trained first on the source material.
The high-fidelity network f_H(xi, tau, y) then sees the frozen low-fidelity
prediction as a third input, and the composed map

    g(xi, tau) = f_H(xi, tau, f_L(xi, tau))

is trained against the target material's physics and labels. PDE and flux
residuals need total derivatives of g, which come from seeding the third
input of f_H with the jet of f_L.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import diffnet, heat, pinn
from .diffnet import Jet, NetworkParams, Tape
from .errors import ConfigurationError, DomainError
from .heat import CureCycle, FieldSolution, LabeledSet, MaterialProps, ThermalSetup
from .pinn import LossWeights, Normalization, PointSets, TrainConfig

BUNDLE_FORMAT = "mfpinn-bundle"
BUNDLE_VERSION = 1
COOLDOWN_REGION = (2000.0, 2500.0)


@dataclass
class MfModel:
    low: NetworkParams
    high: NetworkParams | None
    norm_low: Normalization
    norm_high: Normalization
    setup_low: ThermalSetup
    setup_high: ThermalSetup

    def __post_init__(self):
        if self.low.layer_sizes[0] != 2:
            raise ConfigurationError("low-fidelity network must take (xi, tau)")
        if self.high is not None and self.high.layer_sizes[0] != 3:
            raise ConfigurationError("high-fidelity network must take (xi, tau, y_low)")
        if self.norm_low != self.norm_high:
            raise ConfigurationError("both fidelities must share one normalization")


def composed_evaluator(low: NetworkParams):
    """Evaluator for ``pinn.train`` that runs points through f_L and then f_H.

    The low-fidelity jet is recomputed through the frozen network on every
    call; only the high-fidelity tape is returned, so gradients reach f_H only.
    """

    def evaluate(high: NetworkParams, points: np.ndarray) -> tuple[Jet, Tape]:
        low_jet = pinn.single_network(low, points)[0]
        n = points.shape[0]
        values = np.column_stack([points[:, 0], points[:, 1], low_jet.u])
        seeds = np.zeros((3, n, 3))
        seeds[0, :, 0] = 1.0
        seeds[0, :, 2] = low_jet.du_dx
        seeds[1, :, 2] = low_jet.d2u_dx2
        seeds[2, :, 1] = 1.0
        seeds[2, :, 2] = low_jet.du_dt
        return diffnet.seeded_jet(high, values, seeds)

    return evaluate


def compose_jet(model: MfModel, xi, tau) -> Jet:
    """Total derivatives of f_H(xi, tau, f_L(xi, tau))."""
    xi = np.atleast_1d(np.asarray(xi, dtype=np.float64))
    tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    xi, tau = np.broadcast_arrays(xi, tau)
    return composed_evaluator(model.low)(model.high, np.column_stack([xi, tau]))[0]


def train_low(setup_low: ThermalSetup, data_low: LabeledSet, sets: PointSets, config: TrainConfig,
              layer_sizes=(2, 30, 30, 30, 30, 30, 1), norm: Normalization | None = None,
              init: NetworkParams | None = None):
    """Train PINN_L on the source material's physics plus its labeled data."""
    norm = norm or Normalization.for_setup(setup_low)
    params = init if init is not None else diffnet.init_params(layer_sizes, config.seed)
    sets = sets.with_labels(norm.normalize_labels(data_low))
    return pinn.train(params, sets, LossWeights(), config, setup_low, norm)


def train_high(model: MfModel, setup_high: ThermalSetup, data_high: LabeledSet, sets: PointSets,
               config: TrainConfig, layer_sizes=(3, 30, 30, 30, 30, 30, 1), init: NetworkParams | None = None):
    """Train PINN_H through the composition with the frozen low-fidelity network."""
    norm = model.norm_high
    params = init if init is not None else diffnet.init_params(layer_sizes, config.seed + 1)
    if params.layer_sizes[0] != 3:
        raise ConfigurationError("high-fidelity network must take 3 inputs")
    sets = sets.with_labels(norm.normalize_labels(data_high))
    return pinn.train(params, sets, LossWeights(), config, setup_high, norm,
                      evaluator=composed_evaluator(model.low))


def augment_cooldown(field: FieldSolution, n: int, seed: int, region=None) -> LabeledSet:
    """Labeled high-fidelity cloud inside the cooldown window (all x by default)."""
    if region is None:
        region = (COOLDOWN_REGION, None)
    return heat.sample_labeled(field, n, seed, region)


def predict(model: MfModel, x, t):
    """Composed prediction in C at physical (x [m], t [s])."""
    x_arr = np.asarray(x, dtype=np.float64)
    t_arr = np.asarray(t, dtype=np.float64)
    setup = model.setup_high
    if (np.any(x_arr < 0) or np.any(x_arr > setup.thickness)
            or np.any(t_arr < 0) or np.any(t_arr > setup.cycle.total_duration)):
        raise DomainError(f"point outside [0, {setup.thickness}] m x [0, {setup.cycle.total_duration}] s")
    norm = model.norm_high
    x_arr, t_arr = np.broadcast_arrays(x_arr, t_arr)
    pts = np.column_stack([x_arr.ravel() / norm.x_scale, t_arr.ravel() / norm.t_scale])
    y = diffnet.forward(model.low, pts)
    out = diffnet.forward(model.high, np.column_stack([pts, y])) * norm.temp_scale
    return float(out[0]) if x_arr.ndim == 0 else out.reshape(x_arr.shape)


def predict_single(params: NetworkParams, norm: Normalization, x, t):
    """Prediction in C of a plain PINN at physical (x, t)."""
    x_arr, t_arr = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(t, dtype=np.float64))
    out = diffnet.forward(params, np.column_stack([x_arr.ravel() / norm.x_scale, t_arr.ravel() / norm.t_scale]))
    return out.reshape(x_arr.shape) * norm.temp_scale


# bundles ------------------------------------------------------------------

def setup_to_dict(setup: ThermalSetup) -> dict:
    d = asdict(setup)
    d["cycle"] = {"knots": [list(k) for k in setup.cycle.knots]}
    return d


def setup_from_dict(d: dict) -> ThermalSetup:
    return ThermalSetup(
        material=MaterialProps(**d["material"]),
        thickness=d["thickness"], htc_bottom=d["htc_bottom"], htc_top=d["htc_top"],
        initial_temperature=d["initial_temperature"],
        cycle=CureCycle(tuple(tuple(k) for k in d["cycle"]["knots"])))


def save_bundle(path, kind: str, networks: dict, norms: dict, setups: dict, extra: dict | None = None) -> Path:
    """Write networks as diffnet checkpoints plus a JSON manifest into directory ``path``.

    ``kind`` is "pinn" (one network named "net") or "mfpinn" ("low", "high").
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, params in networks.items():
        diffnet.save_checkpoint(params, path / f"{name}.json")
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "kind": kind,
        "networks": sorted(networks),
        "normalization": {k: asdict(v) for k, v in norms.items()},
        "setups": {k: setup_to_dict(v) for k, v in setups.items()},
        "extra": extra or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_bundle(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"{path}: no model bundle manifest found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: unreadable bundle manifest ({exc})") from exc
    if manifest.get("format") != BUNDLE_FORMAT or manifest.get("version") != BUNDLE_VERSION:
        raise ConfigurationError(f"{path}: not a version {BUNDLE_VERSION} model bundle")
    manifest["networks"] = {n: diffnet.load_checkpoint(path / f"{n}.json") for n in manifest["networks"]}
    manifest["normalization"] = {k: Normalization(**v) for k, v in manifest["normalization"].items()}
    manifest["setups"] = {k: setup_from_dict(v) for k, v in manifest["setups"].items()}
    return manifest


def bundle_predictor(bundle: dict):
    """Return f(x, t) -> C for a loaded bundle of either kind."""
    nets, norms = bundle["networks"], bundle["normalization"]
    if bundle["kind"] == "pinn":
        return lambda x, t: predict_single(nets["net"], norms["high"], x, t)
    model = MfModel(nets["low"], nets["high"], norms["low"], norms["high"],
                    bundle["setups"]["low"], bundle["setups"]["high"])
    return lambda x, t: predict(model, x, t)
