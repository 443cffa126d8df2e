"""Single-network PINN for the convective heat problem.

Coordinates are normalized as xi = x/L, tau = t/t_scale, u = T/temp_scale.
Every residual is affine in the network jet, so each loss family is a
``LinearResidual`` evaluated by ``diffnet``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffnet
from .diffnet import Jet, LinearResidual, NetworkParams, Tape
from .errors import ConfigurationError, DomainError, NumericError, TrainingError
from .heat import LabeledSet, ThermalSetup, air_temperature

TERMS = ("pde", "bc", "ic", "data")
WEIGHT_RULES = ("scaled", "plain")

Evaluator = Callable[[NetworkParams, np.ndarray], "tuple[Jet, Tape]"]


@dataclass(frozen=True)
class Normalization:
    x_scale: float = 0.02
    t_scale: float = 2500.0
    temp_scale: float = 200.0

    def __post_init__(self):
        if min(self.x_scale, self.t_scale, self.temp_scale) <= 0:
            raise ConfigurationError(f"normalization scales must be positive: {self}")

    @classmethod
    def for_setup(cls, setup: ThermalSetup, temp_scale: float = 200.0) -> "Normalization":
        return cls(setup.thickness, setup.cycle.total_duration, temp_scale)

    def diffusion_number(self, setup: ThermalSetup) -> float:
        """alpha * t_scale / L**2, the coefficient of u_xixi in the normalized PDE."""
        return setup.material.diffusivity * self.t_scale / self.x_scale ** 2

    def normalize_labels(self, data: LabeledSet) -> np.ndarray:
        """(N, 3) array of (xi, tau, u)."""
        return np.column_stack([data.x / self.x_scale, data.t / self.t_scale, data.temperature / self.temp_scale])


@dataclass
class PointSets:
    """Training points in normalized coordinates.

    ``boundary_side`` is 0 for the bottom face (xi=0) and 1 for the top (xi=1).
    ``labeled`` is (N, 3) with columns (xi, tau, u).
    """

    collocation: np.ndarray
    boundary_tau: np.ndarray
    boundary_side: np.ndarray
    initial: np.ndarray
    labeled: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def with_labels(self, labeled: np.ndarray) -> "PointSets":
        return replace(self, labeled=np.asarray(labeled, dtype=np.float64).reshape(-1, 3))

    def is_empty(self) -> bool:
        return not (len(self.collocation) or len(self.boundary_tau) or len(self.initial) or len(self.labeled))


@dataclass
class LossWeights:
    bc: float = 1.0
    ic: float = 1.0
    data: float = 1.0
    pde: float = 1.0

    def __post_init__(self):
        if self.pde != 1.0:
            raise ConfigurationError("the PDE weight is the reference and stays at 1")
        for name in ("bc", "ic", "data"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigurationError(f"weight {name} must be positive and finite, got {v}")

    def as_dict(self) -> dict:
        return {t: getattr(self, t) for t in TERMS}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    lr_decay_factor: float = 0.5
    lr_patience_epochs: int = 20
    lr_min_rel_improvement: float = 1e-4
    ema_alpha: float = 0.01
    weight_update_stride: int = 10
    adaptive: bool = True
    adapt_data_weight: bool = True
    weight_rule: str = "scaled"
    warm_start_weights: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        for name in ("batch_size", "lr_patience_epochs", "weight_update_stride"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not 0 < self.lr_decay_factor < 1:
            raise ConfigurationError("lr_decay_factor must lie in (0, 1)")
        if not 0 < self.ema_alpha <= 1:
            raise ConfigurationError("ema_alpha must lie in (0, 1]")
        if self.weight_rule not in WEIGHT_RULES:
            raise ConfigurationError(f"weight_rule must be one of {WEIGHT_RULES}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")


@dataclass
class LossReport:
    losses: dict
    weights: LossWeights
    lr: float = 0.0
    epoch: int = 0

    @property
    def total(self) -> float:
        w = self.weights
        return (w.pde * self.losses["pde"] + w.bc * self.losses["bc"]
                + w.ic * self.losses["ic"] + w.data * self.losses["data"])


def sample_points(counts: tuple[int, int, int], seed: int) -> PointSets:
    """Uniform random collocation, boundary and initial points in the unit square."""
    n_colloc, n_boundary, n_initial = counts
    if min(counts) < 0:
        raise ConfigurationError("point counts must be nonnegative")
    if n_boundary % 2:
        raise ConfigurationError("n_boundary must be even (split between both faces)")
    rng = diffnet.make_rng(seed)
    colloc = rng.uniform(0.0, 1.0, size=(n_colloc, 2))
    half = n_boundary // 2
    tau = rng.uniform(0.0, 1.0, size=n_boundary)
    side = np.repeat([0, 1], half)
    initial = rng.uniform(0.0, 1.0, size=n_initial)
    return PointSets(colloc, tau, side, initial)


# residual forms -----------------------------------------------------------

def pde_form(setup: ThermalSetup, norm: Normalization) -> LinearResidual:
    return LinearResidual(c_t=1.0, c_xx=-norm.diffusion_number(setup))


def boundary_form(tau: np.ndarray, side: np.ndarray, setup: ThermalSetup, norm: Normalization) -> LinearResidual:
    """Convective face residuals; bottom h_b(u - u_air) - (k/L) u_xi, top h_t(u_air - u) - (k/L) u_xi."""
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < 0.0) or np.any(tau > 1.0):
        raise DomainError("boundary tau outside [0, 1]")
    u_air = air_temperature(setup.cycle, tau * norm.t_scale) / norm.temp_scale
    top = np.asarray(side) == 1
    h = np.where(top, -setup.htc_top, setup.htc_bottom)
    return LinearResidual(c_u=h, c_x=-setup.material.conductivity / norm.x_scale, target=h * u_air)


def initial_form(xi: np.ndarray, setup: ThermalSetup, norm: Normalization) -> LinearResidual:
    return LinearResidual(c_u=1.0, target=np.full(np.shape(xi), setup.initial_temperature / norm.temp_scale))


def data_form(u_target: np.ndarray) -> LinearResidual:
    return LinearResidual(c_u=1.0, target=np.asarray(u_target, dtype=np.float64))


def pde_residual(jet: Jet, setup: ThermalSetup, norm: Normalization):
    return pde_form(setup, norm)(jet)


def boundary_residuals(jet_bottom: Jet, jet_top: Jet, tau, setup: ThermalSetup, norm: Normalization):
    r_b = boundary_form(tau, np.zeros(np.shape(tau), dtype=int), setup, norm)(jet_bottom)
    r_t = boundary_form(tau, np.ones(np.shape(tau), dtype=int), setup, norm)(jet_top)
    return r_b, r_t


def initial_residual(jet: Jet, xi, setup: ThermalSetup, norm: Normalization):
    return initial_form(xi, setup, norm)(jet)


# losses -------------------------------------------------------------------

def single_network(params: NetworkParams, points: np.ndarray) -> tuple[Jet, Tape]:
    return diffnet.seeded_jet(params, points, diffnet.standard_seeds(points.shape[0], params.layer_sizes[0]))


def _family_points(sets: PointSets, setup: ThermalSetup, norm: Normalization, collocation=None):
    colloc = sets.collocation if collocation is None else collocation
    bnd = np.column_stack([sets.boundary_side.astype(np.float64), sets.boundary_tau])
    init = np.column_stack([sets.initial, np.zeros_like(sets.initial)])
    return {
        "pde": (colloc, pde_form(setup, norm)),
        "bc": (bnd, boundary_form(sets.boundary_tau, sets.boundary_side, setup, norm)),
        "ic": (init, initial_form(sets.initial, setup, norm)),
        "data": (sets.labeled[:, :2], data_form(sets.labeled[:, 2])),
    }


def term_losses(params: NetworkParams, sets: PointSets, setup: ThermalSetup, norm: Normalization,
                evaluator: Evaluator = single_network, collocation=None) -> dict:
    """Unweighted loss value and parameter gradient for each family."""
    out = {}
    for term, (pts, form) in _family_points(sets, setup, norm, collocation).items():
        if pts.shape[0] == 0:
            out[term] = (0.0, NetworkParams(params.layer_sizes))
            continue
        jet, tape = evaluator(params, pts)
        value, cot = form.mse(jet)
        if not np.isfinite(value):
            raise NumericError(f"non-finite {term} loss {value}", points=pts)
        out[term] = (value, diffnet.backprop(tape, cot))
    return out


def weighted_gradient(terms: dict, weights: LossWeights) -> np.ndarray:
    w = weights.as_dict()
    total = np.zeros_like(terms["pde"][1].flat)
    for t in TERMS:
        total += w[t] * terms[t][1].flat
    return total


def composite_loss(params: NetworkParams, sets: PointSets, weights: LossWeights, setup: ThermalSetup,
                   norm: Normalization, evaluator: Evaluator = single_network):
    """Weighted loss report and its exact parameter gradient."""
    try:
        terms = term_losses(params, sets, setup, norm, evaluator)
    except NumericError as exc:
        raise TrainingError(str(exc), term=str(exc).split()[1]) from exc
    report = LossReport({t: terms[t][0] for t in TERMS}, weights)
    return report, params.with_flat(weighted_gradient(terms, weights))


def update_weights_adaptive(term_grads: dict, current: LossWeights, ema_alpha: float,
                            terms=("bc", "ic", "data"), rule: str = "scaled") -> LossWeights:
    """Rebalance non-PDE weights from gradient statistics.

    rule "plain":  target_i = max|grad L_pde| / mean|grad L_i|
    rule "scaled": target_i = max|grad L_pde| / mean|lambda_i grad L_i|

    followed by an exponential moving average with factor ``ema_alpha``. The
    scaled rule settles at lambda_i = sqrt(max / mean) instead of growing
    without bound as a term becomes satisfied. Terms with an all-zero gradient
    keep their weight.
    """
    if rule not in WEIGHT_RULES:
        raise ConfigurationError(f"unknown weight rule {rule!r}")
    g_pde = np.asarray(getattr(term_grads["pde"], "flat", term_grads["pde"]))
    peak = float(np.max(np.abs(g_pde))) if g_pde.size else 0.0
    new = current.as_dict()
    if peak == 0.0 or not np.isfinite(peak):
        return replace(current)
    for t in terms:
        g = term_grads.get(t)
        if g is None:
            continue
        g = np.asarray(getattr(g, "flat", g))
        mean = float(np.mean(np.abs(g))) if g.size else 0.0
        if mean == 0.0 or not np.isfinite(mean):
            continue
        if rule == "scaled":
            mean *= new[t]
        new[t] = (1.0 - ema_alpha) * new[t] + ema_alpha * (peak / mean)
    return LossWeights(bc=new["bc"], ic=new["ic"], data=new["data"])


class Adam:
    def __init__(self, n: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(params: NetworkParams, sets: PointSets, weights: LossWeights, config: TrainConfig,
          setup: ThermalSetup, norm: Normalization, evaluator: Evaluator = single_network,
          callback=None) -> tuple[NetworkParams, list[LossReport]]:
    """Adam on the weighted composite loss; returns trained params and one report per epoch.

    Each step uses a minibatch of collocation points plus the full boundary,
    initial and labeled sets. Collocation order is reshuffled every epoch from
    ``config.seed``.
    """
    if sets.is_empty():
        raise ConfigurationError("all point sets are empty")
    rng = diffnet.make_rng(config.seed)
    theta = params.flat.copy()
    opt = Adam(theta.size, config.learning_rate)
    adapt = ("bc", "ic", "data") if config.adapt_data_weight else ("bc", "ic")
    n_colloc = len(sets.collocation)
    bs = config.batch_size
    steps_per_epoch = max(1, math.ceil(n_colloc / bs))
    best = math.inf
    stale = 0
    step = 0
    history: list[LossReport] = []

    for epoch in range(config.epochs):
        order = rng.permutation(n_colloc)
        sums = dict.fromkeys(TERMS, 0.0)
        totals = 0.0
        for k in range(steps_per_epoch):
            current = params.with_flat(theta)
            batch = sets.collocation[order[k * bs:(k + 1) * bs]]
            try:
                terms = term_losses(current, sets, setup, norm, evaluator, collocation=batch)
            except NumericError as exc:
                raise TrainingError(f"{exc} at step {step}", term=str(exc).split()[1], step=step,
                                    last_good=current.copy()) from exc
            if config.adaptive and step % config.weight_update_stride == 0:
                # the first refresh may jump straight to the gradient estimate
                alpha = 1.0 if step == 0 and config.warm_start_weights else config.ema_alpha
                weights = update_weights_adaptive({t: g for t, (_, g) in terms.items()}, weights,
                                                  alpha, adapt, config.weight_rule)
            grad = weighted_gradient(terms, weights)
            if not np.all(np.isfinite(grad)):
                raise TrainingError(f"non-finite gradient at step {step}", step=step, last_good=current.copy())
            report = LossReport({t: terms[t][0] for t in TERMS}, weights)
            totals += report.total
            for t in TERMS:
                sums[t] += terms[t][0]
            theta = opt.step(theta, grad)
            step += 1
        epoch_loss = totals / steps_per_epoch
        history.append(LossReport({t: sums[t] / steps_per_epoch for t in TERMS}, replace(weights),
                                  lr=opt.lr, epoch=epoch))
        if callback is not None:
            callback(history[-1], params.with_flat(theta))
        # plateau schedule on the epoch-mean total loss
        if epoch_loss < best * (1.0 - config.lr_min_rel_improvement):
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if stale >= config.lr_patience_epochs:
                opt.lr *= config.lr_decay_factor
                stale = 0
    return params.with_flat(theta), history


HISTORY_COLUMNS = ["epoch", "loss_pde", "loss_bc", "loss_ic", "loss_data",
                   "lambda_bc", "lambda_ic", "lambda_data", "total", "lr"]


def write_history_csv(history: list[LossReport], path: str | Path, header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in history:
            w.writerow([r.epoch] + [repr(float(r.losses[t])) for t in TERMS]
                       + [repr(float(v)) for v in (r.weights.bc, r.weights.ic, r.weights.data, r.total, r.lr)])
