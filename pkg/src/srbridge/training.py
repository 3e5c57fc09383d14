"""Score training loop: sample a batch, evaluate a loss, back-propagate, update."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, asdict
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import geometry as geo
from . import heisenberg as heis
from . import losses
from .errors import ConfigurationError, NonFiniteLossError
from .network import AdamState, NetworkParams, adam_update, init_params
from .stochastic import LEVY_METHODS, SCHEMES, RngStream, sample_batch

GEOMETRIES = ("heisenberg", "euclidean", "custom_step2")


def custom_step2_model(drift=None):
    """A non-group step-2 structure on R^3 with frames ``d_x`` and ``d_y + x d_z``.

    Derivatives of the frame come from finite differences, so this model
    exercises the generic code paths.
    """

    def frame(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (2,))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        out[..., 2, 1] = x[..., 0]
        return out

    def ext(x):
        out = np.zeros(np.shape(x) + (1,))
        out[..., 2, 0] = 1.0
        return out

    if drift is not None and not callable(drift):
        c = np.asarray(drift, dtype=float)
        drift = lambda x, c=c: np.broadcast_to(c, np.shape(x))  # noqa: E731
    return geo.SubRiemannianModel(d=3, k=2, frame=frame, frame_extension=ext, drift_z=drift,
                                  name="custom_step2")


def build_model(geometry, dim=1, heis_k=1):
    if geometry == "heisenberg":
        return heis.heisenberg_model(heis_k)
    if geometry == "euclidean":
        return geo.euclidean_model(dim)
    if geometry == "custom_step2":
        return custom_step2_model()
    raise ConfigurationError(f"unknown geometry {geometry!r}; expected one of {GEOMETRIES}")


@dataclass
class TrainingConfig:
    geometry: str = "heisenberg"
    x0: Sequence[float] = (0.5, 0.0, 0.8)
    T: float = 1.0
    n: int = 100
    K: int = 64
    batches_per_epoch: int = 8
    epochs: int = 2500
    loss_kind: str = "denoising_heisenberg"
    scheme: str = "heisenberg_exact"
    K2: int = 10
    lr: float = 1e-3
    seed: int = 0
    dim: int = 1
    heis_k: int = 1
    hidden: Sequence[int] = (15, 15, 15)
    activation: str = "elu"
    levy_method: str = "polynomial"
    vertical_scale: float = heis.FOUR_PI

    def __post_init__(self):
        self.x0 = tuple(float(v) for v in self.x0)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.geometry not in GEOMETRIES:
            raise ConfigurationError(f"unknown geometry {self.geometry!r}")
        if self.loss_kind not in losses.LOSS_KINDS:
            raise ConfigurationError(f"unknown loss_kind {self.loss_kind!r}; expected one of {losses.LOSS_KINDS}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.levy_method not in LEVY_METHODS:
            raise ConfigurationError(f"unknown levy_method {self.levy_method!r}")
        for name in ("n", "K", "batches_per_epoch", "K2", "dim", "heis_k"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be nonnegative")
        if not self.T > 0 or not self.lr > 0:
            raise ConfigurationError("T and lr must be positive")
        if not self.hidden:
            raise ConfigurationError("at least one hidden layer is required")
        d = self.model().d
        if len(self.x0) != d:
            raise ConfigurationError(f"x0 has {len(self.x0)} coordinates, geometry needs {d}")
        heis_geom = self.geometry == "heisenberg"
        if self.loss_kind == "denoising_heisenberg" and (not heis_geom or self.scheme != "heisenberg_exact"):
            raise ConfigurationError("denoising_heisenberg needs geometry=heisenberg and scheme=heisenberg_exact")
        if self.scheme == "heisenberg_exact" and not heis_geom:
            raise ConfigurationError("scheme heisenberg_exact needs geometry=heisenberg")
        if self.loss_kind == "denoising_euclidean" and self.scheme != "euler":
            raise ConfigurationError("denoising_euclidean needs scheme=euler")
        if self.loss_kind == "denoising_general" and self.scheme == "euler":
            raise ConfigurationError("denoising_general needs scheme=taylor or heisenberg_exact")
        if self.loss_kind == "divergence" and self.activation == "relu":
            warnings.warn("relu is not differentiable; the divergence loss will fail at its first evaluation",
                          RuntimeWarning, stacklevel=3)

    def model(self):
        return build_model(self.geometry, self.dim, self.heis_k)

    def layer_sizes(self):
        m = self.model()
        return [m.d + 1, *self.hidden, m.k]

    def as_dict(self):
        out = asdict(self)
        out["x0"] = list(self.x0)
        out["hidden"] = list(self.hidden)
        return out


@dataclass
class LossReport:
    epoch_losses: List[float] = field(default_factory=list)
    wall_clock: List[float] = field(default_factory=list)


def initial_params(config: TrainingConfig) -> NetworkParams:
    return init_params(config.layer_sizes(), config.activation, RngStream(config.seed).child("init"))


def _problem(config, model, batch):
    if config.loss_kind == "denoising_heisenberg":
        return losses.heisenberg_denoising_problem(batch, vertical_scale=config.vertical_scale)
    return losses.make_problem(config.loss_kind, model, batch)


def train(config: TrainingConfig, progress: Optional[Callable[[int, float], None]] = None,
          params: Optional[NetworkParams] = None):
    """Run ``epochs * batches_per_epoch`` optimisation steps.

    Iteration ``i`` draws its batch from ``RngStream(seed).child("train", i)``,
    so the result depends only on the configuration.  Returns
    ``(params, LossReport)`` where each epoch loss is the mean batch loss.
    """
    model = config.model()
    params = initial_params(config) if params is None else params
    state = AdamState.for_params(params)
    root = RngStream(config.seed)
    x0 = np.asarray(config.x0)
    report = LossReport()
    it = 0
    for epoch in range(config.epochs):
        start = time.perf_counter()
        total = 0.0
        for b in range(config.batches_per_epoch):
            batch = sample_batch(model, x0, config.T, config.n, config.K, root.child("train", it),
                                 config.scheme, config.K2, config.levy_method)
            problem = _problem(config, model, batch)
            ctx = {"iteration": it, "epoch": epoch, "batch": b}
            loss, grad = losses.value_and_grad(problem, params, ctx)
            if not np.all(np.isfinite(grad.flat())):
                raise NonFiniteLossError(it, epoch, b)
            params, state = adam_update(params, grad, state, config.lr)
            total += loss
            it += 1
        report.epoch_losses.append(total / config.batches_per_epoch)
        report.wall_clock.append(time.perf_counter() - start)
        if progress is not None:
            progress(epoch, report.epoch_losses[-1])
    return params, report
