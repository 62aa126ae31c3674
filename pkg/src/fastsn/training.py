"""Minibatch SGD under the three regimes: Normal, SN and FSN."""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, split_dataset
from .nn import (LossConfig, Network, Regularizer, backward, cross_entropy, forward,
                 network_penalty, predict)

log = logging.getLogger(__name__)


class TrainMethod(enum.Enum):
    NORMAL = "normal"
    SN = "sn"
    FSN = "fsn"


_REGULARIZER = {
    TrainMethod.NORMAL: Regularizer.NONE,
    TrainMethod.SN: Regularizer.POWER,
    TrainMethod.FSN: Regularizer.FSN,
}


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.05
    lam: float = 0.01
    seed: int = 0
    method: TrainMethod = TrainMethod.NORMAL
    power_iters: int = 20
    tol: float = 1e-6
    resplit_every: int = 0  # 0 keeps one fixed split for the whole run
    train_fraction: float = 0.8

    def __post_init__(self):
        if isinstance(self.method, str):
            self.method = TrainMethod(self.method)
        if not (isinstance(self.epochs, int) and self.epochs >= 0):
            raise ValueError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not (isinstance(self.batch_size, int) and self.batch_size >= 1):
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam!r}")
        if self.power_iters < 1:
            raise ValueError(f"power_iters must be >= 1, got {self.power_iters!r}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol!r}")
        if self.resplit_every < 0:
            raise ValueError("resplit_every must be >= 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, method=_REGULARIZER[self.method],
                          power_iters=self.power_iters, tol=self.tol, power_seed=self.seed)


@dataclass
class EpochRecord:
    epoch: int
    wall_time_s: float
    train_loss: float
    train_accuracy: float
    test_accuracy: float
    per_layer_sigma: list[float] = field(default_factory=list)
    per_layer_residual_fro: list[float] = field(default_factory=list)
    unconverged: list[int] = field(default_factory=list)

    @property
    def sum_sigma(self) -> float:
        return float(sum(self.per_layer_sigma))

    def comparable(self) -> tuple:
        """Everything except the wall time, for determinism checks."""
        return (self.epoch, self.train_loss, self.train_accuracy, self.test_accuracy,
                tuple(self.per_layer_sigma), tuple(self.per_layer_residual_fro),
                tuple(self.unconverged))


def accuracy(net: Network, data: Dataset, batch: int = 256) -> float:
    if len(data) == 0:
        return float("nan")
    hits = 0
    for start in range(0, len(data), batch):
        xb = data.images[start:start + batch]
        hits += int(np.sum(predict(net, xb) == data.labels[start:start + batch]))
    return hits / len(data)


def monitor_config(cfg: TrainConfig) -> LossConfig:
    """Estimator used for the recorded per-layer sigma.

    Regularized runs record their own penalty; Normal runs are monitored
    with the Fourier estimator, which costs nothing noticeable.
    """
    lc = cfg.loss_config()
    if lc.method is Regularizer.NONE:
        lc = LossConfig(lam=0.0, method=Regularizer.FFT)
    return lc


def sgd_step(net: Network, xb, yb, lc: LossConfig):
    """One plain SGD step (no momentum); returns the batch loss and penalty terms."""
    logits, cache = forward(net, xb)
    penalty = network_penalty(net, lc) if lc.active else None
    loss = cross_entropy(logits, yb)
    if penalty is not None:
        loss += 0.5 * lc.lam * penalty.total
    grads = backward(cache, yb, lc, penalty=penalty)
    return loss, penalty, grads


def train(net: Network, data: Dataset, cfg: TrainConfig, test: Dataset | None = None):
    """Train a copy of ``net``; returns ``(trained, records)``.

    Without ``test`` the data are split 80/20 with the run seed (and
    re-split every ``resplit_every`` epochs if requested). ``wall_time_s``
    covers the SGD pass of the epoch at millisecond resolution; accuracy
    and sigma monitoring are excluded.
    Power-iteration caps hit under SN are counted in ``unconverged``.
    """
    net = net.copy()
    records: list[EpochRecord] = []
    if cfg.epochs == 0:
        return net, records
    if len(data) == 0:
        raise ValueError("training data is empty")
    lc = cfg.loss_config()
    mon = monitor_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    if test is None:
        train_set, test_set = split_dataset(data, cfg.train_fraction, cfg.seed)
    else:
        train_set, test_set = data, test

    params = None
    for epoch in range(cfg.epochs):
        if test is None and cfg.resplit_every and epoch and epoch % cfg.resplit_every == 0:
            train_set, test_set = split_dataset(data, cfg.train_fraction, cfg.seed + epoch)
        order = rng.permutation(len(train_set))
        losses = []
        misses = None
        t0 = time.perf_counter()
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, penalty, grads = sgd_step(net, train_set.images[idx], train_set.labels[idx], lc)
            params = net.parameters()
            for p, g in zip(params, grads.params):
                p -= cfg.learning_rate * g
            losses.append(loss)
            if penalty is not None:
                misses = penalty.unconverged if misses is None else [
                    a + b for a, b in zip(misses, penalty.unconverged)]
        elapsed = time.perf_counter() - t0

        terms = network_penalty(net, mon)
        rec = EpochRecord(
            epoch=epoch,
            wall_time_s=max(round(elapsed, 3), 0.001),
            train_loss=float(np.mean(losses)),
            train_accuracy=accuracy(net, train_set),
            test_accuracy=accuracy(net, test_set),
            per_layer_sigma=[float(np.sqrt(p)) for p in terms.penalties],
            per_layer_residual_fro=list(terms.residual_fro),
            unconverged=misses or [0] * len(net.parameterized),
        )
        if any(rec.unconverged):
            log.debug("epoch %d: power iteration hit its cap %s times per layer",
                      epoch, rec.unconverged)
        records.append(rec)
    return net, records


@dataclass
class MethodSummary:
    method: TrainMethod
    mean_time_s: float
    best_test_accuracy: float
    final_train_accuracy: float
    records: list[EpochRecord]


@dataclass
class Comparison:
    rows: list[MethodSummary]

    def row(self, method: TrainMethod) -> MethodSummary:
        return next(r for r in self.rows if r.method is method)

    @property
    def fsn_speedup_pct(self) -> float:
        sn = self.row(TrainMethod.SN).mean_time_s
        fsn = self.row(TrainMethod.FSN).mean_time_s
        return 100.0 * (sn - fsn) / sn


def compare_methods(net: Network, data: Dataset, base_cfg: TrainConfig) -> tuple[Comparison, dict]:
    """Train Normal, SN and FSN from the same initial network and seed.

    Returns the comparison and the trained networks keyed by method.
    """
    rows, nets = [], {}
    for method in TrainMethod:
        cfg = TrainConfig(**{**base_cfg.__dict__, "method": method})
        trained, records = train(net, data, cfg)
        nets[method] = trained
        rows.append(MethodSummary(
            method=method,
            mean_time_s=float(np.mean([r.wall_time_s for r in records])) if records else 0.0,
            best_test_accuracy=max((r.test_accuracy for r in records), default=float("nan")),
            final_train_accuracy=records[-1].train_accuracy if records else float("nan"),
            records=records,
        ))
    return Comparison(rows), nets
