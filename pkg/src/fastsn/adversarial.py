"""White-box FGSM and DeepFool attacks and robustness evaluation."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import MaxItersReached
from .nn import Network, backward_from, forward, prepare_input, softmax
from .training import accuracy


class AttackKind(enum.Enum):
    FGSM = "fgsm"
    DEEPFOOL = "deepfool"


@dataclass
class AttackConfig:
    kind: AttackKind = AttackKind.FGSM
    epsilon: float = 0.1
    overshoot: float = 0.02
    max_iters: int = 50
    tol: float = 1e-6
    clip: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = AttackKind(self.kind)
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        lo, hi = self.clip
        if not lo < hi:
            raise ValueError(f"clip range must satisfy lo < hi, got {self.clip}")

    @property
    def name(self) -> str:
        if self.kind is AttackKind.FGSM:
            return f"fgsm(eps={self.epsilon:g})"
        return f"deepfool(overshoot={self.overshoot:g})"


def input_gradient(net: Network, x, labels) -> np.ndarray:
    """Per-example gradient of the cross-entropy with respect to the input."""
    xb = prepare_input(net, x)
    labels = np.asarray(labels, dtype=int).reshape(-1)
    logits, cache = forward(net, xb)
    d = softmax(logits)
    d[np.arange(len(labels)), labels] -= 1.0
    return backward_from(cache, d).input


def fgsm(net: Network, x, label, epsilon: float, clip=(0.0, 1.0)) -> np.ndarray:
    """``clip(x + epsilon * sign(grad_x CE))``; same shape as the prepared input."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    xb = prepare_input(net, x)
    if epsilon == 0:
        return xb.copy()
    adv = xb + epsilon * np.sign(input_gradient(net, xb, label))
    if clip is not None:
        adv = np.clip(adv, clip[0], clip[1])
    return adv


def fgsm_sweep(net: Network, testset: Dataset, eps_grid, clip=(0.0, 1.0)):
    """Accuracy along an ascending epsilon grid and the first grid point below 50%."""
    grid = np.asarray(eps_grid, dtype=float)
    if grid.size == 0 or grid[0] != 0.0 or np.any(np.diff(grid) < 0):
        raise ValueError("eps_grid must be ascending and start at 0")
    xb = prepare_input(net, testset.images)
    grad_sign = np.sign(input_gradient(net, xb, testset.labels))
    curve = []
    for eps in grid:
        adv = xb + eps * grad_sign
        if clip is not None:
            adv = np.clip(adv, clip[0], clip[1])
        pred = np.argmax(forward(net, adv)[0], axis=1)
        curve.append(float(np.mean(pred == testset.labels)))
    broken = [float(e) for e, acc in zip(grid, curve) if acc < 0.5]
    return curve, (broken[0] if broken else None)


def _logit_jacobian(net: Network, x: np.ndarray):
    """Logits of a single prepared example and d logits / d x for every class."""
    k = net.num_classes
    logits, cache = forward(net, np.repeat(x, k, axis=0))
    jac = backward_from(cache, np.eye(k)).input
    return logits[0], jac


def deepfool(net: Network, x, label: int, overshoot: float = 0.02, max_iters: int = 50,
             tol: float = 1e-6, clip=None):
    """Multi-class DeepFool on a single example.

    Returns ``(x_adv, perturbation_norm, iterations)``. ``tol`` stops the
    search when a step adds less than ``tol`` (relative) to the accumulated
    perturbation. Raises :class:`MaxItersReached` when the label has not
    flipped within ``max_iters`` (or the search stalls).
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    x0 = prepare_input(net, x)[:1]
    label = int(label)
    logits, jac = _logit_jacobian(net, x0)
    if int(np.argmax(logits)) != label:
        return x0.copy(), 0.0, 0
    r_tot = np.zeros_like(x0)
    x_adv = x0.copy()
    for it in range(1, max_iters + 1):
        diff_f = logits - logits[label]
        diff_w = jac - jac[label]
        norms = np.linalg.norm(diff_w.reshape(len(logits), -1), axis=1)
        ratio = np.full(len(logits), np.inf)
        mask = (np.arange(len(logits)) != label) & (norms > 0)
        ratio[mask] = np.abs(diff_f[mask]) / norms[mask]
        best = int(np.argmin(ratio))
        if not np.isfinite(ratio[best]):
            break
        step = (np.abs(diff_f[best]) / norms[best] ** 2) * diff_w[best][None]
        r_tot = r_tot + step
        x_adv = x0 + (1.0 + overshoot) * r_tot
        if clip is not None:
            x_adv = np.clip(x_adv, clip[0], clip[1])
        logits, jac = _logit_jacobian(net, x_adv)
        if int(np.argmax(logits)) != label:
            return x_adv, float(np.linalg.norm(x_adv - x0)), it
        if np.linalg.norm(step) < tol * max(1.0, np.linalg.norm(r_tot)):
            break
    raise MaxItersReached(f"label not flipped after {it} iterations", x_adv=x_adv,
                          norm=float(np.linalg.norm(x_adv - x0)), iterations=it)


@dataclass
class AttackResult:
    config: AttackConfig
    accuracy: float
    mean_perturbation: float

    @property
    def name(self) -> str:
        return self.config.name


@dataclass
class RobustnessReport:
    clean_accuracy: float
    results: list[AttackResult] = field(default_factory=list)
    break_epsilon: float | None = None

    def accuracy_of(self, name: str) -> float:
        return next(r.accuracy for r in self.results if r.name == name)


def run_attack(net: Network, testset: Dataset, cfg: AttackConfig) -> AttackResult:
    xb = prepare_input(net, testset.images)
    if cfg.kind is AttackKind.FGSM:
        adv = fgsm(net, xb, testset.labels, cfg.epsilon, cfg.clip)
        pred = np.argmax(forward(net, adv)[0], axis=1)
        norms = np.linalg.norm((adv - xb).reshape(len(xb), -1), axis=1)
        return AttackResult(cfg, float(np.mean(pred == testset.labels)), float(np.mean(norms)))
    correct, norms = 0, []
    for i in range(len(xb)):
        try:
            adv, norm, _ = deepfool(net, xb[i:i + 1], testset.labels[i], cfg.overshoot,
                                    cfg.max_iters, cfg.tol, cfg.clip)
        except MaxItersReached as exc:
            adv, norm = exc.x_adv, exc.norm
        norms.append(norm)
        correct += int(np.argmax(forward(net, adv)[0][0]) == testset.labels[i])
    return AttackResult(cfg, correct / len(xb), float(np.mean(norms)))


def evaluate_robustness(net: Network, testset: Dataset, configs=()) -> RobustnessReport:
    if len(testset) == 0:
        raise ValueError("test set is empty")
    report = RobustnessReport(clean_accuracy=accuracy(net, testset))
    for cfg in configs:
        report.results.append(run_attack(net, testset, cfg))
    return report
