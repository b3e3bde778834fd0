"""FFNN, GRU and transformer-encoder crossing-intention classifiers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..scene_model import STATES
from .estimator import (
    IntentionClassifier,
    TrainConfig,
    TrainingError,
    checkpoint_dict,
    cross_entropy,
    load_checkpoint,
    save_checkpoint,
)
from .networks import (
    ARCHITECTURES,
    DTYPE,
    ClassifierConfig,
    build_network,
    count_parameters,
    flat_parameters,
    load_flat_parameters,
)


@dataclass(frozen=True)
class HeadDecision:
    horizon: float
    state: str
    probability: float      # probability of the chosen state
    p_cross: float


def _window_arrays(window):
    if hasattr(window, "vectors"):
        return np.asarray(window.vectors, dtype=float), np.asarray(window.presence_mask, dtype=bool)
    X = np.asarray(window, dtype=float)
    return X, np.ones(X.shape[0], dtype=bool)


def forward(model: IntentionClassifier, window) -> np.ndarray:
    """Per-head probability pairs ordered (crossing, not_crossing), shape (heads, 2)."""
    X, mask = _window_arrays(window)
    proba = model.predict_proba(X[None], mask[None]).reshape(-1, 2)
    return proba[:, ::-1].copy()


def predict_intention(model: IntentionClassifier, window) -> list[HeadDecision]:
    """Argmax decision per head; an exact tie resolves to not_crossing."""
    out = []
    for h, (p_cross, p_not) in zip(model.config_.horizons, forward(model, window)):
        crossing = p_cross > p_not
        out.append(HeadDecision(h, STATES[int(crossing)], float(p_cross if crossing else p_not), float(p_cross)))
    return out


def gradcheck(cfg: ClassifierConfig, X, y, mask=None, n_coords: int = 100, step: float = 1e-5,
              seed: int = 0) -> np.ndarray:
    """Relative errors between autograd and central finite-difference gradients.

    The loss is evaluated on the whole batch; ``n_coords`` parameter
    coordinates are sampled uniformly without replacement.
    """
    net = build_network(cfg)
    X = torch.as_tensor(np.asarray(X), dtype=DTYPE)
    y = torch.as_tensor(np.asarray(y), dtype=torch.int64)
    if y.ndim == 1:
        y = y[:, None]
    mask = torch.ones(X.shape[:2], dtype=torch.bool) if mask is None else torch.as_tensor(np.asarray(mask))
    loss = cross_entropy(net(X, mask), y)
    net.zero_grad()
    loss.backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in net.parameters()]).numpy()
    theta = flat_parameters(net).numpy().copy()
    rng = np.random.default_rng(seed)
    coords = rng.choice(theta.size, size=min(n_coords, theta.size), replace=False)

    def loss_at(vec):
        load_flat_parameters(net, vec)
        with torch.no_grad():
            return cross_entropy(net(X, mask), y).item()

    errors = []
    for c in coords:
        up, down = theta.copy(), theta.copy()
        up[c] += step
        down[c] -= step
        numeric = (loss_at(up) - loss_at(down)) / (2 * step)
        scale = max(abs(numeric), abs(analytic[c]), 1e-6)
        errors.append(abs(numeric - analytic[c]) / scale)
    load_flat_parameters(net, theta)
    return np.asarray(errors)


__all__ = [
    "ARCHITECTURES", "ClassifierConfig", "HeadDecision", "IntentionClassifier", "TrainConfig",
    "TrainingError", "build_network", "checkpoint_dict", "count_parameters", "forward", "gradcheck",
    "load_checkpoint", "predict_intention", "save_checkpoint",
]
