"""scikit-learn style crossing-intention classifier with early stopping."""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import GroupShuffleSplit
from sklearn.utils.validation import check_array, check_is_fitted

from .networks import (
    DTYPE,
    ClassifierConfig,
    build_network,
    count_parameters,
    flat_parameters,
    load_flat_parameters,
    parameter_segments,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "crossintent-checkpoint/1"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.patience < 1 or not self.learning_rate > 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch_size and max_epochs must be >= 1 and learning_rate > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


def _as_windows(X, mask=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, None, :]
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_samples=0)
    if X.ndim != 3:
        raise ValueError(f"expected windows of shape (n, slots, features), got {X.shape}")
    if mask is None:
        mask = np.ones(X.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != X.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match windows {X.shape[:2]}")
    return X, mask


def _as_labels(y, n):
    y = np.asarray(y)
    if y.shape[0] != n:
        raise ValueError(f"{y.shape[0]} labels for {n} windows")
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (not crossing) or 1 (crossing)")
    return y.astype(np.int64)


def cross_entropy(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean over windows of the cross-entropy summed over heads."""
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(2, y.unsqueeze(2)).squeeze(2)
    return -picked.sum(dim=1).mean()


class IntentionClassifier(ClassifierMixin, BaseEstimator):
    """FFNN / GRU / transformer-encoder crossing-intention classifier.

    ``X`` holds windows of shape (n, slots, features); ``y`` is (n,) for one
    horizon or (n, heads) for multi-task training.  Validation data is passed
    with ``eval_set=(X_val, y_val[, mask_val])`` or carved out of the training
    data by ``groups`` (scene ids), never by mixing scenes.
    """

    def __init__(self, architecture="GRU", n_layers=2, n_hidden=64, n_heads=4, horizons=(1.5,),
                 learning_rate=1e-3, batch_size=32, max_epochs=200, patience=10, optimizer="adam",
                 mask_skipping=True, seed=0):
        self.architecture = architecture
        self.n_layers = n_layers
        self.n_hidden = n_hidden
        self.n_heads = n_heads
        self.horizons = horizons
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.optimizer = optimizer
        self.mask_skipping = mask_skipping
        self.seed = seed

    # ---------------------------------------------------------------- config
    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.batch_size, self.max_epochs, self.patience,
                           self.optimizer)

    def _classifier_config(self, input_dim, slots, n_outputs) -> ClassifierConfig:
        horizons = tuple(np.atleast_1d(self.horizons).tolist())
        if len(horizons) != n_outputs:
            if n_outputs == 1:
                horizons = horizons[:1]
            else:
                raise ValueError(f"{n_outputs} label columns but horizons={horizons}")
        return ClassifierConfig(self.architecture, self.n_layers, self.n_hidden, self.n_heads,
                                input_dim, slots, horizons, self.seed, self.mask_skipping)

    # ------------------------------------------------------------------ fit
    def fit(self, X, y, mask=None, eval_set=None, groups=None, eval_groups=None):
        X, mask = _as_windows(X, mask)
        y = _as_labels(y, len(X))
        if eval_set is None:
            if groups is None:
                raise ValueError("validation data required: pass eval_set or scene groups")
            splitter = GroupShuffleSplit(n_splits=1, test_size=0.15, random_state=self.seed)
            tr, va = next(splitter.split(X, groups=groups))
            Xv, yv, mv = X[va], y[va], mask[va]
            X, y, mask = X[tr], y[tr], mask[tr]
        else:
            if groups is not None and eval_groups is not None:
                shared = set(np.asarray(groups).tolist()) & set(np.asarray(eval_groups).tolist())
                if shared:
                    raise ValueError(f"scenes in both train and validation splits: {sorted(shared)[:5]}")
            Xv, yv = eval_set[0], eval_set[1]
            Xv, mv = _as_windows(Xv, eval_set[2] if len(eval_set) > 2 else None)
            yv = _as_labels(yv, len(Xv))
        if len(X) == 0 or len(Xv) == 0:
            raise ValueError("train and validation splits must be non-empty")
        if Xv.shape[1:] != X.shape[1:] or yv.shape[1] != y.shape[1]:
            raise ValueError("validation windows do not match the training windows' shape")

        cfg = self._classifier_config(X.shape[2], X.shape[1], y.shape[1])
        tcfg = self.train_config()
        net = build_network(cfg)
        self._train(net, tcfg, X, y, mask, Xv, yv, mv)
        self.config_ = cfg
        self.network_ = net
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[2]
        self.n_slots_ = X.shape[1]
        self.n_outputs_ = y.shape[1]
        self.param_count_ = count_parameters(cfg)
        return self

    def _train(self, net, tcfg, X, y, mask, Xv, yv, mv):
        rng = np.random.default_rng(self.seed)
        tX, ty, tm = torch.from_numpy(X), torch.from_numpy(y), torch.from_numpy(mask)
        vX, vy, vm = torch.from_numpy(Xv), torch.from_numpy(yv), torch.from_numpy(mv)
        if tcfg.optimizer == "adam":
            opt = torch.optim.Adam(net.parameters(), lr=tcfg.learning_rate, betas=tcfg.betas, eps=tcfg.eps)
        else:
            opt = torch.optim.SGD(net.parameters(), lr=tcfg.learning_rate)
        best_loss, best_state, best_epoch, stale = np.inf, None, 0, 0
        history = []
        for epoch in range(1, tcfg.max_epochs + 1):
            net.train()
            order = rng.permutation(len(X))
            total = 0.0
            for start in range(0, len(order), tcfg.batch_size):
                idx = torch.from_numpy(order[start:start + tcfg.batch_size])
                opt.zero_grad()
                loss = cross_entropy(net(tX[idx], tm[idx]), ty[idx])
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite training loss at epoch {epoch}")
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            net.eval()
            with torch.no_grad():
                logits = net(vX, vm)
                val_loss = cross_entropy(logits, vy).item()
                val_acc = (logits.argmax(dim=-1) == vy).double().mean().item()
            if not np.isfinite(val_loss):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}")
            history.append({"epoch": epoch, "train_loss": total / len(X),
                            "val_loss": val_loss, "val_accuracy": val_acc})
            log.debug("epoch %d train %.4f val %.4f acc %.4f", epoch, total / len(X), val_loss, val_acc)
            if val_loss < best_loss:
                best_loss, best_epoch, stale = val_loss, epoch, 0
                best_state = copy.deepcopy(net.state_dict())
            else:
                stale += 1
                if stale >= tcfg.patience:
                    break
        net.load_state_dict(best_state)
        net.eval()
        self.history_ = history
        self.best_epoch_ = best_epoch
        self.n_epochs_ = len(history)

    # ------------------------------------------------------------- predict
    def predict_proba(self, X, mask=None):
        """Class probabilities ordered (not_crossing, crossing).

        Shape (n, 2) for one head, (n, heads, 2) otherwise.  Windows are
        evaluated one at a time so a window's output does not depend on what
        it is batched with.
        """
        check_is_fitted(self, "network_")
        X, mask = _as_windows(X, mask)
        if X.shape[1:] != (self.n_slots_, self.n_features_in_):
            raise ValueError(f"windows of shape {X.shape[1:]} do not match the model's "
                             f"{(self.n_slots_, self.n_features_in_)}")
        out = np.empty((len(X), self.n_outputs_, 2))
        for i in range(len(X)):
            out[i] = self.window_proba(X[i], mask[i])
        return out[:, 0] if self.n_outputs_ == 1 else out

    def window_proba(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """(heads, 2) probabilities of one pre-validated float64 window."""
        with torch.inference_mode():
            logits = self.network_(torch.from_numpy(x[None]), torch.from_numpy(mask[None]))
            p = torch.softmax(logits, dim=-1)[0].numpy()
        if not np.all(np.isfinite(p)):
            raise TrainingError("non-finite activation")
        return p

    def predict(self, X, mask=None):
        """Crossing (1) only when its probability is strictly larger."""
        proba = self.predict_proba(X, mask)
        return (proba[..., 1] > proba[..., 0]).astype(np.int64)

    def score(self, X, y, mask=None, sample_weight=None):
        """Mean accuracy, pooled over heads for multi-task labels."""
        pred = self.predict(X, mask)
        y = np.asarray(y).reshape(pred.shape)
        hit = (pred == y).reshape(len(pred), -1).mean(axis=1)
        return float(np.average(hit, weights=sample_weight))

    # ------------------------------------------------------------ parameters
    @property
    def parameters_(self) -> np.ndarray:
        check_is_fitted(self, "network_")
        return flat_parameters(self.network_).numpy().copy()

    @property
    def segments_(self):
        return parameter_segments(self.network_)

    def set_parameters(self, flat) -> "IntentionClassifier":
        load_flat_parameters(self.network_, flat)
        return self

    @classmethod
    def from_config(cls, cfg: ClassifierConfig, tcfg: TrainConfig | None = None) -> "IntentionClassifier":
        """An untrained but usable model with seeded initial weights."""
        tcfg = tcfg or TrainConfig()
        est = cls(cfg.architecture, cfg.n_layers, cfg.n_hidden, cfg.n_heads, cfg.horizons,
                  tcfg.learning_rate, tcfg.batch_size, tcfg.max_epochs, tcfg.patience,
                  tcfg.optimizer, cfg.mask_skipping, cfg.seed)
        est.config_ = cfg
        est.network_ = build_network(cfg).eval()
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = cfg.input_dim
        est.n_slots_ = cfg.context_slots
        est.n_outputs_ = cfg.n_outputs
        est.param_count_ = count_parameters(cfg)
        est.history_, est.best_epoch_, est.n_epochs_ = [], 0, 0
        return est


def checkpoint_dict(model: IntentionClassifier) -> dict:
    check_is_fitted(model, "network_")
    segments = []
    for name, p in model.network_.named_parameters():
        segments.append({"name": name, "shape": list(p.shape),
                         "values": [float(v) for v in p.detach().reshape(-1).tolist()]})
    tcfg = model.train_config()
    return {
        "format": CHECKPOINT_FORMAT,
        "config": model.config_.to_dict(),
        "train_config": {**asdict(tcfg), "betas": list(tcfg.betas)},
        "param_count": int(model.param_count_),
        "best_epoch": int(model.best_epoch_),
        "training_log": model.history_,
        "segments": segments,
    }


def save_checkpoint(model: IntentionClassifier, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model), separators=(",", ":")) + "\n")


def load_checkpoint(path) -> IntentionClassifier:
    data = json.loads(Path(path).read_text())
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    cfg = ClassifierConfig(**data["config"])
    tc = dict(data["train_config"])
    tc["betas"] = tuple(tc["betas"])
    model = IntentionClassifier.from_config(cfg, TrainConfig(**tc))
    named = dict(model.network_.named_parameters())
    with torch.no_grad():
        for seg in data["segments"]:
            p = named[seg["name"]]
            p.copy_(torch.tensor(seg["values"], dtype=DTYPE).reshape(seg["shape"]))
    model.history_ = data.get("training_log", [])
    model.best_epoch_ = data.get("best_epoch", 0)
    model.n_epochs_ = len(model.history_)
    return model
