"""Scikit-learn compatible teacher and student classifiers.

Both estimators consume standardized ``(n, 128, 128, 3)`` feature tensors and
integer labels. ``transform`` returns the 64-d embedding (the ReLU output of
the first dense layer), which is what the student is distilled towards.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import Checkpoint
from .exceptions import ConfigError, ShapeError, TrainingAborted
from .nn import Adam, Network, cross_entropy, mix_batch, mse, seed_streams
from .validation import check_features, check_labels, one_hot
from .zoo import EMBEDDING_DIM, N_CLASSES, ModelSpec, TeacherConfig, build_student, build_teacher

log = logging.getLogger(__name__)

PROB_CLIP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    mixup_alpha: float | None = None
    # fixes lambda instead of sampling Beta(alpha, alpha); diagnostics only
    mixup_lambda: float | None = None
    loss_weights: tuple[float, float] = (1.0, 1.0)
    adam: tuple[float, float, float] = (0.9, 0.999, 1e-8)

    def __post_init__(self):
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        object.__setattr__(self, "adam", tuple(float(a) for a in self.adam))
        w_ce, w_mse = self.loss_weights
        if w_ce < 0 or w_mse < 0 or (w_ce == 0 and w_mse == 0):
            raise ConfigError("loss weights must be nonnegative and not both zero")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("learning_rate > 0, batch_size >= 1 and epochs >= 0 are required")
        if self.mixup_alpha is not None and self.mixup_alpha <= 0:
            raise ConfigError("mixup_alpha must be positive or None (disabled)")
        if self.mixup_lambda is not None and not 0 <= self.mixup_lambda <= 1:
            raise ConfigError("mixup_lambda must lie in [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        d["adam"] = list(self.adam)
        return d


@dataclass
class EpochRecord:
    epoch: int
    ce: float
    mse: float
    train_acc: float
    eval_acc: float = math.nan
    eval_logloss: float = math.nan


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_clock: float = 0.0
    seed: int = 0
    config: dict = field(default_factory=dict)
    best_epoch: int | None = None

    def to_tsv(self) -> str:
        """One line per epoch; deliberately excludes wall-clock so files are reproducible."""
        lines = ["epoch\tce\tmse\ttrain_acc\teval_acc\teval_logloss"]
        for r in self.epochs:
            lines.append(
                f"{r.epoch}\t{r.ce:.9g}\t{r.mse:.9g}\t{r.train_acc:.6f}\t{r.eval_acc:.6f}\t{r.eval_logloss:.9g}"
            )
        return "\n".join(lines) + "\n"


def log_loss(proba, y):
    p = np.clip(proba[np.arange(len(y)), y], PROB_CLIP, 1 - PROB_CLIP)
    return float(-np.mean(np.log(p)))


class _ASCNet(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Shared fit/predict machinery; subclasses fix the architecture and defaults."""

    def _build_spec(self) -> ModelSpec:
        raise NotImplementedError

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            mixup_alpha=self.mixup_alpha,
            mixup_lambda=self.mixup_lambda,
            loss_weights=tuple(self.loss_weights),
        )

    def fit(self, X, y, embeddings=None, eval_set=None):
        """Train with Adam on cross-entropy, plus MSE to ``embeddings`` if given.

        ``eval_set=(X_eval, y_eval)`` enables per-epoch evaluation and keeps
        the parameters of the best epoch (eval accuracy, then log loss).
        """
        cfg = self._train_config()
        X = check_features(X)
        y = check_labels(y, len(X))
        if embeddings is not None:
            embeddings = np.asarray(embeddings, dtype=np.float32)
            if embeddings.shape != (len(X), EMBEDDING_DIM):
                raise ShapeError(f"embeddings must be ({len(X)}, {EMBEDDING_DIM}), got {embeddings.shape}")
        if eval_set is not None:
            Xe = check_features(eval_set[0])
            ye = check_labels(eval_set[1], len(Xe))

        self.spec_ = self._build_spec()
        self.network_ = Network(self.spec_, seed=cfg.seed)
        _, _, shuffle_rng, mixup_rng = seed_streams(cfg.seed)
        opt = Adam(cfg.learning_rate, *cfg.adam)
        w_ce, w_mse = cfg.loss_weights
        Y = one_hot(y)
        self.classes_ = np.arange(N_CLASSES)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.report_ = TrainReport(seed=cfg.seed, config=cfg.to_dict())
        self.step_losses_ = []
        best_key, best_state = None, None
        t0 = time.perf_counter()
        net = self.network_
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(len(X))
            sums = np.zeros(3)
            for s in range(0, len(X), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                xb, yb = X[idx], Y[idx]
                if cfg.mixup_alpha is not None or cfg.mixup_lambda is not None:
                    xb, yb = mix_batch(xb, yb, mixup_rng, cfg.mixup_alpha, cfg.mixup_lambda)
                proba, emb = net.forward(xb, training=True, return_tap=True)
                ce, g_ce = cross_entropy(proba, yb)
                if embeddings is not None:
                    dist, g_mse = mse(emb, embeddings[idx])
                else:
                    dist, g_mse = 0.0, None
                total = w_ce * ce + w_mse * dist
                self.step_losses_.append((ce, dist, total))
                if not math.isfinite(total):
                    self._restore(best_state)
                    raise TrainingAborted("non-finite loss", layer="loss", step=len(self.step_losses_))
                tap_grad = None if g_mse is None else w_mse * g_mse
                net.backward(w_ce * g_ce, tap_grad=tap_grad)
                try:
                    opt.step(net.parameters(), net.gradients())
                except TrainingAborted:
                    self._restore(best_state)
                    raise
                hits = (proba.argmax(axis=1) == y[idx]).sum()
                sums += (len(idx) * ce, len(idx) * dist, hits)
            rec = EpochRecord(epoch, sums[0] / len(X), sums[1] / len(X), sums[2] / len(X))
            if eval_set is not None:
                pe = net.predict_proba(Xe)
                rec.eval_acc = float((pe.argmax(axis=1) == ye).mean()) if len(ye) else math.nan
                rec.eval_logloss = log_loss(pe, ye) if len(ye) else math.nan
                key = (rec.eval_acc, -rec.eval_logloss)
                if best_key is None or key > best_key:
                    best_key = key
                    best_state = self._snapshot()
                    self.report_.best_epoch = epoch
            self.report_.epochs.append(rec)
            log.info(
                "%s epoch %d ce=%.4f mse=%.4f train_acc=%.3f eval_acc=%.3f",
                type(self).__name__, epoch, rec.ce, rec.mse, rec.train_acc, rec.eval_acc,
            )
        if best_state is not None:
            self._restore(best_state)
        self.report_.wall_clock = time.perf_counter() - t0
        return self

    def _snapshot(self):
        net = self.network_
        return (
            {k: v.copy() for k, v in net.parameters().items()},
            {k: v.copy() for k, v in net.buffers().items()},
        )

    def _restore(self, state):
        if state is not None:
            self.network_.load_arrays(*state)

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return self.network_.predict_proba(check_features(X)).astype(np.float64)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def transform(self, X):
        """64-d embeddings in eval mode."""
        check_is_fitted(self, "network_")
        return self.network_.embed(check_features(X))

    # -- checkpoints ---------------------------------------------------------
    def to_checkpoint(self, kind=None, standardization=None) -> Checkpoint:
        check_is_fitted(self, "network_")
        net = self.network_
        return Checkpoint(
            spec=self.spec_,
            params={k: v.copy() for k, v in net.parameters().items()},
            buffers={k: v.copy() for k, v in net.buffers().items()},
            standardization=standardization,
            train_config={"estimator": type(self).__name__, **self.get_params(), **self._train_config().to_dict()},
            kind=None if kind is None else str(getattr(kind, "value", kind)),
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint):
        names = cls._get_param_names()
        est = cls(**{k: _from_json(v) for k, v in ckpt.train_config.items() if k in names})
        est.spec_ = ckpt.spec
        est.network_ = Network(ckpt.spec, seed=est.seed)
        est.network_.load_arrays(ckpt.params, ckpt.buffers)
        est.classes_ = np.arange(N_CLASSES)
        est.n_features_in_ = int(np.prod(ckpt.spec.input_shape))
        return est


def _from_json(v):
    return tuple(v) if isinstance(v, list) else v


class StudentClassifier(_ASCNet):
    """Low-complexity student (7,290 parameters).

    With ``embeddings`` passed to ``fit`` the loss is
    ``w_ce * CE + w_mse * MSE(embedding, teacher_embedding)``; mixup is off
    by default.
    """

    def __init__(
        self,
        learning_rate=1e-3,
        batch_size=32,
        epochs=200,
        seed=0,
        mixup_alpha=None,
        mixup_lambda=None,
        loss_weights=(1.0, 1.0),
    ):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.mixup_alpha = mixup_alpha
        self.mixup_lambda = mixup_lambda
        self.loss_weights = loss_weights

    def _build_spec(self):
        return build_student()


class TeacherClassifier(_ASCNet):
    """Residual-CNN teacher trained with mixup and cross-entropy only."""

    def __init__(
        self,
        channels=(32, 64, 128, 256),
        stem_pool=1,
        learning_rate=1e-3,
        batch_size=32,
        epochs=100,
        seed=0,
        mixup_alpha=0.4,
        mixup_lambda=None,
        loss_weights=(1.0, 0.0),
    ):
        self.channels = channels
        self.stem_pool = stem_pool
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.mixup_alpha = mixup_alpha
        self.mixup_lambda = mixup_lambda
        self.loss_weights = loss_weights

    def _build_spec(self):
        return build_teacher(TeacherConfig(tuple(self.channels), self.stem_pool))


def extract_embedding(ckpt: Checkpoint, features, expected_spec: ModelSpec | None = None):
    """Eval-mode 64-d embeddings of ``features`` under the weights in ``ckpt``."""
    from .checkpoint import check_spec

    if expected_spec is not None:
        check_spec(ckpt.spec, expected_spec)
    net = Network(ckpt.spec)
    net.load_arrays(ckpt.params, ckpt.buffers)
    x = np.asarray(features, dtype=np.float32)
    single = x.ndim == 3
    emb = net.embed(x[None] if single else x)
    return emb[0] if single else emb

