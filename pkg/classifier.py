"""
Feed-forward binary classifier omega_theta(x, y, z).

affine -> ReLU hidden layers -> affine -> sigmoid -> clip to [tau, 1 - tau],
trained with minibatch Adam on the pooled binary cross-entropy.
"""
import copy
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from datagen import make_rng
from errors import ConfigError, TrainingDivergedError
from reports import load_json, save_json
from resample import LabeledBatch, pool_batches

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    hidden: Tuple[int, ...] = (64, 64)
    activation: str = "relu"
    tau: float = 1e-3
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    minibatch_size: int = 128
    epochs: int = 200
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(w < 1 for w in self.hidden):
            raise ConfigError(f"hidden widths must all be >= 1, got {self.hidden}")
        if self.activation != "relu":
            raise ConfigError(f"Unsupported activation '{self.activation}' (only relu)")
        if not 0 < self.tau < 0.5:
            raise ConfigError(f"tau must lie in (0, 0.5), got {self.tau}")
        if self.minibatch_size < 1 or self.epochs < 0:
            raise ConfigError("minibatch_size must be >= 1 and epochs >= 0")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")

    def with_input_dim(self, input_dim: int) -> "NetConfig":
        return replace(self, input_dim=input_dim)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class Classifier:
    config: NetConfig
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    loss_log: List[float] = field(default_factory=list)
    train_p1: Optional[float] = None

    @property
    def tau(self) -> float:
        return self.config.tau

    @property
    def n_parameters(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def copy(self) -> "Classifier":
        return copy.deepcopy(self)

    def _forward(self, features: np.ndarray):
        acts, pre = [features], []
        h = features
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = h @ w + b
            pre.append(a)
            h = np.maximum(a, 0.0)
            acts.append(h)
        logit = (h @ self.weights[-1] + self.biases[-1])[:, 0]
        return acts, pre, expit(logit)

    def _check_features(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features.reshape(1, -1)
        if features.shape[1] != self.config.input_dim:
            raise ConfigError(f"Sample dimension {features.shape[1]} != input_dim {self.config.input_dim}")
        return features

    def evaluate(self, features):
        """Clipped output in [tau, 1 - tau]; a single 1-D sample gives a float."""
        single = np.ndim(features) == 1
        _, _, sig = self._forward(self._check_features(features))
        omega = np.clip(sig, self.tau, 1.0 - self.tau)
        return float(omega[0]) if single else omega

    def parameter_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(w ** 2) + np.sum(b ** 2) for w, b in zip(self.weights, self.biases))))

    def lipschitz_proxy(self) -> float:
        """Product of layer spectral norms times 1/4 for the sigmoid; an upper bound, not the exact constant."""
        value = 0.25
        for w in self.weights:
            value *= float(np.linalg.norm(w, 2))
        return value


def init_classifier(config: NetConfig) -> Classifier:
    """Fan-in scaled uniform weights, zero biases; hidden=() gives logistic regression."""
    rng = make_rng(config.init_seed)
    widths = [config.input_dim, *config.hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Classifier(config, weights, biases)


def _bce(omega: np.ndarray, labels: np.ndarray) -> float:
    return float(-np.mean(labels * np.log(omega) + (1.0 - labels) * np.log1p(-omega)))


def empirical_loss(classifier: Classifier, joint: LabeledBatch, product: LabeledBatch) -> float:
    """
    p1 * L1_b + (1 - p1) * L2_b' with p1 = b / (b + b'), i.e. the plain
    mean cross-entropy over the pooled labelled samples.
    """
    features, labels, _ = pool_batches(joint, product)
    return _bce(classifier.evaluate(features), labels)


def loss_and_gradients(classifier: Classifier, features: np.ndarray, labels: np.ndarray):
    """
    Mean BCE and its gradient w.r.t. every weight and bias. The clip has
    derivative 1 strictly inside (tau, 1 - tau) and 0 elsewhere.
    """
    tau = classifier.tau
    acts, pre, sig = classifier._forward(features)
    omega = np.clip(sig, tau, 1.0 - tau)
    loss = _bce(omega, labels)

    inside = (sig > tau) & (sig < 1.0 - tau)
    delta = ((sig - labels) * inside / len(labels))[:, None]

    grad_w = [None] * len(classifier.weights)
    grad_b = [None] * len(classifier.biases)
    for layer in range(len(classifier.weights) - 1, -1, -1):
        grad_w[layer] = acts[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ classifier.weights[layer].T) * (pre[layer - 1] > 0)
    return loss, grad_w, grad_b


def train_classifier(classifier: Classifier, joint: LabeledBatch, product: LabeledBatch,
                     seed=None, on_epoch: Optional[Callable[[int, Classifier], None]] = None) -> Classifier:
    """
    E epochs of minibatch Adam over the shuffled pool; the input classifier is
    left untouched. on_epoch(epoch, model) runs after every epoch, 1-based.
    """
    cfg = classifier.config
    features, labels, p1 = pool_batches(joint, product)
    if features.shape[1] != cfg.input_dim:
        raise ConfigError(f"Batch dimension {features.shape[1]} != input_dim {cfg.input_dim}")

    model = classifier.copy()
    model.train_p1 = p1
    if cfg.epochs == 0:
        return model

    rng = make_rng(cfg.init_seed + 1 if seed is None else seed)
    params = model.weights + model.biases
    first = [np.zeros_like(p) for p in params]
    second = [np.zeros_like(p) for p in params]
    step = 0
    n = len(labels)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            loss, grad_w, grad_b = loss_and_gradients(model, features[idx], labels[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step} (|theta|={model.parameter_norm():.3g})"
                )
            step += 1
            for p, g, m1, m2 in zip(params, grad_w + grad_b, first, second):
                m1 *= cfg.beta1
                m1 += (1.0 - cfg.beta1) * g
                m2 *= cfg.beta2
                m2 += (1.0 - cfg.beta2) * g * g
                m_hat = m1 / (1.0 - cfg.beta1 ** step)
                v_hat = m2 / (1.0 - cfg.beta2 ** step)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon_hat)
            running += loss * len(idx)
        model.loss_log.append(running / n)
        if on_epoch is not None:
            on_epoch(epoch + 1, model)

    logger.debug(f"Trained {cfg.epochs} epochs, final loss {model.loss_log[-1]:.5f}, "
                 f"|theta|={model.parameter_norm():.3f}, Lipschitz proxy={model.lipschitz_proxy():.3g}")
    return model


# -----------------------
# Checkpoints
# -----------------------

def checkpoint_payload(classifier: Classifier) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "config": classifier.config.to_dict(),
        "train_p1": classifier.train_p1,
        "layers": [
            {"shape": list(w.shape), "weights": w.ravel(order="C").tolist(), "bias": b.tolist()}
            for w, b in zip(classifier.weights, classifier.biases)
        ],
        "loss_log": classifier.loss_log,
        "parameter_norm": classifier.parameter_norm(),
    }


def save_checkpoint(classifier: Classifier, path) -> Path:
    return save_json(path, checkpoint_payload(classifier))


def load_checkpoint(path) -> Classifier:
    payload = load_json(Path(path))
    if payload is None:
        raise ConfigError(f"Checkpoint not found: {path}")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"Unsupported checkpoint version {payload.get('format_version')}")
    config = NetConfig(**payload["config"])
    weights = [np.array(layer["weights"], dtype=np.float64).reshape(layer["shape"]) for layer in payload["layers"]]
    biases = [np.array(layer["bias"], dtype=np.float64) for layer in payload["layers"]]
    return Classifier(config, weights, biases, list(payload.get("loss_log", [])), payload.get("train_p1"))
