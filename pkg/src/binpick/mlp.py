"""A small fully-connected regressor (TAMN) written directly on numpy.

Inputs and outputs are standardised with dataset statistics that travel with
the model.  Training minimises MSE with mini-batch Adam (or plain SGD).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from binpick.kinematics import Pose
from binpick.textfmt import fmt

log = logging.getLogger(__name__)

MODEL_FORMAT = "tamn-mlp-v1"


class TrainingDiverged(RuntimeError):
    pass


def _tanh_grad(a: np.ndarray) -> np.ndarray:
    return 1.0 - a * a


@dataclass
class MlpModel:
    sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    x_mean: np.ndarray = None
    x_std: np.ndarray = None
    y_mean: float = 0.0
    y_std: float = 1.0
    tam_ref: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count mismatch")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[k], self.sizes[k + 1]) or b.shape != (self.sizes[k + 1],):
                raise ValueError(f"layer {k}: incompatible weight shapes")
        if self.x_mean is None:
            self.x_mean = np.zeros(self.sizes[0])
        if self.x_std is None:
            self.x_std = np.ones(self.sizes[0])

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, **kw) -> MlpModel:
        weights, biases = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, np.sqrt(1.0 / a), size=(a, b)))
            biases.append(np.zeros(b))
        return cls(list(sizes), weights, biases, **kw)

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward_std(self, Xs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass on standardised inputs; returns output and layer activations."""
        acts = [Xs]
        h = Xs
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if k < last:
                h = np.tanh(h)
            acts.append(h)
        return h[:, 0], acts

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out, _ = self.forward_std((X - self.x_mean) / self.x_std)
        return out * self.y_std + self.y_mean


def loss_and_grads(model: MlpModel, Xs: np.ndarray, ys: np.ndarray):
    """MSE on standardised data and its gradient for every parameter (W, b interleaved)."""
    out, acts = model.forward_std(Xs)
    n = len(ys)
    err = out - ys
    loss = float(np.mean(err ** 2))
    delta = (2.0 / n) * err[:, None]
    grads: list[np.ndarray] = []
    for k in range(len(model.weights) - 1, -1, -1):
        gW = acts[k].T @ delta
        gb = delta.sum(axis=0)
        grads = [gW, gb] + grads
        if k > 0:
            delta = (delta @ model.weights[k].T) * _tanh_grad(acts[k])
    return loss, grads


def pose_features(pose: Pose) -> np.ndarray:
    return np.concatenate([pose.d, pose.R[:, 0], pose.R[:, 1]])


def tam_features(poses: list[Pose], directions: np.ndarray) -> np.ndarray:
    P = np.array([pose_features(p) for p in poses]).reshape(-1, 9)
    D = np.asarray(directions, dtype=float).reshape(-1, 3)
    return np.concatenate([P, D], axis=1)


def infer_tam(model: MlpModel, pose: Pose, n_p: np.ndarray) -> float:
    return float(model.predict(tam_features([pose], n_p))[0])


def infer_tam_batch(model: MlpModel, poses: list[Pose], directions: np.ndarray) -> np.ndarray:
    if not poses:
        return np.zeros(0)
    return model.predict(tam_features(poses, directions))


@dataclass
class TrainingLog:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)

    @property
    def final_val_mse(self) -> float:
        return self.val_mse[-1] if self.val_mse else float("nan")

    def lines(self) -> list[str]:
        out = ["epoch train_mse val_mse"]
        for i, (a, b) in enumerate(zip(self.train_mse, self.val_mse), start=1):
            out.append(f"{i} {a:.8g} {b:.8g}")
        return out


def split_indices(n: int, seed: int, val_fraction: float = 0.1):
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(n * val_fraction))) if n > 1 else 0
    return perm[n_val:], perm[:n_val]


def train_tamn(X: np.ndarray, y: np.ndarray, *, lr: float = 1e-4, epochs: int = 200,
               seed: int = 0, hidden=(128, 128), batch_size: int = 64,
               optimizer: str = "adam", val_fraction: float = 0.1,
               shuffle: bool = True) -> tuple[MlpModel, TrainingLog]:
    """Fit an MLP to ``(X, y)``; MSEs in the log are in label units."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) == 0:
        raise ValueError("empty dataset")
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    tr, va = split_indices(len(y), seed, val_fraction)
    if len(va) == 0:
        va = tr
    x_mean = X[tr].mean(axis=0)
    x_std = X[tr].std(axis=0)
    x_std[x_std < 1e-8] = 1.0
    y_mean = float(y[tr].mean())
    y_std = float(y[tr].std())
    if y_std < 1e-8:
        y_std = 1.0
    rng = np.random.default_rng(seed)
    positive = y[tr][y[tr] >= 0]
    model = MlpModel.init([X.shape[1], *hidden, 1], rng, x_mean=x_mean, x_std=x_std,
                          y_mean=y_mean, y_std=y_std,
                          tam_ref=float(positive.mean()) if len(positive) else 1.0)
    Xs = (X - x_mean) / x_std
    ys = (y - y_mean) / y_std
    params = model.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    history = TrainingLog()
    for epoch in range(epochs):
        order = rng.permutation(tr) if shuffle else tr
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = loss_and_grads(model, Xs[idx], ys[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}, step {step}")
            step += 1
            if optimizer == "sgd":
                for p, g in zip(params, grads):
                    p -= lr * g
                continue
            for p, g, mk, vk in zip(params, grads, m, v):
                mk *= b1
                mk += (1 - b1) * g
                vk *= b2
                vk += (1 - b2) * g * g
                mhat = mk / (1 - b1 ** step)
                vhat = vk / (1 - b2 ** step)
                p -= lr * mhat / (np.sqrt(vhat) + eps)
        tr_mse = _mse(model, Xs[tr], ys[tr])
        va_mse = _mse(model, Xs[va], ys[va])
        if not (np.isfinite(tr_mse) and np.isfinite(va_mse)):
            raise TrainingDiverged(f"non-finite loss after epoch {epoch + 1}")
        history.train_mse.append(tr_mse)
        history.val_mse.append(va_mse)
        log.debug("epoch %d train %.6g val %.6g", epoch + 1, tr_mse, va_mse)
    model.meta.update({"epochs": epochs, "lr": lr, "seed": seed, "optimizer": optimizer,
                       "final_val_mse": history.final_val_mse})
    return model, history


def _mse(model: MlpModel, Xs: np.ndarray, ys: np.ndarray, chunk: int = 65536) -> float:
    total = 0.0
    for s in range(0, len(ys), chunk):
        out, _ = model.forward_std(Xs[s:s + chunk])
        total += float(np.sum((out - ys[s:s + chunk]) ** 2))
    return total / max(len(ys), 1) * model.y_std ** 2


# ---------------------------------------------------------------------------
# model files


def save_model(model: MlpModel, path: str | Path) -> None:
    """Text layout: header lines, then row-major W/b blocks, one row per line."""
    lines = [
        MODEL_FORMAT,
        "sizes " + " ".join(str(s) for s in model.sizes),
        f"activation {model.activation}",
        "x_mean " + " ".join(fmt(v) for v in model.x_mean),
        "x_std " + " ".join(fmt(v) for v in model.x_std),
        f"y_mean {fmt(model.y_mean)}",
        f"y_std {fmt(model.y_std)}",
        f"tam_ref {fmt(model.tam_ref)}",
    ]
    for k, v in sorted(model.meta.items()):
        lines.append(f"meta {k} {v}")
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"W {k} {W.shape[0]} {W.shape[1]}")
        lines.extend(" ".join(fmt(x) for x in row) for row in W)
        lines.append(f"b {k} {b.shape[0]}")
        lines.append(" ".join(fmt(x) for x in b))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_model(text: str) -> MlpModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} file")
    head: dict[str, list[str]] = {}
    meta: dict[str, str] = {}
    weights, biases = [], []
    i = 1
    while i < len(lines):
        tok = lines[i].split()
        i += 1
        if not tok:
            continue
        if tok[0] == "W":
            rows, cols = int(tok[2]), int(tok[3])
            W = np.array([[float(x) for x in lines[i + r].split()] for r in range(rows)])
            if W.shape != (rows, cols):
                raise ValueError("weight block has the wrong shape")
            weights.append(W)
            i += rows
        elif tok[0] == "b":
            biases.append(np.array([float(x) for x in lines[i].split()]))
            i += 1
        elif tok[0] == "meta":
            meta[tok[1]] = " ".join(tok[2:])
        else:
            head[tok[0]] = tok[1:]
    return MlpModel(
        sizes=[int(s) for s in head["sizes"]],
        weights=weights,
        biases=biases,
        activation=head["activation"][0],
        x_mean=np.array([float(v) for v in head["x_mean"]]),
        x_std=np.array([float(v) for v in head["x_std"]]),
        y_mean=float(head["y_mean"][0]),
        y_std=float(head["y_std"][0]),
        tam_ref=float(head.get("tam_ref", ["1.0"])[0]),
        meta=meta,
    )


def load_model(path: str | Path) -> MlpModel:
    return _parse_model(Path(path).read_text())


def default_model() -> MlpModel:
    """The TAMN shipped with the package (trained on the default chain and workspace)."""
    ref = resources.files("binpick") / "data" / "tamn_default.model"
    return _parse_model(ref.read_text())
