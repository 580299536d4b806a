"""Pose-conditioned landmark transformer.

A plain-numpy MLP maps (source landmarks, target pose) to target
landmarks: 12 dense layers, each followed by batch normalization and
ReLU except the last.  Landmarks are normalized to [-1, 1] by the image
extent and angles divided by 90 before entering the net; outputs are
mapped back to pixels.  The final layer starts at zero, so an untrained
model predicts the image center for every point.

Training is full from-scratch backpropagation with Adam
(beta1 = 0.5, beta2 = 0.999, lr = 2e-4) on the mean per-sample squared
residual in normalized coordinates.  With batch statistics undefined at
batch size 1, normalization falls back to the running statistics, which
keeps single-sample training and inference consistent.

Checkpoints are little-endian binary: magic ``FPT1``, a u32 layer count,
then per layer u32 rows/cols, float32 row-major weights, biases, and
(for all but the final layer) gamma/beta/running mean/running variance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import NUM_LANDMARKS, LandmarkSet, PoseAngles
from .synthetic import PoseCorpus

CHECKPOINT_MAGIC = b"FPT1"
N_LAYERS = 12
INPUT_DIM = NUM_LANDMARKS * 2 + 3
OUTPUT_DIM = NUM_LANDMARKS * 2
BN_EPS = 1e-5
ANGLE_SCALE = 90.0


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    steps: int = 2000
    seed: int = 0


@dataclass
class _Layer:
    w: np.ndarray
    b: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    run_mean: np.ndarray | None = None
    run_var: np.ndarray | None = None

    @property
    def has_bn(self) -> bool:
        return self.gamma is not None


@dataclass
class LandmarkTransformer:
    """12-layer MLP over normalized landmark/pose vectors."""

    layers: list[_Layer]
    extent: tuple[int, int] = (256, 256)
    bn_momentum: float = 0.1

    @staticmethod
    def create(hidden: int = 256, extent: tuple[int, int] = (256, 256),
               seed: int = 0, zero_final: bool = True) -> "LandmarkTransformer":
        """He-initialized network; the final layer is zeroed by default."""
        rng = np.random.default_rng(seed)
        dims = [INPUT_DIM] + [hidden] * (N_LAYERS - 1) + [OUTPUT_DIM]
        layers = []
        for i, (din, dout) in enumerate(zip(dims, dims[1:])):
            final = i == N_LAYERS - 1
            if final and zero_final:
                w = np.zeros((din, dout))
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / din), size=(din, dout))
            layer = _Layer(w=w, b=np.zeros(dout))
            if not final:
                layer.gamma = np.ones(dout)
                layer.beta = np.zeros(dout)
                layer.run_mean = np.zeros(dout)
                layer.run_var = np.ones(dout)
            layers.append(layer)
        return LandmarkTransformer(layers=layers, extent=extent)

    # -- coordinate normalization ------------------------------------------

    def encode_input(self, points: np.ndarray, pose: np.ndarray) -> np.ndarray:
        """(n, 98, 2) pixels + (n, 3) degrees -> (n, 199) normalized."""
        w, h = self.extent
        norm = np.empty(points.shape[:1] + (OUTPUT_DIM,))
        norm[:, 0::2] = 2.0 * points[:, :, 0] / w - 1.0
        norm[:, 1::2] = 2.0 * points[:, :, 1] / h - 1.0
        return np.concatenate([norm, pose / ANGLE_SCALE], axis=1)

    def encode_targets(self, points: np.ndarray) -> np.ndarray:
        w, h = self.extent
        out = np.empty(points.shape[:1] + (OUTPUT_DIM,))
        out[:, 0::2] = 2.0 * points[:, :, 0] / w - 1.0
        out[:, 1::2] = 2.0 * points[:, :, 1] / h - 1.0
        return out

    def decode_output(self, out: np.ndarray) -> np.ndarray:
        w, h = self.extent
        pts = np.empty(out.shape[:1] + (NUM_LANDMARKS, 2))
        pts[:, :, 0] = (out[:, 0::2] + 1.0) * w / 2.0
        pts[:, :, 1] = (out[:, 1::2] + 1.0) * h / 2.0
        return pts

    # -- forward / backward -------------------------------------------------

    def _forward(self, x: np.ndarray, training: bool) -> tuple[np.ndarray, list[dict]]:
        caches = []
        z = x
        for layer in self.layers:
            a = z @ layer.w + layer.b
            cache: dict = {"z_in": z, "a": a}
            if layer.has_bn:
                if training and len(a) > 1:
                    mu = a.mean(axis=0)
                    var = a.var(axis=0)
                    layer.run_mean = (1 - self.bn_momentum) * layer.run_mean + self.bn_momentum * mu
                    layer.run_var = (1 - self.bn_momentum) * layer.run_var + self.bn_momentum * var
                    cache["batch_stats"] = True
                else:
                    mu, var = layer.run_mean, layer.run_var
                    cache["batch_stats"] = False
                ivar = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (a - mu) * ivar
                y = layer.gamma * xhat + layer.beta
                z = np.maximum(y, 0.0)
                cache.update(mu=mu, ivar=ivar, xhat=xhat, y=y)
            else:
                z = a
            caches.append(cache)
        return z, caches

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out, _ = self._forward(np.asarray(x, dtype=np.float64), training)
        return out

    def loss_and_grads(self, x: np.ndarray, targets: np.ndarray,
                       training: bool = True) -> tuple[float, list[dict]]:
        """Mean per-sample squared residual and parameter gradients."""
        n = len(x)
        out, caches = self._forward(x, training)
        resid = out - targets
        loss = float((resid ** 2).sum() / n)
        delta = 2.0 * resid / n
        grads: list[dict] = [dict() for _ in self.layers]
        for li in range(len(self.layers) - 1, -1, -1):
            layer, cache = self.layers[li], caches[li]
            if layer.has_bn:
                dz = delta * (cache["y"] > 0)
                grads[li]["gamma"] = (dz * cache["xhat"]).sum(axis=0)
                grads[li]["beta"] = dz.sum(axis=0)
                dxhat = dz * layer.gamma
                if cache["batch_stats"]:
                    m = len(x)
                    a_mu = cache["a"] - cache["mu"]
                    ivar = cache["ivar"]
                    dvar = (dxhat * a_mu).sum(axis=0) * (-0.5) * ivar ** 3
                    dmu = -(dxhat.sum(axis=0)) * ivar + dvar * (-2.0 / m) * a_mu.sum(axis=0)
                    da = dxhat * ivar + dvar * (2.0 / m) * a_mu + dmu / m
                else:
                    da = dxhat * cache["ivar"]
            else:
                da = delta
            grads[li]["w"] = cache["z_in"].T @ da
            grads[li]["b"] = da.sum(axis=0)
            delta = da @ layer.w.T
        return loss, grads

    # -- parameter vector helpers (gradient checks, optimizers) -------------

    def param_items(self) -> list[tuple[int, str, np.ndarray]]:
        items = []
        for li, layer in enumerate(self.layers):
            items.append((li, "w", layer.w))
            items.append((li, "b", layer.b))
            if layer.has_bn:
                items.append((li, "gamma", layer.gamma))
                items.append((li, "beta", layer.beta))
        return items

    def set_param(self, li: int, name: str, value: np.ndarray) -> None:
        setattr(self.layers[li], {"w": "w", "b": "b", "gamma": "gamma", "beta": "beta"}[name], value)

    # -- prediction ----------------------------------------------------------

    def predict(self, landmarks: LandmarkSet, pose: PoseAngles) -> LandmarkSet:
        """Inference for a single sample, using running statistics."""
        x = self.encode_input(landmarks.points[None], pose.as_array()[None])
        out = self.forward(x, training=False)
        return LandmarkSet(self.decode_output(out)[0])


def intermediate_landmarks(model: LandmarkTransformer, p_s: LandmarkSet,
                           pose_s: PoseAngles, pose_t: PoseAngles, n: int,
                           p_t: LandmarkSet | None = None) -> list[LandmarkSet]:
    """Landmark path p_1..p_n from source toward target pose.

    Step i predicts from the blended pose (1 - i/n) pose_s + (i/n) pose_t;
    the final slot is the detected target landmarks when supplied.
    """
    if n < 1:
        raise ValueError("need at least one step")
    out: list[LandmarkSet] = []
    ts, tt = pose_s.as_array(), pose_t.as_array()
    for i in range(1, n + 1):
        if i == n and p_t is not None:
            out.append(p_t)
            continue
        frac = i / n
        blend = PoseAngles(*((1.0 - frac) * ts + frac * tt))
        out.append(model.predict(p_s, blend))
    return out


@dataclass
class TrainResult:
    losses: np.ndarray  # per-step training loss

    def save_curve(self, path: str | Path) -> None:
        with open(path, "w") as f:
            f.write("step,mse\n")
            for i, v in enumerate(self.losses):
                f.write(f"{i},{v:.10g}\n")


def train(model: LandmarkTransformer, corpus: PoseCorpus,
          config: TrainConfig | None = None) -> TrainResult:
    """Adam training on (source landmarks, target pose) -> target landmarks."""
    config = config or TrainConfig()
    if corpus.extent != model.extent:
        raise ValueError(f"corpus extent {corpus.extent} != model extent {model.extent}")
    x_all = model.encode_input(corpus.source_points, corpus.target_poses)
    t_all = model.encode_targets(corpus.target_points)
    rng = np.random.default_rng(config.seed)

    slots = model.param_items()
    m_state = [np.zeros_like(v) for _, _, v in slots]
    v_state = [np.zeros_like(v) for _, _, v in slots]
    losses = np.empty(config.steps)
    n = len(x_all)
    for step in range(config.steps):
        idx = rng.integers(0, n, size=min(config.batch_size, n)) if n > 1 else np.zeros(1, dtype=np.intp)
        loss, grads = model.loss_and_grads(x_all[idx], t_all[idx], training=True)
        losses[step] = loss
        t = step + 1
        bias1 = 1.0 - config.beta1 ** t
        bias2 = 1.0 - config.beta2 ** t
        for si, (li, name, value) in enumerate(slots):
            g = grads[li][name]
            m_state[si] = config.beta1 * m_state[si] + (1 - config.beta1) * g
            v_state[si] = config.beta2 * v_state[si] + (1 - config.beta2) * g * g
            step_v = config.lr * (m_state[si] / bias1) / (np.sqrt(v_state[si] / bias2) + config.adam_eps)
            new = value - step_v
            model.set_param(li, name, new)
            slots[si] = (li, name, new)
    return TrainResult(losses=losses)


def evaluate_mse(model: LandmarkTransformer, corpus: PoseCorpus) -> float:
    """Mean per-sample squared residual in normalized coordinates."""
    x = model.encode_input(corpus.source_points, corpus.target_poses)
    t = model.encode_targets(corpus.target_points)
    out = model.forward(x, training=False)
    return float(((out - t) ** 2).sum() / len(x))


def identity_baseline_mse(model: LandmarkTransformer, corpus: PoseCorpus) -> float:
    """MSE of predicting the source landmarks unchanged."""
    s = model.encode_targets(corpus.source_points)
    t = model.encode_targets(corpus.target_points)
    return float(((s - t) ** 2).sum() / len(s))


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(model: LandmarkTransformer, path: str | Path) -> None:
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", len(model.layers))
    for layer in model.layers:
        rows, cols = layer.w.shape
        buf += struct.pack("<II", rows, cols)
        buf += layer.w.astype("<f4").tobytes()
        buf += layer.b.astype("<f4").tobytes()
        if layer.has_bn:
            for arr in (layer.gamma, layer.beta, layer.run_mean, layer.run_var):
                buf += arr.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path: str | Path,
                    extent: tuple[int, int] = (256, 256)) -> LandmarkTransformer:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a transformer checkpoint")
    off = 4
    (n_layers,) = struct.unpack_from("<I", raw, off)
    off += 4
    layers = []
    for li in range(n_layers):
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8

        def take(count: int) -> np.ndarray:
            nonlocal off
            a = np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(np.float64)
            off += 4 * count
            return a

        w = take(rows * cols).reshape(rows, cols)
        b = take(cols)
        layer = _Layer(w=w, b=b)
        if li != n_layers - 1:
            layer.gamma = take(cols)
            layer.beta = take(cols)
            layer.run_mean = take(cols)
            layer.run_var = take(cols)
        layers.append(layer)
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return LandmarkTransformer(layers=layers, extent=extent)
