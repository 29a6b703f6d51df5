"""Day-night image classifier, implemented from scratch on numpy.

Two 3x3 stride-2 zero-padded convolutions with 32 filters each and
LeakyReLU activations, global average pooling, and a single logistic
output unit. Forward, exact backprop, and seeded mini-batch gradient
descent are all here; no autograd framework is involved, so training is
bit-reproducible from (seed, data order, config).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formats import ParseError, fmt_float_exact

__all__ = [
    "SeparatorParams",
    "TrainConfig",
    "LEAKY_SLOPE",
    "init_params",
    "separator_forward",
    "forward_batch",
    "separator_gradient",
    "loss_and_gradient",
    "separator_train",
    "route",
    "save_checkpoint",
    "load_checkpoint",
    "parse_checkpoint",
    "load_image_rgb",
]

LEAKY_SLOPE = 0.1
CHECKPOINT_HEADER = "#separator-checkpoint v1"

_SHAPES = (
    ("conv1_w", (3, 3, 3, 32)),
    ("conv1_b", (32,)),
    ("conv2_w", (3, 3, 32, 32)),
    ("conv2_b", (32,)),
    ("fc_w", (32,)),
    ("fc_b", (1,)),
)


@dataclass
class SeparatorParams:
    """All weights in fixed field order; 10,177 scalars total."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray

    def __post_init__(self):
        for name, shape in _SHAPES:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            setattr(self, name, arr)

    @property
    def count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in _SHAPES)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel() for name, _ in _SHAPES])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "SeparatorParams":
        vec = np.asarray(vec, dtype=float)
        fields = {}
        offset = 0
        for name, shape in _SHAPES:
            size = int(np.prod(shape))
            fields[name] = vec[offset : offset + size].reshape(shape)
            offset += size
        if offset != vec.size:
            raise ValueError(f"expected {offset} parameters, got {vec.size}")
        return cls(**fields)


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.05
    seed: int = 0
    batch_size: int = 16
    input_side: int = 64

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.input_side) < 1:
            raise ValueError("epochs, batch_size and input_side must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


def _init_from_rng(rng: np.random.Generator, scale: float) -> SeparatorParams:
    return SeparatorParams(
        conv1_w=rng.uniform(-scale, scale, (3, 3, 3, 32)),
        conv1_b=np.zeros(32),
        conv2_w=rng.uniform(-scale, scale, (3, 3, 32, 32)),
        conv2_b=np.zeros(32),
        fc_w=rng.uniform(-scale, scale, 32),
        fc_b=np.zeros(1),
    )


def init_params(seed: int, scale: float = 0.1) -> SeparatorParams:
    """Small-uniform weights, zero biases, from a seeded generator."""
    return _init_from_rng(np.random.default_rng(seed), scale)


def _im2col(x: np.ndarray) -> tuple[np.ndarray, int, int]:
    """3x3 stride-2 pad-1 patches: (B,H,W,C) -> (B,Ho,Wo,3,3,C)."""
    b, h, w, c = x.shape
    ho = (h - 1) // 2 + 1
    wo = (w - 1) // 2 + 1
    padded = np.zeros((b, h + 2, w + 2, c), dtype=x.dtype)
    padded[:, 1 : h + 1, 1 : w + 1, :] = x
    cols = np.empty((b, ho, wo, 3, 3, c), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, :, i, j, :] = padded[
                :, i : i + 2 * ho - 1 : 2, j : j + 2 * wo - 1 : 2, :
            ]
    return cols, ho, wo


def _col2im(dcols: np.ndarray, h: int, w: int) -> np.ndarray:
    """Scatter-add the inverse of :func:`_im2col`; returns (B,H,W,C)."""
    b, ho, wo, _, _, c = dcols.shape
    dpadded = np.zeros((b, h + 2, w + 2, c), dtype=dcols.dtype)
    for i in range(3):
        for j in range(3):
            dpadded[:, i : i + 2 * ho - 1 : 2, j : j + 2 * wo - 1 : 2, :] += dcols[
                :, :, :, i, j, :
            ]
    return dpadded[:, 1 : h + 1, 1 : w + 1, :]


def _conv(x, kernel, bias):
    cols, ho, wo = _im2col(x)
    b = x.shape[0]
    cin, cout = kernel.shape[2], kernel.shape[3]
    z = cols.reshape(b * ho * wo, 9 * cin) @ kernel.reshape(9 * cin, cout)
    z += bias
    return z.reshape(b, ho, wo, cout), cols


def _leaky(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _check_input(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != x.shape[2] or x.shape[3] != 3:
        raise ValueError(
            f"expected a square (side, side, 3) image or batch, got shape {x.shape}"
        )
    return x


def _scores(params: SeparatorParams, x: np.ndarray) -> np.ndarray:
    """Raw pre-sigmoid scores for a validated batch."""
    z1, _ = _conv(x, params.conv1_w, params.conv1_b)
    a1 = _leaky(z1)
    z2, _ = _conv(a1, params.conv2_w, params.conv2_b)
    a2 = _leaky(z2)
    g = a2.mean(axis=(1, 2))
    return g @ params.fc_w + params.fc_b[0]


def forward_batch(params: SeparatorParams, x: np.ndarray) -> np.ndarray:
    """Day probabilities for a batch (B, S, S, 3) -> (B,)."""
    s = _scores(params, _check_input(x))
    return 0.5 * (1.0 + np.tanh(s / 2.0))


def separator_forward(params: SeparatorParams, img: np.ndarray) -> float:
    """Day probability in (0, 1) for one image."""
    return float(forward_batch(params, img)[0])


def loss_and_gradient(
    params: SeparatorParams, x: np.ndarray, labels: np.ndarray
) -> tuple[float, SeparatorParams]:
    """Mean binary cross-entropy over the batch and its exact gradient.

    Returns the gradient in a same-shaped parameter container.
    """
    x = _check_input(x)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise ValueError(f"{x.shape[0]} images but {y.shape[0]} labels")
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValueError("labels must be 0 (night) or 1 (day)")
    b = x.shape[0]

    z1, cols1 = _conv(x, params.conv1_w, params.conv1_b)
    a1 = _leaky(z1)
    z2, cols2 = _conv(a1, params.conv2_w, params.conv2_b)
    a2 = _leaky(z2)
    h2, w2 = a2.shape[1], a2.shape[2]
    g = a2.mean(axis=(1, 2))
    s = g @ params.fc_w + params.fc_b[0]

    # stable sigmoid-BCE: loss = softplus(s) - s*y, dloss/ds = sigmoid(s) - y
    loss = float(np.mean(np.logaddexp(0.0, s) - s * y))
    p = 0.5 * (1.0 + np.tanh(s / 2.0))
    ds = (p - y) / b

    d_fc_w = g.T @ ds
    d_fc_b = np.array([ds.sum()])
    dg = ds[:, None] * params.fc_w[None, :]
    da2 = np.broadcast_to(dg[:, None, None, :] / (h2 * w2), a2.shape)
    dz2 = da2 * np.where(z2 > 0, 1.0, LEAKY_SLOPE)

    dz2_mat = dz2.reshape(-1, 32)
    cols2_mat = cols2.reshape(-1, 9 * 32)
    d_conv2_w = (cols2_mat.T @ dz2_mat).reshape(3, 3, 32, 32)
    d_conv2_b = dz2_mat.sum(axis=0)
    dcols2 = (dz2_mat @ params.conv2_w.reshape(9 * 32, 32).T).reshape(cols2.shape)
    da1 = _col2im(dcols2, a1.shape[1], a1.shape[2])
    dz1 = da1 * np.where(z1 > 0, 1.0, LEAKY_SLOPE)

    dz1_mat = dz1.reshape(-1, 32)
    cols1_mat = cols1.reshape(-1, 9 * 3)
    d_conv1_w = (cols1_mat.T @ dz1_mat).reshape(3, 3, 3, 32)
    d_conv1_b = dz1_mat.sum(axis=0)

    grads = SeparatorParams(
        conv1_w=d_conv1_w,
        conv1_b=d_conv1_b,
        conv2_w=d_conv2_w,
        conv2_b=d_conv2_b,
        fc_w=d_fc_w,
        fc_b=d_fc_b,
    )
    return loss, grads


def separator_gradient(
    params: SeparatorParams, img: np.ndarray, label: int
) -> SeparatorParams:
    """Gradient of one example's BCE loss w.r.t. every parameter."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 (night) or 1 (day): {label}")
    _, grads = loss_and_gradient(params, img, np.array([label]))
    return grads


def separator_train(
    examples: list[tuple[np.ndarray, int]], cfg: TrainConfig
) -> tuple[SeparatorParams, list[tuple[float, float]]]:
    """Seeded mini-batch gradient descent.

    `examples` are (image, label) pairs with label 1 = day, 0 = night; both
    classes must be present. Returns the trained parameters and the
    per-epoch (accuracy, loss) history measured on the full training set.
    """
    labels = np.array([label for _, label in examples], dtype=float)
    if len(examples) == 0 or not (np.any(labels == 0.0) and np.any(labels == 1.0)):
        raise ValueError("training data must contain both day and night examples")
    x = np.stack([np.asarray(img, dtype=float) for img, _ in examples])
    _check_input(x)
    if x.shape[1] != cfg.input_side:
        raise ValueError(
            f"examples are {x.shape[1]}x{x.shape[2]} but config expects "
            f"{cfg.input_side}x{cfg.input_side}"
        )

    rng = np.random.default_rng(cfg.seed)
    params = _init_from_rng(rng, scale=0.1)

    n = len(examples)
    history: list[tuple[float, float]] = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            _, grads = loss_and_gradient(params, x[batch], labels[batch])
            vec = params.to_vector() - cfg.learning_rate * grads.to_vector()
            params = SeparatorParams.from_vector(vec)
        s = _scores(params, x)
        probs = 0.5 * (1.0 + np.tanh(s / 2.0))
        accuracy = float(np.mean((probs >= 0.5) == (labels == 1.0)))
        loss = float(np.mean(np.logaddexp(0.0, s) - s * labels))
        history.append((accuracy, loss))
    return params, history


def route(params: SeparatorParams, img: np.ndarray, day_threshold: float = 0.5) -> str:
    """Return "Day" when the day probability is at or above the threshold."""
    return "Day" if separator_forward(params, img) >= day_threshold else "Night"


def save_checkpoint(params: SeparatorParams, path) -> None:
    """Versioned header, then one parameter per line in fixed field order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CHECKPOINT_HEADER + "\n")
        for value in params.to_vector():
            fh.write(fmt_float_exact(value) + "\n")


def parse_checkpoint(text: str, source: str = "<checkpoint>") -> SeparatorParams:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        raise ParseError(source, 1, f"expected header {CHECKPOINT_HEADER!r}")
    values = []
    for line_no, line in enumerate(lines[1:], start=2):
        token = line.strip()
        if not token:
            continue
        try:
            values.append(float(token))
        except ValueError:
            raise ParseError(source, line_no, f"not a number: {token!r}") from None
    vec = np.array(values)
    expected = sum(int(np.prod(shape)) for _, shape in _SHAPES)
    if vec.size != expected:
        raise ParseError(
            source, len(lines), f"expected {expected} parameters, got {vec.size}"
        )
    try:
        return SeparatorParams.from_vector(vec)
    except ValueError as exc:
        raise ParseError(source, 1, str(exc)) from None


def load_checkpoint(path) -> SeparatorParams:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_checkpoint(fh.read(), str(path))


def load_image_rgb(path, side: int) -> np.ndarray:
    """Load an image file as a (side, side, 3) float array in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        rgb = im.convert("RGB").resize((side, side), Image.BILINEAR)
    return np.asarray(rgb, dtype=float) / 255.0
