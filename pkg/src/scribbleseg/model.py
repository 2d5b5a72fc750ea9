"""Linear-softmax pixel classifier over handcrafted local features.

Feature layout per pixel, for an image with ``C`` channels (``F = 3C + 3``)::

    [intensity_0..C-1, mean3x3_0..C-1, std3x3_0..C-1, x_norm, y_norm, 1]

Windows use reflection padding (``a b c -> b a b c b``); ``x_norm`` and
``y_norm`` run from 0 at the first column/row to 1 at the last.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ProbMap, ScribbleSegError, as_image, softmax

_SHIFTS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)]


class FeatureDimMismatch(ScribbleSegError):
    pass


def feature_dim(channels: int) -> int:
    return 3 * channels + 3


def _windows(x: np.ndarray):
    h, w = x.shape[:2]
    p = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="reflect")
    return [p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] for dr, dc in _SHIFTS]


def _unpad_reflect(q: np.ndarray) -> np.ndarray:
    """Adjoint of one-pixel reflection padding (folds the border back in)."""
    q = q.copy()
    q[2] += q[0]
    q[-3] += q[-1]
    q = q[1:-1]
    q[:, 2] += q[:, 0]
    q[:, -3] += q[:, -1]
    return q[:, 1:-1]


def local_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    win = _windows(x)
    mean = sum(win) / 9.0
    var = sum((v - mean) ** 2 for v in win) / 9.0
    return mean, np.sqrt(var)


def featurize(image) -> np.ndarray:
    x = as_image(image)
    h, w, _ = x.shape
    if h < 2 or w < 2:
        raise ScribbleSegError("featurize needs an image of at least 2x2 pixels")
    mean, std = local_stats(x)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xn = xx / (w - 1)
    yn = yy / (h - 1)
    return np.concatenate([x, mean, std, xn[..., None], yn[..., None], np.ones((h, w, 1))], axis=-1)


@dataclass
class PixelModel:
    weights: np.ndarray  # (F, m)
    bias: np.ndarray  # (m,)

    @classmethod
    def zeros(cls, channels: int, m: int) -> "PixelModel":
        return cls(np.zeros((feature_dim(channels), m)), np.zeros(m))

    @property
    def m(self) -> int:
        return self.bias.shape[0]

    def params(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def with_params(self, theta: np.ndarray) -> "PixelModel":
        f, m = self.weights.shape
        return PixelModel(theta[: f * m].reshape(f, m).copy(), theta[f * m:].copy())

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PixelModel":
        return cls(np.asarray(d["weights"], dtype=np.float64), np.asarray(d["bias"], dtype=np.float64))


def logits_from_features(model: PixelModel, feats: np.ndarray) -> np.ndarray:
    if feats.shape[-1] != model.weights.shape[0]:
        raise FeatureDimMismatch(
            f"features have dim {feats.shape[-1]}, model expects {model.weights.shape[0]}")
    return feats @ model.weights + model.bias


def predict(model: PixelModel, image) -> ProbMap:
    return ProbMap(softmax(logits_from_features(model, featurize(image))))


def param_gradient(feats: np.ndarray, grad_logits: np.ndarray) -> np.ndarray:
    """Flattened ``[dW, db]`` for one image given ``dL/dlogits``."""
    f = feats.shape[-1]
    m = grad_logits.shape[-1]
    dw = feats.reshape(-1, f).T @ grad_logits.reshape(-1, m)
    db = grad_logits.reshape(-1, m).sum(axis=0)
    return np.concatenate([dw.ravel(), db])


def input_gradient(model: PixelModel, image, grad_logits: np.ndarray) -> np.ndarray:
    """Back-propagate ``dL/dlogits`` to the input intensities, shape ``(H, W, C)``."""
    x = as_image(image)
    c = x.shape[2]
    g = grad_logits @ model.weights.T
    g_int, g_mean, g_std = g[..., :c], g[..., c:2 * c], g[..., 2 * c:3 * c]

    mean, std = local_stats(x)
    win = _windows(x)
    h, w = x.shape[:2]
    q = np.zeros((h + 2, w + 2, c))
    safe = np.where(std > 0, std, 1.0)
    coef = np.where(std > 0, g_std / (9.0 * safe), 0.0)
    for (dr, dc), v in zip(_SHIFTS, win):
        q[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] += g_mean / 9.0 + coef * (v - mean)
    return g_int + _unpad_reflect(q)
