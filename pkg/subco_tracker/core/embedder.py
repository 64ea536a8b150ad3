"""ReID embedder: crops of detection boxes -> D-dimensional appearance vectors.

The model is a two-layer perceptron on flattened RGB patches,
``P -> tanh(H) -> D``, optionally L2-normalized, with a hand-written
reverse pass.

Weight matrices are stored at unit scale and multiplied by 1/sqrt(fan_in)
when applied. A crop of one flat color feeds the same value to all pixel
columns of ``w1``, and per-entry Adam steps on pre-scaled weights add up
across those columns until the hidden layer saturates.

Checkpoint layout (JSON, floats written at full precision)::

    {
      "format": "subco-embedder",
      "version": 2,
      "hyperparams": {"patch_size": [w, h], "hidden": H, "dim": D, "l2_normalize": true},
      "weights": {"w1": {"shape": [H, P], "values": [...]},
                  "b1": {"shape": [H], "values": [...]},
                  "w2": {"shape": [D, H], "values": [...]},
                  "b2": {"shape": [D], "values": [...]}}
    }

``values`` are row-major and hold the unscaled weights.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import map_coordinates

from subco_tracker.core.config import EmbedderConfig
from subco_tracker.core.exceptions import CropError, DimensionError
from subco_tracker.core.schemas import BBox, CropFeature, EmbeddingMatrix, FrameDetections

logger = logging.getLogger(__name__)

PARAM_NAMES = ("w1", "b1", "w2", "b2")
ParamGrads = Dict[str, np.ndarray]
CHECKPOINT_FORMAT = "subco-embedder"
CHECKPOINT_VERSION = 2
_NORM_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class EmbedderParams:
    w1: np.ndarray  # (H, P)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (D, H)
    b2: np.ndarray  # (D,)
    patch_size: Tuple[int, int] = (16, 16)
    l2_normalize: bool = True

    def __post_init__(self):
        hidden, input_dim = self.w1.shape
        dim = self.w2.shape[0]
        if input_dim != self.patch_size[0] * self.patch_size[1] * 3:
            raise DimensionError(f"w1 expects {input_dim} inputs but patch {self.patch_size} gives "
                                 f"{self.patch_size[0] * self.patch_size[1] * 3}")
        if self.b1.shape != (hidden,) or self.w2.shape != (dim, hidden) or self.b2.shape != (dim,):
            raise DimensionError("Inconsistent embedder parameter shapes: "
                                 + ", ".join(f"{n}={getattr(self, n).shape}" for n in PARAM_NAMES))
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"Embedder parameter {name} has non-finite entries")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def scale1(self) -> float:
        return 1.0 / math.sqrt(self.input_dim)

    @property
    def scale2(self) -> float:
        return 1.0 / math.sqrt(self.hidden)

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def dim(self) -> int:
        return self.w2.shape[0]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_arrays(self, arrays: Dict[str, np.ndarray]) -> "EmbedderParams":
        return EmbedderParams(**{name: np.asarray(arrays[name], dtype=np.float64) for name in PARAM_NAMES},
                              patch_size=self.patch_size, l2_normalize=self.l2_normalize)

    def config(self) -> EmbedderConfig:
        return EmbedderConfig(patch_size=self.patch_size, hidden=self.hidden, dim=self.dim,
                              l2_normalize=self.l2_normalize)


def init_params(cfg: EmbedderConfig, seed: int = 0) -> EmbedderParams:
    """Weights uniform in [-1, 1] (applied times 1/sqrt(fan_in)), biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    rng = np.random.default_rng(seed)
    p, h, d = cfg.input_dim, cfg.hidden, cfg.dim
    bound1, bound2 = 1.0 / math.sqrt(p), 1.0 / math.sqrt(h)
    return EmbedderParams(
        w1=rng.uniform(-1.0, 1.0, size=(h, p)),
        b1=rng.uniform(-bound1, bound1, size=h),
        w2=rng.uniform(-1.0, 1.0, size=(d, h)),
        b2=rng.uniform(-bound2, bound2, size=d),
        patch_size=cfg.patch_size,
        l2_normalize=cfg.l2_normalize,
    )


def zero_grads(params: EmbedderParams) -> ParamGrads:
    return {name: np.zeros_like(array) for name, array in params.arrays().items()}


def _sample_coords(n_src: int, n_dst: int) -> np.ndarray:
    """Half-pixel-center source coordinates for bilinear resizing, clamped to the source."""
    coords = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    return np.clip(coords, 0.0, n_src - 1)


def extract_crop(image: np.ndarray, box: BBox, patch_size: Tuple[int, int]) -> CropFeature:
    """Clips the box to the image, takes the covered pixels and bilinear-resizes them to the patch."""
    img_h, img_w = image.shape[:2]
    clipped = box.clip(img_w, img_h)
    if clipped is None:
        raise CropError(f"Box {box} lies outside the {img_w}x{img_h} image")
    x0, y0 = int(math.floor(clipped.x_left)), int(math.floor(clipped.y_top))
    x1, y1 = int(math.ceil(clipped.x_right)), int(math.ceil(clipped.y_bottom))
    region = image[y0:y1, x0:x1].astype(np.float64) / 255.0

    patch_w, patch_h = patch_size
    rows = _sample_coords(region.shape[0], patch_h)
    cols = _sample_coords(region.shape[1], patch_w)
    grid = np.meshgrid(rows, cols, indexing="ij")
    patch = np.stack([map_coordinates(region[..., c], grid, order=1, mode="nearest") for c in range(3)], axis=-1)
    return CropFeature(values=np.clip(patch.reshape(-1), 0.0, 1.0), patch_size=tuple(patch_size))


def crops_for_frame(image: np.ndarray, frame: FrameDetections, patch_size: Tuple[int, int]) -> np.ndarray:
    """(K, P) matrix of crop features, row k for detection k."""
    if not len(frame):
        return np.zeros((0, patch_size[0] * patch_size[1] * 3), dtype=np.float64)
    return np.stack([extract_crop(image, det.box, patch_size).values for det in frame])


def _as_matrix(params: EmbedderParams, crops: Union[Sequence[CropFeature], np.ndarray]) -> np.ndarray:
    if isinstance(crops, np.ndarray):
        x = crops.reshape(-1, params.input_dim) if crops.size == 0 else crops
    elif len(crops) == 0:
        x = np.zeros((0, params.input_dim))
    else:
        x = np.stack([c.values for c in crops])
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(f"Crops of shape {x.shape} do not match the embedder input size {params.input_dim}")
    return x.astype(np.float64, copy=False)


def _forward(params: EmbedderParams, x: np.ndarray):
    z1 = params.scale1 * (x @ params.w1.T) + params.b1
    a1 = np.tanh(z1)
    z2 = params.scale2 * (a1 @ params.w2.T) + params.b2
    if not params.l2_normalize:
        return z2, (x, a1, z2, None)
    norms = np.maximum(np.linalg.norm(z2, axis=1, keepdims=True), _NORM_FLOOR)
    y = z2 / norms
    return y, (x, a1, y, norms)


def embed(params: EmbedderParams, crops: Union[Sequence[CropFeature], np.ndarray], frame: int = 0) -> EmbeddingMatrix:
    """Row i is the embedding of crops[i]; no crops give a 0 x D matrix."""
    x = _as_matrix(params, crops)
    y, _ = _forward(params, x)
    return EmbeddingMatrix(rows=y, frame=frame)


def embed_backward(params: EmbedderParams, crops: Union[Sequence[CropFeature], np.ndarray],
                   upstream_grad: np.ndarray) -> ParamGrads:
    """Gradient of sum(upstream_grad * embed(params, crops)) with respect to the parameters."""
    x = _as_matrix(params, crops)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != (x.shape[0], params.dim):
        raise DimensionError(f"Upstream gradient of shape {upstream_grad.shape} does not match "
                             f"{x.shape[0]} x {params.dim} embeddings")
    _, (x, a1, y, norms) = _forward(params, x)

    if norms is None:
        dz2 = upstream_grad
    else:
        # Jacobian of z / |z|: (I - y y^T) / |z|
        dz2 = (upstream_grad - y * np.sum(upstream_grad * y, axis=1, keepdims=True)) / norms
    dw2 = params.scale2 * (dz2.T @ a1)
    db2 = dz2.sum(axis=0)
    dz1 = params.scale2 * (dz2 @ params.w2) * (1.0 - a1 ** 2)
    dw1 = params.scale1 * (dz1.T @ x)
    db1 = dz1.sum(axis=0)
    return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def embed_frame(params: EmbedderParams, image: np.ndarray, frame: FrameDetections) -> EmbeddingMatrix:
    return embed(params, crops_for_frame(image, frame, params.patch_size), frame=frame.frame)


def save_checkpoint(params: EmbedderParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "hyperparams": {
            "patch_size": list(params.patch_size),
            "hidden": params.hidden,
            "dim": params.dim,
            "l2_normalize": params.l2_normalize,
        },
        "weights": {name: {"shape": list(array.shape), "values": array.reshape(-1).tolist()}
                    for name, array in params.arrays().items()},
    }
    path.write_text(json.dumps(document), encoding="utf-8")
    logger.info(f"Saved embedder checkpoint to {path}")
    return path


def load_checkpoint(path, expected: Optional[EmbedderConfig] = None) -> EmbedderParams:
    """Loads a checkpoint; raises DimensionError if it disagrees with ``expected``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    document = json.loads(path.read_text(encoding="utf-8"))
    if document.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an embedder checkpoint")
    if document.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path} has checkpoint version {document.get('version')}, expected {CHECKPOINT_VERSION}")
    hyper = document["hyperparams"]
    arrays = {name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
              for name, entry in document["weights"].items()}
    params = EmbedderParams(**arrays, patch_size=tuple(hyper["patch_size"]),
                            l2_normalize=bool(hyper["l2_normalize"]))
    if expected is not None:
        found = params.config()
        if (found.patch_size, found.hidden, found.dim, found.l2_normalize) != \
                (expected.patch_size, expected.hidden, expected.dim, expected.l2_normalize):
            raise DimensionError(f"Checkpoint {path} has {found} but the config asks for {expected}")
    return params
