"""Encoder/decoder model bundles and their inference contracts.

A bundle is a JSON manifest plus serialized network graphs with fixed
patch/input/grid geometry. Two kinds exist: ``prompt-segmenter`` bundles
(encoder + lightweight prompt decoder, 16-px patches) and ``feature-encoder``
bundles (encoder only, 14-px patches). Graph paths may name ONNX files on
disk, or use the ``synthetic:<seed>`` scheme for the built-in deterministic
encoder/decoder pair that needs no weights.

The synthetic encoder is strictly patch-local: each grid cell's feature
vector is a fixed seeded linear projection of that cell's intensity
statistics (mean, std, mean |dx|, mean |dy|), so mutating pixels outside a
cell cannot change the cell's vector. The synthetic prompt decoder grows a
region from each positive click over pixels within 10% of the image's
dynamic range of the clicked intensity, then subtracts regions grown the
same way from negative clicks.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage.segmentation import flood

from .imaging import resize_bilinear

KIND_SEGMENTER = "prompt-segmenter"
KIND_FEATURES = "feature-encoder"

POSITIVE = "positive"
NEGATIVE = "negative"

SYNTHETIC_SCHEME = "synthetic"

ENV_BUNDLE_DIR = "NANOMORPH_BUNDLE_DIR"

MANIFEST_FIELDS = {
    "name", "kind", "patch_size", "input_size", "grid_size", "embed_dim",
    "layer_count", "hypercolumn_layers", "normalization",
    "encoder_graph", "decoder_graph",
}

# Fraction of the image dynamic range tolerated by the synthetic decoder's
# region growing.
FLOOD_TOLERANCE = 0.10


class BundleError(ValueError):
    """Manifest schema violation or invalid bundle geometry."""


class InferenceError(RuntimeError):
    """Encoder or decoder graph execution failed."""


@dataclass(frozen=True)
class Click:
    """One point prompt in original-image pixel coordinates (x=col, y=row)."""

    x: int
    y: int
    polarity: str = POSITIVE

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"polarity must be positive|negative, got {self.polarity!r}")

    @property
    def is_positive(self) -> bool:
        return self.polarity == POSITIVE


@dataclass(frozen=True)
class PreprocessGeometry:
    """Mapping between original-image and model-input pixel grids."""

    orig_shape: tuple[int, int]       # (h, w)
    input_size: int
    scale_y: float
    scale_x: float
    active: tuple[int, int]           # unpadded (rows, cols) of the input raster

    def to_input(self, x: float, y: float) -> tuple[float, float]:
        return x * self.scale_x, y * self.scale_y


@dataclass
class ModelBundle:
    """Validated manifest plus lazily constructed inference backends."""

    name: str
    kind: str
    patch_size: int
    input_size: int
    grid_size: int
    embed_dim: int
    layer_count: int
    hypercolumn_layers: tuple[int, ...]
    norm_mean: tuple[float, float, float]
    norm_std: tuple[float, float, float]
    encoder_graph: str
    decoder_graph: str | None = None
    base_dir: Path | None = None

    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _encoder_invocations: int = field(default=0, repr=False)
    _onnx_encoder: object = field(default=None, repr=False)
    _onnx_decoder: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in (KIND_SEGMENTER, KIND_FEATURES):
            raise BundleError(f"unknown bundle kind {self.kind!r}")
        for fname in ("patch_size", "input_size", "grid_size", "embed_dim", "layer_count"):
            v = getattr(self, fname)
            if not isinstance(v, int) or v <= 0:
                raise BundleError(f"{fname} must be a positive integer, got {v!r}")
        if self.grid_size * self.patch_size != self.input_size:
            raise BundleError(
                f"geometry mismatch: grid_size*patch_size = "
                f"{self.grid_size}*{self.patch_size} != input_size {self.input_size}"
            )
        layers = tuple(int(x) for x in self.hypercolumn_layers)
        if not layers:
            raise BundleError("hypercolumn_layers must be non-empty")
        if any(b <= a for a, b in zip(layers, layers[1:])):
            raise BundleError(f"hypercolumn_layers must be strictly increasing, got {layers}")
        if layers[0] < 0 or layers[-1] >= self.layer_count:
            raise BundleError(
                f"hypercolumn_layers {layers} outside [0, {self.layer_count - 1}]"
            )
        object.__setattr__(self, "hypercolumn_layers", layers)
        if self.kind == KIND_SEGMENTER and not self.decoder_graph:
            raise BundleError("prompt-segmenter bundle must reference a decoder graph")
        if self.kind == KIND_FEATURES and self.decoder_graph:
            raise BundleError("feature-encoder bundle must not reference a decoder graph")

    # -- identity / bookkeeping ------------------------------------------------

    @property
    def is_synthetic(self) -> bool:
        return self.encoder_graph.startswith(SYNTHETIC_SCHEME)

    @property
    def synthetic_seed(self) -> int:
        _, _, tail = self.encoder_graph.partition(":")
        return int(tail) if tail else 0

    @property
    def hypercolumn_dim(self) -> int:
        return self.embed_dim * len(self.hypercolumn_layers)

    @property
    def encoder_invocations(self) -> int:
        with self._lock:
            return self._encoder_invocations

    def _count_invocation(self):
        with self._lock:
            self._encoder_invocations += 1

    # -- preprocessing ---------------------------------------------------------

    def preprocess(self, image: np.ndarray) -> tuple[np.ndarray, PreprocessGeometry]:
        """Resize an original-resolution raster to the model input raster.

        Segmenter bundles resize the longest side to ``input_size`` preserving
        aspect ratio and zero-pad bottom/right to square; feature-encoder
        bundles resize directly to ``input_size`` x ``input_size``.
        """
        img = np.asarray(image, dtype=np.float32)
        if img.ndim != 2 or img.size == 0:
            raise ValueError(f"expected non-empty 2-D image, got shape {img.shape}")
        h, w = img.shape
        n = self.input_size
        if self.kind == KIND_SEGMENTER:
            s = n / max(h, w)
            rh, rw = max(1, round(h * s)), max(1, round(w * s))
            resized = resize_bilinear(img, (rh, rw))
            out = np.zeros((n, n), dtype=np.float32)
            out[:rh, :rw] = resized
            geom = PreprocessGeometry((h, w), n, rh / h, rw / w, (rh, rw))
            return out, geom
        resized = resize_bilinear(img, (n, n))
        geom = PreprocessGeometry((h, w), n, n / h, n / w, (n, n))
        return resized, geom


@dataclass(frozen=True)
class FeatureStack:
    """Per-layer patch-token grids plus per-layer CLS vectors for one image.

    ``layers`` maps each recorded layer index to a (grid, grid, embed_dim)
    array; ``cls_tokens`` maps the same indices to (embed_dim,) vectors.
    """

    layers: dict[int, np.ndarray]
    cls_tokens: dict[int, np.ndarray]
    source_bundle: str
    source_image: str

    def __post_init__(self):
        shapes = {a.shape for a in self.layers.values()}
        if len(shapes) > 1:
            raise ValueError(f"layer grids disagree on shape: {shapes}")

    @property
    def layer_indices(self) -> tuple[int, ...]:
        return tuple(sorted(self.layers))

    @property
    def grid_size(self) -> int:
        return next(iter(self.layers.values())).shape[0]


@dataclass(frozen=True)
class PromptEmbedding:
    """Cached session-time encoder output consumed by the prompt decoder.

    For synthetic bundles this carries the original raster (the decoder's
    region growing runs in original coordinates); for ONNX bundles it carries
    the encoder's embedding tensor. Either way, decoding never re-runs the
    encoder.
    """

    bundle_name: str
    image_id: str
    geometry: PreprocessGeometry
    image: np.ndarray | None = None
    tensor: np.ndarray | None = None


def image_content_id(image: np.ndarray) -> str:
    arr = np.ascontiguousarray(np.asarray(image, dtype=np.float32))
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()[:16]


# -- manifest loading ---------------------------------------------------------


def load_model_bundle(manifest_path) -> ModelBundle:
    """Load and validate a bundle manifest; referenced graph files must exist."""
    path = Path(manifest_path)
    if not path.is_file():
        raise FileNotFoundError(f"bundle manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise BundleError(f"manifest is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise BundleError("manifest must be a JSON object")
    unknown = set(raw) - MANIFEST_FIELDS
    if unknown:
        raise BundleError(f"unknown manifest fields: {sorted(unknown)}")
    missing = MANIFEST_FIELDS - {"decoder_graph"} - set(raw)
    if missing:
        raise BundleError(f"missing manifest fields: {sorted(missing)}")
    norm = raw["normalization"]
    if (not isinstance(norm, dict) or sorted(norm) != ["mean", "std"]
            or len(norm["mean"]) != 3 or len(norm["std"]) != 3):
        raise BundleError("normalization must be {mean:[3], std:[3]}")

    bundle = ModelBundle(
        name=str(raw["name"]),
        kind=str(raw["kind"]),
        patch_size=raw["patch_size"],
        input_size=raw["input_size"],
        grid_size=raw["grid_size"],
        embed_dim=raw["embed_dim"],
        layer_count=raw["layer_count"],
        hypercolumn_layers=tuple(raw["hypercolumn_layers"]),
        norm_mean=tuple(float(x) for x in norm["mean"]),
        norm_std=tuple(float(x) for x in norm["std"]),
        encoder_graph=str(raw["encoder_graph"]),
        decoder_graph=str(raw["decoder_graph"]) if raw.get("decoder_graph") else None,
        base_dir=path.parent,
    )
    for graph in (bundle.encoder_graph, bundle.decoder_graph):
        if graph and not graph.startswith(SYNTHETIC_SCHEME):
            gpath = path.parent / graph
            if not gpath.is_file():
                raise FileNotFoundError(f"bundle graph not found: {gpath}")
    return bundle


def find_bundles(bundle_dir=None) -> list[ModelBundle]:
    """Scan a directory (default $NANOMORPH_BUNDLE_DIR) for *.json manifests."""
    root = Path(bundle_dir or os.environ.get(ENV_BUNDLE_DIR, "."))
    found = []
    if root.is_dir():
        for p in sorted(root.glob("*.json")):
            try:
                found.append(load_model_bundle(p))
            except (BundleError, FileNotFoundError):
                continue
    return found


def resolve_bundle(ref: str, bundle_dir=None) -> ModelBundle:
    """Resolve a bundle by manifest path or by name under the bundle dir."""
    p = Path(ref)
    if p.is_file():
        return load_model_bundle(p)
    root = Path(bundle_dir or os.environ.get(ENV_BUNDLE_DIR, "."))
    cand = root / f"{ref}.json"
    if cand.is_file():
        return load_model_bundle(cand)
    for b in find_bundles(root):
        if b.name == ref:
            return b
    raise FileNotFoundError(f"no bundle named {ref!r} (searched {root})")


def synthetic_bundle(
    name: str = "synthetic-features",
    kind: str = KIND_FEATURES,
    patch_size: int = 8,
    grid_size: int = 16,
    embed_dim: int = 768,
    layer_count: int = 12,
    hypercolumn_layers: tuple[int, ...] = (1, 3, 6, 9, 11),
    seed: int = 0,
) -> ModelBundle:
    """Construct an in-memory synthetic bundle (no manifest file needed)."""
    return ModelBundle(
        name=name,
        kind=kind,
        patch_size=patch_size,
        input_size=patch_size * grid_size,
        grid_size=grid_size,
        embed_dim=embed_dim,
        layer_count=layer_count,
        hypercolumn_layers=hypercolumn_layers,
        norm_mean=(0.5, 0.5, 0.5),
        norm_std=(0.5, 0.5, 0.5),
        encoder_graph=f"{SYNTHETIC_SCHEME}:{seed}",
        decoder_graph=SYNTHETIC_SCHEME if kind == KIND_SEGMENTER else None,
    )


# -- synthetic encoder ---------------------------------------------------------


def _patch_statistics(raster: np.ndarray, grid: int, patch: int) -> np.ndarray:
    """Per-cell (mean, std, mean|dx|, mean|dy|), computed strictly inside cells."""
    blocks = raster[: grid * patch, : grid * patch].reshape(grid, patch, grid, patch)
    blocks = blocks.transpose(0, 2, 1, 3).astype(np.float64)  # (gy, gx, p, p)
    mean = blocks.mean(axis=(2, 3))
    std = blocks.std(axis=(2, 3))
    if patch > 1:
        gx = np.abs(np.diff(blocks, axis=3)).mean(axis=(2, 3))
        gy = np.abs(np.diff(blocks, axis=2)).mean(axis=(2, 3))
    else:
        gx = np.zeros_like(mean)
        gy = np.zeros_like(mean)
    return np.stack([mean, std, gx, gy], axis=-1)  # (grid, grid, 4)


def _projection(seed: int, layer: int, embed_dim: int) -> np.ndarray:
    rng = np.random.default_rng([seed, layer])
    return rng.standard_normal((4, embed_dim))


def synthetic_encode(image: np.ndarray, bundle: ModelBundle) -> FeatureStack:
    """Deterministic patch-local feature stack from intensity statistics."""
    raster, _ = bundle.preprocess(image)
    stats = _patch_statistics(raster, bundle.grid_size, bundle.patch_size)
    global_stats = np.array([
        raster.mean(),
        raster.std(),
        np.abs(np.diff(raster, axis=1)).mean() if raster.shape[1] > 1 else 0.0,
        np.abs(np.diff(raster, axis=0)).mean() if raster.shape[0] > 1 else 0.0,
    ])
    layers, cls_tokens = {}, {}
    for li in bundle.hypercolumn_layers:
        proj = _projection(bundle.synthetic_seed, li, bundle.embed_dim)
        layers[li] = (stats @ proj).astype(np.float32)
        cls_tokens[li] = (global_stats @ proj).astype(np.float32)
    return FeatureStack(
        layers=layers,
        cls_tokens=cls_tokens,
        source_bundle=bundle.name,
        source_image=image_content_id(image),
    )


# -- ONNX backend --------------------------------------------------------------


def _onnx_session(bundle: ModelBundle, graph: str):
    try:
        import onnxruntime  # noqa: PLC0415
    except ImportError as e:
        raise InferenceError(
            f"bundle {bundle.name!r} references ONNX graph {graph!r} but "
            "onnxruntime is not installed; install nanomorph[onnx] or use a "
            "synthetic bundle"
        ) from e
    path = (bundle.base_dir or Path(".")) / graph
    return onnxruntime.InferenceSession(str(path), providers=["CPUExecutionProvider"])


def _normalize_3ch(raster: np.ndarray, bundle: ModelBundle) -> np.ndarray:
    """Replicate grayscale to 3 channels and apply per-channel mean/std."""
    mean = np.asarray(bundle.norm_mean, dtype=np.float32)[:, None, None]
    std = np.asarray(bundle.norm_std, dtype=np.float32)[:, None, None]
    chw = np.repeat(raster[None, :, :], 3, axis=0)
    return (chw - mean) / std


def _onnx_encode(bundle: ModelBundle, image: np.ndarray) -> FeatureStack:
    if bundle._onnx_encoder is None:
        bundle._onnx_encoder = _onnx_session(bundle, bundle.encoder_graph)
    sess = bundle._onnx_encoder
    raster, _ = bundle.preprocess(image)
    x = _normalize_3ch(raster, bundle)[None, ...]
    input_name = sess.get_inputs()[0].name
    out_names = [o.name for o in sess.get_outputs()]
    try:
        outputs = dict(zip(out_names, sess.run(None, {input_name: x})))
    except Exception as e:
        raise InferenceError(f"encoder graph failed for bundle {bundle.name!r}: {e}") from e

    # Expected output naming: layer_<i> with shape (1, grid, grid, D) or
    # (1, D, grid, grid); optional cls_<i> with shape (1, D).
    layers, cls_tokens = {}, {}
    g, d = bundle.grid_size, bundle.embed_dim
    for li in bundle.hypercolumn_layers:
        key = f"layer_{li}"
        if key not in outputs:
            raise InferenceError(
                f"encoder graph of {bundle.name!r} lacks output {key!r}; "
                f"available: {out_names}"
            )
        arr = np.asarray(outputs[key])[0]
        if arr.shape == (d, g, g):
            arr = arr.transpose(1, 2, 0)
        if arr.shape != (g, g, d):
            raise InferenceError(f"{key} has shape {arr.shape}, expected {(g, g, d)}")
        layers[li] = arr.astype(np.float32)
        if f"cls_{li}" in outputs:
            cls_tokens[li] = np.asarray(outputs[f"cls_{li}"]).reshape(-1).astype(np.float32)
    return FeatureStack(
        layers=layers,
        cls_tokens=cls_tokens,
        source_bundle=bundle.name,
        source_image=image_content_id(image),
    )


# -- public inference API ------------------------------------------------------


def encode_image(bundle: ModelBundle, image: np.ndarray) -> FeatureStack:
    """Run the encoder once, recording one grid per hypercolumn layer."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected non-empty 2-D image, got shape {img.shape}")
    bundle._count_invocation()
    if bundle.is_synthetic:
        return synthetic_encode(img, bundle)
    return _onnx_encode(bundle, img)


def embed_for_prompts(bundle: ModelBundle, image: np.ndarray) -> PromptEmbedding:
    """Session-time encoding: expensive, done once, reused for every click."""
    if bundle.kind != KIND_SEGMENTER:
        raise BundleError(f"bundle {bundle.name!r} is not a prompt-segmenter")
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected non-empty 2-D image, got shape {img.shape}")
    bundle._count_invocation()
    _, geom = bundle.preprocess(img)
    iid = image_content_id(img)
    if bundle.is_synthetic:
        return PromptEmbedding(bundle.name, iid, geom, image=img)

    if bundle._onnx_encoder is None:
        bundle._onnx_encoder = _onnx_session(bundle, bundle.encoder_graph)
    sess = bundle._onnx_encoder
    raster, _ = bundle.preprocess(img)
    x = _normalize_3ch(raster, bundle)[None, ...]
    input_name = sess.get_inputs()[0].name
    names = [o.name for o in sess.get_outputs()]
    target = "image_embeddings" if "image_embeddings" in names else names[0]
    try:
        (tensor,) = sess.run([target], {input_name: x})
    except Exception as e:
        raise InferenceError(f"encoder graph failed for bundle {bundle.name!r}: {e}") from e
    return PromptEmbedding(bundle.name, iid, geom, tensor=np.asarray(tensor))


def _synthetic_decode(embedding: PromptEmbedding, clicks: list[Click]) -> np.ndarray:
    img = embedding.image.astype(np.float64)
    lo, hi = float(img.min()), float(img.max())
    tol = FLOOD_TOLERANCE * (hi - lo)
    region = np.zeros(img.shape, dtype=bool)
    for c in clicks:
        if c.is_positive:
            region |= flood(img, (c.y, c.x), tolerance=tol)
    for c in clicks:
        if not c.is_positive:
            region &= ~flood(img, (c.y, c.x), tolerance=tol)
    return region.astype(np.float32)


def decode_prompt_mask(
    bundle: ModelBundle,
    embedding: PromptEmbedding,
    clicks: list[Click],
) -> tuple[np.ndarray, float]:
    """Per-pixel soft mask in [0,1] at original resolution, plus a quality score.

    Requires at least one positive click. Operates purely on the cached
    embedding; the encoder is never re-run here.
    """
    if bundle.kind != KIND_SEGMENTER:
        raise BundleError(f"bundle {bundle.name!r} has no prompt decoder")
    if not any(c.is_positive for c in clicks):
        raise ValueError("at least one positive click is required")
    h, w = embedding.geometry.orig_shape
    for c in clicks:
        if not (0 <= c.x < w and 0 <= c.y < h):
            raise ValueError(f"click ({c.x}, {c.y}) outside image bounds {w}x{h}")

    if bundle.is_synthetic or bundle.decoder_graph == SYNTHETIC_SCHEME:
        soft = _synthetic_decode(embedding, clicks)
        quality = 1.0 if soft.any() else 0.0
        return soft, quality
    return _onnx_decode(bundle, embedding, clicks)


def _onnx_decode(
    bundle: ModelBundle,
    embedding: PromptEmbedding,
    clicks: list[Click],
) -> tuple[np.ndarray, float]:
    if bundle._onnx_decoder is None:
        bundle._onnx_decoder = _onnx_session(bundle, bundle.decoder_graph)
    sess = bundle._onnx_decoder
    geom = embedding.geometry
    coords = np.array(
        [geom.to_input(c.x, c.y) for c in clicks] + [(0.0, 0.0)], dtype=np.float32
    )[None, ...]
    labels = np.array(
        [1.0 if c.is_positive else 0.0 for c in clicks] + [-1.0], dtype=np.float32
    )[None, ...]
    feed = {
        "image_embeddings": embedding.tensor.astype(np.float32),
        "point_coords": coords,
        "point_labels": labels,
        "mask_input": np.zeros((1, 1, 256, 256), dtype=np.float32),
        "has_mask_input": np.zeros(1, dtype=np.float32),
        "orig_im_size": np.array(geom.orig_shape, dtype=np.float32),
    }
    feed = {k: v for k, v in feed.items() if k in {i.name for i in sess.get_inputs()}}
    try:
        masks, scores, *_ = sess.run(None, feed)
    except Exception as e:
        raise InferenceError(f"decoder graph failed for bundle {bundle.name!r}: {e}") from e
    logits = np.asarray(masks)[0, 0]
    if logits.shape != geom.orig_shape:
        logits = resize_bilinear(logits, geom.orig_shape)
    soft = 1.0 / (1.0 + np.exp(-logits.astype(np.float64)))
    return soft.astype(np.float32), float(np.asarray(scores).ravel()[0])
