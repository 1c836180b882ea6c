"""Interpretability outputs: layer heat maps and t-SNE layouts.

Heat maps live on the encoder's cell grid.  The t-SNE here is the exact
O(n^2) formulation: per-point Gaussian bandwidths fitted by binary search,
symmetrized affinities, Student-t low-dimensional kernel, gradient descent
with momentum and early exaggeration.  Desk-scale inputs (n <= 2000) make
the quadratic cost a non-issue and keep every quantity directly testable.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import HypercolumnSet, UNIFORM, save_hypercolumns
from .imaging import encode_png, resize_bilinear

KIND_ACTIVATION = "activation-norm"
KIND_CLS = "cls-similarity"

INIT_RANDOM = "random"
INIT_PCA = "pca"

_ENTROPY_TOL_BITS = 1e-5
_MAX_BANDWIDTH_STEPS = 200
_Q_FLOOR = 1e-12


@dataclass(frozen=True)
class HeatMap:
    """One grid of values in [0,1] plus the range they were mapped from."""

    values: np.ndarray
    raw_min: float
    raw_max: float
    layer: int
    kind: str

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"heat map must be square 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("heat map contains non-finite values")
        if self.raw_min > self.raw_max:
            raise ValueError(f"recorded range inverted: {self.raw_min} > {self.raw_max}")
        if self.kind not in (KIND_ACTIVATION, KIND_CLS):
            raise ValueError(f"unknown heat map kind {self.kind!r}")


def activation_map(stack, layer: int) -> HeatMap:
    """Per-cell L2 norm of one recorded layer, min-max scaled to [0,1].

    A constant-norm grid has no range to scale over and maps to all zeros.
    """
    if layer not in stack.layer_indices:
        raise ValueError(
            f"layer {layer} not recorded; available: {stack.layer_indices}"
        )
    norms = np.linalg.norm(stack.layers[layer].astype(np.float64), axis=-1)
    lo, hi = float(norms.min()), float(norms.max())
    if hi > lo:
        values = (norms - lo) / (hi - lo)
    else:
        values = np.zeros_like(norms)
    return HeatMap(values=values.astype(np.float32), raw_min=lo, raw_max=hi,
                   layer=int(layer), kind=KIND_ACTIVATION)


def cls_similarity_map(stack, layer: int) -> HeatMap:
    """Cosine similarity of each cell token to the layer's CLS vector.

    Values are remapped from [-1,1] to [0,1]; a zero-norm token (or CLS)
    counts as orthogonal.
    """
    if layer not in stack.cls_tokens:
        raise ValueError(f"no CLS token recorded for layer {layer}")
    tokens = stack.layers[layer].astype(np.float64)
    cls = stack.cls_tokens[layer].astype(np.float64)
    tok_norm = np.linalg.norm(tokens, axis=-1)
    cls_norm = np.linalg.norm(cls)
    denom = tok_norm * cls_norm
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where(denom > 0, tokens @ cls / np.where(denom > 0, denom, 1.0), 0.0)
    cos = np.clip(cos, -1.0, 1.0)
    values = ((cos + 1.0) / 2.0).astype(np.float32)
    return HeatMap(values=values, raw_min=float(cos.min()), raw_max=float(cos.max()),
                   layer=int(layer), kind=KIND_CLS)


def _lut() -> np.ndarray:
    """Diverging blue -> white -> red table, 256 entries.

    Entry i for t = i/255: t in [0, 0.5] blends (0,0,255) to (255,255,255),
    t in [0.5, 1] blends on to (255,0,0).
    """
    t = np.arange(256) / 255.0
    low = np.stack([t * 2 * 255, t * 2 * 255, np.full(256, 255.0)], axis=1)
    u = (t - 0.5) * 2
    high = np.stack([np.full(256, 255.0), (1 - u) * 255, (1 - u) * 255], axis=1)
    lut = np.where((t < 0.5)[:, None], low, high)
    return np.clip(np.round(lut), 0, 255).astype(np.uint8)


COLORMAP_LUT = _lut()


def render_heatmap(heatmap: HeatMap, out_shape: tuple[int, int] | None = None) -> np.ndarray:
    """RGB render of a heat map, optionally resampled to an image shape."""
    values = heatmap.values
    if out_shape is not None and tuple(out_shape) != values.shape:
        values = np.clip(resize_bilinear(values, tuple(out_shape)), 0.0, 1.0)
    idx = np.clip(np.round(values * 255.0), 0, 255).astype(np.intp)
    return COLORMAP_LUT[idx]


def heatmap_png(heatmap: HeatMap, out_shape: tuple[int, int] | None = None) -> bytes:
    return encode_png(render_heatmap(heatmap, out_shape))


def save_heatmap_grid(path: str | Path, heatmap: HeatMap, image_id: str = "",
                      bundle: str = "") -> None:
    """Persist the raw grid through the embedding-cache container (dims=1)."""
    g = heatmap.values.shape[0]
    rows, cols = np.divmod(np.arange(g * g, dtype=np.int64), g)
    hset = HypercolumnSet(
        descriptors=heatmap.values.reshape(-1, 1).astype(np.float32),
        cells=np.stack([rows, cols], axis=1),
        sampling_mode=UNIFORM,
        layer_order=(heatmap.layer,),
        source_bundle=bundle,
        source_image=image_id,
        mask_hash=None,
    )
    save_hypercolumns(path, hset)


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    step_size: float = 200.0
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch: int = 250
    seed: int = 0
    init: str = INIT_RANDOM

    def __post_init__(self) -> None:
        if self.perplexity <= 1.0:
            raise ValueError(f"perplexity must exceed 1, got {self.perplexity}")
        if self.iterations < self.exaggeration_iters:
            raise ValueError(
                f"iterations ({self.iterations}) must cover the exaggeration "
                f"phase ({self.exaggeration_iters})"
            )
        if self.exaggeration < 1.0:
            raise ValueError(f"exaggeration factor must be >= 1, got {self.exaggeration}")
        if self.step_size <= 0:
            raise ValueError(f"step size must be positive, got {self.step_size}")
        for name in ("momentum_start", "momentum_final"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        if self.init not in (INIT_RANDOM, INIT_PCA):
            raise ValueError(f"init must be 'random' or 'pca', got {self.init!r}")


def _squared_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def conditional_affinities(
    x: np.ndarray, perplexity: float
) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic conditional P with per-point bandwidth search.

    For each point the Gaussian precision beta is bisected until the
    conditional distribution's entropy matches log2(perplexity) to within
    1e-5 bits.  Returns (P_conditional, betas); the diagonal of P is zero.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    d2 = _squared_distances(x)
    target_bits = np.log2(perplexity)
    p_cond = np.zeros((n, n), dtype=np.float64)
    betas = np.ones(n, dtype=np.float64)

    for i in range(n):
        d_row = np.delete(d2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        row = None
        for _ in range(_MAX_BANDWIDTH_STEPS):
            logits = -beta * d_row
            logits -= logits.max()
            row = np.exp(logits)
            row /= row.sum()
            nz = row[row > 0]
            h_bits = float(-np.sum(nz * np.log2(nz)))
            diff = h_bits - target_bits
            if abs(diff) <= _ENTROPY_TOL_BITS:
                break
            if diff > 0:  # too spread out: sharpen
                lo = beta
                beta = beta * 2.0 if not np.isfinite(hi) else (lo + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else (lo + hi) / 2.0
        betas[i] = beta
        p_cond[i, :i] = row[:i]
        p_cond[i, i + 1 :] = row[i:]
    return p_cond, betas


def joint_affinities(x: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized joint P: non-negative, zero diagonal, sums to 1."""
    p_cond, _ = conditional_affinities(x, perplexity)
    return (p_cond + p_cond.T) / (2.0 * len(p_cond))


def _kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _initial_layout(x: np.ndarray, cfg: TsneConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == INIT_RANDOM:
        return rng.standard_normal((len(x), 2)) * 1e-4
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    scores = centered @ vt[:2].T
    spread = scores[:, 0].std()
    if spread == 0:
        return rng.standard_normal((len(x), 2)) * 1e-4
    return scores / spread * 1e-4


def tsne(x: np.ndarray, cfg: TsneConfig = TsneConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Embed rows of x into 2-D; returns (layout, per-iteration KL trace).

    The KL entry for iteration t is measured against the unexaggerated P at
    the positions entering that iteration, so the trace is non-negative
    throughout and its last value reflects the returned layout up to one
    final update step.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"embeddings must be 2-D, got shape {x.shape}")
    n = len(x)
    if n < 10:
        raise ValueError(f"need at least 10 points, got {n}")
    if not cfg.perplexity < (n - 1) / 3:
        raise ValueError(
            f"perplexity {cfg.perplexity} infeasible for {n} points "
            f"(needs perplexity < {(n - 1) / 3:.2f})"
        )

    p = joint_affinities(x, cfg.perplexity)
    y = _initial_layout(x, cfg)
    velocity = np.zeros_like(y)
    trace = np.empty(cfg.iterations, dtype=np.float64)

    for t in range(1, cfg.iterations + 1):
        d2 = _squared_distances(y)
        num = 1.0 / (1.0 + d2)
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), _Q_FLOOR)
        trace[t - 1] = _kl_divergence(p, q)

        p_eff = p * cfg.exaggeration if t <= cfg.exaggeration_iters else p
        pq_num = (p_eff - q) * num
        grad = 4.0 * (pq_num.sum(axis=1)[:, None] * y - pq_num @ y)
        if not np.all(np.isfinite(grad)):
            raise RuntimeError(f"non-finite t-SNE gradient at iteration {t}")

        momentum = cfg.momentum_start if t <= cfg.momentum_switch else cfg.momentum_final
        velocity = momentum * velocity - cfg.step_size * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    return y, trace


def pipeline_embeddings(model, x: np.ndarray) -> dict[str, np.ndarray]:
    """Inference-mode activations at the three pipeline stages.

    Keys: "input" (the matrix itself), then "hidden1"/"hidden2" for the
    post-ReLU outputs of the two hidden blocks.
    """
    x = np.asarray(x, dtype=np.float64)
    acts = model.hidden_activations(x)
    out = {"input": x}
    for i, a in enumerate(acts, start=1):
        out[f"hidden{i}"] = a
    return out


def write_layout_csv(path: str | Path, sample_ids, class_labels, layout: np.ndarray) -> None:
    layout = np.asarray(layout)
    if not len(sample_ids) == len(class_labels) == len(layout):
        raise ValueError("sample ids, labels and layout rows must align")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample_id", "class_label", "x", "y"])
    for sid, lab, (px, py) in zip(sample_ids, class_labels, layout):
        writer.writerow([sid, lab, f"{px:.10g}", f"{py:.10g}"])
    Path(path).write_text(buf.getvalue())


def write_kl_trace(path: str | Path, cfg: TsneConfig, trace: np.ndarray) -> None:
    payload = {
        "perplexity": cfg.perplexity,
        "iterations": cfg.iterations,
        "kl": [float(v) for v in trace],
    }
    Path(path).write_text(json.dumps(payload))
