"""Interactive segmentation sessions, mask post-processing, and quality metrics.

A session encodes the image exactly once, then every click re-runs only the
lightweight decoder against the cached embedding. Masks are binarized at
soft score > 0.5. Undo restores the previous mask bit-exactly from a bounded
snapshot ring.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from skimage.morphology import remove_small_objects

from .bundles import (
    Click,
    ModelBundle,
    PromptEmbedding,
    decode_prompt_mask,
    embed_for_prompts,
    image_content_id,
)

BINARIZE_THRESHOLD = 0.5
DEFAULT_MIN_SIZE = 50
DEFAULT_BORDER_MARGIN = 2
UNDO_DEPTH = 64

MODALITIES = ("SEM", "TEM")


class EmptyHistoryError(RuntimeError):
    """Undo requested on a session with no snapshots left."""


@dataclass
class Session:
    """One interactive segmentation session over a single image."""

    image: np.ndarray
    bundle: ModelBundle
    embedding: PromptEmbedding
    image_id: str
    click_log: list[Click] = field(default_factory=list)
    current_mask: np.ndarray = None
    _history: deque = field(default_factory=lambda: deque(maxlen=UNDO_DEPTH))

    @property
    def bundle_id(self) -> str:
        return self.bundle.name


def start_session(image: np.ndarray, bundle: ModelBundle) -> Session:
    """Encode once, cache the embedding, start with an empty mask and log."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected non-empty 2-D image, got shape {img.shape}")
    embedding = embed_for_prompts(bundle, img)
    return Session(
        image=img,
        bundle=bundle,
        embedding=embedding,
        image_id=image_content_id(img),
        current_mask=np.zeros(img.shape, dtype=bool),
    )


def add_click(session: Session, click: Click) -> np.ndarray:
    """Append a click, re-decode with the full click set, return the new mask."""
    h, w = session.image.shape
    if not (0 <= click.x < w and 0 <= click.y < h):
        raise ValueError(f"click ({click.x}, {click.y}) outside image bounds {w}x{h}")
    session._history.append((list(session.click_log), session.current_mask.copy()))
    session.click_log.append(click)
    soft, _ = decode_prompt_mask(session.bundle, session.embedding, session.click_log)
    session.current_mask = soft > BINARIZE_THRESHOLD
    return session.current_mask


def undo_click(session: Session) -> np.ndarray:
    """Drop the last click and restore the previous mask bit-exactly."""
    if not session._history:
        raise EmptyHistoryError("nothing to undo")
    log, mask = session._history.pop()
    session.click_log = log
    session.current_mask = mask
    return session.current_mask


def replay_clicks(image: np.ndarray, bundle: ModelBundle, clicks: list[Click]) -> np.ndarray:
    """Rebuild the final mask from a recorded click log (deterministic)."""
    session = start_session(image, bundle)
    for c in clicks:
        add_click(session, c)
    return session.current_mask


# -- post-processing -----------------------------------------------------------


def postprocess_mask(
    mask: np.ndarray,
    min_size: int = DEFAULT_MIN_SIZE,
    border_policy: str = "strip",
    border_margin: int = DEFAULT_BORDER_MARGIN,
) -> np.ndarray:
    """Drop small components and, optionally, components touching the border.

    ``border_policy`` is "keep" or "strip"; with "strip", any 8-connected
    component having a pixel within ``border_margin`` of an image edge is
    removed entirely. The output is always a subset of the input, and the
    operation is idempotent.
    """
    if min_size < 0:
        raise ValueError(f"min_size must be >= 0, got {min_size}")
    if border_policy not in ("keep", "strip"):
        raise ValueError(f"border_policy must be keep|strip, got {border_policy!r}")
    m = np.asarray(mask, dtype=bool)
    if min_size > 1:
        m = remove_small_objects(m, min_size=min_size, connectivity=2)
    if border_policy == "strip" and border_margin > 0 and m.any():
        from .morphometry import label_components  # noqa: PLC0415  (cycle at import time)

        labels = label_components(m)
        frame = np.zeros(m.shape, dtype=bool)
        k = min(border_margin, min(m.shape))
        frame[:k, :] = frame[-k:, :] = True
        frame[:, :k] = frame[:, -k:] = True
        touching = np.unique(labels[frame & m])
        if touching.size:
            m = m & ~np.isin(labels, touching)
    return m


# -- metrics -------------------------------------------------------------------


@dataclass(frozen=True)
class SegMetrics:
    dice: float
    iou: float
    precision: float
    recall: float
    accuracy: float

    def as_dict(self) -> dict:
        return {
            "dice": self.dice,
            "iou": self.iou,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
        }


def segmentation_metrics(pred: np.ndarray, truth: np.ndarray) -> SegMetrics:
    """Overlap metrics from pixel counts.

    Empty-denominator conventions keep every metric total: precision=1 when
    no positives were predicted, recall=1 when no positives exist, dice=1
    (and iou=1) when both masks are empty.
    """
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = p.size - tp - fp - fn
    dice = 1.0 if (2 * tp + fp + fn) == 0 else 2 * tp / (2 * tp + fp + fn)
    iou = 1.0 if (tp + fp + fn) == 0 else tp / (tp + fp + fn)
    precision = 1.0 if (tp + fp) == 0 else tp / (tp + fp)
    recall = 1.0 if (tp + fn) == 0 else tp / (tp + fn)
    accuracy = (tp + tn) / p.size
    return SegMetrics(dice, iou, precision, recall, accuracy)


# -- validation summaries ------------------------------------------------------


@dataclass(frozen=True)
class ValidationRecord:
    """One graded segmentation: image, modality, bundle, metrics, click count."""

    image_id: str
    modality: str
    bundle_id: str
    metrics: SegMetrics
    clicks: int

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be SEM|TEM, got {self.modality!r}")
        if self.clicks < 1:
            raise ValueError(f"clicks must be >= 1, got {self.clicks}")


def read_validation_records(path) -> list[ValidationRecord]:
    """Parse the JSON-lines validation log (one record per line)."""
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            records.append(ValidationRecord(
                image_id=raw["image_id"],
                modality=raw["modality"],
                bundle_id=raw["bundle_id"],
                metrics=SegMetrics(**raw["metrics"]),
                clicks=int(raw["clicks"]),
            ))
    return records


def write_validation_records(path, records: list[ValidationRecord]):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps({
                "image_id": r.image_id,
                "modality": r.modality,
                "bundle_id": r.bundle_id,
                "metrics": r.metrics.as_dict(),
                "clicks": r.clicks,
            }) + "\n")


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    # Sample std (n-1); a single observation reports 0 rather than NaN.
    mean = float(np.mean(values))
    std = 0.0 if len(values) < 2 else float(np.std(values, ddof=1))
    return mean, std


def summarize_validation(records: list[ValidationRecord]) -> dict:
    """Per (modality, bundle) group: mean +/- sample std of each metric and
    click count, plus the fraction of images with dice >= 0.9."""
    groups: dict[tuple[str, str], list[ValidationRecord]] = {}
    for r in records:
        groups.setdefault((r.modality, r.bundle_id), []).append(r)
    if not groups:
        raise ValueError("no validation records to summarize")
    summary = {}
    for (modality, bundle_id), rs in sorted(groups.items()):
        entry = {"modality": modality, "bundle_id": bundle_id, "n": len(rs)}
        for metric in ("dice", "iou", "precision", "recall", "accuracy"):
            vals = np.array([getattr(r.metrics, metric) for r in rs])
            entry[f"{metric}_mean"], entry[f"{metric}_std"] = _mean_std(vals)
        clicks = np.array([r.clicks for r in rs], dtype=float)
        entry["clicks_mean"], entry["clicks_std"] = _mean_std(clicks)
        entry["dice_ge_0.9_fraction"] = float(
            np.mean([r.metrics.dice >= 0.9 for r in rs])
        )
        summary[f"{modality}/{bundle_id}"] = entry
    return summary
