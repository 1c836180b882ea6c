"""Ablation grid over encoder/sampling/pooling/head, plus composite scenes.

The grid shares one stratified split across all 24 configurations, caches
pooled features per (encoder role, sampling) pair, and records failures
per config instead of aborting the table.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import CLASS_NAMES
from .bundles import ModelBundle, encode_image
from .classifier.evaluate import evaluate, predict
from .classifier.splits import Split, stratified_split
from .classifier.train import (
    HEAD_LINEAR,
    HEAD_MLP,
    HEADS,
    TrainConfig,
    TrainingTrace,
    retrain_final,
    train_linear,
    train_mlp,
)
from .features import (
    MASK_GUIDED,
    POOLINGS,
    UNIFORM,
    apply_standardizer,
    fit_standardizer_matrix,
    pool,
    project_mask,
    sample_hypercolumns,
    standardize_matrix,
)
from .imaging import load_grayscale, mask_from_png

ENCODER_SEGMENTER = "segmenter-features"
ENCODER_SELFSUP = "self-supervised-features"
ENCODER_ROLES = (ENCODER_SEGMENTER, ENCODER_SELFSUP)
SAMPLINGS = (MASK_GUIDED, UNIFORM)

RESULT_CSV_COLUMNS = ("encoder", "sampling", "pooling", "head",
                      "val_acc", "test_acc", "test_macro_f1")


@dataclass(frozen=True)
class ExperimentConfig:
    encoder: str
    sampling: str
    pooling: str
    head: str
    seed: int = 0

    def __post_init__(self) -> None:
        if self.encoder not in ENCODER_ROLES:
            raise ValueError(f"unknown encoder role {self.encoder!r}")
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def key(self) -> str:
        return f"{self.encoder}|{self.sampling}|{self.pooling}|{self.head}"


def enumerate_configs(seed: int = 0) -> list[ExperimentConfig]:
    """The full factorial design in (encoder, sampling, pooling, head) order."""
    return [
        ExperimentConfig(encoder=e, sampling=s, pooling=p, head=h, seed=seed)
        for e, s, p, h in itertools.product(ENCODER_ROLES, SAMPLINGS, POOLINGS, HEADS)
    ]


@dataclass(frozen=True)
class ManifestEntry:
    image_path: Path
    mask_path: Path
    label: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    classes: tuple[str, ...] = CLASS_NAMES
    provenance: str = ""

    def labels(self) -> np.ndarray:
        index = {name: i for i, name in enumerate(self.classes)}
        return np.array([index[e.label] for e in self.entries], dtype=np.int64)


def load_manifest(path: str | Path, classes: tuple[str, ...] = CLASS_NAMES) -> DatasetManifest:
    """Read a dataset CSV (image_path,mask_path,label); paths resolve
    relative to the manifest file and must exist."""
    path = Path(path)
    entries = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"image_path", "mask_path", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(
                f"manifest must have columns {sorted(required)}, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            if row["label"] not in classes:
                raise ValueError(f"label {row['label']!r} not in vocabulary {classes}")
            image = (path.parent / row["image_path"]).resolve()
            mask = (path.parent / row["mask_path"]).resolve()
            for p in (image, mask):
                if not p.is_file():
                    raise FileNotFoundError(f"manifest references missing file {p}")
            entries.append(ManifestEntry(image_path=image, mask_path=mask,
                                         label=row["label"]))
    if not entries:
        raise ValueError(f"manifest {path} lists no samples")
    return DatasetManifest(entries=tuple(entries), classes=tuple(classes))


def pooled_descriptor(image, mask, bundle: ModelBundle, sampling: str,
                      pooling: str):
    """Single-image pipeline: encode, sample (mask-guided or uniform), pool."""
    stack = encode_image(bundle, image)
    if sampling == MASK_GUIDED:
        cells = project_mask(mask, bundle)
    elif sampling == UNIFORM:
        cells = None
    else:
        raise ValueError(f"unknown sampling mode {sampling!r}")
    return pool(sample_hypercolumns(stack, cells), pooling)


@dataclass(frozen=True)
class ConfigResult:
    config: ExperimentConfig
    val_acc: float = float("nan")
    test_acc: float = float("nan")
    test_macro_f1: float = float("nan")
    best_epoch: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class ResultTable:
    results: tuple[ConfigResult, ...]
    seed: int
    split_digest: str
    aggregates: dict

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "split_digest": self.split_digest,
            "results": [
                {
                    "encoder": r.config.encoder,
                    "sampling": r.config.sampling,
                    "pooling": r.config.pooling,
                    "head": r.config.head,
                    "val_acc": r.val_acc,
                    "test_acc": r.test_acc,
                    "test_macro_f1": r.test_macro_f1,
                    "best_epoch": r.best_epoch,
                    "error": r.error,
                }
                for r in self.results
            ],
            "aggregates": self.aggregates,
        }


def split_digest(split: Split) -> str:
    h = hashlib.sha256()
    for part in (split.train, split.val, split.test):
        h.update(np.ascontiguousarray(part, dtype="<i8").tobytes())
    return "sha256:" + h.hexdigest()


def _factor_aggregates(results: list[ConfigResult]) -> dict:
    out: dict = {}
    for factor, levels in (
        ("encoder", ENCODER_ROLES),
        ("sampling", SAMPLINGS),
        ("pooling", POOLINGS),
        ("head", HEADS),
    ):
        out[factor] = {}
        for level in levels:
            accs = [r.test_acc for r in results
                    if r.ok and getattr(r.config, factor) == level]
            f1s = [r.test_macro_f1 for r in results
                   if r.ok and getattr(r.config, factor) == level]
            if accs:
                out[factor][level] = {
                    "test_acc": float(np.mean(accs)),
                    "test_macro_f1": float(np.mean(f1s)),
                    "n": len(accs),
                }
    return out


def _pooled_matrices(manifest: DatasetManifest, bundle: ModelBundle,
                     samplings, progress=None) -> dict:
    """Per-sampling {avg, max} feature matrices; avg+max concatenates later.

    Each image is encoded exactly once regardless of how many samplings are
    requested.  Matrices are float32 to keep the full grid in memory.
    """
    store: dict = {s: {"avg": [], "max": []} for s in samplings}
    for i, entry in enumerate(manifest.entries):
        image = load_grayscale(entry.image_path)
        mask = mask_from_png(entry.mask_path.read_bytes())
        stack = encode_image(bundle, image)
        for sampling in samplings:
            cells = project_mask(mask, bundle) if sampling == MASK_GUIDED else None
            hset = sample_hypercolumns(stack, cells)
            for mode in ("avg", "max"):
                store[sampling][mode].append(
                    pool(hset, mode).vector.astype(np.float32)
                )
        if progress is not None:
            progress((i + 1) / len(manifest.entries))
    return {
        s: {m: np.stack(vs) for m, vs in per.items()}
        for s, per in store.items()
    }


def _config_matrix(pools: dict, pooling: str) -> np.ndarray:
    if pooling == "avg+max":
        x = np.concatenate([pools["avg"], pools["max"]], axis=1)
    else:
        x = pools[pooling]
    return x.astype(np.float64)


def _run_one(x: np.ndarray, y: np.ndarray, split: Split, head: str,
             cfg: TrainConfig) -> tuple[float, float, float, int]:
    std = fit_standardizer_matrix(x[split.train])
    xs = standardize_matrix(std, x)
    x_tr, y_tr = xs[split.train], y[split.train]
    x_val, y_val = xs[split.val], y[split.val]
    trainval = np.concatenate([split.train, split.val])

    if head == HEAD_MLP:
        model, trace = train_mlp(x_tr, y_tr, x_val, y_val, cfg)
    else:
        model = train_linear(x_tr, y_tr, cfg)
        trace = TrainingTrace(best_epoch=cfg.max_epochs,
                              stopped_epoch=cfg.max_epochs)
    val_acc = evaluate(model, x_val, y_val).accuracy

    final = retrain_final(head, xs[trainval], y[trainval], cfg, trace)
    report = evaluate(final, xs[split.test], y[split.test])
    return val_acc, report.accuracy, report.macro_f1, trace.best_epoch


def run_grid(
    manifest: DatasetManifest,
    bundles: dict[str, ModelBundle],
    configs: list[ExperimentConfig] | None = None,
    split: Split | None = None,
    train_cfg: TrainConfig | None = None,
    seed: int = 0,
    progress=None,
) -> ResultTable:
    """Run every requested configuration against one shared split.

    `bundles` maps encoder roles to loaded bundles.  Per config: pooled
    features, standardizer fitted on the train part only, head trained with
    the selection protocol, then refit on train+val and scored on test.  A
    config that raises is recorded with its error string; the rest of the
    table still completes.
    """
    if configs is None:
        configs = enumerate_configs(seed)
    if not configs:
        raise ValueError("no configurations requested")
    if train_cfg is None:
        train_cfg = TrainConfig(seed=seed)
    labels = manifest.labels()
    if split is None:
        split = stratified_split(labels, seed=seed)

    roles = sorted({c.encoder for c in configs})
    for role in roles:
        if role not in bundles:
            raise KeyError(f"no bundle supplied for encoder role {role!r}")

    results: list[ConfigResult] = []
    done = 0
    total = len(configs)
    for role in roles:
        role_configs = [c for c in configs if c.encoder == role]
        samplings = sorted({c.sampling for c in role_configs})
        pools_by_sampling = _pooled_matrices(manifest, bundles[role], samplings)
        for config in role_configs:
            cfg = dataclasses.replace(train_cfg, seed=config.seed)
            try:
                x = _config_matrix(pools_by_sampling[config.sampling], config.pooling)
                val_acc, test_acc, macro_f1, best_epoch = _run_one(
                    x, labels, split, config.head, cfg
                )
                results.append(ConfigResult(
                    config=config, val_acc=val_acc, test_acc=test_acc,
                    test_macro_f1=macro_f1, best_epoch=best_epoch,
                ))
            except Exception as exc:  # recorded, not fatal
                results.append(ConfigResult(config=config, error=f"{type(exc).__name__}: {exc}"))
            done += 1
            if progress is not None:
                progress(done / total)
        del pools_by_sampling

    ordered = [r for c in configs for r in results if r.config == c]
    return ResultTable(
        results=tuple(ordered),
        seed=seed,
        split_digest=split_digest(split),
        aggregates=_factor_aggregates(ordered),
    )


def results_to_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_CSV_COLUMNS)
    for r in table.results:
        writer.writerow([
            r.config.encoder, r.config.sampling, r.config.pooling, r.config.head,
            f"{r.val_acc:.10g}", f"{r.test_acc:.10g}", f"{r.test_macro_f1:.10g}",
        ])
    return buf.getvalue()


def write_results(table: ResultTable, json_path: str | Path) -> None:
    """JSON table plus a CSV twin next to it (same stem, .csv suffix)."""
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(table.as_dict(), indent=2))
    json_path.with_suffix(".csv").write_text(results_to_csv(table))


def compose_scene(
    particles: list[tuple[np.ndarray, np.ndarray]],
    canvas: np.ndarray,
    placements: list[tuple[int, int]],
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Paste particle crops onto a canvas at (row, col) offsets.

    Every particle's mask must land fully inside the canvas and never
    overlap a previously placed mask.  Background pixels outside all masks
    are the canvas's own, untouched.
    """
    if len(particles) != len(placements):
        raise ValueError("one placement per particle required")
    canvas = np.asarray(canvas, dtype=np.float32)
    composite = canvas.copy()
    occupied = np.zeros(canvas.shape, dtype=bool)
    out_masks: list[np.ndarray] = []
    for idx, ((crop, mask), (row, col)) in enumerate(zip(particles, placements)):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != crop.shape:
            raise ValueError(f"particle {idx}: crop and mask shapes differ")
        h, w = mask.shape
        if row < 0 or col < 0 or row + h > canvas.shape[0] or col + w > canvas.shape[1]:
            raise ValueError(f"particle {idx} placement {(row, col)} out of bounds")
        window = occupied[row : row + h, col : col + w]
        if np.any(window & mask):
            raise ValueError(f"particle {idx} overlaps a previously placed particle")
        window |= mask
        composite[row : row + h, col : col + w][mask] = np.asarray(
            crop, dtype=np.float32
        )[mask]
        full = np.zeros(canvas.shape, dtype=bool)
        full[row : row + h, col : col + w] = mask
        out_masks.append(full)
    return composite, out_masks


def classify_per_particle(
    composite: np.ndarray,
    particle_masks: list[np.ndarray],
    bundle: ModelBundle,
    standardizer,
    model,
    pooling: str = "avg",
) -> list[tuple[str, float]]:
    """Mask-guided classification of each particle in a shared scene.

    The scene is encoded once; each particle then samples only its own
    cells, so with a patch-local encoder the result matches classifying
    the particle in isolation.
    """
    stack = encode_image(bundle, composite)
    out: list[tuple[str, float]] = []
    for idx, mask in enumerate(particle_masks):
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError(f"particle {idx} has an empty mask")
        cells = project_mask(mask, bundle)
        pooled = pool(sample_hypercolumns(stack, cells), pooling)
        vec = apply_standardizer(standardizer, pooled).vector
        probs = predict(model, vec)
        k = int(np.argmax(probs))
        out.append((CLASS_NAMES[k], float(probs[k])))
    return out
