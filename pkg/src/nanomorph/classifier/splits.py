"""Deterministic stratified train/val/test splitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_RATIOS = (0.8, 0.1, 0.1)
_RATIO_TOL = 1e-9


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    ratios: tuple[float, float, float]

    def counts_for(self, labels: np.ndarray) -> dict[int, tuple[int, int, int]]:
        """Per-class sample counts in (train, val, test) order."""
        out: dict[int, tuple[int, int, int]] = {}
        for cls in np.unique(labels):
            out[int(cls)] = tuple(
                int(np.sum(labels[part] == cls))
                for part in (self.train, self.val, self.test)
            )
        return out


def _class_cut(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Integer allocation of n items: floor each share, then hand out the
    remainder by descending fractional part (ties go to the earlier split)."""
    exact = [n * r for r in ratios]
    base = [int(np.floor(e + _RATIO_TOL)) for e in exact]
    frac = [e - b for e, b in zip(exact, base)]
    short = n - sum(base)
    for idx in sorted(range(3), key=lambda i: (-frac[i], i))[:short]:
        base[idx] += 1
    return tuple(base)


def stratified_split(
    labels: np.ndarray,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> Split:
    """Split sample indices so each class keeps the requested proportions.

    Each class is shuffled independently with a generator derived from
    `seed`, then cut into train/val/test.  Every class must contribute at
    least one sample to each non-empty part; classes with fewer than three
    samples are rejected outright.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {labels.shape}")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be three non-negative values, got {ratios}")
    if abs(sum(ratios) - 1.0) > _RATIO_TOL:
        raise ValueError(f"ratios must sum to 1, got sum {sum(ratios)!r}")

    rng = np.random.default_rng(seed)
    parts: tuple[list, list, list] = ([], [], [])
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < 3:
            raise ValueError(
                f"class {cls!r} has {len(idx)} samples; need at least 3 to split"
            )
        perm = rng.permutation(idx)
        n_train, n_val, n_test = _class_cut(len(idx), tuple(ratios))
        parts[0].append(perm[:n_train])
        parts[1].append(perm[n_train : n_train + n_val])
        parts[2].append(perm[n_train + n_val :])

    train, val, test = (
        np.sort(np.concatenate(p)).astype(np.int64) if p else np.empty(0, np.int64)
        for p in parts
    )
    return Split(train=train, val=val, test=test, seed=seed, ratios=tuple(ratios))
