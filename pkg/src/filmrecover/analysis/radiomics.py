"""First-order, GLCM and GLDM texture features over a masked HU grid."""

from __future__ import annotations

import numpy as np

HIST_RANGE = (-1024.0, 3071.0)
HIST_BINS = 64
GLCM_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
_NEIGHBORS8 = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0))


class EmptyRegionError(ValueError):
    pass


def _region(hu, mask) -> tuple[np.ndarray, np.ndarray]:
    hu = np.asarray(hu, np.float64)
    mask = np.ones(hu.shape, bool) if mask is None else np.asarray(mask, bool)
    if mask.shape != hu.shape:
        raise ValueError(f"mask {mask.shape} does not match grid {hu.shape}")
    if not mask.any():
        raise EmptyRegionError("feature extraction over an empty mask")
    return hu, mask


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


def first_order_features(hu, mask=None) -> dict:
    hu, mask = _region(hu, mask)
    x = hu[mask]
    counts, _ = np.histogram(x, bins=HIST_BINS, range=HIST_RANGE)
    return {
        "mean": float(x.mean()),
        "std": float(x.std()),
        "min": float(x.min()),
        "max": float(x.max()),
        "energy": float(np.sum(x * x)),
        "entropy": _entropy(counts),
    }


def quantize(hu, mask, levels: int) -> np.ndarray:
    """Uniform quantization of the in-mask range to ``levels`` gray levels (0-based)."""
    x = hu[mask]
    lo, hi = x.min(), x.max()
    q = np.zeros(hu.shape, np.intp)
    if hi > lo:
        q = np.floor((hu - lo) / (hi - lo) * levels).astype(np.intp)
        q = np.clip(q, 0, levels - 1)
    return q


def _shifted_pairs(q: np.ndarray, mask: np.ndarray, dy: int, dx: int) -> tuple[np.ndarray, np.ndarray]:
    h, w = q.shape
    ya, yb = slice(max(0, -dy), min(h, h - dy)), slice(max(0, dy), min(h, h + dy))
    xa, xb = slice(max(0, -dx), min(w, w - dx)), slice(max(0, dx), min(w, w + dx))
    both = mask[ya, xa] & mask[yb, xb]
    return q[ya, xa][both], q[yb, xb][both]


def glcm_matrix(hu, mask=None, levels: int = 32, offsets=GLCM_OFFSETS) -> np.ndarray:
    """Symmetric co-occurrence matrix accumulated over ``offsets``, normalized to sum 1."""
    hu, mask = _region(hu, mask)
    q = quantize(hu, mask, levels)
    p = np.zeros((levels, levels))
    for dy, dx in offsets:
        a, b = _shifted_pairs(q, mask, dy, dx)
        np.add.at(p, (a, b), 1.0)
        np.add.at(p, (b, a), 1.0)
    total = p.sum()
    if total == 0:
        # No in-mask neighbour pairs: the lone level co-occurs only with itself.
        lvl = q[mask][0]
        p[lvl, lvl] = 1.0
        return p
    return p / total


def glcm_features(hu, mask=None, levels: int = 32, offsets=GLCM_OFFSETS) -> dict:
    p = glcm_matrix(hu, mask, levels, offsets)
    i, j = np.indices(p.shape)
    mu_i, mu_j = (i * p).sum(), (j * p).sum()
    var_i, var_j = (((i - mu_i) ** 2) * p).sum(), (((j - mu_j) ** 2) * p).sum()
    if var_i < 1e-15 or var_j < 1e-15:
        corr = 0.0
    else:
        corr = float((((i - mu_i) * (j - mu_j)) * p).sum() / np.sqrt(var_i * var_j))
    return {
        "contrast": float((((i - j) ** 2) * p).sum()),
        "correlation": corr,
        "asm": float((p * p).sum()),
        "homogeneity": float((p / (1.0 + (i - j) ** 2)).sum()),
    }


def dependence_counts(q: np.ndarray, mask: np.ndarray, alpha: int = 0) -> np.ndarray:
    """Per pixel, how many in-mask 8-neighbours lie within ``alpha`` gray levels."""
    h, w = q.shape
    qp = np.pad(q, 1)
    mp = np.pad(mask, 1)
    dep = np.zeros((h, w), np.intp)
    for dy, dx in _NEIGHBORS8:
        nq = qp[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        nm = mp[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        dep += nm & (np.abs(nq - q) <= alpha)
    return np.where(mask, dep, 0)


def gldm_matrix(hu, mask=None, levels: int = 32, alpha: int = 0) -> np.ndarray:
    """Counts P[level, dependence] with dependence in 0..8."""
    hu, mask = _region(hu, mask)
    q = quantize(hu, mask, levels)
    dep = dependence_counts(q, mask, alpha)
    p = np.zeros((levels, 9))
    np.add.at(p, (q[mask], dep[mask]), 1.0)
    return p


def gldm_features(hu, mask=None, levels: int = 32, alpha: int = 0) -> dict:
    p = gldm_matrix(hu, mask, levels, alpha)
    nz = p.sum()
    per_dep = p.sum(axis=0)
    per_level = p.sum(axis=1)
    return {
        "dependence_nonuniformity": float((per_dep ** 2).sum() / nz),
        "dependence_nonuniformity_normalized": float((per_dep ** 2).sum() / nz ** 2),
        "gray_level_nonuniformity": float((per_level ** 2).sum() / nz),
        "dependence_entropy": _entropy(p.ravel()),
    }


def radiomics_vector(hu, mask=None, levels: int = 32) -> dict:
    """All features, prefixed by family, in a stable sorted order."""
    feats = {}
    for prefix, vals in (("firstorder", first_order_features(hu, mask)),
                         ("glcm", glcm_features(hu, mask, levels)),
                         ("gldm", gldm_features(hu, mask, levels))):
        feats.update({f"{prefix}_{k}": v for k, v in vals.items()})
    return dict(sorted(feats.items()))
