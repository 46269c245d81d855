"""Grey-level texture matrices and the features derived from them.

All matrices are built from a `DiscretizedRegion` (grey levels ``1..Ng``,
0 = outside). Directional families (GLCM, GLRLM) use the 13 unique 3D offsets
at distance 1 and average each feature over the directions that contain data.
Neighbourhood families (GLSZM, NGTDM, GLDM) use 26-connectivity. Entropies use
log base 2.
"""

from __future__ import annotations

from typing import Dict, Iterable, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .discretize import DiscretizedRegion

OFFSETS: Tuple[Tuple[int, int, int], ...] = (
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
    (1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1),
)

GLCM_NAMES = (
    "Correlation", "DifferenceAverage", "DifferenceEntropy", "DifferenceVariance",
    "InverseVariance", "JointEntropy", "SumEntropy", "Imc2", "MaximumProbability",
)
GLRLM_NAMES = (
    "RunEntropy", "RunVariance", "RunPercentage", "RunLengthNonUniformity",
    "LongRunHighGrayLevelEmphasis",
)
GLSZM_NAMES = (
    "GrayLevelNonUniformityNormalized", "GrayLevelVariance", "ZoneEntropy", "ZonePercentage",
    "SizeZoneNonUniformityNormalized", "SmallAreaEmphasis", "SmallAreaHighGrayLevelEmphasis",
    "HighGrayLevelZoneEmphasis",
)
NGTDM_NAMES = ("Strength",)
GLDM_NAMES = ("DependenceNonUniformity", "SmallDependenceEmphasis")

_NEIGHBOURS_26 = np.ones((3, 3, 3), dtype=np.int64)
_NEIGHBOURS_26[1, 1, 1] = 0


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p))) + 0.0


def _padded(levels: np.ndarray) -> np.ndarray:
    return np.pad(levels, 1, mode="constant", constant_values=0)


def _shifted_pair(padded: np.ndarray, offset):
    """Views (a, b) with b[x] = padded[x + offset], over the un-padded core."""
    core = tuple(slice(1, n - 1) for n in padded.shape)
    moved = tuple(slice(1 + d, n - 1 + d) for d, n in zip(offset, padded.shape))
    return padded[core], padded[moved]


# ---------------------------------------------------------------------------
# GLCM
# ---------------------------------------------------------------------------


def glcm_matrices(region: DiscretizedRegion, offsets: Sequence = OFFSETS) -> np.ndarray:
    """Symmetric raw co-occurrence counts, shape (n_offsets, Ng, Ng)."""
    ng = region.n_levels
    padded = _padded(region.levels)
    out = np.zeros((len(offsets), ng, ng))
    for k, d in enumerate(offsets):
        a, b = _shifted_pair(padded, d)
        valid = (a > 0) & (b > 0)
        flat = (a[valid] - 1) * ng + (b[valid] - 1)
        counts = np.bincount(flat, minlength=ng * ng).reshape(ng, ng).astype(np.float64)
        out[k] = counts + counts.T
    return out


def glcm_from_probabilities(p: np.ndarray) -> Dict[str, float]:
    ng = p.shape[0]
    levels = np.arange(1, ng + 1, dtype=np.float64)
    i, j = np.meshgrid(levels, levels, indexing="ij")
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mux, muy = float(px @ levels), float(py @ levels)
    sx = np.sqrt(float(px @ (levels - mux) ** 2))
    sy = np.sqrt(float(py @ (levels - muy) ** 2))
    if sx * sy > 0:
        corr = (float(np.sum(i * j * p)) - mux * muy) / (sx * sy)
    else:
        corr = 1.0

    k = np.abs(i - j).astype(np.int64)
    p_diff = np.bincount(k.ravel(), weights=p.ravel(), minlength=ng)
    kk = np.arange(ng, dtype=np.float64)
    diff_avg = float(p_diff @ kk)
    diff_var = float(p_diff @ (kk - diff_avg) ** 2)
    inv_var = float(np.sum(p_diff[1:] / kk[1:] ** 2))
    s = (i + j).astype(np.int64)
    p_sum = np.bincount(s.ravel(), weights=p.ravel(), minlength=2 * ng + 1)

    hxy = _entropy(p.ravel())
    pxy = np.outer(px, py).ravel()
    hxy2 = _entropy(pxy)
    imc2 = float(np.sqrt(1.0 - np.exp(-2.0 * (hxy2 - hxy)))) if hxy2 > hxy else 0.0
    return {
        "Correlation": float(corr),
        "DifferenceAverage": diff_avg,
        "DifferenceEntropy": _entropy(p_diff),
        "DifferenceVariance": diff_var,
        "InverseVariance": inv_var,
        "JointEntropy": hxy,
        "SumEntropy": _entropy(p_sum),
        "Imc2": imc2,
        "MaximumProbability": float(p.max()),
    }


_GLCM_EMPTY = dict(zip(GLCM_NAMES, (1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0)))


def _average(per_direction: Iterable[Dict[str, float]], names, empty) -> Dict[str, float]:
    rows = list(per_direction)
    if not rows:
        return dict(empty)
    return {n: float(np.mean([r[n] for r in rows])) for n in names}


def glcm_features(region: DiscretizedRegion, offsets: Sequence = OFFSETS) -> Dict[str, float]:
    mats = glcm_matrices(region, offsets)
    rows = []
    for m in mats:
        total = m.sum()
        if total > 0:
            rows.append(glcm_from_probabilities(m / total))
    return _average(rows, GLCM_NAMES, _GLCM_EMPTY)


# ---------------------------------------------------------------------------
# GLRLM
# ---------------------------------------------------------------------------


def glrlm_matrices(region: DiscretizedRegion, offsets: Sequence = OFFSETS) -> list:
    """Run-length counts per direction, each shape (Ng, max_run)."""
    ng = region.n_levels
    padded = _padded(region.levels)
    flat = padded.ravel()
    strides = np.array(padded.strides) // padded.itemsize
    max_run = max(region.levels.shape)
    core_idx = np.arange(flat.size).reshape(padded.shape)[1:-1, 1:-1, 1:-1]
    out = []
    for d in offsets:
        step = int(np.dot(strides, d))
        a, prev = _shifted_pair(padded, tuple(-x for x in d))
        starts = core_idx[(a > 0) & (a != prev)]
        lvl = flat[starts]
        length = np.ones(starts.size, dtype=np.int64)
        # walk every open run one step at a time; the zero padding ends all runs
        open_runs = np.arange(starts.size)
        cur = starts.copy()
        while open_runs.size:
            cur = cur + step
            cont = flat[cur] == lvl[open_runs]
            open_runs, cur = open_runs[cont], cur[cont]
            length[open_runs] += 1
        counts = np.zeros((ng, max_run))
        np.add.at(counts, (lvl - 1, length - 1), 1.0)
        out.append(counts)
    return out


def glrlm_from_matrix(r: np.ndarray, n_voxels: int) -> Dict[str, float]:
    ng, nl = r.shape
    nr = r.sum()
    p = r / nr
    i = np.arange(1, ng + 1, dtype=np.float64)[:, None]
    l = np.arange(1, nl + 1, dtype=np.float64)[None, :]
    mu = float(np.sum(p * l))
    return {
        "RunEntropy": _entropy(p.ravel()),
        "RunVariance": float(np.sum(p * (l - mu) ** 2)),
        "RunPercentage": float(nr / n_voxels),
        "RunLengthNonUniformity": float(np.sum(r.sum(axis=0) ** 2) / nr),
        "LongRunHighGrayLevelEmphasis": float(np.sum(r * i**2 * l**2) / nr),
    }


def glrlm_features(region: DiscretizedRegion, offsets: Sequence = OFFSETS) -> Dict[str, float]:
    nv = region.n_voxels
    rows = [glrlm_from_matrix(r, nv) for r in glrlm_matrices(region, offsets) if r.sum() > 0]
    return _average(rows, GLRLM_NAMES, dict.fromkeys(GLRLM_NAMES, 0.0))


# ---------------------------------------------------------------------------
# GLSZM
# ---------------------------------------------------------------------------


def glszm_matrix(region: DiscretizedRegion) -> np.ndarray:
    """Zone counts, shape (Ng, n_voxels): entry (i-1, s-1) counts zones of level i and size s."""
    ng = region.n_levels
    nv = region.n_voxels
    out = np.zeros((ng, nv))
    struct = np.ones((3, 3, 3), dtype=bool)
    for g in range(1, ng + 1):
        labels, n = ndimage.label(region.levels == g, structure=struct)
        if n == 0:
            continue
        sizes = np.bincount(labels.ravel())[1:]
        np.add.at(out[g - 1], sizes - 1, 1.0)
    return out


def glszm_from_matrix(s: np.ndarray, n_voxels: int) -> Dict[str, float]:
    ng, ns = s.shape
    nz = s.sum()
    p = s / nz
    i = np.arange(1, ng + 1, dtype=np.float64)[:, None]
    sz = np.arange(1, ns + 1, dtype=np.float64)[None, :]
    mu = float(np.sum(p * i))
    return {
        "GrayLevelNonUniformityNormalized": float(np.sum(s.sum(axis=1) ** 2) / nz**2),
        "GrayLevelVariance": float(np.sum(p * (i - mu) ** 2)),
        "ZoneEntropy": _entropy(p.ravel()),
        "ZonePercentage": float(nz / n_voxels),
        "SizeZoneNonUniformityNormalized": float(np.sum(s.sum(axis=0) ** 2) / nz**2),
        "SmallAreaEmphasis": float(np.sum(s / sz**2) / nz),
        "SmallAreaHighGrayLevelEmphasis": float(np.sum(s * i**2 / sz**2) / nz),
        "HighGrayLevelZoneEmphasis": float(np.sum(s * i**2) / nz),
    }


def glszm_features(region: DiscretizedRegion) -> Dict[str, float]:
    return glszm_from_matrix(glszm_matrix(region), region.n_voxels)


# ---------------------------------------------------------------------------
# NGTDM and GLDM (26-neighbourhood restricted to the mask)
# ---------------------------------------------------------------------------


def _neighbour_sums(values: np.ndarray) -> np.ndarray:
    return ndimage.convolve(values, _NEIGHBOURS_26, mode="constant", cval=0)


def ngtdm_matrix(region: DiscretizedRegion) -> Tuple[np.ndarray, np.ndarray]:
    """Return (n_i, s_i) for grey levels 1..Ng."""
    ng = region.n_levels
    lv = region.levels
    inside = lv > 0
    count = _neighbour_sums(inside.astype(np.int64))
    total = _neighbour_sums(lv)
    valid = inside & (count > 0)
    g = lv[valid]
    mean_nb = total[valid] / count[valid]
    n = np.bincount(g, minlength=ng + 1)[1:].astype(np.float64)
    s = np.bincount(g, weights=np.abs(g - mean_nb), minlength=ng + 1)[1:]
    return n, s


def ngtdm_features(region: DiscretizedRegion) -> Dict[str, float]:
    n, s = ngtdm_matrix(region)
    nvc = n.sum()
    s_total = s.sum()
    if nvc == 0 or s_total == 0:
        return {"Strength": 0.0}
    p = n / nvc
    levels = np.arange(1, len(n) + 1, dtype=np.float64)
    present = p > 0
    pi, li = p[present], levels[present]
    num = np.sum((pi[:, None] + pi[None, :]) * (li[:, None] - li[None, :]) ** 2)
    return {"Strength": float(num / s_total)}


def gldm_matrix(region: DiscretizedRegion) -> np.ndarray:
    """Dependence counts with alpha=0, shape (Ng, 27); column d-1 is dependence d."""
    ng = region.n_levels
    lv = region.levels
    dep = np.zeros(lv.shape, dtype=np.int64)
    for g in range(1, ng + 1):
        same = lv == g
        if same.any():
            dep[same] = _neighbour_sums(same.astype(np.int64))[same] + 1
    inside = lv > 0
    out = np.zeros((ng, 27))
    np.add.at(out, (lv[inside] - 1, dep[inside] - 1), 1.0)
    return out


def gldm_features(region: DiscretizedRegion) -> Dict[str, float]:
    d = gldm_matrix(region)
    nz = d.sum()
    dep = np.arange(1, d.shape[1] + 1, dtype=np.float64)
    return {
        "DependenceNonUniformity": float(np.sum(d.sum(axis=0) ** 2) / nz),
        "SmallDependenceEmphasis": float(np.sum(d / dep**2) / nz),
    }
