"""Feature extraction and z-score normalization.

Four fixed layouts are produced for every cell:

``cs`` (128)
    Class-specific scalars.  Each class contributes three scalars computed
    on the thresholded image at each of the 7 grid thresholds (6 x 3 x 7 =
    126), followed by the masked intensity mean and variance.
``texture`` (140)
    Six morphology scalars at 20 relative thresholds (120), four masked
    intensity statistics and 16 grey-level co-occurrence statistics.
``combined`` (177)
    The texture vector followed by the EACC, BAR, OAR, IAR and AOD slots of
    the class-specific vector and the masked mean and variance.
``scalar`` (20)
    The 18 class scalars evaluated once, at each class's own tuned
    threshold, plus masked mean and variance.  This is the pool from which
    the cascade framework picks small feature subsets.

Column names are available through :func:`layout_names`.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from . import imaging
from .errors import DegenerateMaskError, DimensionError, InsufficientDataError, ParameterError
from .labels import ClassLabel

__all__ = [
    "SCALAR_KINDS",
    "CLASS_SCALARS",
    "LAYOUT_IDS",
    "FEATURE_LENGTHS",
    "ExtractorConfig",
    "FeatureVector",
    "NormalizationStats",
    "RoiSet",
    "preprocess",
    "area_ratio",
    "compute_scalar",
    "extract_class_specific_vector",
    "extract_scalar_pool",
    "extract_texture_vector",
    "build_combined_vector",
    "extract_all",
    "layout_names",
    "fit_zscore",
    "apply_zscore",
]

SCALAR_KINDS = (
    "MOA", "ACC", "MP", "HN", "HA", "EN", "AOA", "CC",
    "BAR", "IAR", "EACC", "OAR", "AOD", "MaskedMean", "MaskedVariance",
)

CLASS_SCALARS = {
    ClassLabel.H: ("MOA", "ACC", "MP"),
    ClassLabel.S: ("HN", "HA", "EN"),
    ClassLabel.N: ("MOA", "AOA", "CC"),
    ClassLabel.C: ("MOA", "AOA", "CC"),
    ClassLabel.NM: ("BAR", "IAR", "EACC"),
    ClassLabel.G: ("OAR", "EACC", "AOD"),
}

# (owner class, scalar) slots copied from the cs layout into the combined one
COMBINED_CS_SLOTS = (
    (ClassLabel.NM, "EACC"),
    (ClassLabel.NM, "BAR"),
    (ClassLabel.G, "OAR"),
    (ClassLabel.NM, "IAR"),
    (ClassLabel.G, "AOD"),
)

TEXTURE_MORPH = ("objects", "area", "hull_area", "eccentricity", "euler", "max_perimeter")
TEXTURE_INTENSITY = ("mean", "std", "entropy", "range")
GLCM_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
GLCM_PROPS = ("contrast", "correlation", "energy", "homogeneity")
N_TEXTURE_LEVELS = 20
GLCM_LEVELS = 8
ENTROPY_BINS = 32

LAYOUT_IDS = {
    "cs": "cs-v1",
    "texture": "texture-v1",
    "combined": "combined-v1",
    "scalar": "scalar-v1",
}

DEFAULT_GRID = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)


def _per_class(value):
    return {lab: value for lab in ClassLabel}


@dataclass(frozen=True)
class ExtractorConfig:
    """Parameters of the class-specific extractor.

    ``gamma`` and ``threshold`` map each :class:`ClassLabel` to the gamma
    exponent and binarization threshold used for that class's scalars.
    """

    gamma: dict = field(default_factory=lambda: _per_class(1.5))
    threshold: dict = field(default_factory=lambda: _per_class(0.45))
    threshold_grid: tuple = DEFAULT_GRID
    k_b: int = 5
    k_i: int = 5
    k_o: int = 10
    connectivity: int = 8

    def __post_init__(self):
        grid = tuple(float(t) for t in self.threshold_grid)
        object.__setattr__(self, "threshold_grid", grid)
        if len(grid) != 7:
            raise ParameterError("threshold grid needs exactly 7 levels, got %d" % len(grid))
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ParameterError("threshold grid must be strictly increasing")
        if grid[0] < 0 or grid[-1] > 1:
            raise ParameterError("threshold grid must lie in [0, 1]")
        gamma = {ClassLabel(int(k)): float(v) for k, v in self.gamma.items()}
        thr = {ClassLabel(int(k)): float(v) for k, v in self.threshold.items()}
        for lab in ClassLabel:
            if lab not in gamma or not gamma[lab] > 0:
                raise ParameterError("gamma for %s must be positive" % lab.name)
            if lab not in thr or not 0 <= thr[lab] <= 1:
                raise ParameterError("threshold for %s must lie in [0, 1]" % lab.name)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "threshold", thr)
        for name in ("k_b", "k_i", "k_o"):
            if getattr(self, name) < 0:
                raise ParameterError("%s must be non-negative" % name)

    def to_dict(self):
        return {
            "gamma": {lab.name: v for lab, v in self.gamma.items()},
            "threshold": {lab.name: v for lab, v in self.threshold.items()},
            "threshold_grid": list(self.threshold_grid),
            "k_b": self.k_b,
            "k_i": self.k_i,
            "k_o": self.k_o,
            "connectivity": self.connectivity,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            gamma={ClassLabel[k]: v for k, v in d["gamma"].items()},
            threshold={ClassLabel[k]: v for k, v in d["threshold"].items()},
            threshold_grid=tuple(d["threshold_grid"]),
            k_b=d["k_b"], k_i=d["k_i"], k_o=d["k_o"],
            connectivity=d.get("connectivity", 8),
        )


@dataclass(frozen=True)
class FeatureVector:
    kind: str
    values: np.ndarray
    layout: str
    flags: frozenset = frozenset()

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray
    fitted_on: str = "train"


class RoiSet:
    """The four ROI masks of one cell, with degenerate regions replaced by
    the full mask.  ``flags`` names every replaced region."""

    def __init__(self, cell_mask, cfg):
        cell_mask = np.asarray(cell_mask, dtype=bool)
        self.full = imaging.make_roi_mask(cell_mask, "full")
        flags = set()

        def build(kind, k):
            try:
                roi = imaging.make_roi_mask(cell_mask, kind, k)
            except DegenerateMaskError:
                roi = None
            if roi is None or not roi.any():
                flags.add(kind)
                return self.full
            return roi

        self.ring = build("ring", cfg.k_b)
        self.inner = build("inner", cfg.k_i)
        self.outer = build("outer", cfg.k_o)
        # AOD looks at objects in and around the nucleus
        self.around = self.full | self.outer
        self.flags = frozenset(flags)


def preprocess(img, gamma):
    """Rescale to [0, 1] and apply the gamma transform (no masking)."""
    return imaging.gamma_transform(imaging.rescale_to_unit(img), gamma)


def area_ratio(bin_img, roi):
    """Fraction of ROI pixels that are foreground in ``bin_img``."""
    roi = np.asarray(roi, dtype=bool)
    n = int(roi.sum())
    if n == 0:
        raise DegenerateMaskError("area ratio over an empty ROI")
    return float(np.count_nonzero(np.asarray(bin_img, dtype=bool) & roi)) / n


def _binary_scalars(b, rois, connectivity):
    """All 13 binary-derived scalars for one thresholded image."""
    inside = b & rois.full
    _, areas, perims = imaging._component_stats(inside, connectivity)
    n = areas.size
    holes = imaging.count_holes(inside, connectivity)
    acc = int(areas.sum())
    return {
        "MOA": float(areas.max()) if n else 0.0,
        "ACC": float(acc),
        "MP": float(perims.max()) if n else 0.0,
        "HN": float(holes),
        "HA": float(np.count_nonzero(rois.full) - acc),
        "EN": float(n - holes),
        "AOA": float(areas.mean()) if n else 0.0,
        "CC": float(n),
        "BAR": area_ratio(b, rois.ring),
        "IAR": area_ratio(b, rois.inner),
        "EACC": float(np.count_nonzero(b & rois.inner)),
        "OAR": area_ratio(b, rois.outer),
        "AOD": imaging.average_object_distance(b & rois.around),
    }


def _masked_stats(img, full):
    vals = imaging.rescale_to_unit(img)[full]
    return float(vals.mean()), float(vals.var())


def compute_scalar(kind, img, cell_mask, T, cfg=None, rois=None):
    """One class-specific scalar.

    ``img`` is the preprocessed (rescaled, gamma-transformed) cell image.
    It is not masked beforehand because ring, outer and AOD regions extend
    past the cell mask; each scalar applies its own ROI.  ``MaskedMean`` and
    ``MaskedVariance`` ignore ``T`` and describe the intensities inside the
    cell mask.
    """
    cfg = cfg or ExtractorConfig()
    if kind not in SCALAR_KINDS:
        raise ParameterError("unknown scalar kind %r" % (kind,))
    img = np.asarray(img, dtype=np.float64)
    cell_mask = np.asarray(cell_mask, dtype=bool)
    if img.shape != cell_mask.shape:
        raise DimensionError("image %r and mask %r differ in shape" % (img.shape, cell_mask.shape))
    rois = rois or RoiSet(cell_mask, cfg)
    if kind == "MaskedMean":
        return _masked_stats(img, rois.full)[0]
    if kind == "MaskedVariance":
        return _masked_stats(img, rois.full)[1]
    b = imaging.threshold_binary(img, T)
    return _binary_scalars(b, rois, cfg.connectivity)[kind]


class _CellScalars:
    """Caches preprocessed images and per-threshold scalar tables."""

    def __init__(self, img, cell_mask, cfg):
        self.img = np.asarray(img, dtype=np.float64)
        self.cell_mask = np.asarray(cell_mask, dtype=bool)
        if self.img.shape != self.cell_mask.shape:
            raise DimensionError("image %r and mask %r differ in shape"
                                 % (self.img.shape, self.cell_mask.shape))
        self.cfg = cfg
        self.rois = RoiSet(self.cell_mask, cfg)
        self._pre = {}
        self._tables = {}

    def table(self, gamma, T):
        key = (gamma, T)
        if key not in self._tables:
            if gamma not in self._pre:
                self._pre[gamma] = preprocess(self.img, gamma)
            b = imaging.threshold_binary(self._pre[gamma], T)
            self._tables[key] = _binary_scalars(b, self.rois, self.cfg.connectivity)
        return self._tables[key]

    def masked_stats(self):
        return _masked_stats(self.img, self.rois.full)


def extract_class_specific_vector(img, cell_mask, cfg=None, _cache=None):
    """128-dim class-specific vector (see module docstring for layout)."""
    cfg = cfg or ExtractorConfig()
    cell = _cache or _CellScalars(img, cell_mask, cfg)
    values = []
    for lab in ClassLabel:
        for kind in CLASS_SCALARS[lab]:
            for T in cfg.threshold_grid:
                values.append(cell.table(cfg.gamma[lab], T)[kind])
    values.extend(cell.masked_stats())
    return FeatureVector("cs", np.asarray(values), LAYOUT_IDS["cs"], cell.rois.flags)


def extract_scalar_pool(img, cell_mask, cfg=None, _cache=None):
    """20 scalars: each class triplet at that class's threshold, plus the
    masked mean and variance."""
    cfg = cfg or ExtractorConfig()
    cell = _cache or _CellScalars(img, cell_mask, cfg)
    values = []
    for lab in ClassLabel:
        table = cell.table(cfg.gamma[lab], cfg.threshold[lab])
        values.extend(table[kind] for kind in CLASS_SCALARS[lab])
    values.extend(cell.masked_stats())
    return FeatureVector("scalar", np.asarray(values), LAYOUT_IDS["scalar"], cell.rois.flags)


def _hull_area(b):
    """Area of the convex hull of all foreground pixels (pixel squares)."""
    edge = imaging.boundary_pixels(b)
    rows, cols = np.nonzero(edge)
    if rows.size == 0:
        return 0.0
    corners = np.concatenate([
        np.column_stack([rows + dr, cols + dc]) for dr in (0, 1) for dc in (0, 1)
    ]).astype(np.float64)
    return float(ConvexHull(corners).volume)


def _mean_eccentricity(labels, n):
    """Mean eccentricity of the ellipses with the same second central
    moments as each component."""
    if n == 0:
        return 0.0
    rows, cols = np.nonzero(labels)
    lab = labels[rows, cols]
    cnt = np.bincount(lab, minlength=n + 1)[1:].astype(np.float64)

    def mean_of(w):
        return np.bincount(lab, weights=w, minlength=n + 1)[1:] / cnt

    mr, mc = mean_of(rows.astype(np.float64)), mean_of(cols.astype(np.float64))
    vr = mean_of(rows.astype(np.float64) ** 2) - mr ** 2
    vc = mean_of(cols.astype(np.float64) ** 2) - mc ** 2
    cov = mean_of((rows * cols).astype(np.float64)) - mr * mc
    half_tr = (vr + vc) / 2
    disc = np.sqrt(np.maximum(((vr - vc) / 2) ** 2 + cov ** 2, 0.0))
    l1 = half_tr + disc
    l2 = np.maximum(half_tr - disc, 0.0)
    ecc = np.where(l1 > 1e-12, np.sqrt(np.clip(1 - l2 / np.where(l1 > 1e-12, l1, 1.0), 0, 1)), 0.0)
    return float(ecc.mean())


def _glcm_props(q, mask, offset, levels=GLCM_LEVELS):
    dr, dc = offset
    h, w = q.shape
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    a = q[r0:r1, c0:c1]
    b = q[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
    valid = mask[r0:r1, c0:c1] & mask[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
    i, j = a[valid], b[valid]
    if i.size == 0:
        return [0.0, 0.0, 0.0, 0.0]
    counts = np.bincount(i * levels + j, minlength=levels * levels).reshape(levels, levels)
    counts = counts + counts.T
    p = counts / counts.sum()
    ii, jj = np.indices(p.shape)
    contrast = float((p * (ii - jj) ** 2).sum())
    mu_i, mu_j = (p * ii).sum(), (p * jj).sum()
    sd_i = math.sqrt((p * (ii - mu_i) ** 2).sum())
    sd_j = math.sqrt((p * (jj - mu_j) ** 2).sum())
    if sd_i < 1e-12 or sd_j < 1e-12:
        corr = 1.0
    else:
        corr = float((p * (ii - mu_i) * (jj - mu_j)).sum() / (sd_i * sd_j))
    energy = float(math.sqrt((p ** 2).sum()))
    homog = float((p / (1.0 + (ii - jj) ** 2)).sum())
    return [contrast, corr, energy, homog]


def texture_levels(vals):
    """20 interior thresholds equally spaced between min and max."""
    lo, hi = float(vals.min()), float(vals.max())
    return lo + (hi - lo) * np.arange(1, N_TEXTURE_LEVELS + 1) / (N_TEXTURE_LEVELS + 1)


def extract_texture_vector(img, cell_mask, connectivity=8):
    """140-dim standard texture vector of the masked, rescaled cell."""
    cell_mask = np.asarray(cell_mask, dtype=bool)
    img = np.asarray(img, dtype=np.float64)
    if img.shape != cell_mask.shape:
        raise DimensionError("image %r and mask %r differ in shape" % (img.shape, cell_mask.shape))
    unit = imaging.rescale_to_unit(img)
    vals = unit[cell_mask]
    morph = np.zeros((len(TEXTURE_MORPH), N_TEXTURE_LEVELS))
    if vals.size:
        struct = imaging._structure(connectivity)
        for k, t in enumerate(texture_levels(vals)):
            b = (unit > t) & cell_mask
            labels, n = ndimage.label(b, structure=struct)
            if n == 0:
                continue
            flat = labels.ravel()
            areas = np.bincount(flat, minlength=n + 1)[1:]
            perims = np.bincount(flat[imaging.boundary_pixels(b).ravel()], minlength=n + 1)[1:]
            holes = imaging.count_holes(b, connectivity)
            morph[:, k] = (
                n,
                areas.sum(),
                _hull_area(b),
                _mean_eccentricity(labels, n),
                n - holes,
                perims.max(),
            )
    if vals.size:
        hist, _ = np.histogram(vals, bins=ENTROPY_BINS, range=(0.0, 1.0))
        p = hist[hist > 0] / vals.size
        entropy = float(-(p * np.log2(p)).sum()) + 0.0
        intensity = [vals.mean(), vals.std(), entropy, vals.max() - vals.min()]
    else:
        intensity = [0.0, 0.0, 0.0, 0.0]
    q = np.minimum((unit * GLCM_LEVELS).astype(np.int64), GLCM_LEVELS - 1)
    glcm = [v for off in GLCM_OFFSETS for v in _glcm_props(q, cell_mask, off)]
    values = np.concatenate([morph.ravel(), intensity, glcm])
    return FeatureVector("texture", values, LAYOUT_IDS["texture"])


def _combined_cs_indices():
    names = layout_names("cs")
    idx = []
    for lab, kind in COMBINED_CS_SLOTS:
        prefix = "%s.%s@" % (lab.name, kind)
        idx.extend(i for i, n in enumerate(names) if n.startswith(prefix))
    idx.extend([len(names) - 2, len(names) - 1])
    return np.asarray(idx)


def build_combined_vector(tex, cs):
    """Texture vector followed by the CS slots absent from it (177 values)."""
    if tex.kind != "texture" or cs.kind != "cs":
        raise DimensionError("expected a texture and a cs vector, got %s and %s" % (tex.kind, cs.kind))
    values = np.concatenate([tex.values, cs.values[_combined_cs_indices()]])
    return FeatureVector("combined", values, LAYOUT_IDS["combined"], tex.flags | cs.flags)


def extract_all(img, cell_mask, cfg=None):
    """All four layouts for one cell, sharing intermediate results."""
    cfg = cfg or ExtractorConfig()
    cell = _CellScalars(img, cell_mask, cfg)
    cs = extract_class_specific_vector(img, cell_mask, cfg, _cache=cell)
    pool = extract_scalar_pool(img, cell_mask, cfg, _cache=cell)
    tex = extract_texture_vector(img, cell_mask, cfg.connectivity)
    return {
        "cs": cs,
        "texture": tex,
        "combined": build_combined_vector(tex, cs),
        "scalar": pool,
    }


def layout_names(kind, cfg=None):
    """Column names of a layout, in vector order."""
    cfg = cfg or ExtractorConfig()
    if kind == "cs":
        names = ["%s.%s@%.2f" % (lab.name, s, T)
                 for lab in ClassLabel for s in CLASS_SCALARS[lab] for T in cfg.threshold_grid]
        return names + ["MaskedMean", "MaskedVariance"]
    if kind == "scalar":
        names = ["%s.%s" % (lab.name, s) for lab in ClassLabel for s in CLASS_SCALARS[lab]]
        return names + ["MaskedMean", "MaskedVariance"]
    if kind == "texture":
        names = ["tex.%s@%02d" % (m, k + 1) for m in TEXTURE_MORPH for k in range(N_TEXTURE_LEVELS)]
        names += ["tex.%s" % s for s in TEXTURE_INTENSITY]
        names += ["glcm.%s(%d,%d)" % (p, dr, dc) for dr, dc in GLCM_OFFSETS for p in GLCM_PROPS]
        return names
    if kind == "combined":
        cs_names = layout_names("cs", cfg)
        return layout_names("texture", cfg) + [cs_names[i] for i in _combined_cs_indices()]
    raise ParameterError("unknown feature kind %r" % (kind,))


FEATURE_LENGTHS = {k: len(layout_names(k)) for k in LAYOUT_IDS}


def fit_zscore(train_matrix, fitted_on="train"):
    """Column means and population standard deviations of the training rows."""
    X = np.asarray(train_matrix, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InsufficientDataError("z-score needs at least 2 training rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return NormalizationStats(mean=mean, std=std, constant=std < 1e-12, fitted_on=fitted_on)


def apply_zscore(stats, v):
    """Normalize a vector, matrix or FeatureVector; constant columns map to 0."""
    values = v.values if isinstance(v, FeatureVector) else v
    X = np.asarray(values, dtype=np.float64)
    if X.shape[-1] != stats.mean.shape[0]:
        raise DimensionError("vector length %d does not match stats length %d"
                             % (X.shape[-1], stats.mean.shape[0]))
    safe = np.where(stats.constant, 1.0, stats.std)
    Z = np.where(stats.constant, 0.0, (X - stats.mean) / safe)
    if isinstance(v, FeatureVector):
        return FeatureVector(v.kind, Z, v.layout, v.flags)
    return Z
