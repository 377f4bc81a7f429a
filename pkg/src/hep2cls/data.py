"""Cell records: dataset loading, synthetic phantoms and feature export."""

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import LoadError
from .labels import CLASSES, TAGS, ClassLabel

__all__ = [
    "CellRecord",
    "DatasetManifest",
    "PhantomSpec",
    "load_dataset",
    "phantom_specs",
    "generate_phantom",
    "generate_phantoms",
    "write_dataset",
    "FeatureTable",
    "extract_features",
    "export_features",
    "read_features",
    "save_model",
    "load_model",
]

INTERMEDIATE_SCALE = 0.35
INTERMEDIATE_NOISE_FACTOR = 1.25


@dataclass(frozen=True)
class CellRecord:
    id: str
    image: np.ndarray
    mask: np.ndarray
    label: ClassLabel
    tag: str = "positive"

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise LoadError(self.id, "image %r and mask %r differ in shape"
                            % (self.image.shape, self.mask.shape))
        if not np.asarray(self.mask, dtype=bool).any():
            raise LoadError(self.id, "mask has no foreground pixels")
        if self.tag not in TAGS:
            raise LoadError(self.id, "unknown intensity tag %r" % (self.tag,))


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple = ()
    skipped: tuple = ()  # (id, reason) pairs

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def counts(self):
        """``{(label, tag): count}`` for every class/tag combination."""
        out = {(lab, tag): 0 for lab in ClassLabel for tag in TAGS}
        for r in self.records:
            out[(r.label, r.tag)] += 1
        return out

    def class_counts(self):
        out = {lab: 0 for lab in ClassLabel}
        for r in self.records:
            out[r.label] += 1
        return out


# ---------------------------------------------------------------------------
# loading


def _read_png(path):
    from PIL import Image

    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim == 3:
        arr = arr[..., :3].mean(axis=2)
    return arr


def _to_unit(arr):
    if arr.dtype == np.uint16 or arr.max(initial=0) > 255:
        return arr.astype(np.float64) / 65535.0
    if arr.dtype == np.bool_:
        return arr.astype(np.float64)
    return arr.astype(np.float64) / 255.0


def load_dataset(root):
    """Read ``gt.csv`` (columns id, label, intensity) and the matching
    ``<id>.png`` / ``<id>_mask.png`` pairs below ``root``.

    Images are scaled by their bit depth into [0, 1].  Records that fail
    validation are reported in ``manifest.skipped`` rather than raised.
    """
    root = Path(root)
    gt = root / "gt.csv"
    if not gt.exists():
        return DatasetManifest()
    records, skipped = [], []
    with open(gt, newline="") as fh:
        for row in csv.DictReader(fh):
            rid = row.get("id", "").strip()
            try:
                records.append(_load_record(root, rid, row))
            except LoadError as exc:
                skipped.append((exc.record_id, exc.reason))
    records.sort(key=lambda r: r.id)
    return DatasetManifest(tuple(records), tuple(skipped))


def _load_record(root, rid, row):
    try:
        label = ClassLabel.parse(row.get("label", ""))
    except ValueError as exc:
        raise LoadError(rid, str(exc)) from None
    tag = row.get("intensity", "positive").strip().lower()
    if tag not in TAGS:
        raise LoadError(rid, "unknown intensity tag %r" % (tag,))
    img_path, mask_path = root / ("%s.png" % rid), root / ("%s_mask.png" % rid)
    if not img_path.exists():
        raise LoadError(rid, "missing image %s" % img_path)
    if not mask_path.exists():
        raise LoadError(rid, "missing mask %s" % mask_path)
    try:
        image = _to_unit(_read_png(img_path))
        mask = _read_png(mask_path) > 0
    except OSError as exc:
        raise LoadError(rid, "unreadable png: %s" % exc) from None
    return CellRecord(rid, image, mask, label, tag)


def write_dataset(manifest, root):
    """Write records as 16-bit PNGs plus ``gt.csv`` (the loader's layout)."""
    from PIL import Image

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "gt.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "intensity"])
        for r in manifest.records:
            img16 = np.round(np.clip(r.image, 0, 1) * 65535).astype(np.uint16)
            Image.fromarray(img16).save(root / ("%s.png" % r.id))
            Image.fromarray((r.mask.astype(np.uint8) * 255)).save(root / ("%s_mask.png" % r.id))
            w.writerow([r.id, r.label.name, r.tag])


# ---------------------------------------------------------------------------
# phantoms


@dataclass(frozen=True)
class PhantomSpec:
    label: ClassLabel
    size: int = 70
    noise: float = 0.02
    contrast: str = "positive"
    seed: int = 0


def phantom_specs(n_per_class, seed=0, intermediate_fraction=0.5, size=70, noise=0.02):
    """Specs for ``n_per_class`` phantoms of every class, the first
    ``round(n * intermediate_fraction)`` of each class at intermediate
    contrast.  Seeds are drawn from one generator so the whole set is
    reproducible from ``seed``."""
    ss = np.random.SeedSequence(seed)
    child = ss.generate_state(n_per_class * len(CLASSES))
    n_int = int(round(n_per_class * intermediate_fraction))
    specs = []
    k = 0
    for lab in ClassLabel:
        for i in range(n_per_class):
            contrast = "intermediate" if i < n_int else "positive"
            specs.append(PhantomSpec(lab, size, noise, contrast, int(child[k])))
            k += 1
    return specs


def _disk(shape, center, radius):
    rr, cc = np.ogrid[:shape[0], :shape[1]]
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius ** 2


def _place(rng, radii, sampler, min_gap, tries=4000):
    """Rejection-sample non-overlapping circles, one per entry of ``radii``.

    ``sampler(u)`` maps a uniform 2-vector to a candidate centre; circles
    keep at least ``min_gap`` pixels between their rims.  Returns fewer
    circles than requested only if ``tries`` runs out.
    """
    n = len(radii)
    centers = np.empty((n, 2))
    k = 0
    for _ in range(tries):
        if k == n:
            break
        c = sampler(rng.uniform(0, 1, size=2))
        if k:
            d = np.hypot(*(centers[:k] - c).T)
            if np.any(d < radii[:k] + radii[k] + min_gap):
                continue
        centers[k] = c
        k += 1
    return list(zip(centers[:k], radii[:k]))


def _annulus_sampler(center, r_min, r_max, angle=None, spread=np.pi):
    """Area-uniform points in an annulus, optionally restricted to the
    sector ``angle +- spread``."""
    center = np.asarray(center, dtype=float)

    def sample(u):
        rad = np.sqrt(u[0] * (r_max ** 2 - r_min ** 2) + r_min ** 2)
        theta = 2 * np.pi * u[1] if angle is None else angle + (2 * u[1] - 1) * spread
        return center + rad * np.array([np.sin(theta), np.cos(theta)])

    return sample


def _paint(canvas, placed, level):
    for c, r in placed:
        r0, r1 = max(int(c[0] - r) - 1, 0), int(c[0] + r) + 2
        c0, c1 = max(int(c[1] - r) - 1, 0), int(c[1] + r) + 2
        win = canvas[r0:r1, c0:c1]
        win[_disk(win.shape, (c[0] - r0, c[1] - c0), r)] = level


def generate_phantom(spec, rid=None):
    """One synthetic cell exhibiting the visual traits of ``spec.label``.

    The mask is a disk near the image centre.  H is a filled bright disk,
    S a bright disk with 5-15 dark holes, N carries 2-6 large bright blobs,
    C 40-60 small speckles, NM a bright annulus on the mask boundary with a
    dim interior and G 3-8 blobs just outside the mask on one side.
    Intermediate phantoms are scaled by 0.35 with 1.25x noise.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.size
    shape = (size, size)
    radius = rng.uniform(0.29, 0.33) * size
    center = np.array([size / 2, size / 2]) + rng.uniform(-1.5, 1.5, size=2)
    mask = _disk(shape, center, radius)
    bright = rng.uniform(0.75, 0.9)
    dim = rng.uniform(0.08, 0.16)
    sig = np.zeros(shape)
    lab = ClassLabel(spec.label)

    if lab == ClassLabel.H:
        sig[mask] = bright
    elif lab == ClassLabel.S:
        sig[mask] = bright
        n = int(rng.integers(5, 16))
        radii = rng.uniform(1.6, 2.8, size=n)
        holes = _place(rng, radii, _annulus_sampler(center, 0, radius - 6.0), 2.5)
        _paint(sig, holes, dim)
    elif lab == ClassLabel.N:
        sig[mask] = dim
        n = int(rng.integers(2, 7))
        radii = rng.uniform(3.0, 4.5, size=n)
        blobs = _place(rng, radii, _annulus_sampler(center, 0, radius - 6.5), 3.0)
        _paint(sig, blobs, bright)
    elif lab == ClassLabel.C:
        sig[mask] = dim
        n = int(rng.integers(40, 61))
        radii = np.full(n, 1.2)
        speckles = _place(rng, radii, _annulus_sampler(center, 0, radius - 2.5), 1.6, tries=20000)
        _paint(sig, speckles, bright)
    elif lab == ClassLabel.NM:
        sig[mask] = dim
        rr = np.hypot(*(np.indices(shape) - center[:, None, None]))
        sig[(rr >= radius - 3.5) & (rr <= radius + 1.0)] = bright
    elif lab == ClassLabel.G:
        sig[mask] = dim * 0.5
        n = int(rng.integers(3, 9))
        radii = rng.uniform(2.5, 3.8, size=n)
        sampler = _annulus_sampler(center, radius + 3.5, radius + 6.0,
                                   angle=rng.uniform(0, 2 * np.pi), spread=0.45 * np.pi)
        blobs = _place(rng, radii, sampler, 1.0)
        _paint(sig, blobs, bright)

    sig = ndimage.gaussian_filter(sig, 0.6)
    noise = spec.noise
    if spec.contrast == "intermediate":
        sig = sig * INTERMEDIATE_SCALE
        noise = noise * INTERMEDIATE_NOISE_FACTOR
    img = np.clip(sig + rng.normal(0.0, noise, size=shape), 0.0, 1.0)
    rid = rid or "ph-%s-%d" % (lab.name, spec.seed)
    return CellRecord(rid, img, mask, lab, spec.contrast)


def generate_phantoms(specs):
    records = [generate_phantom(s, "ph%05d-%s" % (i, ClassLabel(s.label).name))
               for i, s in enumerate(specs)]
    return DatasetManifest(tuple(records))


# ---------------------------------------------------------------------------
# feature tables


@dataclass
class FeatureTable:
    """Feature matrices for a set of cells, one row per record."""

    ids: np.ndarray
    labels: np.ndarray
    tags: np.ndarray
    matrices: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __len__(self):
        return len(self.ids)

    def subset(self, idx):
        idx = np.asarray(idx)
        return FeatureTable(self.ids[idx], self.labels[idx], self.tags[idx],
                            {k: v[idx] for k, v in self.matrices.items()},
                            [self.flags[i] for i in idx] if self.flags else [])


def extract_features(manifest, cfg=None, kinds=("cs", "texture", "combined", "scalar")):
    """Run every extractor over a manifest (records sorted by id)."""
    from .features import ExtractorConfig, extract_all

    cfg = cfg or ExtractorConfig()
    records = sorted(manifest.records, key=lambda r: r.id)
    rows = {k: [] for k in kinds}
    flags = []
    for r in records:
        vecs = extract_all(r.image, r.mask, cfg)
        for k in kinds:
            rows[k].append(vecs[k].values)
        flags.append(vecs["cs"].flags | vecs["texture"].flags)
    from .features import FEATURE_LENGTHS

    mats = {k: (np.vstack(v) if v else np.zeros((0, FEATURE_LENGTHS[k]))) for k, v in rows.items()}
    return FeatureTable(
        ids=np.array([r.id for r in records], dtype=object),
        labels=np.array([int(r.label) for r in records], dtype=np.int64),
        tags=np.array([r.tag for r in records], dtype=object),
        matrices=mats,
        flags=flags,
    )


def export_features(table, kind, path, cfg=None):
    """Write one feature matrix as CSV.

    Header: ``id, label`` then the layout's column names prefixed by the
    layout id.  Values use 9 significant digits.
    """
    from .features import LAYOUT_IDS, layout_names

    path = Path(path)
    X = table.matrices[kind]
    header = ["id", "label"] + ["%s:%s" % (LAYOUT_IDS[kind], n) for n in layout_names(kind, cfg)]
    order = np.argsort(table.ids.astype(str), kind="stable")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in order:
                w.writerow([table.ids[i], ClassLabel(int(table.labels[i])).name]
                           + ["%.9g" % v for v in X[i]])
    except OSError as exc:
        raise OSError("cannot write features to %s: %s" % (path, exc)) from exc
    return path


def read_features(path):
    """Inverse of :func:`export_features`: (ids, labels, matrix, header)."""
    with open(os.fspath(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    ids = np.array([r[0] for r in body], dtype=object)
    labels = np.array([int(ClassLabel.parse(r[1])) for r in body], dtype=np.int64)
    X = np.array([[float(v) for v in r[2:]] for r in body]).reshape(len(body), len(header) - 2)
    return ids, labels, X, header


# ---------------------------------------------------------------------------
# model persistence

MODEL_FORMAT = "hep2cls.framework"
MODEL_VERSION = 1
MANIFEST_NAME = "manifest.json"


def _norm_to_dict(norm):
    if norm is None:
        return None
    return {"mean": norm.mean.tolist(), "std": norm.std.tolist(), "constant": norm.constant.tolist(),
            "fitted_on": norm.fitted_on}


def _norm_from_dict(d):
    from .features import NormalizationStats

    if d is None:
        return None
    return NormalizationStats(mean=np.asarray(d["mean"], dtype=np.float64),
                              std=np.asarray(d["std"], dtype=np.float64),
                              constant=np.asarray(d["constant"], dtype=bool), fitted_on=d["fitted_on"])


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh)


def _read_json(path):
    from .errors import ModelFormatError

    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ModelFormatError("missing model file %s" % path) from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError("corrupt model file %s: %s" % (path, exc)) from None


def _save_blocks(blocks, root, prefix):
    from .svm import svm_to_dict

    out = []
    for k, blk in enumerate(blocks):
        name = "%s%02d.json" % (prefix, k)
        _write_json(root / name, svm_to_dict(blk.model))
        out.append({"pos": blk.pos, "neg": blk.neg, "features": None if blk.features is None else list(blk.features),
                    "val_score": blk.val_score, "file": name})
    return out


def _load_blocks(entries, root):
    from .frameworks import BinaryBlock
    from .svm import svm_from_dict

    return tuple(BinaryBlock(int(e["pos"]), int(e["neg"]), svm_from_dict(_read_json(root / e["file"])),
                             None if e["features"] is None else tuple(int(i) for i in e["features"]),
                             float(e["val_score"]))
                 for e in entries)


def save_model(model, path):
    """Write a trained framework as a directory: ``manifest.json`` plus one
    JSON file per binary SVM (or one for a tree ensemble)."""
    from .trees import ensemble_to_dict

    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "classes": list(model.classes),
        "layout": model.layout,
        "resolver": model.resolver,
        "norm": _norm_to_dict(model.norm),
        "blocks": _save_blocks(model.blocks, root, "block"),
        "second": None,
        "ensemble": None,
        "meta": model.meta,
    }
    if model.second is not None:
        manifest["second"] = {"layout": model.second.layout, "norm": _norm_to_dict(model.second.norm),
                              "blocks": _save_blocks(model.second.blocks, root, "second")}
    if model.ensemble is not None:
        _write_json(root / "ensemble.json", ensemble_to_dict(model.ensemble))
        manifest["ensemble"] = "ensemble.json"
    # manifest last, so an interrupted save never looks complete
    _write_json(root / MANIFEST_NAME, manifest)
    return root


def load_model(path):
    """Inverse of :func:`save_model`.

    Raises
    ------
    ModelFormatError
        On a missing, truncated or corrupt file, or an unknown version.
    """
    from .errors import ModelFormatError
    from .frameworks import KINDS, RESOLVERS, FrameworkModel, PairwiseResolver
    from .trees import ensemble_from_dict

    root = Path(path)
    m = _read_json(root / MANIFEST_NAME)
    if not isinstance(m, dict) or m.get("format") != MODEL_FORMAT:
        raise ModelFormatError("%s is not a saved framework" % root)
    if m.get("version") != MODEL_VERSION:
        raise ModelFormatError("unsupported framework format version %r (expected %d)"
                               % (m.get("version"), MODEL_VERSION))
    try:
        if m["kind"] not in KINDS or m["resolver"] not in RESOLVERS:
            raise ModelFormatError("unknown framework kind or resolver")
        second = None
        if m["second"] is not None:
            s = m["second"]
            second = PairwiseResolver(_load_blocks(s["blocks"], root), _norm_from_dict(s["norm"]), s["layout"])
        ensemble = None
        if m["ensemble"] is not None:
            ensemble = ensemble_from_dict(_read_json(root / m["ensemble"]))
        return FrameworkModel(kind=m["kind"], classes=tuple(int(c) for c in m["classes"]), layout=m["layout"],
                              norm=_norm_from_dict(m["norm"]), blocks=_load_blocks(m["blocks"], root),
                              resolver=m["resolver"], second=second, ensemble=ensemble, meta=m.get("meta") or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError("corrupt framework manifest in %s: %s" % (root, exc)) from None
