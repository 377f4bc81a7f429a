"""Grayscale preprocessing and binary morphology for masked cell images.

Images are plain numpy arrays: grayscale images are 2-D float arrays with
values in [0, 1], binary images are 2-D boolean arrays.  All functions are
pure and never modify their inputs.

Connectivity follows the usual complementary pair: foreground objects are
8-connected by default, background regions (holes) are 4-connected.
Pixels outside the image count as background.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateMaskError, DimensionError, ParameterError

__all__ = [
    "Component",
    "rescale_to_unit",
    "gamma_transform",
    "apply_mask",
    "threshold_binary",
    "label_components",
    "count_holes",
    "euler_number",
    "perimeter",
    "boundary_pixels",
    "dilate",
    "erode",
    "make_roi_mask",
    "average_object_distance",
    "ROI_KINDS",
]

ROI_KINDS = ("full", "ring", "inner", "outer")

_STRUCT = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True)
class Component:
    """A connected group of foreground pixels.

    ``pixels`` is an ``(area, 2)`` integer array of (row, col) coordinates
    in raster order.
    """

    pixels: np.ndarray
    area: int
    perimeter: int


def _as_binary(bin_img):
    bin_img = np.asarray(bin_img)
    if bin_img.ndim != 2:
        raise DimensionError("expected a 2-D binary image, got shape %r" % (bin_img.shape,))
    return bin_img.astype(bool, copy=False)


def _structure(connectivity):
    try:
        return _STRUCT[connectivity]
    except KeyError:
        raise ParameterError("connectivity must be 4 or 8, got %r" % (connectivity,)) from None


def rescale_to_unit(img):
    """Linearly map an image of any numeric range onto [0, 1].

    A constant image maps to all zeros.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.size == 0:
        raise DimensionError("cannot rescale an empty image")
    lo = img.min()
    hi = img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def gamma_transform(img, gamma):
    if not gamma > 0:
        raise ParameterError("gamma must be positive, got %r" % (gamma,))
    img = np.asarray(img, dtype=np.float64)
    return np.clip(img, 0.0, 1.0) ** gamma


def apply_mask(img, mask):
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask)
    if img.shape != mask.shape:
        raise DimensionError("image shape %r does not match mask shape %r" % (img.shape, mask.shape))
    return img * mask.astype(bool)


def threshold_binary(img, T):
    """Foreground where intensity is strictly greater than ``T``."""
    if not 0.0 <= T <= 1.0:
        raise ParameterError("threshold must lie in [0, 1], got %r" % (T,))
    return np.asarray(img) > T


def boundary_pixels(bin_img):
    """Foreground pixels with at least one background 4-neighbour.

    Off-image neighbours are background.
    """
    bin_img = _as_binary(bin_img)
    interior = ndimage.binary_erosion(bin_img, structure=_STRUCT[4], border_value=0)
    return bin_img & ~interior


def label_components(bin_img, connectivity=8):
    """Split the foreground into maximal connected components.

    Components are ordered by their first pixel in raster order, which is
    the smallest (row, col) pixel of each component.
    """
    bin_img = _as_binary(bin_img)
    labels, n = ndimage.label(bin_img, structure=_structure(connectivity))
    if n == 0:
        return []
    edge = boundary_pixels(bin_img)
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)
    perims = np.bincount(flat[edge.ravel()], minlength=n + 1)
    order = np.argsort(flat, kind="stable")
    rows, cols = np.unravel_index(order, labels.shape)
    coords = np.column_stack([rows, cols])
    starts = np.cumsum(areas)
    comps = []
    for lab in range(1, n + 1):
        pix = coords[starts[lab - 1]:starts[lab]]
        comps.append(Component(pixels=pix, area=int(areas[lab]), perimeter=int(perims[lab])))
    return comps


def _component_stats(bin_img, connectivity=8):
    """Areas and perimeters of all components without building pixel lists."""
    bin_img = _as_binary(bin_img)
    labels, n = ndimage.label(bin_img, structure=_structure(connectivity))
    if n == 0:
        return labels, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)[1:]
    perims = np.bincount(flat[boundary_pixels(bin_img).ravel()], minlength=n + 1)[1:]
    return labels, areas, perims


def count_holes(bin_img, connectivity=8):
    """Number of background regions that cannot reach the image border.

    Background connectivity is the complement of the foreground one
    (4 for 8-connected foreground and vice versa).
    """
    bin_img = _as_binary(bin_img)
    bg_conn = 4 if connectivity == 8 else 8
    labels, n = ndimage.label(~bin_img, structure=_structure(bg_conn))
    if n == 0:
        return 0
    border = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    touching = np.unique(border[border > 0])
    return int(n - touching.size)


def euler_number(bin_img, connectivity=8):
    """Number of objects minus number of holes."""
    bin_img = _as_binary(bin_img)
    _, n = ndimage.label(bin_img, structure=_structure(connectivity))
    return int(n - count_holes(bin_img, connectivity))


def perimeter(component, bin_img=None):
    """Boundary-pixel count of a component under the 4-neighbour rule.

    If ``bin_img`` is given the component is assumed to belong to it and the
    count is taken against the full image; otherwise the component's own
    pixel set is used, which gives the same answer for a maximal component.
    """
    pix = component.pixels
    if bin_img is None:
        shape = tuple(pix.max(axis=0) + 1)
        bin_img = np.zeros(shape, dtype=bool)
        bin_img[pix[:, 0], pix[:, 1]] = True
    edge = boundary_pixels(bin_img)
    return int(edge[pix[:, 0], pix[:, 1]].sum())


def _padded_edt(img, pad):
    padded = np.pad(img, pad, mode="constant", constant_values=False)
    return ndimage.distance_transform_edt(padded), pad


def dilate(bin_img, radius):
    """Dilation by a Euclidean disk of the given radius.

    A pixel is set if some foreground pixel lies within ``radius`` of it.
    """
    bin_img = _as_binary(bin_img)
    if radius <= 0:
        return bin_img.copy()
    if not bin_img.any():
        return np.zeros_like(bin_img)
    dist = ndimage.distance_transform_edt(~bin_img)
    return dist <= radius


def erode(bin_img, radius):
    """Erosion by a Euclidean disk; off-image pixels are background."""
    bin_img = _as_binary(bin_img)
    if radius <= 0:
        return bin_img.copy()
    pad = int(np.ceil(radius)) + 1
    dist, pad = _padded_edt(bin_img, pad)
    return dist[pad:-pad, pad:-pad] > radius


def make_roi_mask(cell_mask, kind, k=None):
    """Region-of-interest mask derived from a cell mask.

    Parameters
    ----------
    cell_mask : 2-D bool array
        The given cell mask (must contain foreground).
    kind : {'full', 'ring', 'inner', 'outer'}
        ``ring`` is a band of width ``k`` centred on the mask boundary:
        dilation by ceil(k/2) minus erosion by floor(k/2).  ``inner`` erodes
        by ``k``; ``outer`` is the dilation by ``k`` minus the mask.
    k : int
        Width or radius in pixels; ignored for ``full``.

    Raises
    ------
    DegenerateMaskError
        If an erosion-based region (``inner`` or ``ring``) comes out empty,
        e.g. an erosion that swallows a small cell.  Callers fall back to
        the full mask.  ``outer`` may legitimately be empty when the mask
        covers the whole image.
    """
    cell_mask = _as_binary(cell_mask)
    if not cell_mask.any():
        raise DegenerateMaskError("cell mask has no foreground pixels")
    if kind == "full":
        return cell_mask.copy()
    if k is None or k < 0:
        raise ParameterError("roi kind %r needs a non-negative width, got %r" % (kind, k))
    if kind == "ring":
        roi = dilate(cell_mask, -(-k // 2)) & ~erode(cell_mask, k // 2)
    elif kind == "inner":
        roi = erode(cell_mask, k)
    elif kind == "outer":
        roi = dilate(cell_mask, k) & ~cell_mask
    else:
        raise ParameterError("unknown roi kind %r" % (kind,))
    if kind != "outer" and not roi.any():
        raise DegenerateMaskError("%s mask with k=%r is empty" % (kind, k))
    return roi


def average_object_distance(bin_img):
    """Mean distance of foreground pixels to the nearest image edge.

    Distances are measured along rows/columns, i.e.
    ``min(row, col, height-1-row, width-1-col)``.  Returns 0.0 for an empty
    image.
    """
    bin_img = _as_binary(bin_img)
    rows, cols = np.nonzero(bin_img)
    if rows.size == 0:
        return 0.0
    h, w = bin_img.shape
    d = np.minimum(np.minimum(rows, cols), np.minimum(h - 1 - rows, w - 1 - cols))
    return float(d.mean())
