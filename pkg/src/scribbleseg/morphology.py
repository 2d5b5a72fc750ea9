"""Binary mask algorithms: connected components, largest component, thinning."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def connected_components(mask, connectivity: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Label the true pixels of ``mask``.

    Returns ``(ids, sizes)``: ``ids`` is an int array with -1 on false pixels
    and dense component ids from 0 elsewhere, numbered by the raster position
    of each component's first pixel; ``sizes[c]`` is the pixel count of
    component ``c``.
    """
    if connectivity not in _STRUCTURE:
        raise ValueError("connectivity must be 4 or 8")
    mask = np.asarray(mask, dtype=bool)
    lab, n = ndimage.label(mask, structure=_STRUCTURE[connectivity])
    ids = np.full(mask.shape, -1, dtype=np.int64)
    if n == 0:
        return ids, np.zeros(0, dtype=np.int64)
    flat = lab.ravel()
    # scipy already scans in raster order; re-rank anyway so the id contract
    # does not depend on that implementation detail
    labels, first = np.unique(flat, return_index=True)
    order = np.argsort(first[labels > 0])  # label 0 is absent on an all-true mask
    remap = np.empty(n + 1, dtype=np.int64)
    remap[0] = -1
    remap[1 + order] = np.arange(n)
    ids = remap[lab]
    sizes = np.bincount(ids[ids >= 0], minlength=n)
    return ids, sizes


def largest_component(mask, connectivity: int = 4) -> np.ndarray:
    """Largest connected component; ties go to the lowest component id."""
    ids, sizes = connected_components(mask, connectivity)
    if sizes.size == 0:
        return np.zeros(np.shape(mask), dtype=bool)
    return ids == int(np.argmax(sizes))  # argmax picks the first maximum


# Neighbour offsets in Zhang-Suen order P2..P9: N, NE, E, SE, S, SW, W, NW.
_ZS_OFFSETS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def _neighbours(img: np.ndarray) -> list[np.ndarray]:
    p = np.pad(img, 1)
    h, w = img.shape
    return [p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] for dr, dc in _ZS_OFFSETS]


def _zs_candidates(img: np.ndarray, step: int) -> np.ndarray:
    P2, P3, P4, P5, P6, P7, P8, P9 = (n.astype(np.int8) for n in _neighbours(img))
    seq = [P2, P3, P4, P5, P6, P7, P8, P9, P2]
    b = P2 + P3 + P4 + P5 + P6 + P7 + P8 + P9
    a = sum(((seq[i] == 0) & (seq[i + 1] == 1)).astype(np.int8) for i in range(8))
    cond = img & (b >= 2) & (b <= 6) & (a == 1)
    if step == 0:
        cond &= (P2 * P4 * P6 == 0) & (P4 * P6 * P8 == 0)
    else:
        cond &= (P2 * P4 * P8 == 0) & (P2 * P6 * P8 == 0)
    return cond


def _is_simple(img: np.ndarray, r: int, c: int) -> bool:
    """Yokoi 8-connectivity number == 1, i.e. removal keeps the topology.

    Isolated and interior pixels score 0, so the last pixel of a component
    is never removed.
    """
    h, w = img.shape

    def at(dr, dc):
        rr, cc = r + dr, c + dc
        return 1 if 0 <= rr < h and 0 <= cc < w and img[rr, cc] else 0

    # Yokoi order x1..x8 counter-clockwise from east
    x = [at(0, 1), at(-1, 1), at(-1, 0), at(-1, -1), at(0, -1), at(1, -1), at(1, 0), at(1, 1)]
    xb = [1 - v for v in x] + [1 - x[0]]
    yokoi = sum(xb[k] - xb[k] * xb[k + 1] * xb[k + 2] for k in (0, 2, 4, 6))
    return yokoi == 1


def skeletonize(mask) -> np.ndarray:
    """Two-subcycle Zhang-Suen thinning with a topology guard.

    Each subcycle marks candidates in parallel with the classical Zhang-Suen
    conditions (2 <= B <= 6, A == 1, plus the directional products). The
    marked pixels are then removed one at a time in raster order, and a pixel
    is only removed if it is still a simple point in the partially thinned
    mask. The guard is what keeps 2x2 blocks and 2-wide diagonals alive and
    connected; plain Zhang-Suen erases or splits those. Iterates to a fixed
    point.
    """
    img = np.asarray(mask, dtype=bool).copy()
    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            cand = _zs_candidates(img, step)
            for r, c in zip(*np.nonzero(cand)):
                if _is_simple(img, r, c):
                    img[r, c] = False
                    changed = True
    return img
