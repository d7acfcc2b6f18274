"""Instance separation: threshold, connected components, seeded watershed.

The watershed is a priority flood over the 6-connected foreground mask:
seeds enter a max-priority queue keyed by (foreground probability, then
ascending linear voxel index); voxels are assigned on first pop and never
relabeled, so the result is a pure function of the inputs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DomainError, ShapeMismatchError
from .volume import Volume, check_probability


def threshold(vol: Volume, tau: float) -> np.ndarray:
    """Binary mask v >= tau."""
    check_probability(vol)
    if not (0.0 <= tau <= 1.0):
        raise DomainError(f"tau={tau} outside [0, 1]")
    return vol.data >= tau


_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    26: ndimage.generate_binary_structure(3, 3),
}


def connected_components(mask: np.ndarray, connectivity: int = 26,
                         min_size: int = 5):
    """Label connected components, drop runts, compact labels.

    Components smaller than min_size are relabeled 0. Surviving labels are
    renumbered 1..m in order of each component's first voxel in scan order.
    Returns (labels uint32, sizes dict).
    """
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 6 or 26")
    raw, _ = ndimage.label(mask, structure=_STRUCTURES[connectivity])
    flat = raw.ravel()
    ids, first, counts = np.unique(flat, return_index=True, return_counts=True)
    keep = (ids != 0) & (counts >= min_size)
    order = np.argsort(first[keep])
    remap = np.zeros(int(ids.max()) + 1, dtype=np.uint32)
    for new_label, old in enumerate(ids[keep][order], start=1):
        remap[old] = new_label
    labels = remap[raw]
    sizes = {int(remap[old]): int(c)
             for old, c in zip(ids[keep], counts[keep])}
    return labels, sizes


# ascending linear-index order, so pushes at equal priority are ordered
_NEIGHBOR_OFFSETS = [(-1, 0, 0), (0, -1, 0), (0, 0, -1),
                     (0, 0, 1), (0, 1, 0), (1, 0, 0)]


@dataclass
class WatershedReport:
    dropped_seed_voxels: int
    unreachable_mask_voxels: int
    labels_used: int


def seeded_watershed(p_fg: Volume, seeds: np.ndarray, mask: np.ndarray):
    """Priority flood of `mask` from `seeds`, highest P_fg first.

    Seed voxels outside the mask are dropped (counted in the report).
    Mask voxels not 6-connected to any seed stay 0.
    Returns (label array uint32, WatershedReport).
    """
    check_probability(p_fg)
    prob = p_fg.data
    if prob.shape != seeds.shape or prob.shape != mask.shape:
        raise ShapeMismatchError(
            f"shapes differ: p={prob.shape} seeds={seeds.shape} mask={mask.shape}")
    nz, ny, nx = prob.shape
    out = np.zeros(prob.shape, dtype=np.uint32)

    inside = mask & (seeds != 0)
    dropped = int(((seeds != 0) & ~mask).sum())

    # Priority = P_fg descending; ties resolve by insertion order, with seeds
    # entered in ascending voxel index and neighbor pushes index-ordered, so
    # a uniform-probability flood advances as an equidistant front and the
    # result is identical on every run.
    heap = []
    counter = 0
    flat_prob = prob.ravel()
    seed_idx = np.flatnonzero(inside.ravel())
    seed_lab = seeds.ravel()[seed_idx]
    for idx, lab in zip(seed_idx.tolist(), seed_lab.tolist()):
        heapq.heappush(heap, (-flat_prob[idx], counter, idx, lab))
        counter += 1

    flat_out = out.ravel()
    flat_mask = mask.ravel()
    stride_z, stride_y = ny * nx, nx
    while heap:
        _, _, idx, lab = heapq.heappop(heap)
        if flat_out[idx]:
            continue
        flat_out[idx] = lab
        z, rem = divmod(idx, stride_z)
        y, x = divmod(rem, stride_y)
        for dz, dy, dx in _NEIGHBOR_OFFSETS:
            zz, yy, xx = z + dz, y + dy, x + dx
            if not (0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx):
                continue
            nidx = zz * stride_z + yy * stride_y + xx
            if flat_mask[nidx] and not flat_out[nidx]:
                heapq.heappush(heap, (-flat_prob[nidx], counter, nidx, lab))
                counter += 1

    unreachable = int((mask & (out == 0)).sum())
    used = int(np.unique(out[out != 0]).size)
    return out, WatershedReport(dropped, unreachable, used)


def separate_instances(p_fg: Volume, p_cl: Volume, tau_fg: float = 0.5,
                       tau_cl: float = 0.5, min_seed_size: int = 5):
    """Full post-processing chain: thresholds, centerline seeds, watershed."""
    if p_fg.shape != p_cl.shape:
        raise ShapeMismatchError(
            f"probability shapes differ: {p_fg.shape} vs {p_cl.shape}")
    mask = threshold(p_fg, tau_fg)
    seed_mask = threshold(p_cl, tau_cl)
    seeds, _ = connected_components(seed_mask, connectivity=26,
                                    min_size=min_seed_size)
    labels, report = seeded_watershed(p_fg, seeds, mask)
    return Volume(labels, p_fg.spacing), report
