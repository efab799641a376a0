"""Signed distance maps and direction fields from binary masks.

Sign convention: negative inside the object, zero on its boundary, positive
in the background. Boundary pixels are foreground pixels with a 4-connected
background neighbour; with ``border_rule="include-border"`` foreground pixels
on the image edge are boundary too.

The fast path is a two-pass exact Euclidean transform (column scan, then the
lower envelope of parabolas per row) that also carries the identity of the
nearest boundary pixel. Ties between equidistant boundary pixels go to the
smallest row, then the smallest column, and the brute-force oracles below use
the same rule.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

BORDER_RULES = ("interface", "include-border")
NORMALIZE_MODES = ("max-abs", "diagonal", "none")


class DegenerateMaskError(ValueError):
    """Mask is all foreground or all background, so it has no boundary.

    ``fallback`` holds the all-zero map pipelines may substitute.
    """

    def __init__(self, shape: tuple[int, int], what: str = "map"):
        super().__init__(f"constant mask of shape {shape}: no fg/bg interface, {what} undefined")
        self.fallback = np.zeros(shape)


@dataclass(frozen=True)
class SignedDistanceMap:
    raw: np.ndarray
    normalized: np.ndarray
    mode: str = "none"

    @property
    def shape(self) -> tuple[int, int]:
        return self.raw.shape


@dataclass(frozen=True)
class DirectionField:
    """Offsets ``p - b`` from the nearest boundary pixel ``b``: ``fx`` columns, ``fy`` rows."""

    fx: np.ndarray
    fy: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.fx.shape

    def as_array(self) -> np.ndarray:
        return np.stack([self.fx, self.fy], axis=-1)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.fx * self.fx + self.fy * self.fy)


def as_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"mask must be a non-empty 2-D array, got shape {arr.shape}")
    if arr.dtype != bool:
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        arr = arr.astype(bool)
    return arr


def _check_rule(border_rule: str) -> None:
    if border_rule not in BORDER_RULES:
        raise ValueError(f"border_rule must be one of {BORDER_RULES}, got {border_rule!r}")


def boundary_mask(mask, border_rule: str = "interface") -> np.ndarray:
    _check_rule(border_rule)
    fg = as_mask(mask)
    fill = border_rule == "interface"
    padded = np.pad(fg, 1, constant_values=fill)
    bg_neighbor = (
        ~padded[:-2, 1:-1] | ~padded[2:, 1:-1] | ~padded[1:-1, :-2] | ~padded[1:-1, 2:]
    )
    return fg & bg_neighbor


def extract_boundary(mask, border_rule: str = "interface") -> np.ndarray:
    """Boundary pixel coordinates as an ``(N, 2)`` int array of ``(row, col)``, row-major order."""
    return np.argwhere(boundary_mask(mask, border_rule))


def _check_not_constant(fg: np.ndarray, what: str) -> None:
    if fg.all() or not fg.any():
        raise DegenerateMaskError(fg.shape, what)


# -- fast exact transform -------------------------------------------------------

_NO_SITE = np.iinfo(np.int64).max


def _column_pass(sites: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per column: squared vertical distance to the nearest site and that site's row."""
    H, W = sites.shape
    rows = np.broadcast_to(np.arange(H)[:, None], (H, W))
    up = np.maximum.accumulate(np.where(sites, rows, -1), axis=0)
    down = np.minimum.accumulate(np.where(sites, rows, H)[::-1], axis=0)[::-1]
    has_up = up >= 0
    has_down = down < H
    du = rows - up
    dd = down - rows
    take_up = has_up & (~has_down | (du <= dd))
    site_row = np.where(take_up, up, down)
    dist = np.where(take_up, du, dd).astype(np.int64)
    g = np.where(has_up | has_down, dist * dist, _NO_SITE)
    site_row = np.where(has_up | has_down, site_row, -1)
    return g, site_row


def _row_envelope(g: np.ndarray, site_row: np.ndarray, out_d2: np.ndarray, out_col: np.ndarray, out_row: np.ndarray):
    """Lower envelope of ``f_j(x) = (x - j)^2 + g[j]`` with exact rational breakpoints.

    Breakpoints are kept as integer ``(num, den)`` pairs. A parabola that touches
    the envelope at a single point stays on it, so every minimiser at an integer
    ``x`` is found and the tie rule can pick among them.
    """
    cols = [j for j in range(g.size) if g[j] != _NO_SITE]
    if not cols:
        out_d2[:] = _NO_SITE
        out_col[:] = -1
        out_row[:] = -1
        return
    v = [cols[0]]
    z_num = [None]  # None marks -inf
    z_den = [1]
    for q in cols[1:]:
        fq = int(g[q]) + q * q
        while True:
            p = v[-1]
            num = fq - (int(g[p]) + p * p)
            den = 2 * (q - p)
            zn, zd = z_num[-1], z_den[-1]
            if zn is not None and num * zd < zn * den:
                v.pop()
                z_num.pop()
                z_den.pop()
                continue
            break
        v.append(q)
        z_num.append(num)
        z_den.append(den)

    k = 0
    nv = len(v)
    for x in range(g.size):
        while k + 1 < nv and z_num[k + 1] < x * z_den[k + 1]:
            k += 1
        best = v[k]
        kk = k + 1
        while kk < nv and z_num[kk] == x * z_den[kk]:
            cand = v[kk]
            if (site_row[cand], cand) < (site_row[best], best):
                best = cand
            kk += 1
        dx = x - best
        out_d2[x] = dx * dx + int(g[best])
        out_col[x] = best
        out_row[x] = site_row[best]


def nearest_site_transform(sites) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact squared Euclidean distance to the nearest ``True`` pixel of ``sites``.

    Returns ``(d2, site_row, site_col)``; ``d2`` is int64.
    """
    sites = np.asarray(sites, dtype=bool)
    if not sites.any():
        raise ValueError("no sites")
    H, W = sites.shape
    g, srow = _column_pass(sites)
    d2 = np.empty((H, W), dtype=np.int64)
    col = np.empty((H, W), dtype=np.int64)
    row = np.empty((H, W), dtype=np.int64)
    for y in range(H):
        _row_envelope(g[y], srow[y], d2[y], col[y], row[y])
    return d2, row, col


def signed_distance_map(mask, border_rule: str = "interface") -> SignedDistanceMap:
    fg = as_mask(mask)
    _check_not_constant(fg, "signed distance")
    bnd = boundary_mask(fg, border_rule)
    d2, _, _ = nearest_site_transform(bnd)
    raw = np.sqrt(d2.astype(np.float64))
    raw = np.where(fg, -raw, raw)
    raw = np.where(bnd, 0.0, raw)
    return SignedDistanceMap(raw=raw, normalized=raw.copy(), mode="none")


def squared_distance_map(mask, border_rule: str = "interface") -> np.ndarray:
    """Unsigned squared distances (int64) to the nearest boundary pixel."""
    fg = as_mask(mask)
    _check_not_constant(fg, "signed distance")
    d2, _, _ = nearest_site_transform(boundary_mask(fg, border_rule))
    return d2


def direction_field(mask, border_rule: str = "interface") -> DirectionField:
    fg = as_mask(mask)
    _check_not_constant(fg, "direction field")
    bnd = boundary_mask(fg, border_rule)
    _, brow, bcol = nearest_site_transform(bnd)
    H, W = fg.shape
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    fx = np.where(fg, cols - bcol, 0).astype(np.float64)
    fy = np.where(fg, rows - brow, 0).astype(np.float64)
    return DirectionField(fx=fx, fy=fy)


def normalize_sdm(sdm: SignedDistanceMap, mode: str = "max-abs") -> SignedDistanceMap:
    """Scale ``raw`` into ``normalized``. ``max-abs`` leaves an all-zero map unchanged."""
    if mode == "max-abs":
        peak = np.abs(sdm.raw).max()
        norm = sdm.raw / peak if peak > 0 else sdm.raw.copy()
    elif mode == "diagonal":
        H, W = sdm.raw.shape
        norm = sdm.raw / np.hypot(H, W)
    elif mode == "none":
        norm = sdm.raw.copy()
    else:
        raise ValueError(f"normalize mode must be one of {NORMALIZE_MODES}, got {mode!r}")
    return replace(sdm, normalized=norm, mode=mode)


# -- brute-force oracles ----------------------------------------------------------


def _brute_nearest(fg: np.ndarray, bnd: np.ndarray, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    H, W = fg.shape
    sites = np.argwhere(bnd)  # row-major, so argmin's first hit obeys the tie rule
    sr = sites[:, 0].astype(np.int32)
    sc = sites[:, 1].astype(np.int32)
    pr, pc = (a.ravel().astype(np.int32) for a in np.indices((H, W)))
    d2 = np.empty(H * W, dtype=np.int64)
    idx = np.empty(H * W, dtype=np.int64)
    for start in range(0, H * W, chunk):
        dr = np.subtract.outer(pr[start : start + chunk], sr)
        dc = np.subtract.outer(pc[start : start + chunk], sc)
        dist = dr * dr + dc * dc
        i = dist.argmin(axis=1)
        idx[start : start + chunk] = i
        d2[start : start + chunk] = dist[np.arange(len(i)), i]
    return d2.reshape(H, W), sites[idx].reshape(H, W, 2)


def brute_force_sq_dist(mask, border_rule: str = "interface") -> np.ndarray:
    fg = as_mask(mask)
    _check_not_constant(fg, "signed distance")
    d2, _ = _brute_nearest(fg, boundary_mask(fg, border_rule))
    return d2


def brute_force_sdm(mask, border_rule: str = "interface") -> SignedDistanceMap:
    """Exhaustive minimisation over every boundary pixel."""
    fg = as_mask(mask)
    _check_not_constant(fg, "signed distance")
    bnd = boundary_mask(fg, border_rule)
    d2, _ = _brute_nearest(fg, bnd)
    raw = np.sqrt(d2.astype(np.float64))
    raw = np.where(fg, -raw, raw)
    raw = np.where(bnd, 0.0, raw)
    return SignedDistanceMap(raw=raw, normalized=raw.copy(), mode="none")


def brute_force_df(mask, border_rule: str = "interface") -> DirectionField:
    fg = as_mask(mask)
    _check_not_constant(fg, "direction field")
    _, nearest = _brute_nearest(fg, boundary_mask(fg, border_rule))
    H, W = fg.shape
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    fx = np.where(fg, cols - nearest[..., 1], 0).astype(np.float64)
    fy = np.where(fg, rows - nearest[..., 0], 0).astype(np.float64)
    return DirectionField(fx=fx, fy=fy)
