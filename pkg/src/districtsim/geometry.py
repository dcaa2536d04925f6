"""Triangle-mesh scenes and polygon-to-polygon view factors.

View factors are evaluated with the double contour integral

    S_i F_ij = 1/(2 pi) sum_a sum_b (e_a . e_b) int_a int_b ln r ds_b ds_a

where the inner line integral over edge ``b`` is done in closed form and the
outer one with Gauss-Legendre quadrature, split at the points where edge ``a``
passes closest to the end points of ``b``.  That keeps the logarithmic
singularity of patches sharing an edge or a vertex under control, which is the
situation met in every street corner.

Pairs straddling each other's plane are clipped first so that the integrand is
non-negative over the clipped polygons.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import xlogy

log = logging.getLogger(__name__)

EXTERIOR = "exterior"
INTERIOR = "interior"

# barycentric sample points used for the visibility rays
_VIS_SAMPLES = {
    1: np.array([[1 / 3, 1 / 3, 1 / 3]]),
    3: np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
    4: np.array(
        [[1 / 3, 1 / 3, 1 / 3], [2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]
    ),
}


class GeometryError(ValueError):
    """Invalid scene geometry or an inconsistent view-factor assembly."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Numerical settings of the view-factor assembly.

    Parameters
    ----------
    order : int
        Gauss-Legendre points per edge sub-interval of the contour integral.
    vis_samples : int
        Sample points per triangle for the visibility rays (1, 3 or 4).
        Partial occlusion scales the view factor by the unblocked ray fraction.
    tol : float
        Row-sum tolerance.  Exterior rows exceeding ``1 + tol`` are clamped with
        a warning, rows beyond ``1 + 10 tol`` are rejected.
    """

    order: int = 16
    vis_samples: int = 1
    tol: float = 1e-3

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("quadrature order must be >= 1")
        if self.vis_samples not in _VIS_SAMPLES:
            raise ValueError(f"vis_samples must be one of {sorted(_VIS_SAMPLES)}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True, eq=False)
class SurfacePatch:
    """One triangle of the scene.

    ``vertices`` are ordered counter-clockwise seen from the side the outward
    normal points to.  Interior patches carry the name of the zone whose
    enclosure they bound.
    """

    id: str
    vertices: np.ndarray
    emissivity: float = 0.9
    albedo: float = 0.0
    group: str = ""
    side: str = EXTERIOR
    zone: str | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.shape != (3, 3):
            raise GeometryError(f"patch {self.id}: expected 3 vertices of 3 coordinates")
        if not np.all(np.isfinite(v)):
            raise GeometryError(f"patch {self.id}: non-finite coordinates")
        object.__setattr__(self, "vertices", v)
        if not 0.0 < self.emissivity <= 1.0:
            raise GeometryError(f"patch {self.id}: emissivity must lie in (0, 1]")
        if not 0.0 <= self.albedo < 1.0:
            raise GeometryError(f"patch {self.id}: albedo must lie in [0, 1)")
        if self.side not in (EXTERIOR, INTERIOR):
            raise GeometryError(f"patch {self.id}: side must be exterior or interior")
        if self.side == INTERIOR and not self.zone:
            raise GeometryError(f"patch {self.id}: interior patches need a zone")
        scale = max(np.ptp(v, axis=0).max(), 1e-300)
        if patch_area(self) <= 1e-12 * scale * scale:
            raise GeometryError(f"patch {self.id}: degenerate triangle")

    @property
    def area(self) -> float:
        return patch_area(self)

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.vertices[1] - self.vertices[0], self.vertices[2] - self.vertices[0])
        return n / np.linalg.norm(n)

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @property
    def enclosure(self) -> str:
        return EXTERIOR if self.side == EXTERIOR else f"zone:{self.zone}"

    def reversed(self, id: str, side: str = INTERIOR, zone: str | None = None) -> "SurfacePatch":
        """Coincident copy facing the other way (same triangle, flipped normal)."""
        return SurfacePatch(
            id=id,
            vertices=self.vertices[::-1].copy(),
            emissivity=self.emissivity,
            albedo=self.albedo,
            group=self.group,
            side=side,
            zone=zone,
        )


def patch_area(p: SurfacePatch | np.ndarray) -> float:
    """Area of a triangle, half the norm of the edge cross product."""
    v = p.vertices if isinstance(p, SurfacePatch) else np.asarray(p, dtype=float)
    return 0.5 * float(np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0])))


@dataclass
class SceneMesh:
    patches: list[SurfacePatch]
    adjacency: dict[str, list[str]] = field(init=False)

    def __post_init__(self):
        self.patches = list(self.patches)
        ids = [p.id for p in self.patches]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise GeometryError(f"duplicate patch ids: {dup[:5]}")
        self.adjacency = {}
        for p in self.patches:
            self.adjacency.setdefault(p.group, []).append(p.id)
        self._index = {pid: k for k, pid in enumerate(ids)}

    def __len__(self):
        return len(self.patches)

    def index(self, pid: str) -> int:
        return self._index[pid]

    def patch(self, pid: str) -> SurfacePatch:
        return self.patches[self._index[pid]]

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.patches]

    def enclosures(self) -> dict[str, np.ndarray]:
        """Patch indices of every radiative enclosure (outdoor scene, each zone)."""
        out: dict[str, list[int]] = {}
        for k, p in enumerate(self.patches):
            out.setdefault(p.enclosure, []).append(k)
        return {name: np.array(idx, dtype=int) for name, idx in out.items()}

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for p in self.patches:
            h.update(p.id.encode())
            h.update(p.side.encode())
            h.update(str(p.zone).encode())
            h.update(np.ascontiguousarray(p.vertices).tobytes())
        return h.hexdigest()


@dataclass
class ViewFactorMatrix:
    """Dense form factors of a scene.

    ``F[i, j]`` is the fraction of radiation leaving ``i`` that reaches ``j``;
    entries between different enclosures are zero.  ``sky`` holds the sky view
    factor of exterior rows (0 for interior rows).  ``raw_row_sums`` keeps the
    row sums before the interior renormalization.
    """

    F: np.ndarray
    sky: np.ndarray
    areas: np.ndarray
    ids: list[str]
    enclosures: dict[str, np.ndarray]
    raw_row_sums: np.ndarray

    def block(self, enclosure: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = self.enclosures[enclosure]
        return idx, self.F[np.ix_(idx, idx)], self.sky[idx]

    def save(self, path: str | Path) -> None:
        names = sorted(self.enclosures)
        with open(path, "wb") as fh:
            np.savez_compressed(
                fh,
                F=self.F,
                sky=self.sky,
                areas=self.areas,
                ids=np.array(self.ids),
                raw_row_sums=self.raw_row_sums,
                enclosure_names=np.array(names),
                **{f"enc_{k}": self.enclosures[n] for k, n in enumerate(names)},
            )

    @classmethod
    def load(cls, path: str | Path) -> "ViewFactorMatrix":
        with np.load(path, allow_pickle=False) as z:
            names = [str(n) for n in z["enclosure_names"]]
            return cls(
                F=z["F"],
                sky=z["sky"],
                areas=z["areas"],
                ids=[str(i) for i in z["ids"]],
                enclosures={n: z[f"enc_{k}"] for k, n in enumerate(names)},
                raw_row_sums=z["raw_row_sums"],
            )


# ---------------------------------------------------------------------------
# contour integral


def _line_log_integral(p: np.ndarray, b0: np.ndarray, u: np.ndarray, length: np.ndarray) -> np.ndarray:
    """Closed form of int_0^L ln|p - (b0 + s u)| ds for unit ``u``.

    ``p`` has shape (..., 3); ``b0``, ``u`` and ``length`` broadcast against it.
    """
    d = p - b0
    t0 = np.einsum("...k,...k->...", d, u)
    h2 = np.maximum(np.einsum("...k,...k->...", d, d) - t0 * t0, 0.0)
    h = np.sqrt(h2)

    def prim(w):
        return 0.5 * xlogy(w, w * w + h2) - w + h * np.arctan2(w, h)

    return prim(length - t0) - prim(-t0)


def _edge_pairs(poly_a: np.ndarray, poly_b: np.ndarray):
    a0 = poly_a
    ea = np.roll(poly_a, -1, axis=0) - poly_a
    b0 = poly_b
    eb = np.roll(poly_b, -1, axis=0) - poly_b
    na, nb = len(poly_a), len(poly_b)
    return (
        np.repeat(a0, nb, axis=0),
        np.repeat(ea, nb, axis=0),
        np.tile(b0, (na, 1)),
        np.tile(eb, (na, 1)),
    )


def _contour_sum(a0, ea, b0, eb, order: int) -> np.ndarray:
    """Per-edge-pair contributions (already multiplied by e_a . e_b / 2 pi)."""
    la = np.linalg.norm(ea, axis=-1)
    lb = np.linalg.norm(eb, axis=-1)
    ua = ea / la[:, None]
    ub = eb / lb[:, None]
    dot = np.einsum("ij,ij->i", ua, ub)

    # split edge a where it passes closest to the end points of b
    s1 = np.clip(np.einsum("ij,ij->i", b0 - a0, ua) / la, 0.0, 1.0)
    s2 = np.clip(np.einsum("ij,ij->i", b0 + eb - a0, ua) / la, 0.0, 1.0)
    lo, hi = np.minimum(s1, s2), np.maximum(s1, s2)
    bounds = np.stack([np.zeros_like(lo), lo, hi, np.ones_like(lo)], axis=1)  # (E, 4)

    xg, wg = np.polynomial.legendre.leggauss(order)
    xg = 0.5 * (xg + 1.0)
    wg = 0.5 * wg
    left = bounds[:, :-1]
    width = bounds[:, 1:] - bounds[:, :-1]  # (E, 3)
    s = left[:, :, None] + width[:, :, None] * xg  # (E, 3, n)
    pts = a0[:, None, None, :] + (s * la[:, None, None])[..., None] * ua[:, None, None, :]
    inner = _line_log_integral(
        pts, b0[:, None, None, :], ub[:, None, None, :], lb[:, None, None]
    )
    outer = np.einsum("esn,n->es", inner, wg) * width
    return dot * la * outer.sum(axis=1) / (2.0 * np.pi)


def _clip_polygon(poly: np.ndarray, origin: np.ndarray, normal: np.ndarray, eps: float) -> np.ndarray:
    """Part of ``poly`` on the positive side of a plane (Sutherland-Hodgman)."""
    d = (poly - origin) @ normal
    out = []
    n = len(poly)
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        dp, dq = d[k], d[(k + 1) % n]
        if dp >= -eps:
            out.append(p)
        if (dp > eps and dq < -eps) or (dp < -eps and dq > eps):
            out.append(p + (q - p) * (dp / (dp - dq)))
    return np.array(out) if len(out) >= 3 else np.empty((0, 3))


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    acc = np.zeros(3)
    for k in range(1, len(poly) - 1):
        acc += np.cross(poly[k] - poly[0], poly[k + 1] - poly[0])
    return 0.5 * float(np.linalg.norm(acc))


def _pair_classes(va: np.ndarray, vb: np.ndarray, na: np.ndarray, nb: np.ndarray, eps: np.ndarray):
    """Classify pairs: 0 = no exchange, 1 = fully facing, 2 = needs clipping."""
    db = np.einsum("pkj,pj->pk", vb - va[:, :1, :], na)  # vertices of b w.r.t. plane a
    da = np.einsum("pkj,pj->pk", va - vb[:, :1, :], nb)
    e = eps[:, None]
    behind = np.all(db <= e, axis=1) | np.all(da <= e, axis=1)
    facing = np.all(db >= -e, axis=1) & np.all(da >= -e, axis=1)
    cls = np.where(behind, 0, np.where(facing, 1, 2))
    return cls


def _exchange_areas(verts: np.ndarray, normals: np.ndarray, pairs: np.ndarray, order: int) -> np.ndarray:
    """S_i F_ij for each (i, j) in ``pairs`` without occlusion."""
    if len(pairs) == 0:
        return np.zeros(0)
    va = verts[pairs[:, 0]]
    vb = verts[pairs[:, 1]]
    na = normals[pairs[:, 0]]
    nb = normals[pairs[:, 1]]
    scale = np.maximum(np.ptp(va, axis=1).max(axis=1), np.ptp(vb, axis=1).max(axis=1))
    eps = 1e-9 * np.maximum(scale, 1e-12)
    cls = _pair_classes(va, vb, na, nb, eps)
    result = np.zeros(len(pairs))

    a0s, eas, b0s, ebs, owner = [], [], [], [], []
    full = np.flatnonzero(cls == 1)
    if len(full):
        ea = np.roll(va[full], -1, axis=1) - va[full]
        eb = np.roll(vb[full], -1, axis=1) - vb[full]
        ia = np.repeat(np.arange(3), 3)
        ib = np.tile(np.arange(3), 3)
        a0s.append(va[full][:, ia].reshape(-1, 3))
        eas.append(ea[:, ia].reshape(-1, 3))
        b0s.append(vb[full][:, ib].reshape(-1, 3))
        ebs.append(eb[:, ib].reshape(-1, 3))
        owner.append(np.repeat(full, 9))
    for k in np.flatnonzero(cls == 2):
        pa = _clip_polygon(va[k], vb[k][0], nb[k], eps[k])
        pb = _clip_polygon(vb[k], va[k][0], na[k], eps[k])
        if _polygon_area(pa) <= 1e-12 * scale[k] ** 2 or _polygon_area(pb) <= 1e-12 * scale[k] ** 2:
            continue
        a0, ea, b0, eb = _edge_pairs(pa, pb)
        keep = (np.linalg.norm(ea, axis=1) > eps[k]) & (np.linalg.norm(eb, axis=1) > eps[k])
        a0s.append(a0[keep])
        eas.append(ea[keep])
        b0s.append(b0[keep])
        ebs.append(eb[keep])
        owner.append(np.full(int(keep.sum()), k))
    if not owner:
        return result
    a0 = np.concatenate(a0s)
    ea = np.concatenate(eas)
    b0 = np.concatenate(b0s)
    eb = np.concatenate(ebs)
    own = np.concatenate(owner)
    chunk = 20000
    contrib = np.empty(len(own))
    for s in range(0, len(own), chunk):
        sl = slice(s, s + chunk)
        contrib[sl] = _contour_sum(a0[sl], ea[sl], b0[sl], eb[sl], order)
    np.add.at(result, own, contrib)
    # the contour formula measures exchange between the front faces only
    return np.maximum(result, 0.0)


def view_factor(emitter: SurfacePatch, receiver: SurfacePatch, quad: QuadratureSpec | None = None) -> float:
    """Unoccluded view factor from ``emitter`` to ``receiver``."""
    quad = quad or QuadratureSpec()
    if emitter is receiver:
        return 0.0
    verts = np.stack([emitter.vertices, receiver.vertices])
    normals = np.stack([emitter.normal, receiver.normal])
    g = _exchange_areas(verts, normals, np.array([[0, 1]]), quad.order)[0]
    return g / emitter.area


# ---------------------------------------------------------------------------
# visibility


def segment_hits(origins: np.ndarray, targets: np.ndarray, tris: np.ndarray, skip: np.ndarray | None = None,
                 eps: float = 1e-9) -> np.ndarray:
    """Which segments ``origins -> targets`` cross any triangle of ``tris``.

    ``skip`` is an optional boolean (R, T) mask of triangles ignored per ray.
    Returns a boolean array of length R.
    """
    R = len(origins)
    blocked = np.zeros(R, dtype=bool)
    if R == 0 or len(tris) == 0:
        return blocked
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    step = max(1, 2_000_000 // len(tris))
    for s in range(0, R, step):
        o = origins[s : s + step, None, :]
        d = targets[s : s + step, None, :] - o
        pvec = np.cross(d, e2[None])
        det = np.einsum("rtk,tk->rt", pvec, e1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = o - tris[None, :, 0]
        u = np.einsum("rtk,rtk->rt", tvec, pvec) * inv
        qvec = np.cross(tvec, e1[None])
        v = np.einsum("rtk,rk->rt", qvec, d[:, 0]) * inv
        t = np.einsum("rtk,tk->rt", qvec, e2) * inv
        hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > 1e-7) & (t < 1 - 1e-7)
        if skip is not None:
            hit &= ~skip[s : s + step]
        blocked[s : s + step] = hit.any(axis=1)
    return blocked


def _visible_fraction(verts: np.ndarray, pairs: np.ndarray, blockers: np.ndarray, samples: int) -> np.ndarray:
    """Fraction of unblocked sample rays for each pair; ``blockers`` index into ``verts``."""
    bary = _VIS_SAMPLES[samples]
    pts = np.einsum("sk,pkj->psj", bary, verts)  # (P, s, 3)
    ns = len(bary)
    ia = np.repeat(np.arange(ns), ns)
    ib = np.tile(np.arange(ns), ns)
    org = pts[pairs[:, 0]][:, ia].reshape(-1, 3)
    tgt = pts[pairs[:, 1]][:, ib].reshape(-1, 3)
    pair_of_ray = np.repeat(np.arange(len(pairs)), ns * ns)
    tris = verts[blockers]
    skip = (blockers[None, :] == pairs[pair_of_ray, 0][:, None]) | (
        blockers[None, :] == pairs[pair_of_ray, 1][:, None]
    )
    blocked = segment_hits(org, tgt, tris, skip)
    free = np.bincount(pair_of_ray, weights=(~blocked).astype(float), minlength=len(pairs))
    return free / (ns * ns)


def visible(i: SurfacePatch, j: SurfacePatch, scene: SceneMesh, samples: int = 1) -> bool:
    """True when the rays between ``i`` and ``j`` are not all blocked by third patches.

    Patches lying in the same plane never exchange radiation, so they are
    reported as not visible.
    """
    if i is j:
        raise ValueError("visibility of a patch with itself is undefined")
    if abs(np.dot(i.normal, j.normal)) > 1 - 1e-12 and abs(np.dot(j.centroid - i.centroid, i.normal)) < 1e-9:
        return False
    verts = np.stack([i.vertices, j.vertices] + [p.vertices for p in scene.patches if p is not i and p is not j])
    blockers = np.arange(2, len(verts))
    frac = _visible_fraction(verts, np.array([[0, 1]]), blockers, samples)
    return bool(frac[0] > 0)


# ---------------------------------------------------------------------------
# assembly


def _symmetric_rescale(G: np.ndarray, target: np.ndarray, iters: int = 500, rtol: float = 1e-14) -> np.ndarray:
    """Scale a symmetric nonnegative matrix as D G D so that its row sums hit ``target``."""
    a = np.ones(len(G))
    active = G.sum(axis=1) > 0
    for _ in range(iters):
        r = G @ a
        a_new = np.where(active, np.sqrt(a * target / np.where(active, r, 1.0)), 1.0)
        if np.max(np.abs(a_new - a)) < rtol:
            a = a_new
            break
        a = a_new
    Gs = G * a[:, None] * a[None, :]
    return 0.5 * (Gs + Gs.T)


def assemble_view_factors(
    scene: SceneMesh,
    quad: QuadratureSpec | None = None,
    cache_dir: str | Path | None = None,
) -> ViewFactorMatrix:
    """Visibility-masked form factors for every enclosure of ``scene``.

    Exterior rows are completed by the sky view factor; interior rows (closed
    zone enclosures) are rescaled symmetrically so each sums to one while
    reciprocity is kept exact.
    """
    quad = quad or QuadratureSpec()
    if len(scene) == 0:
        raise GeometryError("scene has no patches")
    cache_file = None
    if cache_dir is not None:
        key = hashlib.sha256(
            f"{scene.content_hash()}|{quad.order}|{quad.vis_samples}|{quad.tol}".encode()
        ).hexdigest()[:24]
        cache_file = Path(cache_dir) / f"vf-{key}.npz"
        if cache_file.exists():
            log.info("view factors loaded from cache %s", cache_file)
            return ViewFactorMatrix.load(cache_file)

    n = len(scene)
    verts = np.stack([p.vertices for p in scene.patches])
    normals = np.stack([p.normal for p in scene.patches])
    areas = np.array([p.area for p in scene.patches])
    F = np.zeros((n, n))
    sky = np.zeros(n)
    raw = np.zeros(n)
    enclosures = scene.enclosures()

    for name, idx in sorted(enclosures.items()):
        m = len(idx)
        iu, ju = np.triu_indices(m, k=1)
        pairs = np.stack([idx[iu], idx[ju]], axis=1)
        g = _exchange_areas(verts, normals, pairs, quad.order)
        nz = g > 0
        if nz.any():
            frac = _visible_fraction(verts, pairs[nz], idx, quad.vis_samples)
            g[nz] *= frac
        G = np.zeros((m, m))
        G[iu, ju] = g
        G = G + G.T
        a = areas[idx]
        rows = G.sum(axis=1) / a
        raw[idx] = rows
        if name == EXTERIOR:
            over = rows > 1.0 + quad.tol
            if np.any(rows > 1.0 + 10 * quad.tol):
                bad = [scene.patches[idx[k]].id for k in np.flatnonzero(rows > 1.0 + 10 * quad.tol)]
                raise GeometryError(f"view-factor row sums exceed 1 by more than 10*tol for {bad[:5]}")
            if over.any():
                warnings.warn(
                    f"{int(over.sum())} exterior view-factor rows exceed 1 + tol; sky factor clamped at 0",
                    stacklevel=2,
                )
            sky[idx] = np.maximum(1.0 - rows, 0.0)
        else:
            if np.any(rows > 1.0 + 10 * quad.tol):
                raise GeometryError(f"enclosure {name}: row sums exceed 1 by more than 10*tol")
            if np.all(np.abs(rows - 1.0) <= 10 * quad.tol):
                G = _symmetric_rescale(G, a)
            else:
                log.info(
                    "enclosure %s is open (row sums %.4g..%.4g); rows left unnormalized",
                    name, rows.min(), rows.max(),
                )
        F[np.ix_(idx, idx)] = G / a[:, None]

    vf = ViewFactorMatrix(
        F=F, sky=sky, areas=areas, ids=scene.ids, enclosures=enclosures, raw_row_sums=raw
    )
    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        vf.save(cache_file)
    return vf
