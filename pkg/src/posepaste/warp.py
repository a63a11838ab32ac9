"""Differentiable affine placement of an RGBA patch onto a canvas.

Both the patch and the canvas live in normalized coordinates spanning
[-1, 1] on each axis (y grows downward, pixel centers at
(2*(j + 0.5)/W - 1)).  The transform maps *target* (canvas) coordinates
back into the *source* (patch) frame — inverse warping — so each canvas
pixel is produced by one bilinear lookup.  Samples outside the patch
contribute zero on all four channels, which is what makes translation
differentiable at the patch border.

The placement matrix, built from the 4-tuple (s, r, tx, ty):

    [[ s*cos(r),  s*sin(r), tx],
     [-s*sin(r),  s*cos(r), ty],
     [        0,         0,  1]]

Note the +sin in the first row: this is the transpose of the textbook
rotation.  It is kept as the default because downstream configuration
ranges are symmetric in r; ``convention="transposed"`` selects the
textbook form.

Bilinear tie-break: at an exact integer sample coordinate the *lower*
cell's derivative is used (cells are indexed with ceil(u) - 1, so the
fractional weight is in (0, 1]).  Finite-difference checks must avoid
sampling exactly on texel boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class AugParams:
    """One paste placement: scale, rotation (radians), translation in normalized canvas units."""

    s: float
    r: float
    tx: float
    ty: float

    def __post_init__(self):
        if not (self.s > 0 and math.isfinite(self.s)):
            raise DomainError(f"scale must be positive and finite, got {self.s}")
        if not all(math.isfinite(v) for v in (self.r, self.tx, self.ty)):
            raise DomainError("rotation/translation must be finite")

    def as_tuple(self):
        return (self.s, self.r, self.tx, self.ty)


@dataclass
class WarpGrad:
    """Gradients of a scalar loss through warp_patch."""

    d_params: np.ndarray  # (4,) wrt (s, r, tx, ty)
    d_pixels: np.ndarray  # same shape as the patch, wrt patch RGBA


def affine_from_params(p: AugParams, convention: str = "printed") -> np.ndarray:
    """3x3 placement matrix for the given parameters.

    ``convention`` selects the sign of the off-diagonal sine terms;
    "printed" is the default described in the module docstring.
    """
    if not (p.s > 0):
        raise DomainError(f"scale must be positive, got {p.s}")
    c = p.s * math.cos(p.r)
    s = p.s * math.sin(p.r)
    if convention == "printed":
        row0 = (c, s, p.tx)
        row1 = (-s, c, p.ty)
    elif convention == "transposed":
        row0 = (c, -s, p.tx)
        row1 = (s, c, p.ty)
    else:
        raise DomainError(f"unknown convention {convention!r}")
    return np.array([row0, row1, (0.0, 0.0, 1.0)], dtype=np.float64)


def map_point(H: np.ndarray, target_pt) -> tuple[float, float]:
    """Map a normalized target point into the source frame: (xs, ys, 1)^T = H (xt, yt, 1)^T."""
    x, y = float(target_pt[0]), float(target_pt[1])
    xs = H[0, 0] * x + H[0, 1] * y + H[0, 2]
    ys = H[1, 0] * x + H[1, 1] * y + H[1, 2]
    return float(xs), float(ys)


def _frame_geometry(patch_shape, canvas, frame):
    """Pixel extent (sx2, sy2) and texel offset (ox, oy) of the source frame.

    frame="patch": the patch spans [-1, 1]^2 of its own frame (so a patch
    warped with the identity fills the canvas).  frame="canvas": the patch
    sits at its native pixel size, centered, inside a canvas-sized source
    frame — equivalent to embedding it in a transparent canvas first, but
    sampled against the small raster directly.
    """
    ph, pw = patch_shape
    ch, cw = canvas
    if frame == "patch":
        return pw, ph, 0.0, 0.0
    if frame == "canvas":
        return cw, ch, (cw - pw) / 2.0, (ch - ph) / 2.0
    raise DomainError(f"unknown frame {frame!r}")


def _support_window(patch_shape, p: AugParams, canvas, convention, frame):
    """Canvas index window (i0, i1, j0, j1) that covers every pixel the patch can touch.

    The preimage of the patch support under the target->source map is a
    parallelogram; its padded bounding box is clipped to the canvas.
    """
    ph, pw = patch_shape
    ch, cw = canvas
    sx2, sy2, ox, oy = _frame_geometry(patch_shape, canvas, frame)
    H = affine_from_params(p, convention)
    # Source-frame extent of the patch plus bilinear margin, in normalized coords.
    xs_box = tuple((u + 0.5 + ox) * 2.0 / sx2 - 1.0 for u in (-1.5, pw + 0.5))
    ys_box = tuple((v + 0.5 + oy) * 2.0 / sy2 - 1.0 for v in (-1.5, ph + 0.5))
    M = H[:2, :2]
    Minv = np.linalg.inv(M)
    pts = []
    for xs in xs_box:
        for ys in ys_box:
            xt, yt = Minv @ (np.array([xs, ys]) - H[:2, 2])
            pts.append((xt, yt))
    pts = np.array(pts)
    j_lo = (pts[:, 0].min() + 1.0) * cw / 2.0 - 0.5
    j_hi = (pts[:, 0].max() + 1.0) * cw / 2.0 - 0.5
    i_lo = (pts[:, 1].min() + 1.0) * ch / 2.0 - 0.5
    i_hi = (pts[:, 1].max() + 1.0) * ch / 2.0 - 0.5
    j0 = max(0, int(math.floor(j_lo)) - 1)
    j1 = min(cw, int(math.ceil(j_hi)) + 2)
    i0 = max(0, int(math.floor(i_lo)) - 1)
    i1 = min(ch, int(math.ceil(i_hi)) + 2)
    return i0, max(i0, i1), j0, max(j0, j1)


def _sample_coords(patch_shape, p: AugParams, canvas, convention, frame, window=None):
    """Source pixel coordinates (u, v) for canvas pixels, plus the target grid.

    u is algebraically ((xs + 1) * sx2/2 - 0.5 - ox) with xs from the
    placement matrix, but evaluated per axis as A*(j+0.5) + B*(i+0.5) + C so
    that the identity placement (and whole-pixel translations on
    power-of-two dims) lands exactly on integer texel coordinates.
    ``window`` restricts the evaluation to a canvas sub-rectangle.
    """
    ch, cw = canvas
    sx2, sy2, ox, oy = _frame_geometry(patch_shape, canvas, frame)
    i0, i1, j0, j1 = window if window is not None else (0, ch, 0, cw)
    H = affine_from_params(p, convention)
    jj = np.arange(j0, j1, dtype=np.float64) + 0.5
    ii = np.arange(i0, i1, dtype=np.float64) + 0.5
    cu = (H[0, 2] + 1.0 - H[0, 0] - H[0, 1]) * (sx2 / 2.0) - 0.5 - ox
    cv = (H[1, 2] + 1.0 - H[1, 0] - H[1, 1]) * (sy2 / 2.0) - 0.5 - oy
    u = (H[0, 0] * sx2 / cw) * jj[None, :] + (H[0, 1] * sx2 / ch) * ii[:, None] + cu
    v = (H[1, 0] * sy2 / cw) * jj[None, :] + (H[1, 1] * sy2 / ch) * ii[:, None] + cv
    xt = (2.0 * jj / cw) - 1.0
    yt = (2.0 * ii / ch) - 1.0
    return u, v, xt[None, :], yt[:, None]


def _bilinear_cells(u, v, patch):
    """Corner indices, weights and gathered texel values for bilinear sampling.

    Lower-cell indexing: u0 = ceil(u) - 1, so the fractional part is in
    (0, 1] and exact integer coordinates fall on the upper corner of the
    lower cell.
    """
    ph, pw = patch.shape[:2]
    u0 = np.ceil(u).astype(np.int64) - 1
    v0 = np.ceil(v).astype(np.int64) - 1
    a = u - u0
    b = v - v0
    corners = []
    for dv in (0, 1):
        for du in (0, 1):
            uu = u0 + du
            vv = v0 + dv
            inside = (uu >= 0) & (uu < pw) & (vv >= 0) & (vv < ph)
            uc = np.clip(uu, 0, pw - 1)
            vc = np.clip(vv, 0, ph - 1)
            tex = patch[vc, uc] * inside[..., None]
            corners.append((vv, uu, inside, tex))
    w00 = (1.0 - a) * (1.0 - b)
    w01 = a * (1.0 - b)
    w10 = (1.0 - a) * b
    w11 = a * b
    weights = (w00, w01, w10, w11)
    return corners, weights, a, b


def warp_patch(patch: np.ndarray, p: AugParams, canvas: tuple[int, int],
               convention: str = "printed", frame: str = "patch") -> np.ndarray:
    """Resample ``patch`` (H, W, 4 float) onto a ``canvas``-sized raster.

    Every canvas pixel's normalized coordinate is mapped into the source
    frame and bilinearly sampled; out-of-patch samples are zero.  With the
    default frame="patch" the patch spans the whole source frame; with
    frame="canvas" it sits centered at native pixel size (see
    _frame_geometry), which is how parts are pasted.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 3 or patch.shape[2] != 4:
        raise DomainError(f"patch must be (H, W, 4), got {patch.shape}")
    if patch.shape[0] < 1 or patch.shape[1] < 1:
        raise DomainError("patch must be non-empty")
    ch, cw = int(canvas[0]), int(canvas[1])
    if ch < 1 or cw < 1:
        raise DomainError("canvas dims must be >= 1")
    win = _support_window(patch.shape[:2], p, (ch, cw), convention, frame)
    i0, i1, j0, j1 = win
    out = np.zeros((ch, cw, 4), dtype=np.float64)
    if i1 <= i0 or j1 <= j0:
        return out
    u, v, _, _ = _sample_coords(patch.shape[:2], p, (ch, cw), convention, frame, win)
    corners, weights, _, _ = _bilinear_cells(u, v, patch)
    sub = out[i0:i1, j0:j1]
    for (_, _, _, tex), w in zip(corners, weights):
        sub += w[..., None] * tex
    return out


def warp_backward(patch: np.ndarray, p: AugParams, upstream: np.ndarray,
                  convention: str = "printed", frame: str = "patch") -> WarpGrad:
    """Reverse-mode gradients of warp_patch wrt (s, r, tx, ty) and the patch pixels."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 3 or patch.shape[2] != 4:
        raise DomainError(f"patch must be (H, W, 4), got {patch.shape}")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim != 3 or upstream.shape[2] != 4:
        raise DomainError(f"upstream must be (H, W, 4), got {upstream.shape}")
    ch, cw = upstream.shape[:2]
    ph, pw = patch.shape[:2]
    sx2, sy2, _, _ = _frame_geometry((ph, pw), (ch, cw), frame)
    win = _support_window((ph, pw), p, (ch, cw), convention, frame)
    i0, i1, j0, j1 = win
    if i1 <= i0 or j1 <= j0:
        return WarpGrad(d_params=np.zeros(4), d_pixels=np.zeros_like(patch))
    upstream = upstream[i0:i1, j0:j1]
    u, v, xt, yt = _sample_coords((ph, pw), p, (ch, cw), convention, frame, win)
    corners, weights, a, b = _bilinear_cells(u, v, patch)
    (v00, u00, in00, t00), (v01, u01, in01, t01), \
        (v10, u10, in10, t10), (v11, u11, in11, t11) = corners

    # d(output)/du and /dv per canvas pixel, contracted with upstream over channels.
    dou = (1.0 - b)[..., None] * (t01 - t00) + b[..., None] * (t11 - t10)
    dov = (1.0 - a)[..., None] * (t10 - t00) + a[..., None] * (t11 - t01)
    g_u = np.einsum("ijc,ijc->ij", upstream, dou)
    g_v = np.einsum("ijc,ijc->ij", upstream, dov)

    # Through the pixel<->normalized mapping of the source frame.
    g_xs = g_u * (sx2 / 2.0)
    g_ys = g_v * (sy2 / 2.0)

    cr, sr = math.cos(p.r), math.sin(p.r)
    if convention == "printed":
        dxs_ds, dys_ds = cr * xt + sr * yt, -sr * xt + cr * yt
        dxs_dr = p.s * (-sr * xt + cr * yt)
        dys_dr = p.s * (-cr * xt - sr * yt)
    elif convention == "transposed":
        dxs_ds, dys_ds = cr * xt - sr * yt, sr * xt + cr * yt
        dxs_dr = p.s * (-sr * xt - cr * yt)
        dys_dr = p.s * (cr * xt - sr * yt)
    else:
        raise DomainError(f"unknown convention {convention!r}")

    d_s = float(np.sum(g_xs * dxs_ds + g_ys * dys_ds))
    d_r = float(np.sum(g_xs * dxs_dr + g_ys * dys_dr))
    d_tx = float(np.sum(g_xs))
    d_ty = float(np.sum(g_ys))

    d_pixels = np.zeros_like(patch)
    for (vv, uu, inside, _), w in zip(corners, weights):
        contrib = upstream * w[..., None]
        np.add.at(d_pixels, (vv[inside], uu[inside]), contrib[inside])
    return WarpGrad(d_params=np.array([d_s, d_r, d_tx, d_ty]), d_pixels=d_pixels)


def grad_check(patch: np.ndarray, p: AugParams, trials: int, h: float,
               rng: np.random.Generator | None = None,
               check_pixels: bool = False, frame: str = "patch") -> float:
    """Worst relative error of warp_backward's parameter gradients vs central differences.

    Each trial draws a random upstream and compares the four parameter
    gradients (and, optionally, a handful of pixel gradients) against
    (f(x+h) - f(x-h)) / 2h of the scalar loss sum(upstream * warp).
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if not (h > 0):
        raise DomainError("step h must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    patch = np.asarray(patch, dtype=np.float64)
    canvas = patch.shape[:2]
    worst = 0.0
    for _ in range(trials):
        upstream = rng.standard_normal((canvas[0], canvas[1], 4))
        grad = warp_backward(patch, p, upstream, frame=frame)

        def loss(params):
            q = AugParams(*params)
            return float(np.sum(upstream * warp_patch(patch, q, canvas, frame=frame)))

        base = np.array(p.as_tuple())
        for k in range(4):
            plus = base.copy()
            minus = base.copy()
            plus[k] += h
            minus[k] -= h
            fd = (loss(plus) - loss(minus)) / (2.0 * h)
            worst = max(worst, _rel_err(grad.d_params[k], fd))
        if check_pixels:
            flat = grad.d_pixels.reshape(-1)
            n_probe = max(1, flat.size // 20)
            for idx in rng.choice(flat.size, size=n_probe, replace=False):
                pp = patch.reshape(-1).copy()
                pp[idx] += h
                lp = float(np.sum(upstream * warp_patch(pp.reshape(patch.shape), p, canvas, frame=frame)))
                pp[idx] -= 2 * h
                lm = float(np.sum(upstream * warp_patch(pp.reshape(patch.shape), p, canvas, frame=frame)))
                fd = (lp - lm) / (2.0 * h)
                worst = max(worst, _rel_err(flat[idx], fd))
    return worst


def _rel_err(analytic: float, fd: float, floor: float = 1e-6) -> float:
    denom = max(abs(analytic), abs(fd))
    if denom < floor:
        return abs(analytic - fd)
    return abs(analytic - fd) / denom
