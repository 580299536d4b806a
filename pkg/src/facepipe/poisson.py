"""Seamless blending: discrete Poisson solve, soft masks, compositing.

Inside the masked region we solve, per channel, the 5-point system

    4 f_p - sum_{q in N4(p)} f_q = 4 g_p - sum_{q in N4(p)} g_q

with Dirichlet values f = target outside the mask, which matches the
gradient of the guidance image while agreeing with the target at the
seam.  Out-of-frame neighbors take the nearest in-frame target value on
the Dirichlet side and replicate the guidance on the right-hand side.
The system is symmetric positive definite and is solved with
Jacobi-preconditioned conjugate gradients in a fixed reduction order,
so results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BoundingBox, ImageBuffer, resize_bilinear

CG_TOLERANCE = 1e-8


@dataclass(frozen=True)
class PoissonProblem:
    """One blending task: match guidance gradients inside the mask.

    Attributes:
        target: image supplying the Dirichlet boundary (and untouched pixels).
        guidance: image whose gradients the solution reproduces.
        mask: 1-channel {0, 1} image; 1 marks unknown pixels.
        tol: relative residual ||b - Ax|| / ||b|| at which CG stops.
        max_iter: iteration cap; exceeded means no convergence (error).
    """

    target: ImageBuffer
    guidance: ImageBuffer
    mask: ImageBuffer
    tol: float = CG_TOLERANCE
    max_iter: int = 10000

    def __post_init__(self) -> None:
        if self.target.extent != self.guidance.extent or self.target.extent != self.mask.extent:
            raise ValueError("target, guidance, and mask extents must match")
        if self.target.channels != self.guidance.channels:
            raise ValueError("target and guidance channel counts must match")
        if self.mask.channels != 1:
            raise ValueError("mask must be 1-channel")
        vals = np.unique(self.mask.data)
        if not np.isin(vals, (0.0, 1.0)).all():
            raise ValueError("mask values must be exactly 0 or 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class PoissonResult:
    image: ImageBuffer
    iterations: int
    residual: float          # final relative residual, worst channel
    clamped_fraction: float  # fraction of solved pixels clipped into [0, 1]


def _laplacian_apply(x: np.ndarray, inside: np.ndarray) -> np.ndarray:
    """A x for the masked 5-point operator; x lives on the full grid,
    is zero outside the mask, and the result is restricted to the mask."""
    out = 4.0 * x
    out[1:, :] -= x[:-1, :]
    out[:-1, :] -= x[1:, :]
    out[:, 1:] -= x[:, :-1]
    out[:, :-1] -= x[:, 1:]
    return out[inside]


def _shift_sum(img: np.ndarray) -> np.ndarray:
    """Sum of 4-neighbor values with out-of-frame neighbors replicated."""
    out = np.zeros_like(img)
    out[1:, :] += img[:-1, :]
    out[0, :] += img[0, :]
    out[:-1, :] += img[1:, :]
    out[-1, :] += img[-1, :]
    out[:, 1:] += img[:, :-1]
    out[:, 0] += img[:, 0]
    out[:, :-1] += img[:, 1:]
    out[:, -1] += img[:, -1]
    return out


def _dirichlet_contrib(target: np.ndarray, inside: np.ndarray) -> np.ndarray:
    """Known-neighbor contribution to b: target values at non-mask
    neighbors, with out-of-frame neighbors taking the pixel's own value."""
    known = np.where(inside, 0.0, target)
    out = np.zeros_like(target)
    out[1:, :] += known[:-1, :]
    out[0, :] += target[0, :]
    out[:-1, :] += known[1:, :]
    out[-1, :] += target[-1, :]
    out[:, 1:] += known[:, :-1]
    out[:, 0] += target[:, 0]
    out[:, :-1] += known[:, 1:]
    out[:, -1] += target[:, -1]
    return out[inside]


def poisson_solve(problem: PoissonProblem) -> PoissonResult:
    """Blend guidance into target inside the mask; see module docstring.

    An all-zero mask returns the target unchanged.  If the target and
    guidance agree everywhere, the solution is the target itself (the
    initial guess already has zero residual).
    """
    inside = problem.mask.data[:, :, 0] == 1.0
    if not inside.any():
        return PoissonResult(problem.target, 0, 0.0, 0.0)

    out = problem.target.data.copy()
    worst_res, worst_iter, clamped = 0.0, 0, 0
    for ch in range(problem.target.channels):
        tgt = problem.target.data[:, :, ch]
        gui = problem.guidance.data[:, :, ch]
        b = 4.0 * gui[inside] - _shift_sum(gui)[inside] + _dirichlet_contrib(tgt, inside)
        x, iters, rel = _cg_masked(b, inside, gui[inside], problem.tol, problem.max_iter)
        if rel > problem.tol:
            raise RuntimeError(
                f"channel {ch}: CG stalled at relative residual {rel:.3e} "
                f"after {iters} iterations (tol {problem.tol:.1e})")
        clamped += int(((x < 0.0) | (x > 1.0)).sum())
        out[inside, ch] = np.clip(x, 0.0, 1.0)
        worst_res = max(worst_res, rel)
        worst_iter = max(worst_iter, iters)

    frac = clamped / (int(inside.sum()) * problem.target.channels)
    return PoissonResult(ImageBuffer(out), worst_iter, worst_res, frac)


def _cg_masked(b: np.ndarray, inside: np.ndarray, x0: np.ndarray,
               tol: float, max_iter: int) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned CG on the masked Laplacian (diagonal is 4)."""
    grid = np.zeros(inside.shape)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), 0, 0.0

    x = x0.copy()
    grid[inside] = x
    r = b - _laplacian_apply(grid, inside)
    z = r / 4.0
    p = z.copy()
    rz = float(r @ z)
    rel = float(np.linalg.norm(r)) / b_norm
    it = 0
    while rel > tol and it < max_iter:
        grid[inside] = p
        ap = _laplacian_apply(grid, inside)
        alpha = rz / float(p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        rel = float(np.linalg.norm(r)) / b_norm
        z = r / 4.0
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return x, it, rel


def dense_poisson_system(problem: PoissonProblem, channel: int = 0
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Explicit (A, b, index grid) for small problems; direct-solve oracle."""
    inside = problem.mask.data[:, :, 0] == 1.0
    h, w = inside.shape
    idx = np.full((h, w), -1, dtype=np.intp)
    idx[inside] = np.arange(int(inside.sum()))
    n = int(inside.sum())
    a = np.zeros((n, n))
    tgt = problem.target.data[:, :, channel]
    gui = problem.guidance.data[:, :, channel]
    b = np.zeros(n)
    for y, x in zip(*np.nonzero(inside)):
        i = idx[y, x]
        a[i, i] = 4.0
        rhs = 4.0 * gui[y, x]
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ny, nx = y + dy, x + dx
            if not (0 <= ny < h and 0 <= nx < w):
                rhs -= gui[y, x]       # replicated guidance neighbor
                b[i] += tgt[y, x]      # nearest in-frame Dirichlet value
            elif inside[ny, nx]:
                a[i, idx[ny, nx]] = -1.0
                rhs -= gui[ny, nx]
            else:
                rhs -= gui[ny, nx]
                b[i] += tgt[ny, nx]
        b[i] += rhs
    return a, b, idx


def soft_erode(mask: ImageBuffer, width: float = 7.0) -> ImageBuffer:
    """Ramp a binary mask toward its boundary.

    Each pixel takes clamp(d / width, 0, 1) where d is the exact
    Euclidean distance to the nearest zero pixel, so interior pixels
    deeper than ``width`` stay 1 and background stays 0.  width 0
    returns the binary mask unchanged.
    """
    if mask.channels != 1:
        raise ValueError("mask must be 1-channel")
    vals = np.unique(mask.data)
    if not np.isin(vals, (0.0, 1.0)).all():
        raise ValueError("mask values must be exactly 0 or 1")
    if width < 0:
        raise ValueError("width must be non-negative")
    if width == 0:
        return mask
    binary = mask.data[:, :, 0] == 1.0
    if binary.all():
        return mask  # no background to erode from
    dist = ndimage.distance_transform_edt(binary)
    return ImageBuffer(np.clip(dist / width, 0.0, 1.0)[:, :, None])


def composite(blended: ImageBuffer, target: ImageBuffer, soft_mask: ImageBuffer) -> ImageBuffer:
    """Per-pixel blend: soft_mask * blended + (1 - soft_mask) * target."""
    if blended.extent != target.extent or blended.extent != soft_mask.extent:
        raise ValueError("extents must match")
    if soft_mask.channels != 1:
        raise ValueError("soft mask must be 1-channel")
    s = soft_mask.data
    return ImageBuffer(np.clip(blended.data * s + target.data * (1.0 - s), 0.0, 1.0))


def box_rect(box: BoundingBox, extent: tuple[int, int]) -> tuple[int, int, int, int]:
    """Integer pixel rect (x0, y0, x1, y1) of a box; must lie in the frame."""
    x0 = int(round(box.cx - box.w / 2))
    y0 = int(round(box.cy - box.h / 2))
    x1 = int(round(box.cx + box.w / 2))
    y1 = int(round(box.cy + box.h / 2))
    if x0 < 0 or y0 < 0 or x1 > extent[0] or y1 > extent[1]:
        raise ValueError(f"box rect ({x0},{y0})-({x1},{y1}) outside frame {extent}")
    if x1 <= x0 or y1 <= y0:
        raise ValueError("box rect collapses to zero pixels")
    return x0, y0, x1, y1


def crop_box(frame: ImageBuffer, box: BoundingBox) -> ImageBuffer:
    x0, y0, x1, y1 = box_rect(box, frame.extent)
    return ImageBuffer(frame.data[y0:y1, x0:x1].copy())


def paste_back(frame: ImageBuffer, box: BoundingBox, patch: ImageBuffer) -> ImageBuffer:
    """Resize the patch into the box rect and write it into the frame.

    A patch already at the rect's extent is written without resampling,
    so pixels it leaves untouched stay bit-equal to the frame.
    """
    x0, y0, x1, y1 = box_rect(box, frame.extent)
    sized = resize_bilinear(patch, x1 - x0, y1 - y0)
    out = frame.data.copy()
    out[y0:y1, x0:x1] = sized.data
    return ImageBuffer(out)
