"""Frame rendering for paint traces and DeltaNet fast-weight evolutions.

Every frame goes through the same pipeline: divide by the Frobenius norm
of the final matrix, apply tanh, then rescale per frame. Image frames are
min-max scaled to [0, 1]; signed fast-weight frames are scaled by their
largest magnitude to [-1, 1] and coloured blue-white-red so that zero
stays neutral.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import write_rgb8
from .painter import PaintTrace


class RenderError(ValueError):
    pass


def _norm(final: np.ndarray) -> float:
    n = float(np.linalg.norm(np.asarray(final, dtype=np.float64).ravel()))
    return n if n > 0 else 1.0


def minmax(frame: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant frame maps to 0.5."""
    lo, hi = frame.min(), frame.max()
    if hi - lo <= 0:
        return np.full_like(frame, 0.5)
    return (frame - lo) / (hi - lo)


def maxabs(frame: np.ndarray) -> np.ndarray:
    """Scale to [-1, 1] by the largest magnitude; zero stays zero."""
    m = np.abs(frame).max()
    return frame / m if m > 0 else np.zeros_like(frame)


def trace_frames(trace: PaintTrace) -> tuple[np.ndarray, np.ndarray]:
    """Normalised (update, cumulative) frames, each (T, c, H, W) in [0, 1]."""
    if trace is None or len(trace) == 0:
        raise RenderError("cannot render an empty trace")
    if trace.updates.ndim != 4:
        raise RenderError(f"expected an unbatched trace, got updates of shape {trace.updates.shape}")
    n = _norm(trace.final)
    upd = np.tanh(np.asarray(trace.updates, dtype=np.float64) / n)
    cum = np.tanh(np.asarray(trace.cumulative, dtype=np.float64) / n)
    return np.stack([minmax(f) for f in upd]), np.stack([minmax(f) for f in cum])


def to_rgb(frame: np.ndarray, scale: int = 1) -> np.ndarray:
    """(c, H, W) frame in [0, 1] -> (H*scale, W*scale, 3) uint8; one channel becomes gray."""
    if frame.shape[0] == 1:
        frame = np.repeat(frame, 3, axis=0)
    px = np.clip(np.floor(frame * 255.0 + 0.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    if scale > 1:
        px = px.repeat(scale, axis=0).repeat(scale, axis=1)
    return px


def signed_rgb(frame: np.ndarray, scale: int = 1) -> np.ndarray:
    """(H, W) values in [-1, 1] -> blue (-1), white (0), red (+1) uint8 image."""
    s = np.clip(frame, -1.0, 1.0)
    pos, neg = np.clip(s, 0, None), np.clip(-s, 0, None)
    rgb = np.stack([1.0 - neg, 1.0 - pos - neg, 1.0 - pos], axis=-1)
    px = np.clip(np.floor(rgb * 255.0 + 0.5), 0, 255).astype(np.uint8)
    if scale > 1:
        px = px.repeat(scale, axis=0).repeat(scale, axis=1)
    return px


def grid(rows: list[list[np.ndarray]]) -> np.ndarray:
    """Tile equally sized (h, w, 3) frames; frame (r, t) fills rows r*h.. and cols t*w.."""
    h, w, _ = rows[0][0].shape
    out = np.zeros((len(rows) * h, max(len(r) for r in rows) * w, 3), dtype=np.uint8)
    for r, row in enumerate(rows):
        for t, f in enumerate(row):
            out[r * h:(r + 1) * h, t * w:(t + 1) * w] = f
    return out


def render_trace(trace: PaintTrace, out_dir, scale: int = 1, raw: bool = False) -> list[Path]:
    """Write ``step_{t:03}_{update|cumulative}.png`` (t from 1) and ``trace_grid.png``.

    With ``raw`` the un-normalised updates, cumulative images and final
    image are also saved as ``trace_raw.npz``.
    """
    upd, cum = trace_frames(trace)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    top, bottom = [], []
    for t in range(len(upd)):
        for kind, frames, row in (("update", upd, top), ("cumulative", cum, bottom)):
            px = to_rgb(frames[t], scale)
            p = out_dir / f"step_{t + 1:03d}_{kind}.png"
            write_rgb8(p, px)
            paths.append(p)
            row.append(px)
    p = out_dir / "trace_grid.png"
    write_rgb8(p, grid([top, bottom]))
    paths.append(p)
    if raw:
        p = out_dir / "trace_raw.npz"
        np.savez(p, updates=trace.updates, cumulative=trace.cumulative, final=trace.final)
        paths.append(p)
    return paths


def fastweight_frames(updates: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalised signed frames for one head: inputs (steps, d_out, d_key), outputs in [-1, 1]."""
    updates = np.asarray(updates, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if updates.ndim != 3 or updates.shape != weights.shape or len(updates) == 0:
        raise RenderError(f"expected matching (steps, d_out, d_key) arrays, got {updates.shape} and {weights.shape}")
    n = _norm(weights[-1])
    u = np.stack([maxabs(f) for f in np.tanh(updates / n)])
    w = np.stack([maxabs(f) for f in np.tanh(weights / n)])
    return u, w


def render_fastweights(record, out_dir, head: int = 0, example: int = 0, scale: int = 8) -> list[Path]:
    """Render one head of a recorded DeltaNet layer as update and fast-weight rows.

    ``record`` is a :class:`~fwpaint.deltanet.FastWeightRecord` or a pair of
    arrays shaped (steps, B, heads, d_out, d_key).
    """
    updates, weights = record.arrays() if hasattr(record, "arrays") else record
    updates = np.asarray(updates)[:, example, head]
    weights = np.asarray(weights)[:, example, head]
    u, w = fastweight_frames(updates, weights)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths, top, bottom = [], [], []
    for t in range(len(u)):
        for kind, frames, row in (("update", u, top), ("cumulative", w, bottom)):
            px = signed_rgb(frames[t], scale)
            p = out_dir / f"step_{t + 1:03d}_{kind}.png"
            write_rgb8(p, px)
            paths.append(p)
            row.append(px)
    p = out_dir / "trace_grid.png"
    write_rgb8(p, grid([top, bottom]))
    paths.append(p)
    return paths
