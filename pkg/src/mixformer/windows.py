"""Non-overlapping window partition of NCHW maps, its inverse, and attention masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, pad, reshape, roll, transpose

MASK_VALUE = -1e9


@dataclass(frozen=True)
class WindowLayout:
    window_size: int
    height: int
    width: int
    padded_height: int
    padded_width: int
    shift: int = 0

    @property
    def pad_bottom(self) -> int:
        return self.padded_height - self.height

    @property
    def pad_right(self) -> int:
        return self.padded_width - self.width

    @property
    def rows(self) -> int:
        return self.padded_height // self.window_size

    @property
    def cols(self) -> int:
        return self.padded_width // self.window_size

    @property
    def num_windows(self) -> int:
        return self.rows * self.cols

    @property
    def tokens(self) -> int:
        return self.window_size * self.window_size


def make_layout(height: int, width: int, window_size: int, shift: int = 0) -> WindowLayout:
    if window_size < 1:
        raise ValueError(f"window size must be >= 1, got {window_size}")
    if shift not in (0, window_size // 2):
        raise ValueError(f"shift must be 0 or {window_size // 2} for window {window_size}, got {shift}")
    k = window_size
    return WindowLayout(k, height, width, -(-height // k) * k, -(-width // k) * k, shift)


def _to_windows(grid: np.ndarray, k: int) -> np.ndarray:
    """(Hp, Wp) -> (nW, K*K) in the same order as window_partition."""
    hp, wp = grid.shape
    return grid.reshape(hp // k, k, wp // k, k).transpose(0, 2, 1, 3).reshape(-1, k * k)


def attention_mask(layout: WindowLayout) -> np.ndarray:
    """Additive mask (nW, K*K, K*K): 0 for allowed pairs, ``MASK_VALUE`` otherwise.

    A pair is blocked when either token is padding or, with a shift, when
    the two tokens came from opposite sides of the cyclic wrap. The
    diagonal stays open so a padding token attends to itself and every
    softmax row has at least one finite entry.
    """
    k, s = layout.window_size, layout.shift
    hp, wp = layout.padded_height, layout.padded_width
    padded = np.zeros((hp, wp), dtype=bool)
    padded[layout.height :, :] = True
    padded[:, layout.width :] = True
    region = np.zeros((hp, wp), dtype=np.int64)
    if s:
        padded = np.roll(padded, (-s, -s), axis=(0, 1))
        bands = (slice(0, hp - k), slice(hp - k, hp - s), slice(hp - s, hp))
        cols = (slice(0, wp - k), slice(wp - k, wp - s), slice(wp - s, wp))
        label = 0
        for hs in bands:
            for ws in cols:
                region[hs, ws] = label
                label += 1
    pad_w = _to_windows(padded, k)
    reg_w = _to_windows(region, k)
    blocked = (reg_w[:, :, None] != reg_w[:, None, :]) | pad_w[:, :, None] | pad_w[:, None, :]
    blocked &= ~np.eye(k * k, dtype=bool)
    return np.where(blocked, MASK_VALUE, 0.0)


def window_partition(x: Tensor, window_size: int, shift: int = 0):
    """Split (N, C, H, W) into windows of shape (N * nW, K * K, C).

    Zero-pads right/bottom to multiples of ``window_size`` and rolls by
    ``-shift`` on both spatial axes first. Returns ``(windows, layout, mask)``.
    """
    if x.ndim != 4:
        raise ValueError(f"window_partition expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    layout = make_layout(h, w, window_size, shift)
    k = window_size
    xp = pad(x, ((0, 0), (0, 0), (0, layout.pad_bottom), (0, layout.pad_right)))
    if shift:
        xp = roll(xp, (-shift, -shift), (2, 3))
    xw = reshape(xp, (n, c, layout.rows, k, layout.cols, k))
    xw = transpose(xw, (0, 2, 4, 3, 5, 1))
    windows = reshape(xw, (n * layout.num_windows, k * k, c), layout="NLC")
    return windows, layout, attention_mask(layout)


def window_reverse(windows: Tensor, layout: WindowLayout) -> Tensor:
    """Inverse of :func:`window_partition`: back to (N, C, H, W)."""
    k = layout.window_size
    if windows.ndim != 3 or windows.shape[1] != k * k or windows.shape[0] % layout.num_windows:
        raise ValueError(f"windows of shape {windows.shape} do not match layout {layout}")
    n = windows.shape[0] // layout.num_windows
    c = windows.shape[2]
    xw = reshape(windows, (n, layout.rows, layout.cols, k, k, c))
    xw = transpose(xw, (0, 5, 1, 3, 2, 4))
    xp = reshape(xw, (n, c, layout.padded_height, layout.padded_width))
    if layout.shift:
        xp = roll(xp, (layout.shift, layout.shift), (2, 3))
    if layout.pad_bottom or layout.pad_right:
        xp = xp[:, :, : layout.height, : layout.width]
    return reshape(xp, xp.shape, layout="NCHW")
