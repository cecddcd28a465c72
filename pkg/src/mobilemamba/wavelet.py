"""Single-level 2-D Haar analysis / synthesis and the wavelet-domain conv branch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import F32, BatchNormParams, ConvSpec, ShapeError, as_tensor, batchnorm2d, conv2d

BAND_NAMES = ("LL", "LH", "HL", "HH")


@dataclass(frozen=True)
class HaarFilterBank:
    """Four 2x2 filters stacked as ``(4, 2, 2)`` in LL, LH, HL, HH order."""

    filters: np.ndarray

    def __post_init__(self):
        if self.filters.shape != (4, 2, 2):
            raise ShapeError(f"filter bank must be (4, 2, 2), got {self.filters.shape}")

    def gram(self) -> np.ndarray:
        flat = self.filters.reshape(4, 4).astype(np.float64)
        return flat @ flat.T


def haar_bank() -> HaarFilterBank:
    f = 0.5 * np.array(
        [
            [[1, 1], [1, 1]],      # LL
            [[1, -1], [1, -1]],    # LH
            [[1, 1], [-1, -1]],    # HL
            [[1, -1], [-1, 1]],    # HH
        ],
        dtype=F32,
    )
    return HaarFilterBank(f)


HAAR = haar_bank()


def pad_even(x) -> tuple[np.ndarray, tuple[int, int]]:
    """Zero-pad one row/column at the bottom/right when a spatial dim is odd."""
    x = as_tensor(x)
    h, w = x.shape[2:]
    ph, pw = h % 2, w % 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)))
    return x, (h, w)


def wt2d(x, bank: HaarFilterBank = HAAR) -> np.ndarray:
    """Stride-2 correlation with each filter; output ``(n, 4c, ceil(h/2), ceil(w/2))``.

    Channel layout is ``[LL | LH | HL | HH]``, each block ``c`` channels.
    """
    x, _ = pad_even(x)
    f = bank.filters
    taps = [[x[:, :, p::2, q::2] for q in range(2)] for p in range(2)]
    bands = [
        f[k, 0, 0] * taps[0][0] + f[k, 0, 1] * taps[0][1] + f[k, 1, 0] * taps[1][0] + f[k, 1, 1] * taps[1][1]
        for k in range(4)
    ]
    return np.concatenate(bands, axis=1).astype(F32, copy=False)


def iwt2d(y, bank: HaarFilterBank = HAAR, size: tuple[int, int] | None = None) -> np.ndarray:
    """Synthesis (transposed stride-2 correlation); crops to ``size`` if given."""
    y = as_tensor(y)
    n, c4, h2, w2 = y.shape
    if c4 % 4:
        raise ShapeError(f"iwt2d needs channels divisible by 4, got {c4}")
    c = c4 // 4
    bands = [y[:, k * c:(k + 1) * c] for k in range(4)]
    f = bank.filters
    out = np.empty((n, c, 2 * h2, 2 * w2), dtype=F32)
    for p in range(2):
        for q in range(2):
            out[:, :, p::2, q::2] = sum(f[k, p, q] * bands[k] for k in range(4))
    if size is not None:
        out = out[:, :, :size[0], :size[1]]
    return np.ascontiguousarray(out)


def wte_branch(x, conv_weight, conv_bias=None, bn: BatchNormParams | None = None,
               bank: HaarFilterBank = HAAR) -> np.ndarray:
    """pad -> WT -> depthwise 3x3 (+BN) on 4c channels -> IWT -> crop."""
    x = as_tensor(x)
    size = x.shape[2:]
    z = wt2d(x, bank)
    c4 = z.shape[1]
    k = np.asarray(conv_weight).shape[-1]
    z = conv2d(z, conv_weight, conv_bias, ConvSpec(kernel=k, padding=k // 2, groups=c4))
    if bn is not None:
        z = batchnorm2d(z, bn)
    return iwt2d(z, bank, size=size)
