"""Discriminator with auxiliary reconstruction decoders, and the GAN losses."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Model, uniform_init
from .tensor import DimensionError, Tensor

LEAK = 0.2


def _ladder_depth(resolution: int) -> int:
    if resolution < 16 or resolution & (resolution - 1):
        raise DimensionError(f"discriminator needs a power-of-two resolution >= 16, got {resolution}")
    return int(np.log2(resolution // 4))


class Discriminator(Model):
    """Stride-2 conv ladder down to 4x4, a 4x4 scoring conv, and two decoders.

    The 8x8 decoder reads the 4x4 feature map, the 16x16 decoder reads the
    8x8 feature map. Channel widths are the leading entries of ``widths``
    (one per stride-2 stage).
    """

    def __init__(self, channels: int, resolution: int, widths=(32, 64, 128, 256),
                 dec_width: int = 16, seed: int = 0, dtype=np.float32,
                 rng: np.random.Generator | None = None) -> None:
        depth = _ladder_depth(resolution)
        if len(widths) < depth:
            raise DimensionError(f"resolution {resolution} needs {depth} widths, got {list(widths)}")
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.channels, self.resolution, self.depth = channels, resolution, depth
        self.widths = [int(w) for w in widths[:depth]]
        p: dict[str, Tensor] = {}
        cin = channels
        for i, w in enumerate(self.widths):
            p[f"down{i}.w"] = uniform_init(rng, (w, cin, 4, 4), cin * 16, dtype)
            p[f"down{i}.b"] = uniform_init(rng, (w,), cin * 16, dtype)
            cin = w
        p["head.w"] = uniform_init(rng, (1, cin, 4, 4), cin * 16, dtype)
        p["head.b"] = uniform_init(rng, (1,), cin * 16, dtype)
        for name, src in (("dec8", self.widths[-1]), ("dec16", self.widths[-2] if depth > 1 else channels)):
            p[f"{name}.up.w"] = uniform_init(rng, (src, dec_width, 4, 4), src * 4, dtype)
            p[f"{name}.up.b"] = uniform_init(rng, (dec_width,), src * 4, dtype)
            p[f"{name}.out.w"] = uniform_init(rng, (channels, dec_width, 3, 3), dec_width * 9, dtype)
            p[f"{name}.out.b"] = uniform_init(rng, (channels,), dec_width * 9, dtype)
        self.params = p

    def _decode(self, name: str, feat: Tensor) -> Tensor:
        p = self.params
        h = T.leaky_relu(T.conv_transpose2d(feat, p[f"{name}.up.w"], p[f"{name}.up.b"], stride=2, padding=1), LEAK)
        return T.tanh(T.conv2d(h, p[f"{name}.out.w"], p[f"{name}.out.b"], padding=1))

    def forward(self, x: Tensor, with_recon: bool = True):
        """Images (N, c, R, R) -> (scores (N,), recon8 (N, c, 8, 8), recon16 (N, c, 16, 16)).

        With ``with_recon=False`` only the scores are computed.
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        expected = (self.channels, self.resolution, self.resolution)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise DimensionError(f"discriminator expects (N, {', '.join(map(str, expected))}) input, got {x.shape}")
        p = self.params
        feats = [x]
        h = x
        for i in range(self.depth):
            h = T.leaky_relu(T.conv2d(h, p[f"down{i}.w"], p[f"down{i}.b"], stride=2, padding=1), LEAK)
            feats.append(h)
        score = T.conv2d(h, p["head.w"], p["head.b"]).reshape(-1)
        if not with_recon:
            return score, None, None
        recon8 = self._decode("dec8", feats[-1])
        recon16 = self._decode("dec16", feats[-2])
        return score, recon8, recon16

    __call__ = forward


def d_forward(disc: Discriminator, x):
    return disc.forward(x)


def hinge_d_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """``mean(relu(1 - real)) + mean(relu(1 + fake))``."""
    return T.mean(T.relu(1.0 - real_scores)) + T.mean(T.relu(1.0 + fake_scores))


def hinge_g_loss(fake_scores: Tensor) -> Tensor:
    return -T.mean(fake_scores)


def recon_loss(recon8: Tensor, recon16: Tensor, real: Tensor) -> Tensor:
    """Sum over the two resolutions of the mean absolute error to box-downsampled reals."""
    real = real if isinstance(real, Tensor) else Tensor(real)
    R = real.shape[-1]
    if R % 16:
        raise DimensionError(f"reconstruction targets need a resolution divisible by 16, got {R}")
    t8 = T.box_downsample(real, R // 8)
    t16 = T.box_downsample(real, R // 16)
    if recon8.shape != t8.shape or recon16.shape != t16.shape:
        raise DimensionError(f"reconstructions {recon8.shape}, {recon16.shape} do not match targets {t8.shape}, {t16.shape}")
    return T.mean(T.absolute(recon8 - t8)) + T.mean(T.absolute(recon16 - t16))
