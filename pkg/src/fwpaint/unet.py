"""Small convolutional U-Net used as a one-step refiner of painter outputs."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Model, uniform_init
from .tensor import DimensionError, Tensor

LEAK = 0.2


class UNet(Model):
    """Three stride-2 down blocks, a 3x3 bottleneck and three transposed-conv up blocks.

    Each up block concatenates the matching encoder activation (the input
    image for the last one) before a 3x3 conv; a 3x3 conv + tanh maps back to
    the image channels.
    """

    def __init__(self, channels: int, widths=(16, 32, 64), seed: int = 0, dtype=np.float32,
                 rng: np.random.Generator | None = None) -> None:
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.channels = channels
        self.widths = [int(w) for w in widths]
        if len(self.widths) != 3:
            raise ValueError("UNet takes exactly three widths")
        w1, w2, w3 = self.widths
        p: dict[str, Tensor] = {}

        def conv(name, cout, cin, k):
            p[f"{name}.w"] = uniform_init(rng, (cout, cin, k, k), cin * k * k, dtype)
            p[f"{name}.b"] = uniform_init(rng, (cout,), cin * k * k, dtype)

        def convt(name, cin, cout, k):
            p[f"{name}.w"] = uniform_init(rng, (cin, cout, k, k), cin * k * k // 4, dtype)
            p[f"{name}.b"] = uniform_init(rng, (cout,), cin * k * k // 4, dtype)

        conv("down0", w1, channels, 4)
        conv("down1", w2, w1, 4)
        conv("down2", w3, w2, 4)
        conv("mid", w3, w3, 3)
        convt("up2", w3, w2, 4)
        conv("fuse2", w2, w2 + w2, 3)
        convt("up1", w2, w1, 4)
        conv("fuse1", w1, w1 + w1, 3)
        convt("up0", w1, w1, 4)
        conv("fuse0", w1, w1 + channels, 3)
        conv("out", channels, w1, 3)
        self.params = p

    def _conv(self, name: str, x: Tensor, stride: int = 1, padding: int = 1) -> Tensor:
        return T.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride=stride, padding=padding)

    def _up(self, name: str, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride=2, padding=1)

    def refine(self, x) -> Tensor:
        """Image(s) (N, c, H, W) or (c, H, W) -> refined image(s) of the same shape in (-1, 1)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        single = x.ndim == 3
        if single:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"UNet expects (N, {self.channels}, H, W) input, got {x.shape}")
        H, W = x.shape[-2:]
        if H % 8 or W % 8:
            raise DimensionError(f"UNet needs spatial size divisible by 8, got {(H, W)}")
        act = lambda t: T.leaky_relu(t, LEAK)  # noqa: E731
        d0 = act(self._conv("down0", x, stride=2))
        d1 = act(self._conv("down1", d0, stride=2))
        d2 = act(self._conv("down2", d1, stride=2))
        m = act(self._conv("mid", d2))
        u2 = act(self._conv("fuse2", T.concat([act(self._up("up2", m)), d1], axis=1)))
        u1 = act(self._conv("fuse1", T.concat([act(self._up("up1", u2)), d0], axis=1)))
        u0 = act(self._conv("fuse0", T.concat([act(self._up("up0", u1)), x], axis=1)))
        y = T.tanh(self._conv("out", u0))
        return y.reshape(y.shape[1:]) if single else y

    __call__ = refine
