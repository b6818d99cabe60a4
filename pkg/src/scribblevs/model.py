"""Compact 2D U-Net backbone."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn
import torch.nn.functional as F

from scribblevs.labels import ConfigError, StructureError


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 1
    num_classes: int = 4
    base_width: int = 16
    depth: int = 4

    def __post_init__(self):
        if min(self.in_channels, self.num_classes, self.base_width, self.depth) < 1:
            raise ConfigError(f"invalid UNetConfig {self}")

    def to_dict(self) -> dict:
        return asdict(self)


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class ConvBlock(nn.Sequential):
    def __init__(self, cin: int, cout: int):
        super().__init__(
            nn.Conv2d(cin, cout, 3, padding=1),
            nn.GroupNorm(_groups(cout), cout),
            nn.LeakyReLU(0.01, inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            nn.GroupNorm(_groups(cout), cout),
            nn.LeakyReLU(0.01, inplace=True),
        )


class UNet(nn.Module):
    """Encoder/decoder with skip connections and a 1x1 classifier head.

    Input height and width must be divisible by ``2 ** (depth - 1)``.
    Normalization is GroupNorm so batch size 1 behaves like any other.
    """

    def __init__(self, config: UNetConfig = UNetConfig()):
        super().__init__()
        self.config = config
        widths = [config.base_width * 2**i for i in range(config.depth)]
        self.encoders = nn.ModuleList(
            ConvBlock(config.in_channels if i == 0 else widths[i - 1], widths[i]) for i in range(config.depth)
        )
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2) for i in range(config.depth - 1)
        )
        self.decoders = nn.ModuleList(ConvBlock(2 * widths[i], widths[i]) for i in range(config.depth - 1))
        self.head = nn.Conv2d(widths[0], config.num_classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        unbatched = x.dim() == 3
        if unbatched:
            x = x.unsqueeze(0)
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise StructureError(
                f"expected (B, {self.config.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        factor = 2 ** (self.config.depth - 1)
        if x.shape[-2] % factor or x.shape[-1] % factor:
            raise StructureError(f"spatial dims {tuple(x.shape[-2:])} not divisible by {factor}")
        skips = []
        for i, enc in enumerate(self.encoders):
            if i:
                x = F.max_pool2d(x, 2)
            x = enc(x)
            skips.append(x)
        for i in reversed(range(self.config.depth - 1)):
            x = self.decoders[i](torch.cat([skips[i], self.ups[i](x)], dim=1))
        out = self.head(x)
        return out.squeeze(0) if unbatched else out


def build_model(config: UNetConfig, seed: int | None = None) -> UNet:
    if seed is None:
        return UNet(config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return UNet(config)
