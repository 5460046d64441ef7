#!/usr/bin/python3
"""PatchGAN discriminator used for both realism and guess roles."""
import torch.nn as nn

from .blocks import norm_layer


def patch_map_size(resolution: int, n_down: int) -> int:
    """
    Side of the score map for a square input.

    Each 4x4 stride-2 conv with padding 1 maps n to (n - 2) // 2 + 1; the
    two trailing 3x3 stride-1 convs keep the size.
    """
    size = resolution
    for _ in range(n_down):
        size = (size + 2 - 4) // 2 + 1
    return size


class PatchDiscriminator(nn.Module):
    """
    Fully convolutional critic returning one unbounded score per patch.

    The guess discriminator is the same network over the channel
    concatenation of an ordered image pair (in_channels = 6).
    """

    def __init__(self, in_channels=3, base=32, n_down=2, norm="instance"):
        super().__init__()
        layers = [nn.Conv2d(in_channels, base, 4, 2, 1), nn.LeakyReLU(0.2)]
        ch = base
        for _ in range(1, n_down):
            layers += [
                nn.Conv2d(ch, ch * 2, 4, 2, 1),
                norm_layer(norm, ch * 2),
                nn.LeakyReLU(0.2),
            ]
            ch *= 2
        layers += [
            nn.Conv2d(ch, ch, 3, 1, 1),
            norm_layer(norm, ch),
            nn.LeakyReLU(0.2),
            nn.Conv2d(ch, 1, 3, 1, 1),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)
