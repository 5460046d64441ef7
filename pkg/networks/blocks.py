#!/usr/bin/python3
"""Shared convolutional building blocks."""
import torch.nn as nn

NORMS = ("instance", "none")


def norm_layer(kind: str, channels: int) -> nn.Module:
    """Return the normalisation layer named by kind."""
    if kind == "instance":
        return nn.InstanceNorm2d(channels)
    if kind == "none":
        return nn.Identity()
    raise ValueError(f"unknown norm: {kind!r} (expected one of {NORMS})")


def conv_block(in_ch, out_ch, kernel, stride=1, padding=0, norm="instance"):
    """Conv -> norm -> ReLU."""
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride, padding),
        norm_layer(norm, out_ch),
        nn.ReLU(),
    )


def up_block(in_ch, out_ch, norm="instance"):
    """Transposed conv doubling the spatial size -> norm -> ReLU."""
    return nn.Sequential(
        nn.ConvTranspose2d(in_ch, out_ch, 3, stride=2, padding=1,
                           output_padding=1),
        norm_layer(norm, out_ch),
        nn.ReLU(),
    )


class ResidualBlock(nn.Module):
    """Two 3x3 convs with an identity skip."""

    def __init__(self, channels, norm="instance"):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            norm_layer(norm, channels),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, 1, 1),
            norm_layer(norm, channels),
        )

    def forward(self, x):
        return x + self.block(x)


def init_weights(module: nn.Module, std: float = 0.02):
    """Normal(0, std) conv weights and zero biases; use with Module.apply."""
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, std)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
