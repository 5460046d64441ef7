#!/usr/bin/python3
"""Per-domain trunk shared by the domain-specific encoder and the generator."""
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import ResidualBlock, conv_block, up_block


class DomainBranch(nn.Module):
    """
    Everything that reads images of one source domain X.

    encode() is s_X and generate() is G_X2Y. Both run the same trunk
    (stem plus two stride-2 stages) and differ only in their heads: a 1x1
    conv down to a single-channel embedding for s_X, and a fuse conv,
    residual blocks and two upsampling stages for G_X2Y. The guide
    embedding is resized to the bottleneck and channel-concatenated there.

    Args:
        channels: Image channels
        base: Width of the first stage (doubled at each downsampling)
        n_res: Residual blocks after the fuse conv
        embedding_size: Side of the single-channel embedding
        norm: "instance" or "none"
    """

    def __init__(self, channels=3, base=32, n_res=2, embedding_size=8,
                 norm="instance"):
        super().__init__()
        self.embedding_size = embedding_size
        feat = base * 4
        self.trunk = nn.Sequential(
            conv_block(channels, base, 7, 1, 3, norm),
            conv_block(base, base * 2, 3, 2, 1, norm),
            conv_block(base * 2, feat, 3, 2, 1, norm),
        )
        self.encoder_head = nn.Conv2d(feat, 1, 1)
        self.fuse = conv_block(feat + 1, feat, 3, 1, 1, norm)
        self.residual = nn.Sequential(
            *[ResidualBlock(feat, norm) for _ in range(n_res)]
        )
        self.up = nn.Sequential(
            up_block(feat, base * 2, norm),
            up_block(base * 2, base, norm),
        )
        self.to_image = nn.Conv2d(base, channels, 7, 1, 3)

    def encode(self, x):
        e = self.encoder_head(self.trunk(x))
        size = self.embedding_size
        if e.shape[-2:] != (size, size):
            e = F.adaptive_avg_pool2d(e, size)
        return e

    def generate(self, x, embedding):
        h = self.trunk(x)
        if embedding.shape[-2:] != h.shape[-2:]:
            embedding = F.interpolate(embedding, size=h.shape[-2:],
                                      mode="nearest")
        h = self.fuse(torch.cat([h, embedding], dim=1))
        h = self.residual(h)
        return torch.tanh(self.to_image(self.up(h)))
