"""Convolutional networks behind the encoder, generator and discriminator roles."""
from .discriminator import PatchDiscriminator, patch_map_size  # noqa
from .generator import DomainBranch  # noqa
