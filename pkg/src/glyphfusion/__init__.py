"""Style-to-glyph latent diffusion steered by a latent-space discriminator.

The subpackages build on each other: ``tensor`` (autodiff) underlies ``nn``,
``codec``, ``diffusion`` and ``adversary``; ``glyphs`` renders stroke fonts;
``ranking`` scores candidates; ``cli`` drives the whole pipeline.
"""

from .errors import (ArgumentError, ConfigurationError, ContractError, CorruptionError,
                     DimensionError, FormatError, GlyphFusionError, GlyphMissingError, ParseError,
                     TrainingAborted)

__version__ = "0.1.0"

__all__ = [
    "ArgumentError", "ConfigurationError", "ContractError", "CorruptionError", "DimensionError",
    "FormatError", "GlyphFusionError", "GlyphMissingError", "ParseError", "TrainingAborted",
]
