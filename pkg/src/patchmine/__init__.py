"""Dual-resolution visual front-end with patch info mining."""

from .encoder import ConfigError, EncoderConfig, EncoderWeights, FeatureGrid, VisualTokens
from .mining import MiningWeights, mine, mine_grad, mine_reference

__version__ = "0.1.0"
