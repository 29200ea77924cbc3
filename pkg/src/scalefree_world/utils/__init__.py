from .logging import setup_logger
from .seeding import MASK64, attribute_rng, mix_seed

__all__ = ["setup_logger", "attribute_rng", "mix_seed", "MASK64"]
