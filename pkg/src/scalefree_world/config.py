"""
Configuration management for the world engine.
"""

import os
from dataclasses import dataclass
from typing import Callable, Optional, TypeVar

from .utils import MASK64, setup_logger

logger = setup_logger(__name__)

T = TypeVar("T", int, float)


@dataclass(frozen=True)
class SceneLimits:
    """Structural limits enforced by the scene graph."""

    max_nesting: int = 64
    max_children: int = 4096


class EngineConfig:
    """Configuration class for engine-wide numerical and structural limits."""

    # Hard ceiling on nesting ("maximum node nesting level")
    MAX_NESTING_CEILING = 64

    DEFAULT_GRAVITATIONAL_CONSTANT = 6.674e-11
    DEFAULT_ANOMALY_EPSILON = 0.001
    DEFAULT_ANOMALY_MAX_ITERATIONS = 64
    DEFAULT_SPLIT_FACTOR = 1.5
    DEFAULT_MERGE_FACTOR = 2.0

    def __init__(self) -> None:
        """Initialize configuration with environment variables."""
        # Scene graph limits
        self.max_nesting = self._get_number("SNE_MAX_NESTING", int, 64)
        self.max_children = self._get_number("SNE_MAX_CHILDREN", int, 4096)

        # Orbital mechanics
        self.gravitational_constant = self._get_number(
            "SNE_GRAVITATIONAL_CONSTANT", float, self.DEFAULT_GRAVITATIONAL_CONSTANT
        )
        self.anomaly_epsilon = self._get_number(
            "SNE_ANOMALY_EPSILON", float, self.DEFAULT_ANOMALY_EPSILON
        )
        self.anomaly_max_iterations = self._get_number(
            "SNE_ANOMALY_MAX_ITERATIONS", int, self.DEFAULT_ANOMALY_MAX_ITERATIONS
        )

        # Partition hysteresis
        self.split_factor = self._get_number(
            "SNE_SPLIT_FACTOR", float, self.DEFAULT_SPLIT_FACTOR
        )
        self.merge_factor = self._get_number(
            "SNE_MERGE_FACTOR", float, self.DEFAULT_MERGE_FACTOR
        )

        # Batch execution
        self.seed = self._get_seed()
        self.jobs = self._get_number("SNE_JOBS", int, 1)

    def _get_number(self, name: str, kind: Callable[[str], T], default: T) -> T:
        """Get a numeric setting from the environment, keeping the default on bad input."""
        raw = os.getenv(name)
        if raw is None or raw.strip() == "":
            return default

        try:
            return kind(raw)
        except ValueError:
            logger.warning(f"Invalid value for {name}: {raw!r}, using default {default}")
            return default

    def _get_seed(self) -> Optional[int]:
        """Get the seed override from the environment."""
        raw = os.getenv("SNE_SEED")
        if raw is None or raw.strip() == "":
            return None

        try:
            seed = int(raw, 0)
        except ValueError:
            logger.warning(f"Invalid SNE_SEED {raw!r}, ignoring override")
            return None

        if not 0 <= seed <= MASK64:
            logger.warning(f"SNE_SEED {seed} outside the 64-bit range, ignoring override")
            return None

        return seed

    def validate(self) -> bool:
        """
        Validate that all settings are usable together.

        Returns:
            bool: True if the configuration is valid, False otherwise
        """
        errors = []

        if not 1 <= self.max_nesting <= self.MAX_NESTING_CEILING:
            errors.append(
                f"SNE_MAX_NESTING must be within [1, {self.MAX_NESTING_CEILING}]"
            )

        if self.max_children < 1:
            errors.append("SNE_MAX_CHILDREN must be positive")

        if self.gravitational_constant <= 0:
            errors.append("SNE_GRAVITATIONAL_CONSTANT must be positive")

        if self.anomaly_epsilon <= 0:
            errors.append("SNE_ANOMALY_EPSILON must be positive")

        if self.anomaly_max_iterations < 1:
            errors.append("SNE_ANOMALY_MAX_ITERATIONS must be positive")

        if self.split_factor <= 0:
            errors.append("SNE_SPLIT_FACTOR must be positive")

        if self.split_factor >= self.merge_factor:
            errors.append("SNE_SPLIT_FACTOR must be below SNE_MERGE_FACTOR")

        if self.jobs < 1:
            errors.append("SNE_JOBS must be positive")

        if errors:
            logger.error("Configuration validation failed:")
            for error in errors:
                logger.error(f"  - {error}")
            return False

        logger.debug("Configuration validation successful")
        return True

    def get_scene_limits(self) -> SceneLimits:
        """Get structural limits for scene graph validation."""
        return SceneLimits(max_nesting=self.max_nesting, max_children=self.max_children)
