"""Tests for the EngineConfig class."""

import os
from unittest.mock import patch

from scalefree_world.config import EngineConfig, SceneLimits


class TestEngineConfig:
    """Test suite for EngineConfig."""

    @patch.dict(os.environ, {}, clear=True)
    def test_init_default_values(self):
        """Test that default values are set correctly."""
        config = EngineConfig()

        assert config.max_nesting == 64
        assert config.max_children == 4096
        assert config.gravitational_constant == 6.674e-11
        assert config.anomaly_epsilon == 0.001
        assert config.anomaly_max_iterations == 64
        assert config.split_factor == 1.5
        assert config.merge_factor == 2.0
        assert config.seed is None
        assert config.jobs == 1

    @patch.dict(
        os.environ,
        {
            "SNE_MAX_NESTING": "12",
            "SNE_GRAVITATIONAL_CONSTANT": "1.0",
            "SNE_ANOMALY_EPSILON": "1e-9",
            "SNE_JOBS": "4",
        },
    )
    def test_init_with_env_vars(self):
        """Test initialization with environment variables."""
        config = EngineConfig()

        assert config.max_nesting == 12
        assert config.gravitational_constant == 1.0
        assert config.anomaly_epsilon == 1e-9
        assert config.jobs == 4

    @patch.dict(os.environ, {}, clear=True)
    def test_validate_success(self):
        """Test successful validation of the defaults."""
        assert EngineConfig().validate()

    @patch.dict(os.environ, {"SNE_MAX_NESTING": "invalid"})
    def test_invalid_number_keeps_default(self):
        """Test that an unparsable value falls back to the default."""
        config = EngineConfig()

        assert config.max_nesting == 64

    @patch.dict(os.environ, {"SNE_SEED": "0x2a"})
    def test_seed_accepts_prefixed_integers(self):
        """Test that SNE_SEED parses hexadecimal seeds."""
        assert EngineConfig().seed == 42

    @patch.dict(os.environ, {"SNE_SEED": "-1"})
    def test_seed_out_of_range_is_ignored(self):
        """Test that a negative seed does not override anything."""
        assert EngineConfig().seed is None

    @patch.dict(os.environ, {"SNE_MAX_NESTING": "65"})
    def test_validate_nesting_ceiling(self):
        """Test that nesting above the hard ceiling fails validation."""
        assert not EngineConfig().validate()

    @patch.dict(os.environ, {"SNE_SPLIT_FACTOR": "2.5", "SNE_MERGE_FACTOR": "2.0"})
    def test_validate_hysteresis_order(self):
        """Test that the split distance must stay below the merge distance."""
        assert not EngineConfig().validate()

    @patch.dict(os.environ, {"SNE_GRAVITATIONAL_CONSTANT": "0"})
    def test_validate_gravitational_constant(self):
        """Test that G must be positive."""
        assert not EngineConfig().validate()

    @patch.dict(os.environ, {"SNE_JOBS": "0"})
    def test_validate_jobs(self):
        """Test that the worker count must be positive."""
        assert not EngineConfig().validate()

    @patch.dict(os.environ, {"SNE_MAX_NESTING": "10", "SNE_MAX_CHILDREN": "8"})
    def test_scene_limits(self):
        """Test scene limits configuration."""
        limits = EngineConfig().get_scene_limits()

        assert limits == SceneLimits(max_nesting=10, max_children=8)
