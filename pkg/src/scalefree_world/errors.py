"""
Exception root shared by every engine module.
"""


class EngineError(Exception):
    """Base exception for all engine operations."""

    pass
