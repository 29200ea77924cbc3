"""Test suite for the scale-free world engine."""
