"""Test package for dmvcr."""
