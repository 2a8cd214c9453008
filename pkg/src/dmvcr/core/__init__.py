"""Core domain models and services."""
