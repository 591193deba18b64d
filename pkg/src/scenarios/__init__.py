"""Packaged scenario configs (TOML)."""
