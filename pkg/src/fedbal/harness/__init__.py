"""Configuration, presets, CLI, and result emission."""
