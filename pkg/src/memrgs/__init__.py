"""Memristive analog gain control, reflective gain-space scheduling and global BMI synthesis."""

__version__ = "0.1.0"
