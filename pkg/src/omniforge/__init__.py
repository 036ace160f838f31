"""Omnidirectional image synthesis substrate: sphere geometry, viewport stitching,
editing-pair construction and a toy flow-matching core."""

__version__ = "0.1.0"
