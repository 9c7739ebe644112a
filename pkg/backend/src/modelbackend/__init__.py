"""Reference model server for the mmcurate provider wire protocol."""

__version__ = "0.1.0"
