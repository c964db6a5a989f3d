"""Frame-level multi-pitch streaming: pianoroll prediction with pitch and instrument marginals."""

__version__ = "0.1.0"
