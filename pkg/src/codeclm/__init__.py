"""Desk-scale multi-task codec language model: ASR, MT and TTS in one decoder.

Submodules are imported explicitly (``codeclm.engine``, ``codeclm.codec`` ...)
so that importing the package stays cheap and environment variables set by the
CLI (thread caps) take effect before numpy loads.
"""

__version__ = "0.1.0"
