"""Desk-scale multi-modal dialogue modeling: a text+image seq2seq
transformer with late/early fusion, constrained beam decoding, staged
multi-task training, safety controls, and an interactive chat service."""

__version__ = "0.1.0"
