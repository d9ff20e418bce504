"""Modular object-interaction world models.

Phase 1 trains a bank of pairwise mechanism networks with winner-takes-all
gradient allocation over mixed environments; Phase 2 adapts to a new
environment by fitting only a mechanism-context classifier on top of the
frozen bank. Ships with two synthetic domains, a monolithic message-passing
baseline, and the evaluation protocols comparing them.
"""

__version__ = "0.1.0"
