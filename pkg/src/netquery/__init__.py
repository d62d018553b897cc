"""Distributed evaluation of first-order and fixpoint graph queries.

Library + CLI: a deterministic synchronous message-passing simulator, node
automata for FO/FP query evaluation, a rule language with localized distributed
semantics, a centralized-to-distributed rule compiler, and local-fragment
engines for identified, locally-consistent, and anonymous port-numbered
networks — all verified against a centralized oracle.
"""

__version__ = "0.1.0"
