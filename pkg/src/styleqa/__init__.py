"""Stylized contextual question answering at multi-tenant scale.

Context rides in the prompt via lexical retrieval; author style rides in
per-cluster low-rank adapters selected through a hierarchical style tree.
"""

__version__ = "0.1.0"
