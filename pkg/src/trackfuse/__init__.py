"""Tracking front-end for driving-scenario question answering.

Subpackages cover the full pipeline: domain types (:mod:`trackfuse.core`),
camera geometry (:mod:`trackfuse.geometry`), key-object selection
(:mod:`trackfuse.track_context`), a dense reverse-mode autodiff kernel
(:mod:`trackfuse.autodiff`), trajectory/ego encoders
(:mod:`trackfuse.traj_encoder`), query-former fusion
(:mod:`trackfuse.query_former`), synthetic scenes (:mod:`trackfuse.scenegen`),
automated QA annotation (:mod:`trackfuse.annotate`), proxy pretraining
(:mod:`trackfuse.train`), and the benchmark metric suite
(:mod:`trackfuse.evalkit`).
"""

__version__ = "0.1.0"
