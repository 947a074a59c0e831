"""Dependency-constrained transformer toolkit."""

from ._structlab import (
    Model,
    attachment_scores,
    calibrate,
    decode_parents,
    distance_to_tree,
    joint_parse,
    parent_dist,
    run_cli,
    span_f1,
    toy_corpus,
    tree_spans,
)

__all__ = [
    "Model",
    "attachment_scores",
    "calibrate",
    "decode_parents",
    "distance_to_tree",
    "joint_parse",
    "parent_dist",
    "run_cli",
    "span_f1",
    "toy_corpus",
    "tree_spans",
]
