"""Python bindings for the relation LoRA triplet toolkit."""

from ._core import (
    RltError,
    decode_prompt,
    encode_prompt,
    generate,
    relation_oracle,
    sample,
    subspace_similarity,
    svd,
    temporal_consistency,
    train,
)

RELATIONS = ("approach", "separate", "orbit", "follow", "collide")

__all__ = [
    "RELATIONS",
    "RltError",
    "decode_prompt",
    "encode_prompt",
    "generate",
    "relation_oracle",
    "sample",
    "subspace_similarity",
    "svd",
    "temporal_consistency",
    "train",
]
