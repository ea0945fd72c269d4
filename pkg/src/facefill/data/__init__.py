from .dataset import (
    Batch,
    ContrastiveViews,
    FaceDataset,
    ImageFolderDataset,
    MaskedSample,
    SyntheticFaceDataset,
    apply_mask,
    collate,
    derive_seed,
    iter_batches,
    load_batch,
    load_dataset,
    make_contrastive_pair,
    make_contrastive_views,
    read_image,
    write_image,
    write_synthetic_dataset,
)
from .masks import MaskKind, MaskSpec, random_mask_spec, synthesize_mask
from .synthetic import FaceParams, UVField, generate_synthetic_face, render_face
from .uvio import decode_uv_field, encode_uv_field, read_uv_field, write_uv_field

__all__ = [
    "Batch",
    "ContrastiveViews",
    "FaceDataset",
    "FaceParams",
    "ImageFolderDataset",
    "MaskKind",
    "MaskSpec",
    "MaskedSample",
    "SyntheticFaceDataset",
    "UVField",
    "apply_mask",
    "collate",
    "decode_uv_field",
    "derive_seed",
    "encode_uv_field",
    "generate_synthetic_face",
    "iter_batches",
    "load_batch",
    "load_dataset",
    "make_contrastive_pair",
    "make_contrastive_views",
    "random_mask_spec",
    "read_image",
    "read_uv_field",
    "render_face",
    "synthesize_mask",
    "write_image",
    "write_synthetic_dataset",
    "write_uv_field",
]
