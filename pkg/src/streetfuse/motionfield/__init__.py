from streetfuse.motionfield.checkpoint import load_field, save_field
from streetfuse.motionfield.field import MLP, Deformation, HexPlaneField, decode, query_features
from streetfuse.motionfield.gaussians import GaussianPoint, GaussianSet, deform_points

__all__ = [
    "MLP",
    "Deformation",
    "GaussianPoint",
    "GaussianSet",
    "HexPlaneField",
    "decode",
    "deform_points",
    "load_field",
    "query_features",
    "save_field",
]
