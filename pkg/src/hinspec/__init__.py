"""Meta-graph spectral embedding of heterogeneous information networks."""

__version__ = "0.1.0"

from .hin import HeterogeneousNetwork, load_hin, load_labels
from .metagraph import MetaGraph, ProjectedNetwork, parse_metagraph, project, project_bruteforce
from .spectral import Spectrum, spectral_embedding, spectrum
from .assess import AssessConfig, assess, curvature_score, fpp, lc3, select_dims
from .combine import AutoencoderConfig, concat_embeddings, encode, group_norms, preprocess, train
from .eval import class_links, classify, link_predict

__all__ = [
    "HeterogeneousNetwork",
    "load_hin",
    "load_labels",
    "MetaGraph",
    "ProjectedNetwork",
    "parse_metagraph",
    "project",
    "project_bruteforce",
    "Spectrum",
    "spectrum",
    "spectral_embedding",
    "AssessConfig",
    "assess",
    "fpp",
    "curvature_score",
    "lc3",
    "select_dims",
    "AutoencoderConfig",
    "concat_embeddings",
    "preprocess",
    "train",
    "encode",
    "group_norms",
    "classify",
    "link_predict",
    "class_links",
]
