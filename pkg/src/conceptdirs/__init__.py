"""Global concept directions from clustered counterfactual latent differences."""

__version__ = "0.1.0"

from .latent_diff import UnitMatrix, difference_vectors, unit_normalize
from .sphere_cluster import ClusterModel, DirectionSet, extract_directions, select_k, silhouette_cosine, spherical_kmeans
from .tensor_io import LatentMatrix, PairManifest, load_pair_manifest, read_latent_matrix, write_latent_matrix
from .traversal import ProbTable, apply_direction, linear_softmax_scorer, success_rate

__all__ = [
    "ClusterModel",
    "DirectionSet",
    "LatentMatrix",
    "PairManifest",
    "ProbTable",
    "UnitMatrix",
    "apply_direction",
    "difference_vectors",
    "extract_directions",
    "linear_softmax_scorer",
    "load_pair_manifest",
    "read_latent_matrix",
    "select_k",
    "silhouette_cosine",
    "spherical_kmeans",
    "success_rate",
    "unit_normalize",
    "write_latent_matrix",
]
