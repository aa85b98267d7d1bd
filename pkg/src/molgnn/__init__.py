"""Graph neural networks for molecular property prediction, from SMILES to attributions."""

__version__ = "0.1.0"

from .chem import Molecule, parse_smiles
from .featurize import FeatureConfig, encode_batch, encode_molecule
from .graph import GraphTensor, merge, propagate, separate
from .layers import GnnModel, LayerConfig

__all__ = [
    "FeatureConfig",
    "GnnModel",
    "GraphTensor",
    "LayerConfig",
    "Molecule",
    "__version__",
    "encode_batch",
    "encode_molecule",
    "merge",
    "parse_smiles",
    "propagate",
    "separate",
]
