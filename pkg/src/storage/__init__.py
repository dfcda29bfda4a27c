"""
Storage package initialization - DAOs for the binary artifact formats
"""
from src.storage.fmap_dao import FeatureMapDAO
from src.storage.basis_dao import BasisDAO
from src.storage.label_dao import LabelDAO
from src.storage.checkpoint_dao import CheckpointDAO, CheckpointHeader

__all__ = ["FeatureMapDAO", "BasisDAO", "LabelDAO", "CheckpointDAO", "CheckpointHeader"]
