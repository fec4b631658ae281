from .block_store import BlockStore, IOStats
from .child_structure import ChildStructure
from .config import Config, load_config, validate_config
from .models import Point, ThreeSidedQuery, TopKQuery
from .oracle import OracleSet
from .persistence import load_tree, save_tree
from .pst import PrioritySearchTree, bulk_construct

__all__ = [
    "BlockStore",
    "ChildStructure",
    "Config",
    "IOStats",
    "OracleSet",
    "Point",
    "PrioritySearchTree",
    "ThreeSidedQuery",
    "TopKQuery",
    "bulk_construct",
    "load_config",
    "load_tree",
    "save_tree",
    "validate_config",
]
