"""Image I/O, tiling, label transforms and synthetic scenes."""
from .classes import CATEGORY11, DENSE20, DENSE_TO_CATEGORY, DENSE_TO_POTSDAM, LANE13, POTSDAM6, ClassMap, merge_classes
from .netpbm import NetpbmError
from .synthetic import LabeledImage, SceneSpec, generate_scene
from .tiling import TileGrid, stitch, tile
from .transforms import branch_targets, derive_edges, flip_augment, rescale_gsd
