"""Multi-resolution land-cover classification with hierarchical structured kernels.

Coarse pixels are described by the chain of regions that contain them in a
merge hierarchy (context); the matching fine-resolution patch is described
by a tree of its subregions. Subpath kernels over both structures feed a
precomputed-kernel SVM.
"""
import warnings

# numba probes TBB before falling back to another threading layer
warnings.filterwarnings("ignore", message="The TBB threading layer")

from .raster import LabelMap, PatchMapping, Raster, load_label_map, load_raster, patch_of
from .hierarchy import (
    MergeTree,
    SequenceInstance,
    TreeInstance,
    build_merge_tree,
    cut_levels,
    extract_sequence,
    extract_tree,
)
from .features import Standardizer, feature_table, region_features
from .kernels import (
    GramMatrix,
    PackedInstances,
    build_gram,
    composite_kernel,
    cross_gram,
    sequence_kernel,
    tree_kernel,
)
from .classify import CvGrid, SvmModel, cross_validate, predict, train_ovo
from .evaluation import confusion_matrix, metrics, wilcoxon_compare

__version__ = "0.1.0"
