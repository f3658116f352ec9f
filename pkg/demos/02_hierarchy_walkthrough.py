"""From pixels to the two structured representations.

Generate a small synthetic scene, merge the coarse image into a hierarchy and
print what one labeled pixel looks like as a context sequence and as a
subregion tree.
"""
import numpy as np

from hierfuse import features, hierarchy, raster, synth

cfg = synth.default_config(seed=3, coarse_size=(32, 24), scale_factor=8)
coarse, fine, truth = synth.generate(cfg)
print(f"coarse {coarse.width}x{coarse.height}, fine {fine.width}x{fine.height}")

# Region merging on the coarse image, then cuts at ascending thresholds
tree = hierarchy.build_merge_tree(coarse)
cut = hierarchy.cut_levels(tree, [0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.28])
print("regions per level:", hierarchy.level_region_counts(cut))

roles = {"red": 1, "nir": 2}
table = features.feature_table(coarse, tree, range(tree.num_nodes), roles)

pixel = int(np.flatnonzero(truth.labels.ravel() == 3)[0])  # first park pixel
x, y = pixel % coarse.width, pixel // coarse.width
seq = hierarchy.extract_sequence(cut, (x, y), table)
print(f"\npixel ({x}, {y}), class {truth.labels[y, x]}")
print("sequence regions:", seq.region_ids)
print("region sizes:", [int(tree.pixel_count[r]) for r in seq.region_ids])

# The matching fine patch, merged on its own
mapping = raster.PatchMapping.from_rasters(coarse, fine)
patch = fine.window(*raster.patch_of(mapping, x, y))
ptree = hierarchy.build_merge_tree(patch)
ptable = features.feature_table(patch, ptree, range(ptree.num_nodes), roles)
sub = hierarchy.extract_tree(ptree, [0.8, 0.4, 0.2, 0.1], ptable)
print("\npatch tree parents:", sub.parents.tolist())
print("node sizes:", [int(ptree.pixel_count[r]) for r in sub.region_ids])
