"""Change-robust localization of equirectangular panoramas against colored
point clouds: patch color histograms, 2D/3D consistency score maps,
histogram-ranked candidate poses and gradient-based pose refinement."""

from .errors import PanolocError
from .geometry import Pose, exp_so3, log_so3, project, rotation_error, \
    sample_rotations, unproject
from .histograms import ColorMap, PatchGrid, PatchHistograms, \
    apply_color_map, compute_histograms, fast_rotated_histograms, \
    fit_color_map, intersection, precompute_rotation_tables, warp_centroid
from .pipeline import LocalizationReport, PipelineConfig, evaluate, \
    localize, localize_arrays
from .refine import RefineConfig, RefineResult, refine_pose, sample_image, \
    sampling_loss, select_final
from .renderer import SyntheticView, render_view, yaw_shift_view
from .scene_io import Panorama, PointCloud, SceneSpec, generate_scene, \
    load_panorama, load_pointcloud, save_panorama, save_pointcloud
from .scoremap import ScoreMap2D, ScoreMap3D, build_2d_scoremap, build_3d_scoremap
from .search import CandidatePose, FreeSpacePartition, build_partition, \
    propose_translations, rank_candidates

__version__ = "0.1.0"
