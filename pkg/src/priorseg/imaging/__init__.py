from .filters import gaussian_gradient_magnitude, gaussian_kernel1d, gaussian_smooth
from .formats import (FormatError, read_features, read_labels, read_pgm,
                      write_features, write_labels, write_pgm)
from .synth import (CircleScene, GenerationError, RingScene, generate_circles,
                    generate_rings)
from .watershed import (compact_labels, grid_mutex_watershed, mutex_cluster,
                        regional_minima, seeded_watershed)
from .features import (handcrafted_node_features, pool_node_features,
                       smoothed_boundary_map, superpixel_boundary_map)
from .shape import BoxStats, boundary_pixels, circle_hough_value, fit_rotated_bbox

__all__ = [
    "BoxStats", "CircleScene", "FormatError", "GenerationError", "RingScene",
    "boundary_pixels", "circle_hough_value", "compact_labels",
    "gaussian_gradient_magnitude", "gaussian_kernel1d", "gaussian_smooth",
    "generate_circles", "generate_rings", "grid_mutex_watershed",
    "handcrafted_node_features", "mutex_cluster", "pool_node_features",
    "read_features",
    "read_labels", "read_pgm", "fit_rotated_bbox", "regional_minima",
    "seeded_watershed", "smoothed_boundary_map", "superpixel_boundary_map",
    "write_features", "write_labels", "write_pgm",
]
