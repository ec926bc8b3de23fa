"""Spherical-rectangle geometry, IoU criteria, detector math, and evaluation."""

from .criteria import (
    DEFAULT_CRITERIA,
    CriterionId,
    ErpImageSpec,
    PixelBox,
    ProjectionOverflowError,
    ZeroUnionError,
    compute_iou,
    erp_bbox,
    iou_circle,
    iou_monte_carlo,
    iou_pixel_integral,
    iou_planar_rect,
    iou_polygon_sampled,
    iou_sph_zone,
    pixel_weight,
    row_weights,
)
from .detector import (
    Detection,
    EmptyGtError,
    GtAnnotation,
    HeatmapFormatError,
    HeatmapTensor,
    LossWeights,
    RadiusBreakdown,
    decode,
    focal_loss,
    fov_loss,
    gt_offset,
    heatmap_value,
    load_heatmap,
    offset_loss,
    planar_to_spherical,
    radius,
    render_gt,
    save_heatmap,
    total_loss,
)
from .evaluation import (
    AnnotationParseError,
    BenchReport,
    BenchSpeedupError,
    ComparisonTable,
    DetectionRecord,
    EvalConfig,
    EvalReport,
    FieldRangeError,
    MatchDecision,
    UndefinedApError,
    average_precision,
    bench,
    compare_criteria,
    evaluate,
    load_annotations,
    load_detections,
    match_detections,
    save_annotations,
    save_detections,
)
from .geometry import (
    BoundaryPlanes,
    DegenerateRectError,
    EdgeCrossing,
    Frame,
    MalformedPolygonError,
    NumericallyDegenerateError,
    SphericalPolygon,
    SphericalRect,
    UnitVec3,
    boundary_normals,
    contains_point,
    contains_points,
    edge_intersections,
    intersection_area,
    intersection_details,
    iou,
    iou_matrix,
    local_frame,
    polygon_excess_area,
    rect_area,
    rect_vertices,
    sph_to_vec,
    vec_to_sph,
    wrap_angles,
)

__version__ = "0.1.0"
