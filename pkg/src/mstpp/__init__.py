"""
Marked spatio-temporal point processes: simulation, adaptive Voronoi
intensity estimation, marked inhomogeneous K-functions with minus-sampling
edge correction, and Monte-Carlo tests of marking structure.
"""

from .geometry import (
    Cone2D,
    Cylinder,
    ErosionError,
    SpaceTimePoint,
    Window,
    cone_volume,
    cylinder_volume,
    direction_in_cone,
    erode_window,
    full_metric,
    sup_metric,
    unit_ball_volume,
)
from .pattern import (
    ContinuousMarks,
    LabelMarks,
    LabelSet,
    MarkInterval,
    MarkedPattern,
    MarkedPoint,
    full_mark_set,
    load_catalog,
    pattern_from_arrays,
    permute_marks,
    project_ground,
    rescale,
    restrict_marks,
    save_catalog,
    thin,
)
from .simulate import (
    Bernoulli,
    Constant,
    Exponential,
    FactorizationError,
    GridField,
    GRFSampler,
    IntensityField,
    SeparableCovariance,
    UniformInterval,
    UserTable,
    WhittleMatern,
    assign_marks_geostat,
    assign_marks_iid,
    lgcp_mean,
    poisson_preset_intensity,
    preset_sampler,
    sim_grf,
    sim_lgcp,
    sim_poisson,
    simulate_preset,
    superpose,
)
from .intensity import (
    Quadrature,
    QuadratureError,
    SeparableIntensity,
    VoronoiEstimate,
    estimate_mass,
    voronoi_ground,
    voronoi_marked,
    voronoi_separable,
)
from .second_order import (
    BallSet,
    BoxUnionSet,
    ConeSet,
    CylinderSet,
    KSurface,
    Weights,
    default_lag_grids,
    k_cross_multitype,
    k_directional,
    k_ground,
    k_inhom,
    k_measure_hat,
    k_smoothed,
    k_stationary,
    pair_geometry,
    poisson_reference,
    weights_from_estimate,
    weights_from_function,
)
from .inference import (
    DeltaSurface,
    EnvelopeSet,
    decomposition_residual,
    delta_surface,
    diag_independent_components,
    diag_independent_marks,
    envelopes,
    random_labelling_test,
)

__version__ = "0.1.0"
