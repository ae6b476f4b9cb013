"""Differentiable search for photonic tensor-core circuit topologies under
foundry footprint constraints."""

from .errors import (
    ConfigError,
    DegeneracyError,
    DivergenceError,
    DomainError,
    InfeasibleError,
    LegalizationError,
    PtcError,
    StateError,
)
from .mesh import (
    MeshGrads,
    SuperMesh,
    WeightPartition,
    build_unitary,
    certainty_gates,
    cr_apply,
    dc_apply,
    normalize_unitary,
    partition_matmul,
    ps_apply,
    quantize_coupler,
    quantize_coupler_grad,
    tile_forward,
)
from .pdk import (
    BUILTIN_PDKS,
    BlockBounds,
    FootprintConstraint,
    PdkSpec,
    PenaltyConfig,
    block_bounds,
    count_couplers,
    count_crossings,
    footprint_exact,
    footprint_expected,
    footprint_penalty,
    footprint_proxy,
    load_pdk,
)
from .permutation import (
    AlmState,
    SplConfig,
    alm_loss,
    dual_update,
    init_smoothed_identity,
    is_permutation,
    reparametrize,
    rho_schedule,
    spl_legalize,
)
from .search import (
    SearchConfig,
    SearchSchedule,
    expected_keep_prob,
    gumbel_sample,
    run_search,
    sample_submesh,
    search_step,
)
from .tasks import (
    ClassifyTask,
    MatrixFitTask,
    NoiseModel,
    inject_phase_noise,
    load_dataset,
    robustness_sweep,
    task_loss,
    variation_aware_train,
)
from .topology import TopoBlock, Topology

__version__ = "0.1.0"
