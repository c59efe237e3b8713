"""Learning fidelity weights for TV denoising with dynamic-sample BFGS."""

from .adjoint import (
    BatchGradient,
    GradientSample,
    TrainingObjective,
    constraint_gradient,
    solve_adjoint,
    tracking_loss,
)
from .bfgs import (
    DEFAULT_LAM0,
    MODE_DYNAMIC,
    MODE_FULL,
    RUN_MODES,
    ArmijoConfig,
    RunConfig,
    RunResult,
    SampledObjective,
    TraceRecord,
    armijo_search,
    bfgs_update,
    fraction_sample_size,
    initial_sample_size,
    minimize_sampled,
    run,
)
from .datasets import (
    NoiseModelSpec,
    TrainingPair,
    TrainingSet,
    add_gaussian_noise,
    add_impulse_noise,
    build_training_set,
    export_pgm,
    import_pgm,
    load_set,
    make_phantom,
    mix_seed,
    save_set,
)
from .errors import (
    DimensionMismatchError,
    DivergenceError,
    LineSearchError,
    MalformedFileError,
    NotDescentDirectionError,
    SingularSystemError,
    TVBilevelError,
)
from .experiments import (
    DatasetConfig,
    ExperimentConfig,
    ExperimentReport,
    ExperimentRow,
    denoise_set,
    emit_all,
    emit_plot_data,
    emit_report_json,
    emit_table,
    learn_weights,
    load_config,
    load_table,
    run_experiment,
)
from .grids import (
    HuberParams,
    ImageGrid,
    VectorField,
    divergence,
    field_dot,
    gradient,
    huber_sign,
    huber_vec,
    image_dot,
    l2_norm,
    laplacian,
)
from .sampling import (
    SampleState,
    condition_holds,
    draw_sample,
    next_size,
    variance_estimate,
)
from .state import (
    GAUSSIAN_ONLY,
    MIXED_L1_L2,
    FidelitySpec,
    ParamVec,
    SolveReport,
    StateConfig,
    newton_step,
    solve_state,
    state_residual,
)

__version__ = "0.1.0"
