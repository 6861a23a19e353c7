"""Repulsive cyclical SGHMC: cyclical stochastic-gradient samplers whose
cycles repel from earlier cycle-end samples, measured in parameter space or
by MMD / Wasserstein-2 between representation distributions."""

from .core import (
    ConfigError,
    DegenerateInputError,
    DivergenceError,
    EvaluationError,
    InvalidInputError,
    RcsghmcError,
    RngStream,
    UnsupportedMarginalsError,
    finite_difference_gradient,
    gaussian_noise,
)
from .diagnostics import (
    DistanceMatrix,
    ModeCoverageReport,
    mean_offdiagonal,
    mode_coverage,
    moment_check,
    pairwise_distance_matrix,
)
from .metrics import (
    RbfKernel,
    mmd_squared,
    mmd_squared_grad_points,
    representation_distance,
    wasserstein2_grad_points,
    wasserstein2_plan,
    wasserstein2_squared,
)
from .model import (
    AdapterModel,
    ClassEmbeddings,
    ClassifierModel,
    FrozenBackbone,
    class_probabilities,
    ensemble_predict,
    make_synthetic_task,
    represent,
    represent_vjp,
)
from .potentials import (
    DataPotential,
    GaussianMixture,
    MiniBatch,
    MixturePotential,
    PotentialSpec,
    minibatch_potential,
    minibatch_potential_grad,
    mixture_potential,
    mixture_potential_grad,
)
from .repulsion import (
    RepresentationContext,
    RepulsionConfig,
    SnapshotSet,
    repulsive_force,
    repulsive_potential,
    total_repulsion,
)
from .samplers import (
    CyclicalSchedule,
    ProbeSource,
    SampleArchive,
    SghmcConfig,
    cosine_stepsize,
    map_baseline,
    rcsghmc_step,
    run,
    sgld_step,
)

__version__ = "0.1.0"
