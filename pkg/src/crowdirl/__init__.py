"""Multi-agent maximum-entropy IRL for pedestrian crowds.

Learns per-agent cost weights from demonstrated trajectories by matching
feature expectations of entropy-regularized linear-quadratic game policies,
and evaluates the learned behavior against demonstrations and classical
baselines.
"""

from .baselines import (
    EnergyParams,
    GmmModel,
    action_grid,
    constant_velocity_predict,
    ebm_argmin,
    ebm_energy,
    ebm_minimizer,
    ebm_train,
    gmm_conditional_mean,
    gmm_fit,
    gmm_pdf,
    gmm_sample,
)
from .errors import (
    CrowdIrlError,
    FormatError,
    InternalError,
    SolverError,
    ValidationError,
)
from .features import (
    CostParams,
    FeatureVector,
    ProximityConfig,
    StageCostModel,
    compute_features,
    cost,
    expected_features,
    stage_cost_models,
    trajectory_cost,
)
from .game import (
    PolicySequence,
    PolicyStage,
    SolverConfig,
    SolverDiagnostics,
    build_policies,
    condition_covariance,
    mean_rollout,
    min_eigenvalue,
    sample_rollouts,
    solve_lq_game,
    solve_scenario,
)
from .irl import (
    TrainingConfig,
    TrainingTrace,
    feature_gap,
    infer_goals,
    multi_agent_irl,
    single_agent_maxent_irl,
    update_theta,
)
from .metrics import (
    CdfSeries,
    EntropyReport,
    MetricReport,
    PredictorContext,
    ade,
    efe,
    emit_report,
    evaluate_method,
    fde,
    make_predictor,
    rank_methods,
    rmse,
    rmse_cdf,
    split_dataset,
    trajectory_entropy,
)
from .pipeline import (
    PreprocessConfig,
    RawFrame,
    RawFrameObject,
    ScenarioCatalog,
    Track,
    assemble_joint,
    combinatorial_scenarios,
    filter_tracks,
    parse_frames,
    read_demonstrations,
    synth_generate,
    tracks_from_frames,
    write_demonstrations,
)
from .quadratic import (
    LinearDynamics,
    QuadraticStage,
    TerminalQuadratic,
    expand_along,
    expand_terminal,
    linearize_dynamics,
    taylor_expand,
)
from .trajectory import (
    AgentState,
    ControlInput,
    JointState,
    ScenarioSpec,
    Trajectory,
    constant_velocity_rollout,
    from_dataset_row,
    propagate,
    rollout_openloop,
    to_dataset_row,
)

__version__ = "0.1.0"
