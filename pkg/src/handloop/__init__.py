"""Mixed-initiative engine for per-hand human-object-interaction events.

The library resolves a partially specified event record (span, onset, verb,
noun) under human field locks: a hand-motion onset prior, an event-local
scoring adapter refined by interaction statistics, an exact lock-clamped
decoder, a trust-calibrated supervisory controller, and an atomic,
replayable execution loop.  A session HTTP service and a CLI wrap the same
machinery.
"""

from .completion import (
    Adapter,
    AdapterParams,
    AffineAdapter,
    DecodedHypothesis,
    EventRepresentation,
    GoldTarget,
    InfeasibleLocks,
    ScoreBundle,
    ScoreFileAdapter,
    adapter_forward,
    adapter_loss_and_grads,
    adapter_train_step,
    assemble_representation,
    bundle_probabilities,
    decode,
    feedback_redecode,
    refine_scores,
)
from .config import EngineConfig, default_config, load_config, save_config, with_policy
from .controller import (
    CalibrationStore,
    ControlState,
    Intervention,
    NoExecutableCandidate,
    build_control_state,
    calibrate,
    enumerate_candidates,
    estimate,
    select_intervention,
    update_calibration,
)
from .events import (
    FIELDS,
    NO_NOUN,
    EventState,
    FieldStatus,
    LockSet,
    LockViolation,
    Ontology,
    OntologyViolation,
    Origin,
    TemporalViolation,
    check_validity,
    confirm_field,
    new_event_state,
    set_field,
    set_fields,
)
from .ingest import (
    EventRecord,
    FeatureTable,
    HandFrameState,
    HandTrack,
    StatisticsBundle,
    build_statistics,
    load_events,
    load_features,
    load_hand_tracks,
    load_ontology,
    load_statistics,
)
from .loop import (
    AnnotatorResponse,
    ClipInputs,
    ReplayDivergence,
    SessionResult,
    TraceRecord,
    Transaction,
    execute,
    read_log,
    replay,
    run_session,
    write_log,
)
from .metrics import (
    ManualBaseline,
    MatchConfig,
    SessionMetrics,
    behavioral_metrics,
    match_events,
    onset_error,
    operational_metrics,
    oracle_responder,
    run_oracle_protocol,
    session_metrics,
    tiou,
    write_report,
)
from .onset import (
    OnsetCandidate,
    OnsetPrior,
    SemanticPrior,
    coarse_semantic_prior,
    generate_candidates,
    hand_onset_prior,
    reliability,
    score_candidate,
    select_onset,
    template_target,
)

__version__ = "0.1.0"
