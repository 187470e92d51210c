"""Beam search over egocentric camera trajectories for spatial QA.

Given a reference image and a multiple-choice spatial question, the
engine iteratively imagines short egocentric movements through a
pluggable world model, scores the imagined views with a pluggable
scorer, caches the helpful ones, and answers from the gathered
multi-view evidence. A deterministic raycasting world model and a
geometric oracle scorer are built in, so the whole loop is verifiable
end to end without any learned backend.
"""

from .geometry import (
    Action,
    ActionKind,
    CameraPose,
    Intrinsics,
    PluckerMap,
    Trajectory,
    compose,
    cumulative_poses,
    decompose_pitch,
    move_forward,
    pitch_rotation,
    plucker_map,
    plucker_map_with_pitch,
    pose_of_action,
    turn_left,
    turn_right,
)
from .worldmodel import (
    Frame,
    RemoteWorldModel,
    RolloutRequest,
    Scene,
    SceneObject,
    SyntheticWorldModel,
    load_scene,
    render,
    save_scene,
    visibility,
)
from .scoring import (
    AnswerEvidence,
    OracleAnswerer,
    OracleScorer,
    OracleSpec,
    Question,
    RemoteAnswerer,
    RemoteChatClient,
    RemoteScorer,
    ScorePair,
    parse_scores,
)
from .search import (
    AnswerRecord,
    BeamNode,
    Candidate,
    EvidenceItem,
    EvidenceSet,
    SearchConfig,
    SearchTrace,
    assemble_answer,
    describe,
    expand,
    is_reversal,
    parse_trajectory,
    plan_rollouts,
    spatial_beam_search,
    trajectory_string,
    within_budget,
)
from .bench import (
    Dataset,
    RunReport,
    SyntheticCase,
    emit_report,
    generate_suite,
    load_dataset,
    psnr,
    run_benchmark,
    ssim,
    write_suite,
)

__version__ = "0.1.0"
