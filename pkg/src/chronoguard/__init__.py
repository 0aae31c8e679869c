"""Two-way clock synchronization simulator with delay-attack detection.

The building blocks are a drifting slave clock (timebase), an authenticated
sync/response exchange (protocol), a router-queueing delay channel (channel),
a man-in-the-middle adversary (adversary), RTT-based attack detection
(detector), and a sampled-waveform variant of the exchange (codephase).
End-to-end runs live in scenarios; file formats and the CLI in harness/cli.
"""

from .adversary import (
    Adversary,
    AsymmetricCompensating,
    FeasibilityRules,
    FixedSyncDelay,
    ForgeResponse,
    NoAttack,
    ReplayPredictableSync,
    RttNoiseExploit,
    ShortcutPath,
)
from .channel import (
    DelaySample,
    PathDelayModel,
    RouterHopModel,
    TwoWayChannel,
    analytic_rtt_moments,
    sample_hop_delay,
    sample_path_delay,
    sample_path_delays,
    sample_rtt,
    sample_rtt_batch_means,
)
from .codephase import ChipSequence, CorrelationResult, SampledWindow, generate_code
from .detector import (
    CalibrationTable,
    Decision,
    DetectorConfig,
    SecurityBudget,
    batch_test,
    calibrate,
    choose_threshold,
    estimate_pf,
    false_alarm_curve,
    formal_check,
    practical_budget_report,
)
from .protocol import (
    ArrivalMeasurement,
    ResponseMessage,
    SessionKey,
    SignalFeature,
    SyncMessage,
    estimate_offset,
    measure_rtt,
    refine_delay_prior,
)
from .scenarios import (
    CampaignConfig,
    ProtocolParams,
    RunReport,
    Scenario,
    run_necessity_suite,
    run_one_way_demo,
    run_scenario,
    run_simulation_campaign,
    run_sufficiency_property,
)
from .timebase import ClockState, DriftBudget, apply_correction, read_clock

__version__ = "0.1.0"
