"""Two-way quantum time transfer simulation and analysis toolkit."""

__version__ = "0.1.0"

from .clocks import ClockParams, from_local_frame, phase_offset_ps, relative_offset_truth, to_local_frame
from .core import (
    Channel,
    ConfigError,
    FitError,
    PhysicalConstants,
    QttError,
    ScanFailedError,
    StreamSet,
    SyncLostError,
    TagFormatError,
    TagStream,
    picos_from_seconds,
    seconds_from_picos,
)
from .correlation import CorrelationConfig, CorrelationResult, apply_drift_compensation, correlate
from .orbit import (
    GroundTrackSample,
    LinkDirection,
    OrbitParams,
    apply_motion,
    elevation_rad,
    pass_window_s,
    point_ahead_angle_rad,
    prop_delay_s,
    slant_range,
    slant_range_m,
    sub_satellite_point,
)
from .scenario import Scenario, bundled_scenario_path, load_scenario
from .simulate import SimulationOutput, SimulationTruth, run_simulation
from .source import EmissionRecord, SourceConfig, generate_background, generate_pairs
from .stability import (
    PhaseSeries,
    fit_loglog_slope,
    modified_adev,
    overlapping_adev,
    time_deviation,
)
from .sync import AcquisitionConfig, SyncMode, SyncRecord, absolute_offset, run_stationary_sync
from .tracking import (
    CoarseScanConfig,
    CoarseScanResult,
    OrbitFitState,
    TrackedSyncResult,
    coarse_scan,
    precise_fit,
    run_tracked_sync,
)
