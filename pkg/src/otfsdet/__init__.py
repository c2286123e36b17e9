"""Delay-Doppler grid link simulator with message-passing detectors.

The package splits into frame handling (constellations, grid transforms),
channel generation (Jakes-style taps, delay-Doppler coupling matrices),
the detector family (linear, parallel message passing, serial feedback
cancellation, and two bidirectional fusions), and a reproducible
Monte-Carlo harness with a CLI front end.
"""

from .bidirectional import (
    DirectionalOutputs,
    FusionState,
    combine,
    correlation_coefficient,
    detect_iw,
    detect_turbo,
    extrinsic_table,
    weighting_factor,
)
from .channel import (
    ChannelGenParams,
    ChannelRealization,
    DdChannelMatrix,
    PathTap,
    apply_channel_awgn,
    build_dd_channel,
    build_time_channel,
    coupling_matrix,
    draw_channel,
    snr_to_gamma,
    split_doppler,
)
from .errors import (
    ConfigError,
    DimensionMismatchError,
    InvalidArgumentError,
    NumericalError,
    OtfsError,
)
from .frames import (
    CONSTELLATION_NAMES,
    ConstellationSpec,
    OtfsFrameConfig,
    bits_from_indices,
    demodulate,
    hard_decision,
    make_constellation,
    map_bits,
    modulate,
    random_bits,
    symbols_to_bits,
)
from .kernels import available_backends, default_backend, get_sweep
from .sim import (
    BerRecord,
    ChannelConfig,
    DetectorConfig,
    IterationRecord,
    SimConfig,
    apply_overrides,
    ber_count,
    config_from_dict,
    config_to_dict,
    load_config,
    read_results,
    resolve_threads,
    run_trial,
    simulate,
    sweep_iterations,
    sweep_snr,
    sweep_velocity,
    trial_seed,
    write_iteration_results,
    write_results,
)
from .uamp import (
    BeliefState,
    DetectorReport,
    FactorState,
    PriorTable,
    UnitaryModel,
    convergence_indicator,
    decide,
    detect_amp,
    detect_lmmse,
    detect_uamp,
    detect_uamp_mfic,
    direct_model,
    factor_to_variable,
    map_oracle_marginals,
    reference_sweep,
    unitary_transform,
    variable_update,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
