"""Acquisition-side simulation: controller codec, auto-exposure and the frame loop."""

from .exposure import (
    I_MAX,
    I_TARGET,
    P_MAX_MS,
    P_MIN_MS,
    ExposureState,
    auto_exposure_update,
    exposure_intensity,
    hwp_angle,
    iterate_exposure,
    secant_step,
    select_exposure_channel,
)
from .loop import (
    LoopConfig,
    LoopResult,
    SyncTimeoutError,
    converged_from,
    make_scene,
    measure_sync_delay,
    packet_stream,
    run_acquisition_loop,
    simulate_sync_delay,
)
from .protocol import (
    DIODE_SLOTS,
    POWER_PACKET_SIZE,
    PULSE_PACKET_SIZE,
    MalformedPacketError,
    PowerReportPacket,
    PulseWidthPacket,
    decode_power_packet,
    decode_pulse_packet,
    encode_power_packet,
    encode_pulse_packet,
    hexdump,
    parse_hexdump,
)
