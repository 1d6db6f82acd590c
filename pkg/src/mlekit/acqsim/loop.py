"""Discrete-event model of the acquisition and auto-exposure loop.

Per field-sync tick ``t`` (59.94 Hz):

1. the controller pops one pulse packet from its FIFO (prefilled with
   ``buffer_depth`` packets) and illuminates field ``t``; an empty FIFO
   repeats the previous pulse and logs an underrun;
2. the video pipeline releases the field captured ``latency`` ticks earlier
   into the host image buffer (``buffer_depth`` slots); a full buffer drops
   the field and logs it;
3. the host copies out up to ``host_rate`` buffered fields (none while
   stalled) and answers each with one new pulse packet.

A packet sent while processing field ``f`` therefore lands on field
``f + buffer_depth + latency``. Producer and consumer only talk through the
two queues.
"""

from __future__ import annotations

import csv
import io
import json
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .exposure import P_MAX_MS, P_MIN_MS, ExposureState, hwp_angle, secant_step
from .protocol import MAX_PULSE_US, PulseWidthPacket, encode_pulse_packet

FIELD_RATE_HZ = 59.94
SPECKLE_DIODE = 639


class SyncTimeoutError(RuntimeError):
    pass


def make_scene(spec: dict) -> Callable[[float], float]:
    """Deterministic monotone scene P (ms) -> mean intensity on 0-255."""
    kind = spec.get("type", "gamma")
    if kind == "gamma":
        g = float(spec.get("gamma", 0.45))
        scale = float(spec.get("scale", 255.0))
        p_ref = float(spec.get("p_ref", P_MAX_MS))
        return lambda p: scale * (max(p, 0.0) / p_ref) ** g
    if kind == "linear":
        k = float(spec.get("k", 30.0))
        dark = float(spec.get("dark", 0.0))
        return lambda p: dark + k * p
    if kind == "constant":
        v = float(spec.get("value", 255.0))
        return lambda p: v
    raise ValueError(f"unknown scene type {kind!r}")


@dataclass
class LoopConfig:
    frames: int = 400
    buffer_depth: int = 10
    latency: int = 13
    host_rate: int = 2
    stall_prob: float = 0.0
    stall_len: int = 12
    diode: int = 562
    initial_pulse_ms: float = P_MAX_MS / 2
    prefill_pulse_ms: Optional[float] = None
    noise_sigma: float = 0.0
    seed: int = 0
    scene: dict = field(default_factory=lambda: {"type": "gamma", "gamma": 0.45})

    @classmethod
    def from_json(cls, text: str) -> "LoopConfig":
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def validate(self) -> None:
        if self.frames < 1 or self.buffer_depth < 1 or self.latency < 0 or self.host_rate < 1:
            raise ValueError("frames, buffer_depth and host_rate must be positive, latency non-negative")
        if not 0 <= self.stall_prob <= 1:
            raise ValueError("stall_prob must lie in [0, 1]")
        if not 0 < self.initial_pulse_ms <= P_MAX_MS:
            raise ValueError("initial pulse must lie in (0, P_max]")


@dataclass
class FrameRecord:
    frame_id: int
    pulse_us: int
    mean_intensity: float
    dropped: bool = False


@dataclass
class LoopResult:
    config: LoopConfig
    frames: list  # FrameRecord, in frame order
    processed: list  # frame ids in host processing order
    events: list  # (tick, kind, detail)
    updates: list  # (frame_id, P_n, I_n, P_next, status)
    hwp_angles: list = field(default_factory=list)

    @property
    def delay(self) -> int:
        return self.config.buffer_depth + self.config.latency

    def update_index(self, frame_id: int) -> int:
        """How many exposure updates precede the pulse of ``frame_id`` (fault-free run).

        Prefilled packets cover the first ``buffer_depth`` fields; fields
        captured before the run started answer for the next ``latency``.
        """
        if frame_id < self.config.buffer_depth:
            return 0
        return (frame_id - self.config.buffer_depth) // self.delay + 1

    def first_frame_of_update(self, k: int) -> int:
        return 0 if k == 0 else self.config.buffer_depth + (k - 1) * self.delay

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame_id", "diode", "pulse_us", "mean_intensity", "dropped"])
        for r in self.frames:
            w.writerow([r.frame_id, self.config.diode, r.pulse_us, f"{r.mean_intensity:.6f}", int(r.dropped)])
        return buf.getvalue()

    def intensities(self) -> np.ndarray:
        return np.array([r.mean_intensity for r in self.frames])

    def pulses_ms(self) -> np.ndarray:
        return np.array([r.pulse_us for r in self.frames]) / 1000.0


def _to_us(p_ms: float) -> int:
    return int(np.clip(round(p_ms * 1000.0), 0, MAX_PULSE_US))


def _simulate(cfg: LoopConfig, scene, respond, prefill_us: int, preroll_us: int, rng):
    """Shared event loop. ``respond(frame_id, pulse_us, intensity) -> pulse_us``."""
    fifo = deque(PulseWidthPacket.single(i, cfg.diode, prefill_us) for i in range(cfg.buffer_depth))
    next_packet_id = cfg.buffer_depth
    last_us = prefill_us
    pipeline = deque((-cfg.latency + i, preroll_us) for i in range(cfg.latency))
    image_buffer: deque = deque()
    frames, processed, events = [], [], []
    intensity = {}
    stall_left = 0
    expected = -cfg.latency
    last_sent = prefill_us
    tick = 0
    while True:
        producing = tick < cfg.frames
        if not producing and not pipeline and not image_buffer:
            break
        if producing:
            while fifo and fifo[0].frame_id < tick:
                events.append((tick, "stale_packet", fifo.popleft().frame_id))
            if fifo:
                pkt = fifo.popleft()
                last_us = max(pkt.odd_pw)
            else:
                events.append((tick, "underrun", last_us))
            i_true = float(np.clip(scene(last_us / 1000.0), 0.0, 255.0))
            if cfg.noise_sigma > 0:
                i_true = float(np.clip(i_true + rng.normal(0.0, cfg.noise_sigma), 0.0, 255.0))
            frames.append(FrameRecord(tick, last_us, i_true))
            intensity[tick] = (last_us, i_true)
            pipeline.append((tick, last_us))
        if pipeline:
            fid, _ = pipeline.popleft()
            if len(image_buffer) >= cfg.buffer_depth:
                events.append((tick, "drop", fid))
                if fid >= 0:
                    frames[fid].dropped = True
            else:
                image_buffer.append(fid)
        if stall_left > 0:
            stall_left -= 1
        elif cfg.stall_prob > 0 and rng.random() < cfg.stall_prob:
            stall_left = cfg.stall_len - 1
            events.append((tick, "stall", cfg.stall_len))
        else:
            for _ in range(min(cfg.host_rate, len(image_buffer))):
                fid = image_buffer.popleft()
                if fid >= 0:
                    processed.append(fid)
                    p_us, i_val = intensity[fid]
                else:
                    p_us, i_val = preroll_us, float(np.clip(scene(preroll_us / 1000.0), 0.0, 255.0))
                # dropped fields still need a packet each to keep ids aligned
                outgoing = [last_sent] * (fid - expected) + [respond(fid, p_us, i_val)]
                expected = fid + 1
                for new_us in outgoing:
                    last_sent = new_us
                    if next_packet_id >= cfg.frames:
                        break  # nothing left to illuminate
                    if len(fifo) >= cfg.buffer_depth:
                        events.append((tick, "packet_overflow", next_packet_id))
                    else:
                        fifo.append(PulseWidthPacket.single(next_packet_id, cfg.diode, new_us))
                    next_packet_id += 1
        tick += 1
    return frames, processed, events


def run_acquisition_loop(cfg: LoopConfig, scene=None) -> LoopResult:
    """Simulate the closed auto-exposure loop for one diode."""
    cfg.validate()
    scene = scene or make_scene(cfg.scene)
    rng = np.random.default_rng(cfg.seed)
    state = ExposureState()
    updates = []
    init_us = _to_us(cfg.initial_pulse_ms)
    prefill_us = init_us if cfg.prefill_pulse_ms is None else _to_us(cfg.prefill_pulse_ms)

    def respond(fid, p_us, i_val):
        # the host pairs each frame with the pulse it scheduled for it
        p_n = max(p_us / 1000.0, P_MIN_MS)
        p_next, status = secant_step(i_val, p_n, state)
        updates.append((fid, p_n, i_val, p_next, status))
        return max(_to_us(p_next), _to_us(P_MIN_MS))

    frames, processed, events = _simulate(cfg, scene, respond, prefill_us, init_us, rng)
    angles = [hwp_angle(r.pulse_us / 1000.0) for r in frames] if cfg.diode == SPECKLE_DIODE else []
    return LoopResult(cfg, frames, processed, events, updates, angles)


def measure_sync_delay(means, factor: float = 5.0, floor: float = 1.0, timeout: Optional[int] = None) -> int:
    """Frames counted from pulse emission until one exceeds ``factor`` x the running baseline.

    ``means[0]`` is the frame processed when the pulse was sent. The baseline
    is the mean of all earlier frames (at least ``floor``).
    """
    total = 0.0
    limit = len(means) if timeout is None else min(len(means), timeout + 1)
    for k in range(limit):
        base = max(total / k if k else 0.0, floor)
        if means[k] > factor * base:
            return k
        total += means[k]
    raise SyncTimeoutError("synchronisation pulse not detected before timeout")


def simulate_sync_delay(buffer_depth: int = 10, latency: int = 13, timeout: int = 200,
                        dark: float = 2.0, gain: float = 18.0) -> int:
    """Send one full-width pulse into an otherwise dark pipeline and time its return."""
    cfg = LoopConfig(frames=timeout, buffer_depth=buffer_depth, latency=latency, host_rate=1)
    scene = make_scene({"type": "linear", "k": gain, "dark": dark})
    sent = []

    def respond(fid, p_us, i_val):
        sent.append(fid)
        return MAX_PULSE_US if len(sent) == 1 else 0

    frames, processed, _ = _simulate(cfg, scene, respond, 0, 0, np.random.default_rng(0))
    # frames handled from the moment the pulse packet was queued (pre-roll included)
    stream = [scene(0.0)] * (len(sent) - len(processed)) + [frames[f].mean_intensity for f in processed]
    return measure_sync_delay(stream, timeout=timeout)


def converged_from(result: LoopResult, tol: float = 1.0, target: float = 128.0) -> Optional[int]:
    """First frame id after which every frame stays within ``tol`` of target."""
    dev = np.abs(result.intensities() - target) > tol
    bad = np.flatnonzero(dev)
    if bad.size == 0:
        return 0
    first = int(bad[-1]) + 1
    return first if first < len(dev) else None


def packet_stream(result: LoopResult) -> bytes:
    """Encoded pulse packets, one per frame, as the controller consumed them."""
    return b"".join(
        encode_pulse_packet(PulseWidthPacket.single(r.frame_id, result.config.diode, r.pulse_us))
        for r in result.frames
    )
