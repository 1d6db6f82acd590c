"""Light-modulation-controller packet codec.

Pulse-width packet, 64 bytes little-endian::

    0   u32       frame id
    4   u16 x 15  odd-field pulse widths (us), one per diode slot
    34  u16 x 15  even-field pulse widths (us)

Power report packet, 16 bytes little-endian::

    0   u32       frame id
    4   u16 x 3   odd-field photodiode counts
    10  u16 x 3   even-field photodiode counts

Both layouts fill their size exactly, so no padding bytes exist.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

N_SLOTS = 15
N_MONITORS = 3
MAX_PULSE_US = 14000

# diode wavelength (nm) for slots 0-8; slots 9-14 are reserved and stay zero
DIODE_SLOTS = (406, 446, 468, 522, 543, 562, 635, 639, 657)

_PULSE = struct.Struct(f"<I{N_SLOTS}H{N_SLOTS}H")
_POWER = struct.Struct(f"<I{N_MONITORS}H{N_MONITORS}H")
PULSE_PACKET_SIZE = _PULSE.size  # 64
POWER_PACKET_SIZE = _POWER.size  # 16


class MalformedPacketError(ValueError):
    pass


def diode_slot(wavelength_nm: float) -> int:
    try:
        return DIODE_SLOTS.index(int(round(wavelength_nm)))
    except ValueError:
        raise MalformedPacketError(f"no diode slot for {wavelength_nm} nm") from None


@dataclass(frozen=True)
class PulseWidthPacket:
    frame_id: int
    odd_pw: tuple = (0,) * N_SLOTS
    even_pw: tuple = (0,) * N_SLOTS

    def __post_init__(self):
        object.__setattr__(self, "odd_pw", tuple(int(v) for v in self.odd_pw))
        object.__setattr__(self, "even_pw", tuple(int(v) for v in self.even_pw))
        if not 0 <= self.frame_id <= 0xFFFFFFFF:
            raise MalformedPacketError("frame id outside u32 range")
        for pw in (self.odd_pw, self.even_pw):
            if len(pw) != N_SLOTS:
                raise MalformedPacketError(f"expected {N_SLOTS} pulse widths per field")
            if any(v < 0 or v > MAX_PULSE_US for v in pw):
                raise MalformedPacketError(f"pulse widths must lie in [0, {MAX_PULSE_US}] us")

    @classmethod
    def single(cls, frame_id: int, wavelength_nm: float, pulse_us: int, odd=True, even=True):
        pw = [0] * N_SLOTS
        pw[diode_slot(wavelength_nm)] = int(pulse_us)
        return cls(frame_id, tuple(pw) if odd else (0,) * N_SLOTS, tuple(pw) if even else (0,) * N_SLOTS)


@dataclass(frozen=True)
class PowerReportPacket:
    frame_id: int
    odd_power: tuple = (0,) * N_MONITORS
    even_power: tuple = (0,) * N_MONITORS

    def __post_init__(self):
        object.__setattr__(self, "odd_power", tuple(int(v) for v in self.odd_power))
        object.__setattr__(self, "even_power", tuple(int(v) for v in self.even_power))
        if not 0 <= self.frame_id <= 0xFFFFFFFF:
            raise MalformedPacketError("frame id outside u32 range")
        for pw in (self.odd_power, self.even_power):
            if len(pw) != N_MONITORS or any(not 0 <= v <= 0xFFFF for v in pw):
                raise MalformedPacketError("power fields need three u16 values")


def encode_pulse_packet(p: PulseWidthPacket) -> bytes:
    return _PULSE.pack(p.frame_id, *p.odd_pw, *p.even_pw)


def decode_pulse_packet(buf: bytes) -> PulseWidthPacket:
    if len(buf) != PULSE_PACKET_SIZE:
        raise MalformedPacketError(f"pulse packet must be {PULSE_PACKET_SIZE} bytes, got {len(buf)}")
    vals = _PULSE.unpack(bytes(buf))
    return PulseWidthPacket(vals[0], vals[1 : 1 + N_SLOTS], vals[1 + N_SLOTS :])


def encode_power_packet(p: PowerReportPacket) -> bytes:
    return _POWER.pack(p.frame_id, *p.odd_power, *p.even_power)


def decode_power_packet(buf: bytes) -> PowerReportPacket:
    if len(buf) != POWER_PACKET_SIZE:
        raise MalformedPacketError(f"power packet must be {POWER_PACKET_SIZE} bytes, got {len(buf)}")
    vals = _POWER.unpack(bytes(buf))
    return PowerReportPacket(vals[0], vals[1 : 1 + N_MONITORS], vals[1 + N_MONITORS :])


def hexdump(buf: bytes, width: int = 16) -> str:
    """``OFFSET: xx xx ...`` lines, offsets as 4 hex digits."""
    lines = []
    for off in range(0, len(buf), width):
        chunk = buf[off : off + width]
        lines.append(f"{off:04x}: " + " ".join(f"{b:02x}" for b in chunk))
    return "\n".join(lines)


def parse_hexdump(text: str) -> bytes:
    out = bytearray()
    for line in text.strip().splitlines():
        _, _, body = line.partition(":")
        out.extend(bytes.fromhex(body.strip()))
    return bytes(out)
