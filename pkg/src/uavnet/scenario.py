"""Network instances: radio, payload and airframe parameters plus node geometry.

Configuration files are JSON documents whose keys carry their unit as a
suffix (``*_dbm``, ``*_db``, ``*_kmh``, ``*_wh`` ...). Everything is
converted to SI once, in :func:`scenario_from_dict`; downstream code never
sees a dB value.

Ground-node layouts are drawn with NumPy's PCG64 bit generator
(``numpy.random.Generator(numpy.random.PCG64(seed))``) as i.i.d. uniform
points on ``[-L/2, L/2]^2``. PCG64 output is specified bit-for-bit, so a
seed gives the same layout on every platform.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from uavnet import energy
from uavnet.units import db_to_linear, dbm_to_watts, kmh_to_mps, wh_to_joules

MAX_RIS_ELEMENTS = 1600
MAX_FDR_ANTENNAS = 12

# Motor fits (C1, C2, C3) for the thrust polynomial, keyed by payload kind.
MOTOR_COEFFS = {
    "ris": (4.0, 86.0, -21.2),  # MN505-s KV320
    "fdr": (10.5, -46.0, 744.0),  # AT4130 KV230
}


class ConfigError(ValueError):
    """Raised for malformed or non-physical configuration."""


@dataclass(frozen=True)
class RadioParams:
    bandwidth_hz: float
    wavelength_m: float
    ref_distance_m: float
    tx_power_w: float
    noise_power_w: float
    antenna_gain_tx: float
    antenna_gain_rx: float
    sic_coeff: float
    snr_threshold: float
    path_loss_exp: float = 2.0

    def __post_init__(self):
        for name in ("bandwidth_hz", "wavelength_m", "ref_distance_m", "tx_power_w",
                     "noise_power_w", "antenna_gain_tx", "antenna_gain_rx", "snr_threshold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"radio.{name} must be strictly positive")
        if not 0.0 <= self.sic_coeff <= 1.0:
            raise ConfigError("radio.sic_coeff must lie in [0, 1]")
        if self.path_loss_exp != 2.0:
            raise ConfigError("only free-space LoS links (path_loss_exp = 2) are modeled")

    @property
    def tx_snr(self):
        return self.tx_power_w / self.noise_power_w


@dataclass(frozen=True)
class Payload:
    """Communication equipment carried by the UAV.

    ``kind`` is ``"ris"`` (``m_elements`` reflecting elements) or ``"fdr"``
    (``ant_rx`` receive plus ``ant_tx`` transmit antennas). Fields that do
    not apply to the kind are zero.
    """

    kind: str
    m_elements: int = 0
    ant_rx: int = 0
    ant_tx: int = 0
    element_weight_kg: float = 0.0
    antenna_weight_kg: float = 0.0
    per_element_power_w: float = 0.0
    controller_power_w: float = 0.0
    amp_drain_inv: float = 0.0
    transceiver_power_w: float = 0.0
    max_tx_power_w: float = 0.0

    def __post_init__(self):
        if self.kind == "ris":
            if not 1 <= self.m_elements <= MAX_RIS_ELEMENTS:
                raise ConfigError(f"RIS element count must be in [1, {MAX_RIS_ELEMENTS}]")
            if self.element_weight_kg < 0 or self.per_element_power_w < 0 or self.controller_power_w < 0:
                raise ConfigError("RIS weights and powers must be nonnegative")
        elif self.kind == "fdr":
            if self.ant_rx < 1 or self.ant_tx < 1:
                raise ConfigError("FDR needs at least one receive and one transmit antenna")
            if self.ant_rx != self.ant_tx:
                raise ConfigError("FDR antennas are split evenly between receive and transmit")
            if self.ant_rx + self.ant_tx > MAX_FDR_ANTENNAS:
                raise ConfigError(f"FDR antenna count must not exceed {MAX_FDR_ANTENNAS}")
            if self.antenna_weight_kg < 0 or self.transceiver_power_w < 0 or self.amp_drain_inv < 0:
                raise ConfigError("FDR weights and powers must be nonnegative")
            if not self.max_tx_power_w > 0:
                raise ConfigError("FDR max transmit power must be strictly positive")
        else:
            raise ConfigError(f"unknown payload kind {self.kind!r}")

    @property
    def is_ris(self):
        return self.kind == "ris"

    @property
    def n_antennas(self):
        return self.ant_rx + self.ant_tx


@dataclass(frozen=True)
class Airframe:
    uav_weight_kg: float
    battery_wh: float
    max_thrust_kg: float
    max_speed_mps: float
    frame_area_m2: float
    drag_coeff: float
    air_density: float
    wind_speed_mps: float
    gravity: float
    motor_coeffs: tuple
    slot_seconds: float
    altitude_m: float
    nav_power_w: float = 0.0

    def __post_init__(self):
        for name in ("uav_weight_kg", "battery_wh", "max_thrust_kg", "max_speed_mps",
                     "gravity", "slot_seconds", "altitude_m"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"airframe.{name} must be strictly positive")
        for name in ("frame_area_m2", "drag_coeff", "air_density", "wind_speed_mps", "nav_power_w"):
            if getattr(self, name) < 0:
                raise ConfigError(f"airframe.{name} must be nonnegative")
        if len(self.motor_coeffs) != 3:
            raise ConfigError("motor_coeffs needs exactly three entries (C1, C2, C3)")
        if not self.motor_coeffs[0] > 0:
            raise ConfigError("motor coefficient C1 must be positive")

    @property
    def battery_j(self):
        return wh_to_joules(self.battery_wh)


@dataclass(frozen=True, eq=False)
class Scenario:
    field_side_m: float
    bs_pos: tuple
    gn_pos: np.ndarray
    radio: RadioParams
    payload: Payload
    airframe: Airframe
    rng_seed: int = 0

    def __post_init__(self):
        gn = np.array(self.gn_pos, dtype=float)
        if gn.ndim != 2 or gn.shape[0] < 1 or gn.shape[1] not in (2, 3):
            raise ConfigError("ground nodes must be a nonempty (K, 2) or (K, 3) array")
        if gn.shape[1] == 2:
            gn = np.column_stack([gn, np.zeros(len(gn))])
        half = self.field_side_m / 2.0
        if not self.field_side_m > 0:
            raise ConfigError("field_side_m must be strictly positive")
        if np.any(np.abs(gn[:, :2]) > half * (1 + 1e-12)):
            raise ConfigError("ground nodes must lie inside the field")
        gn.setflags(write=False)
        object.__setattr__(self, "gn_pos", gn)
        bs = tuple(float(v) for v in self.bs_pos)
        if len(bs) != 3 or bs[0] != 0.0 or bs[1] != 0.0 or bs[2] < 0:
            raise ConfigError("the base station sits at the origin: bs_pos = (0, 0, H_BS)")
        object.__setattr__(self, "bs_pos", bs)
        headroom = energy.thrust_headroom(self.airframe, energy.payload_weight(self.payload))
        if headroom <= 0:
            raise ConfigError(
                "maximum thrust does not exceed UAV + drag + payload weight; the UAV cannot fly"
            )

    @property
    def k(self):
        return self.gn_pos.shape[0]

    @property
    def gn_xy(self):
        return self.gn_pos[:, :2]

    @property
    def bs_xy(self):
        return np.array(self.bs_pos[:2])

    @property
    def bs_height_m(self):
        return self.bs_pos[2]

    def replace(self, **changes):
        """Copy with top-level fields swapped (re-validated)."""
        return dataclasses.replace(self, **changes)

    def with_payload(self, **changes):
        return self.replace(payload=dataclasses.replace(self.payload, **changes))

    def with_radio(self, **changes):
        return self.replace(radio=dataclasses.replace(self.radio, **changes))

    def with_airframe(self, **changes):
        return self.replace(airframe=dataclasses.replace(self.airframe, **changes))


def sample_ground_nodes(seed, k, field_side_m):
    """Draw ``k`` ground-node (x, y) positions uniformly on the square field."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not field_side_m > 0:
        raise ValueError("field_side_m must be strictly positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    half = field_side_m / 2.0
    return rng.uniform(-half, half, size=(k, 2))


# ---------------------------------------------------------------------------
# JSON ingestion

_TOP_KEYS = {"field_side_m", "num_gns", "rng_seed", "gn_positions_m", "bs_height_m",
             "radio", "payload", "airframe"}
_RADIO_KEYS = {"bandwidth_hz", "wavelength_m", "ref_distance_m", "tx_power_dbm",
               "noise_power_dbm", "antenna_gain_tx_db", "antenna_gain_rx_db", "sic_db",
               "snr_threshold_db", "snr_threshold", "path_loss_exp"}
_RIS_KEYS = {"kind", "elements", "element_weight_kg", "element_power_w", "controller_power_w"}
_FDR_KEYS = {"kind", "antennas", "antenna_weight_kg", "amp_drain_inv", "transceiver_power_w",
             "max_tx_power_dbm"}
_AIRFRAME_KEYS = {"uav_weight_kg", "battery_wh", "max_thrust_kg", "max_speed_kmh",
                  "frame_area_m2", "drag_coeff", "air_density_kgm3", "wind_speed_mps",
                  "gravity_mps2", "slot_seconds", "altitude_m", "motor_coeffs", "nav_power_w"}
_OPTIONAL = {"rng_seed", "gn_positions_m", "num_gns", "snr_threshold_db", "snr_threshold",
             "path_loss_exp", "motor_coeffs", "nav_power_w"}


def _check_keys(section, d, allowed):
    if not isinstance(d, dict):
        raise ConfigError(f"{section} must be a JSON object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")
    missing = allowed - _OPTIONAL - set(d)
    if missing:
        raise ConfigError(f"missing key(s) in {section}: {sorted(missing)}")


def _radio_from_dict(d):
    _check_keys("radio", d, _RADIO_KEYS)
    if ("snr_threshold_db" in d) == ("snr_threshold" in d):
        raise ConfigError("radio needs exactly one of snr_threshold_db / snr_threshold")
    thr = db_to_linear(d["snr_threshold_db"]) if "snr_threshold_db" in d else float(d["snr_threshold"])
    return RadioParams(
        bandwidth_hz=float(d["bandwidth_hz"]),
        wavelength_m=float(d["wavelength_m"]),
        ref_distance_m=float(d["ref_distance_m"]),
        tx_power_w=dbm_to_watts(d["tx_power_dbm"]),
        noise_power_w=dbm_to_watts(d["noise_power_dbm"]),
        antenna_gain_tx=db_to_linear(d["antenna_gain_tx_db"]),
        antenna_gain_rx=db_to_linear(d["antenna_gain_rx_db"]),
        sic_coeff=db_to_linear(d["sic_db"]),
        snr_threshold=thr,
        path_loss_exp=float(d.get("path_loss_exp", 2.0)),
    )


def _payload_from_dict(d):
    kind = d.get("kind") if isinstance(d, dict) else None
    if kind == "ris":
        _check_keys("payload", d, _RIS_KEYS)
        return Payload(
            kind="ris",
            m_elements=_as_count(d["elements"], "payload.elements"),
            element_weight_kg=float(d["element_weight_kg"]),
            per_element_power_w=float(d["element_power_w"]),
            controller_power_w=float(d["controller_power_w"]),
        )
    if kind == "fdr":
        _check_keys("payload", d, _FDR_KEYS)
        n = _as_count(d["antennas"], "payload.antennas")
        if n % 2:
            raise ConfigError("FDR antenna count must be even (A_r = A_t)")
        return Payload(
            kind="fdr",
            ant_rx=n // 2,
            ant_tx=n // 2,
            antenna_weight_kg=float(d["antenna_weight_kg"]),
            amp_drain_inv=float(d["amp_drain_inv"]),
            transceiver_power_w=float(d["transceiver_power_w"]),
            max_tx_power_w=dbm_to_watts(d["max_tx_power_dbm"]),
        )
    raise ConfigError(f"unknown payload kind {kind!r}")


def _airframe_from_dict(d, kind):
    _check_keys("airframe", d, _AIRFRAME_KEYS)
    coeffs = tuple(float(c) for c in d.get("motor_coeffs", MOTOR_COEFFS[kind]))
    return Airframe(
        uav_weight_kg=float(d["uav_weight_kg"]),
        battery_wh=float(d["battery_wh"]),
        max_thrust_kg=float(d["max_thrust_kg"]),
        max_speed_mps=kmh_to_mps(float(d["max_speed_kmh"])),
        frame_area_m2=float(d["frame_area_m2"]),
        drag_coeff=float(d["drag_coeff"]),
        air_density=float(d["air_density_kgm3"]),
        wind_speed_mps=float(d["wind_speed_mps"]),
        gravity=float(d["gravity_mps2"]),
        motor_coeffs=coeffs,
        slot_seconds=float(d["slot_seconds"]),
        altitude_m=float(d["altitude_m"]),
        nav_power_w=float(d.get("nav_power_w", 0.0)),
    )


def _as_count(v, name):
    if isinstance(v, bool) or not float(v).is_integer():
        raise ConfigError(f"{name} must be an integer")
    return int(v)


def scenario_from_dict(cfg, seed=None):
    """Build a :class:`Scenario` from a parsed config document.

    ``seed`` overrides ``rng_seed``. Ground nodes come from
    ``gn_positions_m`` when given, otherwise they are sampled.
    """
    _check_keys("config", cfg, _TOP_KEYS)
    payload = _payload_from_dict(cfg["payload"])
    radio = _radio_from_dict(cfg["radio"])
    airframe = _airframe_from_dict(cfg["airframe"], payload.kind)
    side = float(cfg["field_side_m"])
    rng_seed = int(seed if seed is not None else cfg.get("rng_seed", 0))
    if "gn_positions_m" in cfg:
        gn = np.asarray(cfg["gn_positions_m"], dtype=float)
        if "num_gns" in cfg and _as_count(cfg["num_gns"], "num_gns") != len(gn):
            raise ConfigError("num_gns disagrees with gn_positions_m")
    else:
        if "num_gns" not in cfg:
            raise ConfigError("config needs num_gns or gn_positions_m")
        if not side > 0:
            raise ConfigError("field_side_m must be strictly positive")
        gn = sample_ground_nodes(rng_seed, _as_count(cfg["num_gns"], "num_gns"), side)
    bs_h = float(cfg["bs_height_m"])
    return Scenario(
        field_side_m=side,
        bs_pos=(0.0, 0.0, bs_h),
        gn_pos=gn,
        radio=radio,
        payload=payload,
        airframe=airframe,
        rng_seed=rng_seed,
    )


def load_config(path, seed=None):
    """Read a JSON config file and return the corresponding :class:`Scenario`."""
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(cfg, seed=seed)


def default_config(kind):
    """Return the bundled default config document for ``"ris"`` or ``"fdr"``."""
    if kind not in MOTOR_COEFFS:
        raise ConfigError(f"unknown payload kind {kind!r}")
    text = resources.files("uavnet.data").joinpath(f"{kind}.json").read_text()
    return json.loads(text)
