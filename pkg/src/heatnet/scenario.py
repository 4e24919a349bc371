"""Demand generation, test-case configuration, constants, unit conversions.

Consumer power demand follows class profiles: 24 hourly shape factors
interpolated by a periodic cubic spline, scaled per consumer by its daily
energy estimate and modulated by the daily mean outdoor temperature. The
licensed standard load profiles are replaced by a synthetic family with
the same structure (hourly factors + spline, double peak at 06:00 and
18:00).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InputError, ValidationError

# fluid and gravity constants (fixed)
RHO = 1000.0  # density [kg/m^3]
CP = 4160.0  # specific heat capacity [J/(kg K)]
GRAVITY = 9.81  # [m/s^2]

DAY = 86400.0  # [s]
BAR = 1.0e5  # [Pa]
KELVIN_OFFSET = 273.15

# one Kelvin of energy density; default floor for consumer energy spread
E_PER_KELVIN = RHO * CP


def energy_density(temperature_c):
    """Energy density e = rho*cp*T for an absolute temperature, from deg C."""
    return RHO * CP * (np.asarray(temperature_c, dtype=float) + KELVIN_OFFSET)


def temperature(energy_density_j):
    """Inverse of :func:`energy_density`, back to deg C."""
    return np.asarray(energy_density_j, dtype=float) / (RHO * CP) - KELVIN_OFFSET


# ---------------------------------------------------------------------------
# demand profiles
# ---------------------------------------------------------------------------

# synthetic class family: base + morning/evening Gaussian peaks (hours)
_BASE = 0.55
_PEAKS = ((6.0, 0.85, 2.1), (18.0, 1.05, 2.4))  # (center_h, amplitude, width_h)
_AMPLITUDE_REF_C = 0.0  # reference daily mean temperature [deg C]
_AMPLITUDE_SLOPE = 0.03  # relative demand increase per K below reference


def temperature_amplitude(t_daily_mean_c):
    """Demand amplitude relative to the reference daily mean temperature."""
    return max(0.1, 1.0 + _AMPLITUDE_SLOPE * (_AMPLITUDE_REF_C - t_daily_mean_c))


def _shape_factors():
    hours = np.arange(24.0)
    shape = np.full(24, _BASE)
    for center, amp, width in _PEAKS:
        for wrap in (-24.0, 0.0, 24.0):
            shape += amp * np.exp(-0.5 * ((hours - center + wrap) / width) ** 2)
    return shape


class DemandProfile:
    """Normalized 24 h demand shape for one consumption class.

    The spline interpolates the hourly shape factors exactly and is
    periodic over one day. ``rate(t)`` integrates to the temperature
    amplitude over one day, so a consumer with daily energy ``c`` draws
    ``c * amplitude`` joules per day.
    """

    def __init__(self, class_id: int, t_daily_mean_c: float, hourly_factors=None):
        self.class_id = class_id
        self.t_daily_mean_c = t_daily_mean_c
        factors = np.asarray(
            _shape_factors() if hourly_factors is None else hourly_factors, dtype=float
        )
        if factors.shape != (24,) or np.any(factors < 0):
            raise ValidationError("hourly shape factors must be 24 nonnegative values")
        self.hourly_factors = factors
        knots_t = np.arange(25.0) * 3600.0
        knots_v = np.append(factors, factors[0])
        spline = CubicSpline(knots_t, knots_v, bc_type="periodic")
        total = spline.integrate(0.0, DAY)  # [factor * s]
        self.amplitude = temperature_amplitude(t_daily_mean_c)
        self._spline = spline
        self._scale = self.amplitude / total  # -> unit daily integral at amplitude 1

    def rate(self, t):
        """Specific demand rate [1/s] at time ``t`` (seconds, any horizon)."""
        return self._scale * self._spline(np.mod(t, DAY))


def demand_signal(profile: DemandProfile, daily_energy: float, times) -> np.ndarray:
    """Power demand G(t) [W] of one consumer over ``times`` [s]."""
    return daily_energy * profile.rate(np.asarray(times, dtype=float))


class DemandModel:
    """Per-network demand: one profile per consumer class, scaled per consumer."""

    def __init__(self, consumers, t_daily_mean_c: float):
        self.consumers = list(consumers)
        self.profiles = {}
        for c in self.consumers:
            if c.class_id not in self.profiles:
                self.profiles[c.class_id] = DemandProfile(c.class_id, t_daily_mean_c)
        self._scales = np.array([c.daily_energy for c in self.consumers])

    def __call__(self, t):
        """Demand vector G(t) [W], one entry per consumer; t scalar or array."""
        t = np.asarray(t, dtype=float)
        rates = np.stack(
            [self.profiles[c.class_id].rate(t) for c in self.consumers], axis=0
        )
        return (self._scales if t.ndim == 0 else self._scales[:, None]) * rates


@dataclass(frozen=True)
class AggregateStats:
    mean_w: float  # daily mean of total consumption (second period)
    max_w: float  # daily max of total consumption (second period)
    cap_w: float  # feed-in cap derived from the configured rule


def aggregate_stats(total_demand, times, rule="midway", explicit_cap=None):
    """Mean/max of the total consumption over the second 24 h period.

    ``rule='midway'`` places the feed-in cap halfway between daily mean and
    max; ``rule='explicit'`` uses ``explicit_cap``.
    """
    times = np.asarray(times, dtype=float)
    total = np.asarray(total_demand, dtype=float)
    t0 = times[0]
    window = (times >= t0 + DAY) & (times < t0 + 2 * DAY)
    if not np.any(window):
        window = np.ones_like(times, dtype=bool)
    mean_w = float(np.mean(total[window]))
    max_w = float(np.max(total[window]))
    if rule == "midway":
        cap = mean_w + 0.5 * (max_w - mean_w)
    elif rule == "explicit":
        if explicit_cap is None:
            raise ValidationError("explicit feed-in rule requires a cap value")
        cap = float(explicit_cap)
    else:
        raise ValidationError(f"unknown feed-in rule: {rule}")
    return AggregateStats(mean_w=mean_w, max_w=max_w, cap_w=cap)


# ---------------------------------------------------------------------------
# scenario configuration
# ---------------------------------------------------------------------------


@dataclass
class ScenarioConfig:
    """One optimization scenario: temperatures in deg C, pressures in Pa."""

    t_daily_mean_c: float = -3.0
    t_min_consumer_c: float = 75.0
    t_max_network_c: float = 110.0
    p_min: float = 3.5 * BAR
    p_max: float = 9.1 * BAR
    dp_spread_max: float = 2.5 * BAR
    feedin_rule: str = "midway"
    feedin_cap_w: float | None = None
    t0: float = 0.0
    t_end: float = 72 * 3600.0
    dt: float = 300.0
    t_return_c: float = 45.0
    eta1: float = (DAY / (2 * np.pi)) ** 2  # [s^2], balances both objective terms
    eta2_c: float = 85.0  # objective anchor level as temperature
    harmonics: int = 12

    @property
    def e_return(self):
        return float(energy_density(self.t_return_c))

    @property
    def e_min_consumer(self):
        return float(energy_density(self.t_min_consumer_c))

    @property
    def e_max_network(self):
        return float(energy_density(self.t_max_network_c))

    @property
    def eta2(self):
        return float(energy_density(self.eta2_c))

    def validate(self):
        if self.dp_spread_max > self.p_max - self.p_min:
            raise ValidationError("pressure spread limit exceeds p_max - p_min")
        if self.t_min_consumer_c <= self.t_return_c:
            raise ValidationError("consumer floor temperature must exceed return level")
        if self.dt <= 0 or self.t_end <= self.t0:
            raise ValidationError("invalid time grid")
        if self.eta1 < 0:
            raise ValidationError("eta1 must be nonnegative")
        return self

    def to_dict(self):
        return {
            "T_d_C": self.t_daily_mean_c,
            "T_min_cons_C": self.t_min_consumer_c,
            "T_net_max_C": self.t_max_network_c,
            "p_min_bar": self.p_min / BAR,
            "p_max_bar": self.p_max / BAR,
            "dp_max_bar": self.dp_spread_max / BAR,
            "feedin_rule": self.feedin_rule,
            "feedin_cap_W": self.feedin_cap_w,
            "t0_h": self.t0 / 3600.0,
            "te_h": self.t_end / 3600.0,
            "dt_s": self.dt,
            "T_return_C": self.t_return_c,
            "eta1_s2": self.eta1,
            "eta2_C": self.eta2_c,
            "harmonics": self.harmonics,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def scenario_from_dict(data) -> ScenarioConfig:
    try:
        cfg = ScenarioConfig(
            t_daily_mean_c=float(data["T_d_C"]),
            t_min_consumer_c=float(data.get("T_min_cons_C", 75.0)),
            t_max_network_c=float(data.get("T_net_max_C", 110.0)),
            p_min=float(data.get("p_min_bar", 3.5)) * BAR,
            p_max=float(data.get("p_max_bar", 9.1)) * BAR,
            dp_spread_max=float(data.get("dp_max_bar", 2.5)) * BAR,
            feedin_rule=str(data.get("feedin_rule", "midway")),
            feedin_cap_w=(
                float(data["feedin_cap_W"]) if data.get("feedin_cap_W") is not None else None
            ),
            t0=float(data.get("t0_h", 0.0)) * 3600.0,
            t_end=float(data.get("te_h", 72.0)) * 3600.0,
            dt=float(data.get("dt_s", 300.0)),
            t_return_c=float(data.get("T_return_C", 45.0)),
            eta1=float(data.get("eta1_s2", ScenarioConfig.eta1)),
            eta2_c=float(data.get("eta2_C", 85.0)),
            harmonics=int(data.get("harmonics", 12)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed scenario description: {exc}") from exc
    return cfg.validate()


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise InputError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc
    return scenario_from_dict(data)
