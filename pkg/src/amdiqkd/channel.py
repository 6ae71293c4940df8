"""Expected observables of an asynchronous MDI-QKD link.

Weak coherent pulses from two parties interfere on a 50:50 beam splitter at
an untrusted middle node; a time bin is kept when exactly one of the two
threshold detectors fires.  Kept clicks are paired with the nearest later
click inside a pairing window, and each pair is classified by the per-party
two-bin intensity totals.  This module evaluates the closed forms for:

* the per-bin click probability at fixed or averaged interference phase,
* the number of pairs and the mean pairing interval,
* the coincidence table over intensity totals (with phase sifting for the
  matched-phase groups used as the X basis),
* the X-basis error count including interferometer misalignment and the
  slow phase drift accumulated over the pairing interval,
* the Z-basis bit error rate of each key group.

An event-level Monte Carlo counterpart lives in :mod:`amdiqkd.oracle`; every
closed form here is validated against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "LABEL_ORDER",
    "DetectorPair",
    "ChannelLink",
    "SourceConfig",
    "ObservableSet",
    "pair_gain",
    "pair_gain_phase",
    "kept_click_prob",
    "pairing_statistics",
    "coincidence_counts",
    "xbasis_error_count",
    "z_error_rates",
    "expected_observables",
    "party_totals",
    "total_intensity",
]

# Canonical ordering of intensity labels, brightest first.
LABEL_ORDER = ("mu", "omega", "nu", "o")

_QUAD_REL_TOL = 1e-9
_QUAD_START = 64
_QUAD_MAX = 16384


@dataclass(frozen=True)
class DetectorPair:
    """The relay's two threshold detectors (assumed identical).

    eta_d        detection efficiency, in (0, 1]
    dark_rate_hz dark counts per second per detector
    """

    eta_d: float
    dark_rate_hz: float

    def __post_init__(self) -> None:
        if not 0.0 < self.eta_d <= 1.0:
            raise ValueError(f"eta_d must be in (0, 1], got {self.eta_d!r}")
        if self.dark_rate_hz < 0.0:
            raise ValueError(f"dark_rate_hz must be >= 0, got {self.dark_rate_hz!r}")

    def dark_prob(self, clock_hz: float) -> float:
        """Per-time-bin dark count probability at the given clock rate."""
        p = self.dark_rate_hz / clock_hz
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dark probability {p!r} outside [0, 1)")
        return p


@dataclass(frozen=True)
class ChannelLink:
    """Fibre spans from both parties to the relay plus timing parameters.

    length_a_km / length_b_km   fibre lengths to the relay
    attenuation_db_per_km       fibre loss coefficient
    clock_hz                    pulse repetition rate F
    phase_drift_rad_per_s       fibre phase drift rate
    laser_offset_hz             residual laser frequency difference
    interference_error          interferometer misalignment error rate
    pairing_window_bins         maximum pairing gap, in time bins
    phase_slices                number of discrete global phases M (even)
    """

    length_a_km: float
    length_b_km: float
    attenuation_db_per_km: float
    clock_hz: float
    phase_drift_rad_per_s: float = 0.0
    laser_offset_hz: float = 0.0
    interference_error: float = 0.0
    pairing_window_bins: float = 1e6
    phase_slices: int = 16

    def __post_init__(self) -> None:
        if self.length_a_km < 0.0 or self.length_b_km < 0.0:
            raise ValueError("fibre lengths must be >= 0")
        if self.clock_hz <= 0.0:
            raise ValueError("clock_hz must be positive")
        if self.pairing_window_bins < 1.0:
            raise ValueError("pairing_window_bins must be >= 1")
        if self.phase_slices < 2 or self.phase_slices % 2:
            raise ValueError("phase_slices must be an even integer >= 2")
        if not 0.0 <= self.interference_error < 0.5:
            raise ValueError("interference_error must be in [0, 0.5)")

    @property
    def eta_a(self) -> float:
        return 10.0 ** (-self.attenuation_db_per_km * self.length_a_km / 10.0)

    @property
    def eta_b(self) -> float:
        return 10.0 ** (-self.attenuation_db_per_km * self.length_b_km / 10.0)

    @property
    def total_km(self) -> float:
        return self.length_a_km + self.length_b_km

    def drift_phase(self, t_mean_s: float) -> float:
        """Phase offset accumulated over the mean pairing interval."""
        return t_mean_s * (2.0 * math.pi * self.laser_offset_hz + self.phase_drift_rad_per_s)


def _validate_party(intensities: Mapping[str, float], probabilities: Mapping[str, float]) -> None:
    if set(intensities) != set(probabilities):
        raise ValueError("intensity and probability labels differ")
    labels = set(intensities)
    if "o" not in labels or "mu" not in labels or "nu" not in labels:
        raise ValueError("labels must include 'mu', 'nu' and 'o'")
    if not labels <= set(LABEL_ORDER):
        raise ValueError(f"unknown labels {labels - set(LABEL_ORDER)}")
    if intensities["o"] != 0.0:
        raise ValueError("'o' must have zero intensity")
    ordered = [intensities[l] for l in LABEL_ORDER if l in labels]
    if any(a <= b for a, b in zip(ordered, ordered[1:])):
        raise ValueError(f"intensities must be strictly decreasing mu > (omega >) nu > o, got {dict(intensities)}")
    for l, p in probabilities.items():
        if not 0.0 < p < 1.0:
            raise ValueError(f"probability of '{l}' must be in (0, 1), got {p!r}")
    total = sum(probabilities.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"probabilities must sum to 1, got {total!r}")


@dataclass(frozen=True)
class SourceConfig:
    """Per-party intensity sets and send probabilities.

    Three-intensity operation uses labels {mu, nu, o}; adding "omega" on both
    sides selects the four-intensity variant.  With ``click_filtering`` on,
    single-bin clicks where the two parties used different non-vacuum levels
    are discarded before pairing.
    """

    intensities_a: Mapping[str, float]
    probabilities_a: Mapping[str, float]
    intensities_b: Mapping[str, float]
    probabilities_b: Mapping[str, float]
    click_filtering: bool = True

    def __post_init__(self) -> None:
        _validate_party(self.intensities_a, self.probabilities_a)
        _validate_party(self.intensities_b, self.probabilities_b)
        if set(self.intensities_a) != set(self.intensities_b):
            raise ValueError("both parties must use the same label set")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(l for l in LABEL_ORDER if l in self.intensities_a)

    @property
    def four_intensity(self) -> bool:
        return "omega" in self.intensities_a

    @property
    def filtered_pairs(self) -> frozenset[tuple[str, str]]:
        """Single-bin label combinations discarded by click filtering."""
        if not self.click_filtering:
            return frozenset()
        bright = [l for l in self.labels if l != "o"]
        return frozenset((x, y) for x in bright for y in bright if x != y)

    def kept(self, label_a: str, label_b: str) -> bool:
        return (label_a, label_b) not in self.filtered_pairs

    @property
    def survival_prob(self) -> float:
        """Probability that a click survives filtering, from send probabilities."""
        p_s = 1.0
        for (la, lb) in self.filtered_pairs:
            p_s -= self.probabilities_a[la] * self.probabilities_b[lb]
        return p_s

    @classmethod
    def from_params(
        cls,
        mu_a: float,
        nu_a: float,
        p_mu_a: float,
        p_nu_a: float,
        mu_b: float,
        nu_b: float,
        p_mu_b: float,
        p_nu_b: float,
        omega_a: float | None = None,
        p_omega_a: float | None = None,
        omega_b: float | None = None,
        p_omega_b: float | None = None,
        click_filtering: bool = True,
    ) -> "SourceConfig":
        """Build a config from flat parameters; vacuum probability is derived."""

        def party(mu, nu, p_mu, p_nu, omega, p_omega):
            ints = {"mu": mu, "nu": nu, "o": 0.0}
            probs = {"mu": p_mu, "nu": p_nu}
            if omega is not None:
                ints["omega"] = omega
                probs["omega"] = p_omega
            probs["o"] = 1.0 - sum(probs.values())
            return ints, probs

        ia, pa = party(mu_a, nu_a, p_mu_a, p_nu_a, omega_a, p_omega_a)
        ib, pb = party(mu_b, nu_b, p_mu_b, p_nu_b, omega_b, p_omega_b)
        return cls(ia, pa, ib, pb, click_filtering=click_filtering)


def party_totals(labels: tuple[str, ...]) -> list[tuple[str, str]]:
    """All unordered two-bin label combinations, canonically ordered."""
    out = []
    for i, l1 in enumerate(labels):
        for l2 in labels[i:]:
            out.append((l1, l2))
    return out


def total_intensity(total: tuple[str, str], intensities: Mapping[str, float]) -> float:
    return intensities[total[0]] + intensities[total[1]]


def _splits(total: tuple[str, str]) -> list[tuple[str, str]]:
    """(early, late) label assignments compatible with a two-bin total."""
    l1, l2 = total
    if l1 == l2:
        return [(l1, l2)]
    return [(l1, l2), (l2, l1)]


def _click_given_means(mean_l, mean_r, p_d):
    """Single-click probabilities for given mean detected photon numbers."""
    silent_l = (1.0 - p_d) * np.exp(-mean_l)
    silent_r = (1.0 - p_d) * np.exp(-mean_r)
    q_l = (1.0 - silent_l) * silent_r
    q_r = silent_l * (1.0 - silent_r)
    return q_l, q_r


def pair_gain_phase(
    k_a: float, k_b: float, theta, link: ChannelLink, det: DetectorPair
) -> tuple[float, float]:
    """Left/right single-click probabilities at interference phase ``theta``.

    The two output ports see mean detected photon numbers
    eta_d * [ (eta_a k_a + eta_b k_b)/2 +- sqrt(eta_a k_a eta_b k_b) cos(theta) ].
    Accepts a scalar or an ndarray of phases.
    """
    if k_a < 0.0 or k_b < 0.0:
        raise ValueError("intensities must be >= 0")
    s = 0.5 * (link.eta_a * k_a + link.eta_b * k_b)
    c = math.sqrt(link.eta_a * k_a * link.eta_b * k_b)
    p_d = det.dark_prob(link.clock_hz)
    cos_t = np.cos(theta)
    return _click_given_means(det.eta_d * (s + c * cos_t), det.eta_d * (s - c * cos_t), p_d)


def pair_gain(k_a: float, k_b: float, link: ChannelLink, det: DetectorPair) -> float:
    """Phase-averaged single-click probability for intensities (k_a | k_b).

    Equals the average of the two pair_gain_phase outputs over theta; with
    identical detectors the cross term carries a zero Bessel argument.
    """
    if k_a < 0.0 or k_b < 0.0:
        raise ValueError("intensities must be >= 0")
    p_d = det.dark_prob(link.clock_hz)
    x = det.eta_d * math.sqrt(link.eta_a * k_a * link.eta_b * k_b)
    y = (1.0 - p_d) * math.exp(-det.eta_d * (link.eta_a * k_a + link.eta_b * k_b) / 2.0)
    return 2.0 * y * float(np.i0(x)) - 2.0 * y * y


def periodic_mean(f: Callable[[np.ndarray], np.ndarray], rel_tol: float = _QUAD_REL_TOL) -> float:
    """Mean of a smooth 2*pi-periodic function over one period.

    Uniform-grid (trapezoid) quadrature with doubling; for periodic smooth
    integrands this converges geometrically.
    """
    n = _QUAD_START
    thetas = 2.0 * math.pi * np.arange(n) / n
    value = float(np.mean(f(thetas)))
    while n < _QUAD_MAX:
        n *= 2
        thetas = 2.0 * math.pi * (np.arange(n // 2) * 2 + 1) / n
        refined = 0.5 * (value + float(np.mean(f(thetas))))
        if abs(refined - value) <= rel_tol * max(abs(refined), 1e-300):
            return refined
        value = refined
    return value


def _click_table(
    source: SourceConfig, link: ChannelLink, det: DetectorPair
) -> dict[tuple[str, str], float]:
    ints_a, ints_b = source.intensities_a, source.intensities_b
    return {
        (la, lb): pair_gain(ints_a[la], ints_b[lb], link, det)
        for la in source.labels
        for lb in source.labels
    }


def kept_click_prob(
    source: SourceConfig,
    link: ChannelLink,
    det: DetectorPair,
    table: Mapping[tuple[str, str], float] | None = None,
) -> float:
    """Probability that a time bin produces a click that survives filtering."""
    if table is None:
        table = _click_table(source, link, det)
    q_tot = 0.0
    for la in source.labels:
        for lb in source.labels:
            if source.kept(la, lb):
                q_tot += source.probabilities_a[la] * source.probabilities_b[lb] * table[(la, lb)]
    return q_tot


def pairing_statistics(n_pulses: float, q_tot: float, link: ChannelLink) -> tuple[float, float]:
    """Number of formed pairs and mean pairing interval in seconds.

    A kept click pairs with the next kept click if it arrives within the
    pairing window; otherwise it is dropped and the next click starts a new
    attempt.
    """
    if not 0.0 <= q_tot < 1.0:
        raise ValueError(f"q_tot must be in [0, 1), got {q_tot!r}")
    if q_tot == 0.0:
        return 0.0, math.inf
    n_window = link.pairing_window_bins
    # P(next click within the window) = 1 - (1 - q_tot)^n_window
    q_window = -math.expm1(n_window * math.log1p(-q_tot))
    n_pairs = n_pulses * q_tot / (1.0 + 1.0 / q_window)
    t_mean = (1.0 - n_window * q_tot * (1.0 / q_window - 1.0)) / (link.clock_hz * q_tot)
    return n_pairs, t_mean


def _phase_sifted_totals(source: SourceConfig) -> set[tuple[tuple[str, str], tuple[str, str]]]:
    """Coincidence groups whose phases must match (same bright level twice on both sides)."""
    bright = [l for l in source.labels if l != "o"]
    return {((l, l), (l, l)) for l in bright}


def coincidence_counts(
    source: SourceConfig,
    link: ChannelLink,
    det: DetectorPair,
    n_pairs: float,
    q_tot: float | None = None,
    table: Mapping[tuple[str, str], float] | None = None,
    phase_sifted: bool = True,
) -> dict[tuple[tuple[str, str], tuple[str, str]], float]:
    """Expected coincidence count per (total_a, total_b) group.

    Matched-phase groups (both parties using the same bright level in both
    bins) keep only the 2/M phase-sifted fraction, evaluated through the
    phase-resolved click probability; set ``phase_sifted=False`` to get the
    raw decomposition for completeness checks.
    """
    if table is None:
        table = _click_table(source, link, det)
    if q_tot is None:
        q_tot = kept_click_prob(source, link, det, table)
    if q_tot <= 0.0:
        totals = party_totals(source.labels)
        return {(ta, tb): 0.0 for ta in totals for tb in totals}

    p_a, p_b = source.probabilities_a, source.probabilities_b
    sifted = _phase_sifted_totals(source) if phase_sifted else set()
    m_slices = link.phase_slices

    def bin_fraction(la: str, lb: str) -> float:
        if not source.kept(la, lb):
            return 0.0
        return p_a[la] * p_b[lb] * table[(la, lb)] / q_tot

    counts: dict[tuple[tuple[str, str], tuple[str, str]], float] = {}
    totals = party_totals(source.labels)
    for ta in totals:
        for tb in totals:
            if (ta, tb) in sifted:
                k_a = source.intensities_a[ta[0]]
                k_b = source.intensities_b[tb[0]]
                weight = p_a[ta[0]] * p_b[tb[0]] / q_tot

                def integrand(thetas, k_a=k_a, k_b=k_b, weight=weight):
                    q_l, q_r = pair_gain_phase(k_a, k_b, thetas, link, det)
                    return (weight * (q_l + q_r)) ** 2

                counts[(ta, tb)] = n_pairs * (2.0 / m_slices) * periodic_mean(integrand)
            else:
                acc = 0.0
                for ae, al in _splits(ta):
                    for be, bl in _splits(tb):
                        acc += bin_fraction(ae, be) * bin_fraction(al, bl)
                counts[(ta, tb)] = n_pairs * acc
    return counts


def xbasis_error_count(
    source: SourceConfig,
    link: ChannelLink,
    det: DetectorPair,
    n_pairs: float,
    t_mean_s: float,
    q_tot: float | None = None,
) -> float:
    """Expected error count in the matched-phase decoy-decoy group.

    The late bin of a pair is evaluated at a phase shifted by the drift
    accumulated over the mean pairing interval; the interferometer
    misalignment swaps the error/no-error classification with probability
    ``link.interference_error``.
    """
    if q_tot is None:
        q_tot = kept_click_prob(source, link, det)
    if q_tot <= 0.0 or n_pairs <= 0.0:
        return 0.0
    delta = link.drift_phase(t_mean_s)
    nu_a = source.intensities_a["nu"]
    nu_b = source.intensities_b["nu"]
    weight = (source.probabilities_a["nu"] * source.probabilities_b["nu"] / q_tot) ** 2
    e_mis = link.interference_error

    def integrand(thetas):
        q_l, q_r = pair_gain_phase(nu_a, nu_b, thetas, link, det)
        q_l_d, q_r_d = pair_gain_phase(nu_a, nu_b, thetas + delta, link, det)
        wrong = q_l * q_r_d + q_r * q_l_d
        right = q_l * q_l_d + q_r * q_r_d
        return (1.0 - e_mis) * wrong + e_mis * right

    return n_pairs * (2.0 / link.phase_slices) * weight * periodic_mean(integrand)


def z_error_rates(
    source: SourceConfig,
    link: ChannelLink,
    det: DetectorPair,
    table: Mapping[tuple[str, str], float] | None = None,
) -> dict[tuple[tuple[str, str], tuple[str, str]], float]:
    """Bit error rate of each single-bright-level coincidence group.

    A bit error happens exactly when both parties put their bright pulse in
    the same bin (the partner bin then clicks on dark counts or leakage);
    bright pulses in different bins always yield agreeing bits.
    """
    if table is None:
        table = _click_table(source, link, det)
    rates: dict[tuple[tuple[str, str], tuple[str, str]], float] = {}
    bright = [l for l in source.labels if l != "o"]
    for ka in bright:
        for kb in bright:
            same = table[(ka, kb)] * table[("o", "o")] if source.kept(ka, kb) else 0.0
            diff = table[(ka, "o")] * table[("o", kb)]
            total = same + diff
            rates[((ka, "o"), (kb, "o"))] = same / total if total > 0.0 else 0.0
    return rates


@dataclass
class ObservableSet:
    """Everything the estimation chain consumes about one link configuration."""

    n_pulses: float
    n_pairs: float
    t_mean_s: float
    q_tot: float
    counts: dict[tuple[tuple[str, str], tuple[str, str]], float]
    m_x: float
    z_qber: dict[tuple[tuple[str, str], tuple[str, str]], float] = field(default_factory=dict)

    def validate(self) -> None:
        if any(v < 0.0 for v in self.counts.values()):
            raise ValueError("negative coincidence count")
        if sum(self.counts.values()) > self.n_pairs * (1.0 + 1e-9):
            raise ValueError("coincidence counts exceed the number of pairs")
        x_key = (("nu", "nu"), ("nu", "nu"))
        if self.m_x > self.counts.get(x_key, 0.0) * (1.0 + 1e-9):
            raise ValueError("X-basis errors exceed the X-basis count")


def expected_observables(
    source: SourceConfig, link: ChannelLink, det: DetectorPair, n_pulses: float
) -> ObservableSet:
    """Full closed-form observable set for one configuration."""
    table = _click_table(source, link, det)
    q_tot = kept_click_prob(source, link, det, table)
    n_pairs, t_mean = pairing_statistics(n_pulses, q_tot, link)
    if n_pairs == 0.0:
        totals = party_totals(source.labels)
        counts = {(ta, tb): 0.0 for ta in totals for tb in totals}
        return ObservableSet(n_pulses, 0.0, t_mean, q_tot, counts, 0.0, {})
    counts = coincidence_counts(source, link, det, n_pairs, q_tot, table)
    m_x = xbasis_error_count(source, link, det, n_pairs, t_mean, q_tot)
    obs = ObservableSet(
        n_pulses=n_pulses,
        n_pairs=n_pairs,
        t_mean_s=t_mean,
        q_tot=q_tot,
        counts=counts,
        m_x=m_x,
        z_qber=z_error_rates(source, link, det, table),
    )
    obs.validate()
    return obs
