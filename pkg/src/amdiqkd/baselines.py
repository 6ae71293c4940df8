"""Reference protocols for the rate comparison: four-intensity time-bin
MDI-QKD with double scanning, and four-intensity decoy-state BB84.

Both are evaluated from closed-form expected counts (no pairing stage) with
the same Chernoff machinery as the main protocol.  Transmittances here fold
the detector efficiency into the channel, matching the form of the printed
count models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .stats import binary_entropy, chernoff_expected, chernoff_observed, sampling_correction

__all__ = [
    "MdiParams",
    "MdiObservables",
    "Bb84Params",
    "Bb84Observables",
    "mdi_observables",
    "mdi_key_rate",
    "bb84_observables",
    "bb84_key_rate",
]

LEVELS = ("mu", "omega", "nu", "o")


def _check_levels(intensities: Mapping[str, float], probs: Mapping[str, float]) -> None:
    if intensities["o"] != 0.0:
        raise ValueError("'o' must be vacuum")
    mu, om, nu = intensities["mu"], intensities["omega"], intensities["nu"]
    if not mu > om > nu > 0.0:
        raise ValueError(f"need mu > omega > nu > 0, got {intensities}")
    total = sum(probs.values())
    if abs(total - 1.0) > 1e-9 or any(not 0.0 < p < 1.0 for p in probs.values()):
        raise ValueError(f"probabilities must be in (0,1) and sum to 1, got {probs}")


# ---------------------------------------------------------------------------
# time-bin MDI-QKD
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MdiParams:
    """Symmetric-role parameters for the time-bin MDI baseline."""

    intensities_a: Mapping[str, float]
    probs_a: Mapping[str, float]
    intensities_b: Mapping[str, float]
    probs_b: Mapping[str, float]
    length_a_km: float
    length_b_km: float
    attenuation_db_per_km: float
    eta_det: float
    dark_prob: float
    misalignment: float = 0.04

    def __post_init__(self) -> None:
        _check_levels(self.intensities_a, self.probs_a)
        _check_levels(self.intensities_b, self.probs_b)

    @property
    def eta_a(self) -> float:
        return self.eta_det * 10.0 ** (-self.attenuation_db_per_km * self.length_a_km / 10.0)

    @property
    def eta_b(self) -> float:
        return self.eta_det * 10.0 ** (-self.attenuation_db_per_km * self.length_b_km / 10.0)


@dataclass
class MdiObservables:
    """Expected Z/X counts and errors per intensity pair; n_pairs = N/2."""

    n_z: dict
    m_z: dict
    n_x: dict
    m_x: dict
    n_pairs: float


def mdi_observables(params: MdiParams, n_pulses: float) -> MdiObservables:
    """Closed-form detection model; detector dead time keeps one Bell state."""
    n_prime = n_pulses / 2.0
    p_d = params.dark_prob
    e_mis = params.misalignment
    n_z, m_z, n_x, m_x = {}, {}, {}, {}
    for ka_lab in LEVELS:
        for kb_lab in LEVELS:
            ka = params.intensities_a[ka_lab] * params.eta_a
            kb = params.intensities_b[kb_lab] * params.eta_b
            weight = n_prime * params.probs_a[ka_lab] * params.probs_b[kb_lab]
            x = math.sqrt(ka * kb)
            half = math.exp(-(ka + kb) / 2.0)
            bessel = float(np.i0(x))

            # errors: both bright pulses land in one bin (interference term);
            # the empty partner bin then clicks on a dark count.  Correct
            # events put one pulse per bin, no dark needed.
            scale = (1.0 - p_d) ** 2 * half
            interference = bessel - (1.0 - p_d) * half
            split = (1.0 - (1.0 - p_d) * math.exp(-ka / 2.0)) * (
                1.0 - (1.0 - p_d) * math.exp(-kb / 2.0)
            )
            n_z[(ka_lab, kb_lab)] = weight * scale * (p_d * interference + split)
            m_z[(ka_lab, kb_lab)] = weight * scale * p_d * interference

            y = (1.0 - p_d) * math.exp(-(ka + kb) / 4.0)
            bessel_half = float(np.i0(x / 2.0))
            n_x[(ka_lab, kb_lab)] = weight * y * y * (
                1.0 + 2.0 * y * y - 4.0 * y * bessel_half + bessel
            )
            m_x[(ka_lab, kb_lab)] = weight * y * y * (
                1.0 + y * y - 2.0 * y * bessel_half + e_mis * (bessel - 1.0)
            )
    return MdiObservables(n_z=n_z, m_z=m_z, n_x=n_x, m_x=m_x, n_pairs=n_prime)


def _exp_lower(x: float, eps: float | None) -> float:
    return x if eps is None else chernoff_expected(x, eps).lower


def _exp_upper(x: float, eps: float | None) -> float:
    return x if eps is None else chernoff_expected(x, eps).upper


def _obs_lower(x: float, eps: float | None) -> float:
    if x <= 0.0:
        return 0.0
    return x if eps is None else chernoff_observed(x, eps).lower


def _obs_upper(x: float, eps: float | None) -> float:
    if x <= 0.0:
        return 0.0
    return x if eps is None else chernoff_observed(x, eps).upper


def mdi_key_rate(
    params: MdiParams,
    n_pulses: float,
    eps: float,
    error_correction_f: float = 1.1,
    scan_grid: int | None = None,
) -> dict:
    """Secure key for the time-bin MDI baseline, minimized over the scan box.

    The two aggregates built from the decoy-level X data are bracketed with
    joint/Chernoff bounds and the rate is minimized over their rectangle
    (corner evaluation, optional dense grid).
    """
    obs = mdi_observables(params, n_pulses)
    ia, ib = params.intensities_a, params.intensities_b
    pa, pb = params.probs_a, params.probs_b
    mu_a, mu_b = ia["mu"], ib["mu"]
    om_a, om_b = ia["omega"], ib["omega"]
    nu_a, nu_b = ia["nu"], ib["nu"]
    if om_a / om_b <= nu_a / nu_b:
        om_p, nu_p = om_a, nu_a
    else:
        om_p, nu_p = om_b, nu_b

    n0_star = max(
        math.exp(-mu_a) * pa["mu"] / pa["o"] * _exp_lower(obs.n_z[("o", "mu")], eps),
        math.exp(-mu_b) * pb["mu"] / pb["o"] * _exp_lower(obs.n_z[("mu", "o")], eps),
    )
    n0_obs = _obs_lower(n0_star, eps)

    c_om = om_a * om_b * om_p
    c_nu = nu_a * nu_b * nu_p
    plus = (
        c_om * math.exp(nu_a + nu_b) / (pa["nu"] * pb["nu"])
        * _exp_lower(max(obs.n_x[("nu", "nu")] - obs.m_x[("nu", "nu")], 0.0), eps)
        + c_nu * math.exp(om_a) / (pa["omega"] * pb["o"]) * _exp_lower(obs.n_x[("omega", "o")], eps)
        + c_nu * math.exp(om_b) / (pa["o"] * pb["omega"]) * _exp_lower(obs.n_x[("o", "omega")], eps)
    )
    minus = (
        c_nu * math.exp(om_a + om_b) / (pa["omega"] * pb["omega"])
        * _exp_upper(obs.n_x[("omega", "omega")], eps)
        + c_nu / (pa["o"] * pb["o"]) * _exp_upper(obs.n_x[("o", "o")], eps)
    )

    h_coef = c_om
    h_pos = (
        math.exp(nu_b) / (pa["o"] * pb["nu"]),
        math.exp(nu_a) / (pa["nu"] * pb["o"]),
    )
    h_lo = h_coef * max(
        h_pos[0] * _exp_lower(obs.n_x[("o", "nu")], eps)
        + h_pos[1] * _exp_lower(obs.n_x[("nu", "o")], eps)
        - _exp_upper(obs.n_x[("o", "o")], eps) / (pa["o"] * pb["o"]),
        0.0,
    )
    h_hi = max(
        h_coef
        * (
            h_pos[0] * _exp_upper(obs.n_x[("o", "nu")], eps)
            + h_pos[1] * _exp_upper(obs.n_x[("nu", "o")], eps)
            - _exp_lower(obs.n_x[("o", "o")], eps) / (pa["o"] * pb["o"])
        ),
        h_lo,
    )
    m_coef = c_om * math.exp(nu_a + nu_b) / (pa["nu"] * pb["nu"])
    m_lo = m_coef * _exp_lower(obs.m_x[("nu", "nu")], eps)
    m_hi = m_coef * _exp_upper(obs.m_x[("nu", "nu")], eps)

    pref_11 = mu_a * mu_b * math.exp(-mu_a - mu_b) * pa["mu"] * pb["mu"] / (
        nu_a * nu_b * om_a * om_b * (om_p - nu_p)
    )
    ratio_zx = (mu_a * mu_b * math.exp(-mu_a - mu_b) * pa["mu"] * pb["mu"]) / (
        nu_a * nu_b * math.exp(-nu_a - nu_b) * pa["nu"] * pb["nu"]
    )

    n_z_signal = obs.n_z[("mu", "mu")]
    qber = obs.m_z[("mu", "mu")] / n_z_signal if n_z_signal > 0.0 else 0.5
    leakage = n_z_signal * error_correction_f * binary_entropy(min(qber, 0.5))
    eps_terms = (
        math.log2(2.0 / eps) + 2.0 * math.log2(2.0 / (eps * eps)) + 2.0 * math.log2(1.0 / (2.0 * eps))
    )

    def key_at(h: float, m: float) -> float:
        n11_star = pref_11 * (plus - minus + m - h)
        n11 = _obs_lower(n11_star, eps)
        if n11 <= 0.0:
            return 0.0
        # back to a raw count: the aggregates carry 1/(p_nu_a p_nu_b)
        t11x_star = (
            pa["nu"] * pb["nu"] * (m - h / 2.0)
            / (om_a * om_b * om_p * math.exp(nu_a + nu_b))
        )
        t11z = _obs_upper(ratio_zx * max(t11x_star, 0.0), eps)
        phi = min(max(t11z / n11, 0.0), 0.5)
        ell = n0_obs + n11 * (1.0 - binary_entropy(phi)) - leakage - eps_terms
        return max(ell, 0.0)

    if scan_grid:
        points = [
            (h_lo + (h_hi - h_lo) * i / (scan_grid - 1), m_lo + (m_hi - m_lo) * j / (scan_grid - 1))
            for i in range(scan_grid)
            for j in range(scan_grid)
        ]
    else:
        points = [(h_lo, m_lo), (h_lo, m_hi), (h_hi, m_lo), (h_hi, m_hi)]
    ell = min(key_at(h, m) for h, m in points)
    return {
        "ell": ell,
        "rate_per_pulse": ell / n_pulses,
        "leakage": leakage,
        "n0": n0_obs,
        "qber_z": qber,
    }


# ---------------------------------------------------------------------------
# decoy-state BB84
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bb84Params:
    """Four-intensity decoy-state BB84 with a lossy receiver."""

    intensities: Mapping[str, float]
    probs: Mapping[str, float]
    length_km: float
    attenuation_db_per_km: float
    eta_det: float
    dark_prob: float
    insert_loss_db: float = 2.0
    misalignment: float = 0.02
    q_z: float = 0.5

    def __post_init__(self) -> None:
        _check_levels(self.intensities, self.probs)
        if not 0.0 < self.q_z < 1.0:
            raise ValueError("q_z must be in (0, 1)")

    @property
    def eta(self) -> float:
        loss_db = self.attenuation_db_per_km * self.length_km + self.insert_loss_db
        return self.eta_det * 10.0 ** (-loss_db / 10.0)


@dataclass
class Bb84Observables:
    n_z: dict
    m_z: dict
    n_x: dict
    m_x: dict
    q_z: float
    q_x: float


def bb84_observables(params: Bb84Params, n_pulses: float) -> Bb84Observables:
    """Closed-form counts per intensity for both measurement bases."""
    p_d = params.dark_prob
    e_m = params.misalignment
    e_0 = 0.5
    q_z, q_x = params.q_z, 1.0 - params.q_z
    eta = params.eta
    n_z, m_z, n_x, m_x = {}, {}, {}, {}
    for lab in LEVELS:
        k = params.intensities[lab]
        weight = n_pulses * params.probs[lab] / 2.0
        miss_z = (1.0 - p_d) ** 2 * math.exp(-k * q_z * eta)
        miss_x = (1.0 - p_d) ** 2 * math.exp(-k * q_x * eta)
        n_z[lab] = weight * (1.0 - miss_z) * (1.0 + miss_x)
        m_z[lab] = weight * (1.0 + miss_x) * (
            (e_0 - e_m) * (1.0 - (1.0 - p_d) ** 2) * math.exp(-k * q_z * eta)
            + e_m * (1.0 - miss_z)
        )
        n_x[lab] = weight * (1.0 - miss_x) * (1.0 + miss_z)
        m_x[lab] = weight * (1.0 + miss_z) * (
            (e_0 - e_m) * (1.0 - (1.0 - p_d) ** 2) * math.exp(-k * q_x * eta)
            + e_m * (1.0 - miss_x)
        )
    return Bb84Observables(n_z=n_z, m_z=m_z, n_x=n_x, m_x=m_x, q_z=q_z, q_x=q_x)


def bb84_oracle(params: Bb84Params, n_pulses: int, seed: int) -> dict:
    """Photon-number-resolved Monte Carlo of the BB84 receiver.

    Passive basis choice: each emitted photon independently enters the Z
    apparatus with probability q_z and is detected there with the channel
    efficiency; an apparatus click is photons-or-darks, and double-apparatus
    clicks are assigned to a basis by coin flip.  Dark-only clicks carry a
    random bit; photon clicks flip with the misalignment probability.
    Returns observed counts plus ground-truth single-photon tallies.
    """
    rng = np.random.default_rng(seed)
    labels = list(LEVELS)
    probs = np.array([params.probs[l] for l in labels])
    intensities = np.array([params.intensities[l] for l in labels])
    eta = params.eta
    p_d = params.dark_prob
    q_z = params.q_z

    which = rng.choice(len(labels), size=n_pulses, p=probs)
    photons = rng.poisson(intensities[which])
    detected_z = rng.binomial(photons, q_z * eta)
    detected_x = rng.binomial(photons - detected_z, (1.0 - q_z) * eta / (1.0 - q_z * eta))
    dark_z = rng.random(n_pulses) < 1.0 - (1.0 - p_d) ** 2
    dark_x = rng.random(n_pulses) < 1.0 - (1.0 - p_d) ** 2
    click_z = (detected_z > 0) | dark_z
    click_x = (detected_x > 0) | dark_x
    coin = rng.random(n_pulses) < 0.5
    counted_z = click_z & (~click_x | coin)
    counted_x = click_x & (~click_z | ~coin)
    err_draw = rng.random(n_pulses)
    error_z = np.where(detected_z > 0, err_draw < params.misalignment, err_draw < 0.5)
    error_x = np.where(detected_x > 0, err_draw < params.misalignment, err_draw < 0.5)

    out = {"n_z": {}, "m_z": {}, "n_x": {}, "m_x": {},
           "single_z": 0, "single_z_err": 0, "single_x": 0, "single_x_err": 0,
           "vacuum_z": 0}
    single = photons == 1
    for idx, lab in enumerate(labels):
        sel = which == idx
        out["n_z"][lab] = int(np.count_nonzero(sel & counted_z))
        out["m_z"][lab] = int(np.count_nonzero(sel & counted_z & error_z))
        out["n_x"][lab] = int(np.count_nonzero(sel & counted_x))
        out["m_x"][lab] = int(np.count_nonzero(sel & counted_x & error_x))
    signal = (which == 0) | (which == 2)  # mu and nu feed the Z-basis estimate
    out["single_z"] = int(np.count_nonzero(signal & single & counted_z))
    out["single_z_err"] = int(np.count_nonzero(signal & single & counted_z & error_z))
    omega_sel = which == 1
    out["single_x"] = int(np.count_nonzero(omega_sel & single & counted_x))
    out["single_x_err"] = int(np.count_nonzero(omega_sel & single & counted_x & error_x))
    out["vacuum_z"] = int(np.count_nonzero(signal & (photons == 0) & counted_z))
    return out


def bb84_key_rate(params: Bb84Params, n_pulses: float, eps: float,
                  error_correction_f: float = 1.1) -> dict:
    """Finite-size decoy-state BB84 key, vacuum+single-photon estimator chain."""
    obs = bb84_observables(params, n_pulses)
    ints, probs = params.intensities, params.probs
    mu, nu, om = ints["mu"], ints["nu"], ints["omega"]
    p = probs

    n0_star = (p["mu"] * math.exp(-mu) + p["nu"] * math.exp(-nu)) / p["o"] * _exp_lower(
        obs.n_z["o"], eps
    )
    n0_obs = _obs_lower(n0_star, eps)

    def single_star(counts: Mapping[str, float], front: float) -> float:
        core = (
            math.exp(nu) * _exp_lower(counts["nu"], eps) / p["nu"]
            - (nu * nu) / (mu * mu) * math.exp(mu) * _exp_upper(counts["mu"], eps) / p["mu"]
            - (mu * mu - nu * nu) / (mu * mu) * _exp_upper(counts["o"], eps) / p["o"]
        )
        return max(front * mu / (mu * nu - nu * nu) * core, 0.0)

    n1z_star = single_star(obs.n_z, p["mu"] * mu * math.exp(-mu) + p["nu"] * nu * math.exp(-nu))
    n1x_star = single_star(obs.n_x, p["omega"] * om * math.exp(-om))
    n1z = _obs_lower(n1z_star, eps)
    n1x = _obs_lower(n1x_star, eps)

    m0x_star = p["omega"] * math.exp(-om) / p["o"] * _exp_lower(obs.m_x["o"], eps)
    t1x = max(obs.m_x["omega"] - _obs_lower(m0x_star, eps), 0.0)

    if n1z <= 0.0 or n1x <= 0.0:
        return {"ell": 0.0, "rate_per_pulse": 0.0, "phi_z": 0.5, "leakage": 0.0}
    e1x = min(t1x / n1x, 1.0)
    phi = min(e1x + sampling_correction(n1z, n1x, min(e1x, 1.0), eps), 0.5)

    n_ec = obs.n_z["mu"] + obs.n_z["nu"]
    qber = (obs.m_z["mu"] + obs.m_z["nu"]) / n_ec if n_ec > 0.0 else 0.5
    leakage = n_ec * error_correction_f * binary_entropy(min(qber, 0.5))
    ell = (
        n0_obs
        + n1z * (1.0 - binary_entropy(phi))
        - leakage
        - 6.0 * math.log2(23.0 / eps)
        - 2.0 * math.log2(2.0 / eps)
    )
    ell = max(ell, 0.0)
    return {
        "ell": ell,
        "rate_per_pulse": ell / n_pulses,
        "phi_z": phi,
        "leakage": leakage,
        "qber_z": qber,
    }
