"""Event-level Monte Carlo oracle for the asynchronous link.

Simulates every time bin: intensity and phase-slice draws, Poisson photon
emission, binomial fibre loss, first-order interference at the relay's
beam splitter, detector inefficiency and dark counts, click filtering,
nearest-neighbour pairing inside the window, sifting and classification.
Used exclusively to validate the closed forms in :mod:`amdiqkd.channel` and
the soundness of the decoy bounds; never part of the key-rate pipeline.

Clicks are sampled in the classical-field picture, which reproduces the
coherent-state statistics of the closed forms exactly: photons arriving in a
bin are routed to the left port independently with weight
``1/2 + sqrt(AB) cos(phase) / (A + B)`` set by the arriving intensities.

Ground-truth tallies:

* Z-basis groups are bin-localised, so the per-event source photon numbers
  are the physical truth and are tallied directly.
* In the matched-phase X-basis group the photon-number layers interfere
  across the two bins, so source attribution is resampled from the quantum
  posterior given the announced phases and the observed click pattern.  The
  posterior uses an exact small-photon-number model of the two-bin
  interferometer (``pattern_given_arrived``); the slow phase drift is
  neglected inside the posterior only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .channel import ChannelLink, DetectorPair, SourceConfig, party_totals

__all__ = ["OracleResult", "simulate", "pattern_given_arrived", "LayerPosterior"]


# ---------------------------------------------------------------------------
# exact two-bin interference model for small photon numbers
# ---------------------------------------------------------------------------

def _multinomial_expansion(n: int, coefs: tuple[complex, ...]) -> dict[tuple[int, ...], complex]:
    """Coefficients of (sum_m coefs[m] x_m)^n as a dict occupancy -> coefficient."""
    terms: dict[tuple[int, ...], complex] = {(0, 0, 0, 0): 1.0 + 0.0j}
    for _ in range(n):
        new: dict[tuple[int, ...], complex] = {}
        for occ, amp in terms.items():
            for m, c in enumerate(coefs):
                if c == 0.0:
                    continue
                nxt = list(occ)
                nxt[m] += 1
                key = tuple(nxt)
                new[key] = new.get(key, 0.0 + 0.0j) + amp * c
        terms = new
    return terms


@lru_cache(maxsize=None)
def _occupancy_table(n_a: int, n_b: int, matched_pi: bool) -> tuple[tuple[tuple[int, int, int, int], float], ...]:
    """Output-mode occupancy distribution for two interfering wavepackets.

    ``n_a`` photons sit in an equal-amplitude superposition of Alice's early
    and late bins (internal phase ``0`` or ``pi`` relative to Bob's), ``n_b``
    in Bob's; each bin is mixed on a balanced beam splitter.  Mode order is
    (L_early, R_early, L_late, R_late).
    """
    phase = -1.0 if matched_pi else 1.0
    c_a = (0.5, 0.5, 0.5 * phase, 0.5 * phase)
    c_b = (0.5, -0.5, 0.5, -0.5)
    poly_a = _multinomial_expansion(n_a, c_a)
    poly_b = _multinomial_expansion(n_b, c_b)
    combined: dict[tuple[int, int, int, int], complex] = {}
    for occ_a, amp_a in poly_a.items():
        for occ_b, amp_b in poly_b.items():
            key = tuple(x + y for x, y in zip(occ_a, occ_b))
            combined[key] = combined.get(key, 0.0 + 0.0j) + amp_a * amp_b
    norm = math.factorial(n_a) * math.factorial(n_b)
    out = []
    for occ, amp in combined.items():
        weight = abs(amp) ** 2
        if weight == 0.0:
            continue
        fact = 1.0
        for m in occ:
            fact *= math.factorial(m)
        out.append((occ, weight * fact / norm))
    return tuple(out)


def _bin_click_prob(n_fire: int, n_quiet: int, eta_d: float, p_d: float) -> float:
    """P(exactly the detector holding n_fire photons clicks in a bin)."""
    quiet = (1.0 - p_d) * (1.0 - eta_d) ** n_quiet
    fire = 1.0 - (1.0 - p_d) * (1.0 - eta_d) ** n_fire
    return fire * quiet


@lru_cache(maxsize=None)
def pattern_given_arrived(
    n_a: int,
    n_b: int,
    matched_pi: bool,
    det_early: int,
    det_late: int,
    eta_d: float,
    p_d: float,
) -> float:
    """P(single-click pattern | photons arrived at the beam splitter).

    ``det_early``/``det_late`` select which detector clicked in each bin
    (0 = left, 1 = right).
    """
    total = 0.0
    for (le, re, ll, rl), prob in _occupancy_table(n_a, n_b, matched_pi):
        early = _bin_click_prob(re, le, eta_d, p_d) if det_early else _bin_click_prob(le, re, eta_d, p_d)
        late = _bin_click_prob(rl, ll, eta_d, p_d) if det_late else _bin_click_prob(ll, rl, eta_d, p_d)
        total += prob * early * late
    return total


def _poisson_cap(mean: float, tail: float = 1e-9) -> int:
    n, cum, term = 0, math.exp(-mean), math.exp(-mean)
    while 1.0 - cum > tail and n < 40:
        n += 1
        term *= mean / n
        cum += term
    return max(n, 2)


class LayerPosterior:
    """Posterior over emitted photon-number layers for matched X-basis pairs."""

    def __init__(
        self,
        emitted_a: float,
        emitted_b: float,
        eta_a: float,
        eta_b: float,
        eta_d: float,
        p_d: float,
    ) -> None:
        self.cap_a = _poisson_cap(emitted_a)
        self.cap_b = _poisson_cap(emitted_b)
        self.prior_a = np.array(
            [math.exp(-emitted_a) * emitted_a**n / math.factorial(n) for n in range(self.cap_a + 1)]
        )
        self.prior_b = np.array(
            [math.exp(-emitted_b) * emitted_b**n / math.factorial(n) for n in range(self.cap_b + 1)]
        )
        self.thin_a = self._thinning(self.cap_a, eta_a)
        self.thin_b = self._thinning(self.cap_b, eta_b)
        self.eta_d = eta_d
        self.p_d = p_d
        self._cache: dict[tuple[bool, int, int], np.ndarray] = {}

    @staticmethod
    def _thinning(cap: int, eta: float) -> np.ndarray:
        t = np.zeros((cap + 1, cap + 1))
        for n in range(cap + 1):
            for k in range(n + 1):
                t[n, k] = math.comb(n, k) * eta**k * (1.0 - eta) ** (n - k)
        return t

    def probs(self, matched_pi: bool, det_early: int, det_late: int) -> np.ndarray:
        """Posterior matrix over (emitted_a, emitted_b), normalized."""
        key = (matched_pi, det_early, det_late)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        arrived = np.empty((self.cap_a + 1, self.cap_b + 1))
        for na in range(self.cap_a + 1):
            for nb in range(self.cap_b + 1):
                arrived[na, nb] = pattern_given_arrived(
                    na, nb, matched_pi, det_early, det_late, self.eta_d, self.p_d
                )
        emitted = self.thin_a @ arrived @ self.thin_b.T
        joint = self.prior_a[:, None] * emitted * self.prior_b[None, :]
        total = joint.sum()
        post = joint / total if total > 0.0 else joint
        self._cache[key] = post
        return post

    def sample(self, matched_pi: bool, det_early: int, det_late: int, rng) -> tuple[int, int]:
        post = self.probs(matched_pi, det_early, det_late)
        flat = post.reshape(-1)
        total = flat.sum()
        if total <= 0.0:
            return (-1, -1)
        idx = rng.choice(flat.size, p=flat / total)
        return int(idx // post.shape[1]), int(idx % post.shape[1])


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass
class GroupTruth:
    count: int = 0
    errors: int = 0
    a_vacuum: int = 0
    b_vacuum: int = 0
    single_photon_pairs: int = 0
    single_photon_errors: int = 0


@dataclass
class OracleResult:
    n_bins: int
    n_clicks: int
    n_pairs: int
    t_mean_s: float
    counts: dict
    m_x: int
    x_matched: int
    z_truth: dict
    x_truth: GroupTruth = field(default_factory=GroupTruth)
    x_vacuum: int = 0
    x_vacuum_errors: int = 0

    @property
    def q_tot_hat(self) -> float:
        return self.n_clicks / self.n_bins


def _click_chunk(rng, size, start_idx, src_arrays, link, det, drift_per_bin):
    """Simulate one chunk of time bins; return compact arrays of kept clicks."""
    (ints_a, probs_a, ints_b, probs_b, kept_matrix) = src_arrays
    m_slices = link.phase_slices
    eta_a, eta_b, eta_d = link.eta_a, link.eta_b, det.eta_d
    p_d = det.dark_prob(link.clock_hz)

    la = rng.choice(len(probs_a), size=size, p=probs_a).astype(np.int8)
    lb = rng.choice(len(probs_b), size=size, p=probs_b).astype(np.int8)
    sa = rng.integers(0, m_slices, size=size, dtype=np.int16)
    sb = rng.integers(0, m_slices, size=size, dtype=np.int16)
    k_a = ints_a[la]
    k_b = ints_b[lb]
    n_src_a = rng.poisson(k_a).astype(np.int16)
    n_src_b = rng.poisson(k_b).astype(np.int16)
    arr_a = rng.binomial(n_src_a, eta_a).astype(np.int16)
    arr_b = rng.binomial(n_src_b, eta_b).astype(np.int16)

    idx = start_idx + np.arange(size, dtype=np.int64)
    phase = 2.0 * math.pi * (sa.astype(np.float64) - sb) / m_slices + drift_per_bin * idx
    a_mean = eta_a * k_a
    b_mean = eta_b * k_b
    denom = a_mean + b_mean
    with np.errstate(invalid="ignore", divide="ignore"):
        weight = np.where(denom > 0.0, 0.5 + np.sqrt(a_mean * b_mean) * np.cos(phase) / denom, 0.5)
    weight = np.clip(weight, 0.0, 1.0)

    total_arrived = (arr_a + arr_b).astype(np.int64)
    n_left = rng.binomial(total_arrived, weight)
    n_right = total_arrived - n_left

    click_l = (rng.random(size) < 1.0 - (1.0 - p_d) * (1.0 - eta_d) ** n_left)
    click_r = (rng.random(size) < 1.0 - (1.0 - p_d) * (1.0 - eta_d) ** n_right)
    kept = np.logical_xor(click_l, click_r) & kept_matrix[la, lb]

    sel = np.nonzero(kept)[0]
    return (
        idx[sel],
        la[sel],
        lb[sel],
        sa[sel],
        sb[sel],
        n_src_a[sel],
        n_src_b[sel],
        click_r[sel].astype(np.int8),  # 0 = left detector, 1 = right
    )


def _pair_scan(indices: np.ndarray, window: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy nearest-successor pairing; returns positions of early/late clicks."""
    early, late = [], []
    pending = -1
    pending_idx = 0
    for pos in range(indices.size):
        if pending >= 0 and indices[pos] - pending_idx <= window:
            early.append(pending)
            late.append(pos)
            pending = -1
        else:
            pending = pos
            pending_idx = indices[pos]
    return np.asarray(early, dtype=np.int64), np.asarray(late, dtype=np.int64)


def simulate(
    source: SourceConfig,
    link: ChannelLink,
    det: DetectorPair,
    n_bins: int,
    seed: int,
    chunk_bins: int = 1_000_000,
) -> OracleResult:
    """Run the event-level simulation and tally everything.

    Deterministic for fixed (seed, n_bins, chunk_bins); the random stream is
    partitioned per chunk of bins, so a parallel implementation sharding by
    chunk would reproduce these results exactly.
    """
    labels = source.labels
    n_labels = len(labels)
    ints_a = np.array([source.intensities_a[l] for l in labels])
    ints_b = np.array([source.intensities_b[l] for l in labels])
    probs_a = np.array([source.probabilities_a[l] for l in labels])
    probs_b = np.array([source.probabilities_b[l] for l in labels])
    kept_matrix = np.ones((n_labels, n_labels), dtype=bool)
    for (la, lb) in source.filtered_pairs:
        kept_matrix[labels.index(la), labels.index(lb)] = False

    drift_per_bin = (2.0 * math.pi * link.laser_offset_hz + link.phase_drift_rad_per_s) / link.clock_hz
    n_chunks = (n_bins + chunk_bins - 1) // chunk_bins
    streams = np.random.SeedSequence(seed).spawn(n_chunks + 2)
    class_rng = np.random.default_rng(streams[-2])
    posterior_rng = np.random.default_rng(streams[-1])

    fields = [[] for _ in range(8)]
    src_arrays = (ints_a, probs_a, ints_b, probs_b, kept_matrix)
    for chunk in range(n_chunks):
        size = min(chunk_bins, n_bins - chunk * chunk_bins)
        rng = np.random.default_rng(streams[chunk])
        parts = _click_chunk(rng, size, chunk * chunk_bins, src_arrays, link, det, drift_per_bin)
        for store, arr in zip(fields, parts):
            store.append(arr)
    idx, la, lb, sa, sb, na, nb, det_click = (np.concatenate(f) for f in fields)

    early, late = _pair_scan(idx, link.pairing_window_bins)
    n_pairs = early.size
    gaps = idx[late] - idx[early] if n_pairs else np.array([], dtype=np.int64)

    # party totals: canonical unordered label pair per party
    tot_code = np.empty((n_labels, n_labels), dtype=np.int16)
    totals = party_totals(labels)
    code_of = {t: i for i, t in enumerate(totals)}
    for i, l1 in enumerate(labels):
        for j, l2 in enumerate(labels):
            key = (l1, l2) if labels.index(l1) <= labels.index(l2) else (l2, l1)
            tot_code[i, j] = code_of[key]
    t_a = tot_code[la[early], la[late]]
    t_b = tot_code[lb[early], lb[late]]

    m_slices = link.phase_slices
    phi_a = np.mod(sa[late].astype(np.int32) - sa[early], m_slices)
    phi_b = np.mod(sb[late].astype(np.int32) - sb[early], m_slices)
    phi_ab = np.mod(phi_a - phi_b, m_slices)
    matched0 = phi_ab == 0
    matched_pi = phi_ab == m_slices // 2
    matched = matched0 | matched_pi

    bright = [l for l in labels if l != "o"]
    sifted_codes = {code_of[(l, l)] for l in bright}

    counts: dict = {}
    group_code = t_a.astype(np.int32) * len(totals) + t_b
    flat = np.bincount(group_code, minlength=len(totals) ** 2)
    for ia, ta in enumerate(totals):
        for ib, tb in enumerate(totals):
            counts[(ta, tb)] = int(flat[ia * len(totals) + ib])
    for code in sifted_codes:
        mask = (t_a == code) & (t_b == code)
        counts[(totals[code], totals[code])] = int(np.count_nonzero(mask & matched))

    # Z-basis truth, tallied from the physical emission record
    o_code = labels.index("o")
    z_truth: dict = {}
    a_vac_pair = (na[early] + na[late]) == 0
    b_vac_pair = (nb[early] + nb[late]) == 0
    a_single = (na[early].astype(np.int32) + na[late]) == 1
    b_single = (nb[early].astype(np.int32) + nb[late]) == 1
    bright_a_early = la[early] != o_code
    bright_b_early = lb[early] != o_code
    z_error = bright_a_early == bright_b_early
    for ka in bright:
        for kb in bright:
            key = ((ka, "o"), (kb, "o"))
            mask = (t_a == code_of[(ka, "o")]) & (t_b == code_of[(kb, "o")])
            singles = mask & a_single & b_single
            z_truth[key] = GroupTruth(
                count=int(np.count_nonzero(mask)),
                errors=int(np.count_nonzero(mask & z_error)),
                a_vacuum=int(np.count_nonzero(mask & a_vac_pair)),
                b_vacuum=int(np.count_nonzero(mask & b_vac_pair)),
                single_photon_pairs=int(np.count_nonzero(singles)),
                single_photon_errors=int(np.count_nonzero(singles & z_error)),
            )

    # X-basis classification on the matched decoy-decoy group
    nu_code = code_of[("nu", "nu")]
    x_mask = (t_a == nu_code) & (t_b == nu_code) & matched
    x_pos = np.nonzero(x_mask)[0]
    same_det = det_click[early[x_pos]] == det_click[late[x_pos]]
    raw_error = np.where(matched0[x_pos], ~same_det, same_det)
    flips = class_rng.random(x_pos.size) < link.interference_error
    x_error = np.logical_xor(raw_error, flips)

    posterior = LayerPosterior(
        emitted_a=2.0 * source.intensities_a["nu"],
        emitted_b=2.0 * source.intensities_b["nu"],
        eta_a=link.eta_a,
        eta_b=link.eta_b,
        eta_d=det.eta_d,
        p_d=det.dark_prob(link.clock_hz),
    )
    x_truth = GroupTruth(count=int(x_pos.size), errors=int(np.count_nonzero(x_error)))
    x_vac = 0
    x_vac_err = 0
    for row, pos in enumerate(x_pos):
        lay_a, lay_b = posterior.sample(
            bool(matched_pi[pos]),
            int(det_click[early[pos]]),
            int(det_click[late[pos]]),
            posterior_rng,
        )
        err = bool(x_error[row])
        if lay_a == 1 and lay_b == 1:
            x_truth.single_photon_pairs += 1
            x_truth.single_photon_errors += err
        if lay_a == 0 or lay_b == 0:
            x_vac += 1
            x_vac_err += err

    return OracleResult(
        n_bins=n_bins,
        n_clicks=int(idx.size),
        n_pairs=int(n_pairs),
        t_mean_s=float(gaps.mean() / link.clock_hz) if n_pairs else math.inf,
        counts=counts,
        m_x=int(np.count_nonzero(x_error)),
        x_matched=int(x_pos.size),
        z_truth=z_truth,
        x_truth=x_truth,
        x_vacuum=x_vac,
        x_vacuum_errors=x_vac_err,
    )
