"""Configuration-driven command line interface.

Scenario files are YAML with strictly validated keys; every run writes
``results.csv`` (fixed column order, documented in the README) and a
``summary.txt`` next to it.  Outputs carry no timestamps, so identical
configurations and seeds produce byte-identical files.

Exit codes: 0 success, 1 configuration error, 2 infeasible scenario or
failed validation.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from importlib import resources
from pathlib import Path

import yaml

from . import scenario as sc
from .channel import SourceConfig
from .keyrate import ProtocolVariant, evaluate
from .oracle import simulate

__all__ = ["main"]


class ConfigError(Exception):
    pass


_SWEEP_KEYS = {
    "command", "preset", "distances_km", "variants", "n_pulses", "delta_km",
    "budget", "seed", "optimize_pairing_window", "duty_cycle", "external_rates",
}
_NETWORK_KEYS = {
    "command", "preset", "users", "duration_s", "duty_cycle", "variants",
    "budget", "seed", "optimize_pairing_window",
}
_EVALUATE_KEYS = {
    "command", "preset", "l_a_km", "l_b_km", "n_pulses", "variant", "params",
    "duty_cycle", "seed",
}
_OPTIMIZE_KEYS = {
    "command", "preset", "l_a_km", "l_b_km", "n_pulses", "variant", "budget",
    "seed", "optimize_pairing_window", "duty_cycle",
}
_PARAM_KEYS = {
    "mu_a", "nu_a", "omega_a", "p_mu_a", "p_nu_a", "p_omega_a",
    "mu_b", "nu_b", "omega_b", "p_mu_b", "p_nu_b", "p_omega_b", "tc_bins",
}


def _load_scenario(args) -> dict:
    if args.scenario and args.preset:
        raise ConfigError("give either --scenario or --preset, not both")
    if args.scenario:
        path = Path(args.scenario)
        if not path.exists():
            raise ConfigError(f"scenario file not found: {path}")
        text = path.read_text(encoding="utf-8")
    elif args.preset:
        ref = resources.files("amdiqkd").joinpath("presets", f"{args.preset}.yaml")
        try:
            text = ref.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"unknown preset scenario {args.preset!r}") from None
    else:
        raise ConfigError("a scenario is required: use --scenario FILE or --preset NAME")
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a mapping")
    return data


def _apply_overrides(data: dict, overrides: list[str]) -> dict:
    out = dict(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw)
    return out


def _check_keys(data: dict, allowed: set[str], context: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} fields: {sorted(unknown)}")


def _fmt(value) -> str:
    if value == "":
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return f"{value:.12g}"
    return str(value)


def _write_outputs(rows: list[dict], out_dir: Path, header_lines: list[str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(sc.CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in sc.CSV_COLUMNS])
    summary = out_dir / "summary.txt"
    lines = list(header_lines)
    lines.append(f"points: {len(rows)}")
    for row in rows:
        label = row.get("link") or f"{row.get('distance_km', '')} km"
        lines.append(
            f"  {label:>14}  {str(row.get('variant', '')):<24}"
            f" rate={_fmt(row.get('rate_bps', ''))} bps"
            f"  skc0={_fmt(row.get('skc0_bps', ''))} bps"
        )
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _variant_from_name(name: str) -> ProtocolVariant:
    if name not in sc.VARIANTS:
        raise ConfigError(f"unknown variant {name!r}")
    return sc.VARIANTS[name]


def _cmd_sweep(data: dict, out_dir: Path) -> int:
    _check_keys(data, _SWEEP_KEYS, "sweep")
    data = {k: v for k, v in data.items() if k != "command"}
    try:
        spec = sc.SweepSpec(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    rows = sc.run_sweep(spec)
    _write_outputs(rows, out_dir, [f"sweep preset={spec.preset} seed={spec.seed}"])
    if all(r.get("rate_bps") in ("", 0.0) for r in rows):
        return 2
    return 0


def _cmd_network(data: dict, out_dir: Path) -> int:
    _check_keys(data, _NETWORK_KEYS, "network")
    data = {k: v for k, v in data.items() if k != "command"}
    users = data.pop("users", None)
    if not isinstance(users, (list, tuple)) or any(len(u) != 2 for u in users):
        raise ConfigError("users must be a list of [name, arm_km] pairs")
    try:
        spec = sc.NetworkSpec(users=[(str(n), float(a)) for n, a in users], **data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    rows = sc.run_network(spec)
    _write_outputs(rows, out_dir, [f"network preset={spec.preset} seed={spec.seed}"])
    if rows and all(r.get("rate_bps") in ("", 0.0) for r in rows):
        return 2
    return 0


def _cmd_evaluate(data: dict, out_dir: Path) -> int:
    _check_keys(data, _EVALUATE_KEYS, "evaluate")
    preset_name = data.get("preset", "fig4")
    if preset_name not in sc.DEVICE_PRESETS:
        raise ConfigError(f"unknown device preset {preset_name!r}")
    preset = sc.DEVICE_PRESETS[preset_name]
    params = data.get("params")
    if not isinstance(params, dict):
        raise ConfigError("evaluate needs a 'params' mapping with pinned source settings")
    _check_keys(params, _PARAM_KEYS, "params")
    variant = _variant_from_name(data.get("variant", "filtering"))
    l_a = float(data.get("l_a_km", 0.0))
    l_b = float(data.get("l_b_km", 0.0))
    n_pulses = float(data.get("n_pulses", 1e12))
    seed = int(data.get("seed", 0))
    try:
        report = evaluate(
            dict(params), preset.link(l_a, l_b), preset.detector(), n_pulses,
            preset.eps, preset.error_correction_f, variant,
            duty_cycle=float(data.get("duty_cycle", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    name = data.get("variant", "filtering")
    row = sc._report_row(l_a + l_b, l_a, l_b, name, n_pulses, preset, report, 0, seed)
    _write_outputs([row], out_dir, [f"evaluate preset={preset_name}"])
    return 0 if report.rate_per_pulse > 0.0 else 2


def _cmd_optimize(data: dict, out_dir: Path) -> int:
    _check_keys(data, _OPTIMIZE_KEYS, "optimize")
    spec = sc.SweepSpec(
        preset=data.get("preset", "fig4"),
        distances_km=[float(data.get("l_a_km", 0.0)) + float(data.get("l_b_km", 0.0))],
        variants=[data.get("variant", "filtering")],
        n_pulses=float(data.get("n_pulses", 1e12)),
        delta_km=float(data.get("l_a_km", 0.0)) - float(data.get("l_b_km", 0.0)),
        budget=int(data.get("budget", 3000)),
        seed=int(data.get("seed", 1)),
        optimize_pairing_window=bool(data.get("optimize_pairing_window", True)),
        duty_cycle=float(data.get("duty_cycle", 1.0)),
    )
    rows = sc.run_sweep(spec)
    _write_outputs(rows, out_dir, [f"optimize preset={spec.preset} seed={spec.seed}"])
    return 0 if any(r.get("rate_bps") not in ("", 0.0) for r in rows) else 2


_ORACLE_CONFIGS: list[dict] = [
    # short, bright, filtering on, elevated darks
    dict(l_a=10.0, l_b=15.0, dark_rate_hz=1e5, phase_slices=8, click_filtering=True,
         mu=0.5, nu=0.15, p_mu=0.35, p_nu=0.35),
    # asymmetric, no filtering
    dict(l_a=30.0, l_b=10.0, dark_rate_hz=0.1, phase_slices=8, click_filtering=False,
         mu=0.6, nu=0.2, p_mu=0.3, p_nu=0.4),
    # four-intensity, filtering on
    dict(l_a=15.0, l_b=15.0, dark_rate_hz=10.0, phase_slices=8, click_filtering=True,
         mu=0.6, nu=0.12, p_mu=0.3, p_nu=0.3, omega=0.3, p_omega=0.15),
]


def _cmd_validate_oracle(bins: float, seed: int, out_dir: Path) -> int:
    from .channel import ChannelLink, DetectorPair, expected_observables
    from .decoy import estimate, pairing_probs, xbasis_vacuum_errors_lower, z_key_groups

    n_bins = int(bins)
    lines = []
    all_ok = True
    for idx, cfg in enumerate(_ORACLE_CONFIGS):
        det = DetectorPair(0.8, cfg["dark_rate_hz"])
        link = ChannelLink(cfg["l_a"], cfg["l_b"], 0.16, clock_hz=1e9,
                           phase_drift_rad_per_s=5.9e3, laser_offset_hz=10.0,
                           interference_error=0.04, pairing_window_bins=2000.0,
                           phase_slices=cfg["phase_slices"])
        kwargs = dict(
            mu_a=cfg["mu"], nu_a=cfg["nu"], p_mu_a=cfg["p_mu"], p_nu_a=cfg["p_nu"],
            mu_b=cfg["mu"], nu_b=cfg["nu"], p_mu_b=cfg["p_mu"], p_nu_b=cfg["p_nu"],
            click_filtering=cfg["click_filtering"],
        )
        if "omega" in cfg:
            kwargs.update(omega_a=cfg["omega"], p_omega_a=cfg["p_omega"],
                          omega_b=cfg["omega"], p_omega_b=cfg["p_omega"])
        src = SourceConfig.from_params(**kwargs)
        run = simulate(src, link, det, n_bins, seed=seed + idx)
        obs = expected_observables(src, link, det, float(n_bins))
        checks = []

        def check(name, ok):
            checks.append((name, ok))

        check("pairs", abs(run.n_pairs - obs.n_pairs) <= 5.0 * math.sqrt(max(obs.n_pairs, 1.0)))
        for key, expected in obs.counts.items():
            if expected >= 25.0:
                check(f"count{key}", abs(run.counts[key] - expected) <= 5.0 * math.sqrt(expected))
        if obs.m_x >= 25.0:
            check("m_x", abs(run.m_x - obs.m_x) <= 5.0 * math.sqrt(obs.m_x))

        counts = {k: float(v) for k, v in run.counts.items()}
        est = estimate(counts, float(run.m_x), src, link.phase_slices, eps=None)
        groups = z_key_groups(src)
        s0_truth = sum(max(run.z_truth[g].a_vacuum, run.z_truth[g].b_vacuum) for g in groups)
        s11_truth = sum(run.z_truth[g].single_photon_pairs for g in groups)
        check("s0_sound", est.s0_z_star <= s0_truth + 5.0 * math.sqrt(max(s0_truth, 1)))
        check("s11_sound", est.s11_z_star <= s11_truth + 5.0 * math.sqrt(max(s11_truth, 1)))
        check("t11x_sound", est.t11_x >= run.x_truth.single_photon_errors
              - 5.0 * math.sqrt(max(run.x_truth.single_photon_errors, 1)))
        m0 = xbasis_vacuum_errors_lower(counts, pairing_probs(src, link.phase_slices), src, None)
        check("m0_sound", m0 <= run.x_vacuum_errors + 5.0 * math.sqrt(max(run.x_vacuum_errors, 1)))

        bad = [name for name, ok in checks if not ok]
        all_ok &= not bad
        lines.append(
            f"config {idx}: {len(checks)} checks, "
            + ("all within 5 sigma" if not bad else f"FAILED: {bad}")
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    report = out_dir / "oracle_report.txt"
    report.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0 if all_ok else 2


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="amdiqkd",
        description="Asynchronous MDI-QKD simulation, estimation and optimization",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("evaluate", "optimize", "sweep", "network"):
        p = sub.add_parser(name)
        p.add_argument("--scenario", help="path to a YAML scenario file")
        p.add_argument("--preset", help="name of a packaged scenario preset")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--budget", type=int, help="override the optimizer budget")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a scenario field")
    p = sub.add_parser("validate-oracle")
    p.add_argument("--bins", type=float, default=1e7)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default="out")

    args = parser.parse_args(argv)
    try:
        if args.command == "validate-oracle":
            return _cmd_validate_oracle(args.bins, args.seed, Path(args.out))
        data = _load_scenario(args)
        data = _apply_overrides(data, args.overrides)
        if args.seed is not None:
            data["seed"] = args.seed
        if args.budget is not None:
            data["budget"] = args.budget
        declared = data.pop("command", args.command)
        if declared != args.command:
            raise ConfigError(
                f"scenario declares command {declared!r} but {args.command!r} was invoked"
            )
        out_dir = Path(args.out)
        handler = {
            "sweep": _cmd_sweep,
            "network": _cmd_network,
            "evaluate": _cmd_evaluate,
            "optimize": _cmd_optimize,
        }[args.command]
        return handler(data, out_dir)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
