"""Command-line front end.

Every command reads an INI-style config (``key = value`` under section
headers, ``#`` comments) and is a pure function of the config bytes and the
seed.  A ``[scenario]`` section describes the stations, claim and timing
noise; each command reads its own section of the same name.

Exit codes: 0 success, 2 config error, 3 runtime or degenerate geometry.
"""

from __future__ import annotations

import argparse
import configparser
import io
import os
import sys
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .localization import (
    GeometryError,
    GridRegion,
    Scenario,
    crb_grid,
    error_ellipse,
    fisher_matrix,
    position_covariance,
)
from .orchestrator import (
    DeviceModel,
    SessionConfig,
    bits_from_hex,
    bits_to_hex,
    relocation_attack,
    run_session,
)
from .qdc import (
    NO_ATTACK,
    AttackModel,
    QdcResources,
    TamperDetected,
    draw_schedule,
    pingpong_send,
)
from .qlv import MIN_STATIONS, Method, spoof_sweep
from .rng import substream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

COMMANDS = ("crb-surface", "ellipse", "spoof-sweep", "session", "pingpong-demo")
U64_MASK = (1 << 64) - 1


class ConfigError(Exception):
    pass


# --- config parsing --------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _points(text: str) -> list[tuple[float, float]]:
    out = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        xy = _floats(chunk)
        if len(xy) != 2:
            raise ValueError(f"expected 'x, y', got {chunk.strip()!r}")
        out.append((xy[0], xy[1]))
    return out


def _point(text: str) -> tuple[float, float]:
    pts = _points(text)
    if len(pts) != 1:
        raise ValueError(f"expected a single point, got {text!r}")
    return pts[0]


def _hex(text: str) -> str:
    text = text.strip().lower()
    bytes.fromhex(text)
    if not text:
        raise ValueError("message must not be empty")
    return text


def _method(text: str) -> Method:
    return Method(text.strip().lower())


def _basis(text: str) -> str:
    b = text.strip().upper()
    if b not in ("Z", "X"):
        raise ValueError(f"basis must be Z or X, got {text!r}")
    return b


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v <= U64_MASK:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


@dataclass(frozen=True)
class Field:
    parse: Callable[[str], object]
    default: object = None
    required: bool = False


SCENARIO_SCHEMA = {
    "geometry": Field(lambda s: s.strip().lower(), "square"),
    "half_side_m": Field(float, 500.0),
    "center": Field(_point, (0.0, 0.0)),
    "stations": Field(_points),
    "claim": Field(_point),
    "c_sigma_t_m": Field(float),
    "sigma_t_s": Field(float),
    "p_c": Field(float, 0.99),
    "t_d": Field(float, 0.0),
    "seed": Field(_seed, 0),
    "multipath_inflation": Field(float, 1.0),
    "processing_delay_s": Field(float, 0.0),
}

SCHEMAS: dict[str, dict[str, Field]] = {
    "crb-surface": {
        "x_min": Field(float, required=True),
        "x_max": Field(float, required=True),
        "y_min": Field(float, required=True),
        "y_max": Field(float, required=True),
        "nx": Field(int, required=True),
        "ny": Field(int, required=True),
    },
    "ellipse": {
        "points": Field(_points, required=True),
        "scale": Field(float, 3.0),
    },
    "spoof-sweep": {
        "offsets_m": Field(_floats),
        "offsets_drms": Field(_floats),
        "trials": Field(int, 10_000),
        "direction": Field(_point),
        "method": Field(_method, Method.REGION),
    },
    "session": {
        "message": Field(_hex, required=True),
        "clock": Field(float),
        "device": Field(lambda s: s.strip().lower(), "honest"),
        "offset_m": Field(float),
        "offset_drms": Field(float),
        "direction": Field(_point, (1.0, 0.0)),
        "n_moved": Field(int, 0),
        "basis": Field(_basis, "Z"),
        "withheld_share": Field(int, 0),
        "device_delay_s": Field(float, 0.0),
        "n_qlv": Field(int, 4),
        "n_decoy": Field(int, 4),
        "control_fraction": Field(float, 0.25),
        "intertwine_k": Field(int, 16),
        "n_rs_shares": Field(int),
        "method": Field(_method, Method.REGION),
    },
    "pingpong-demo": {
        "message": Field(_hex, required=True),
        "attack": Field(lambda s: s.strip().lower(), "none"),
        "basis": Field(_basis, "Z"),
        "control_fraction": Field(float, 0.25),
    },
}

DEVICES = ("honest", "relocated", "premeasure", "intercept-resend", "withheld-share",
           "delayed", "relocation-attack")


def _parse_section(parser: configparser.ConfigParser, name: str,
                   schema: dict[str, Field]) -> dict[str, object]:
    raw = dict(parser[name]) if parser.has_section(name) else {}
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {', '.join(unknown)}")
    out: dict[str, object] = {}
    for key, f in schema.items():
        if key in raw:
            try:
                out[key] = f.parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"[{name}] {key}: {exc}") from None
        elif f.required:
            raise ConfigError(f"[{name}] missing required key {key!r}")
        else:
            out[key] = f.default
    return out


def read_config(text: str, command: str) -> tuple[dict, dict]:
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",),
        interpolation=None, delimiters=("=",),
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    extra = sorted(set(parser.sections()) - {"scenario", *SCHEMAS})
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(extra)}")
    scenario = _parse_section(parser, "scenario", SCENARIO_SCHEMA)
    params = _parse_section(parser, command, SCHEMAS[command])
    return scenario, params


def build_scenario(cfg: dict, seed: int | None) -> Scenario:
    """Raises ConfigError for invalid values and GeometryError for degenerate layouts."""
    if (cfg["c_sigma_t_m"] is None) == (cfg["sigma_t_s"] is None):
        raise ConfigError("[scenario] set exactly one of c_sigma_t_m / sigma_t_s")
    kw = dict(
        p_c=cfg["p_c"], t_d=cfg["t_d"],
        seed=cfg["seed"] if seed is None else seed,
        multipath_inflation=cfg["multipath_inflation"],
        processing_delay_s=cfg["processing_delay_s"],
    )
    try:
        if cfg["geometry"] == "square":
            if cfg["stations"] is not None:
                raise ConfigError("[scenario] stations conflicts with geometry = square")
            if cfg["half_side_m"] <= 0:
                raise ConfigError("[scenario] half_side_m must be positive")
            if cfg["claim"] is not None:
                kw["claim"] = cfg["claim"]
            c_sigma = cfg["c_sigma_t_m"]
            if c_sigma is None:
                c_sigma = cfg["sigma_t_s"] * 299_792_458.0
            return Scenario.square(cfg["half_side_m"], c_sigma, cfg["center"], **kw)
        if cfg["geometry"] == "explicit":
            if cfg["stations"] is None or cfg["claim"] is None:
                raise ConfigError("[scenario] explicit geometry needs stations and claim")
            sigma = cfg["sigma_t_s"]
            if sigma is None:
                sigma = cfg["c_sigma_t_m"] / 299_792_458.0
            return Scenario(np.array(cfg["stations"]), np.array(cfg["claim"]), sigma, **kw)
    except GeometryError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[scenario] {exc}") from None
    raise ConfigError(f"[scenario] unknown geometry {cfg['geometry']!r}")


def check_output_path(path: str) -> None:
    """Reject unwritable destinations before anything runs."""
    parent = os.path.dirname(os.path.abspath(path))
    if os.path.isdir(path):
        raise ConfigError(f"output path {path!r} is a directory")
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise ConfigError(f"output directory {parent!r} is not writable")
    if os.path.exists(path) and not os.access(path, os.W_OK):
        raise ConfigError(f"output file {path!r} is not writable")


def thread_count() -> int:
    raw = os.environ.get("GEOQRYPT_THREADS", "1").strip() or "1"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GEOQRYPT_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("GEOQRYPT_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


# --- commands --------------------------------------------------------------


def fmt(v: float) -> str:
    return format(float(v), ".9g")


def _csv(header: Sequence[str], rows) -> str:
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    return out.getvalue()


def _validate_crb(sc: Scenario, p: dict) -> GridRegion:
    if sc.sigma_t <= 0:
        raise ConfigError("[scenario] crb-surface needs a positive timing std")
    try:
        return GridRegion(p["x_min"], p["x_max"], p["y_min"], p["y_max"], p["nx"], p["ny"])
    except ValueError as exc:
        raise ConfigError(f"[crb-surface] {exc}") from None


def cmd_crb_surface(sc: Scenario, p: dict, threads: int) -> str:
    region = _validate_crb(sc, p)
    g = crb_grid(region, sc, threads)
    rows = []
    for iy, y in enumerate(g.ys):
        for ix, x in enumerate(g.xs):
            rows.append((x, y, g.drms[iy, ix], g.sigma_x[iy, ix], g.sigma_y[iy, ix], g.rho[iy, ix]))
    return _csv(("x_m", "y_m", "drms_m", "sigma_x_m", "sigma_y_m", "rho"), rows)


def cmd_ellipse(sc: Scenario, p: dict, threads: int) -> str:
    if sc.sigma_t <= 0:
        raise ConfigError("[scenario] ellipse needs a positive timing std")
    if p["scale"] <= 0:
        raise ConfigError("[ellipse] scale must be positive")
    nan = float("nan")
    rows = []
    for pt in p["points"]:
        try:
            cov = position_covariance(fisher_matrix(pt, sc))
            e = error_ellipse(cov, p["scale"], pt)
            rows.append((pt[0], pt[1], e.semi_major, e.semi_minor, e.orientation_rad,
                         e.scale, e.coverage))
        except GeometryError:
            rows.append((pt[0], pt[1], nan, nan, nan, nan, nan))
    header = ("x_m", "y_m", "semi_major_m", "semi_minor_m", "orientation_rad", "scale",
              "coverage")
    return _csv(header, rows)


def _claim_drms(sc: Scenario) -> float:
    """Verification preconditions; GeometryError for a degenerate claim."""
    if sc.n_rs < MIN_STATIONS:
        raise ConfigError(f"[scenario] verification needs at least {MIN_STATIONS} stations")
    if sc.sigma_t <= 0:
        raise ConfigError("[scenario] verification needs a positive timing std")
    return position_covariance(fisher_matrix(sc.claim, sc)).drms


def cmd_spoof_sweep(sc: Scenario, p: dict, threads: int) -> str:
    drms = _claim_drms(sc)
    if (p["offsets_m"] is None) == (p["offsets_drms"] is None):
        raise ConfigError("[spoof-sweep] set exactly one of offsets_m / offsets_drms")
    if p["trials"] < 100:
        raise ConfigError("[spoof-sweep] trials must be >= 100")
    if p["offsets_m"] is not None:
        offsets = np.asarray(p["offsets_m"])
    else:
        offsets = np.asarray(p["offsets_drms"]) * drms
    if offsets.size == 0 or np.any(offsets < 0):
        raise ConfigError("[spoof-sweep] offsets must be a non-empty list of values >= 0")
    curve = spoof_sweep(sc, offsets, p["direction"], p["trials"], sc.seed, p["method"], threads)
    rows = [(o, r, str(curve.trials), str(curve.seed)) for o, r in zip(curve.offsets, curve.pass_rate)]
    return _csv(("offset_m", "pass_rate", "trials", "seed"), rows)


def _device(sc: Scenario, p: dict, drms: float) -> DeviceModel:
    kind = p["device"]
    if kind not in DEVICES:
        raise ConfigError(f"[session] device must be one of {', '.join(DEVICES)}")
    if p["offset_m"] is not None and p["offset_drms"] is not None:
        raise ConfigError("[session] set at most one of offset_m / offset_drms")
    if kind in ("relocated", "relocation-attack") and p["offset_m"] is p["offset_drms"] is None:
        raise ConfigError(f"[session] device {kind} needs offset_m or offset_drms")
    offset = p["offset_m"] or 0.0
    if p["offset_drms"] is not None:
        offset = p["offset_drms"] * drms
    u = np.asarray(p["direction"], dtype=float)
    if not np.linalg.norm(u) > 0:
        raise ConfigError("[session] direction must be non-zero")
    d = offset * u / np.linalg.norm(u)
    d = (float(d[0]), float(d[1]))
    if kind == "relocated":
        return DeviceModel(displacement=d)
    if kind == "relocation-attack":
        return DeviceModel(relocate_count=p["n_moved"], remote_displacement=d)
    if kind == "premeasure":
        return DeviceModel(premeasure=True)
    if kind == "intercept-resend":
        return DeviceModel(channel_attack=AttackModel.intercept_resend(p["basis"]))
    if kind == "withheld-share":
        return DeviceModel(withheld_share=p["withheld_share"])
    if kind == "delayed":
        return DeviceModel(processing_delay_s=p["device_delay_s"])
    return DeviceModel.honest()


def cmd_session(sc: Scenario, p: dict, threads: int) -> str:
    drms = _claim_drms(sc)
    try:
        config = SessionConfig(p["n_qlv"], p["n_decoy"], p["control_fraction"],
                               p["intertwine_k"], p["n_rs_shares"], 64, p["method"])
    except ValueError as exc:
        raise ConfigError(f"[session] {exc}") from None
    if not 0 <= config.control_fraction < 1:
        raise ConfigError("[session] control_fraction must lie in [0, 1)")
    if config.n_rs_shares is not None and not 2 <= config.n_rs_shares <= sc.n_rs:
        raise ConfigError("[session] n_rs_shares must lie in [2, number of stations]")
    device = _device(sc, p, drms)
    clock = sc.t_d if p["clock"] is None else p["clock"]
    message = bits_from_hex(p["message"])
    rng = substream(sc.seed, "orchestrator")
    if p["device"] == "relocation-attack":
        result = relocation_attack(sc, message, device.relocate_count,
                                   device.remote_displacement, rng, config, clock)
    else:
        result = run_session(sc, message, device, clock, rng, config)
    lines = [f"# {event}" for event in result.events]
    lines.append(result.result_line())
    return "\n".join(lines) + "\n"


def cmd_pingpong_demo(sc: Scenario, p: dict, threads: int) -> str:
    if p["attack"] not in ("none", "intercept-resend"):
        raise ConfigError("[pingpong-demo] attack must be none or intercept-resend")
    if not 0 <= p["control_fraction"] < 1:
        raise ConfigError("[pingpong-demo] control_fraction must lie in [0, 1)")
    attack = NO_ATTACK if p["attack"] == "none" else AttackModel.intercept_resend(p["basis"])
    bits = bits_from_hex(p["message"])
    rng = substream(sc.seed, "qdc")
    schedule = draw_schedule(len(bits), p["control_fraction"], rng)
    resources = QdcResources.provision(len(schedule), p["control_fraction"])
    try:
        t = pingpong_send(bits, resources, attack, rng, schedule)
        status = "ok"
    except TamperDetected as exc:
        t = exc.transcript
        status = "aborted"
    rows = []
    data = iter(zip(t.sent_bits, t.decoded_bits))
    controls = iter(t.control_results)
    for i, (kind, corr) in enumerate(zip(t.rounds, t.teleport_corrections)):
        if kind == "data":
            sent, got = next(data)
            rows.append((str(i), kind, str(sent), str(got), str(corr[0]), str(corr[1]), ""))
        else:
            rows.append((str(i), kind, "", "", str(corr[0]), str(corr[1]),
                         str(int(next(controls)))))
    body = _csv(("round", "kind", "sent_bit", "decoded_bit", "corr_x", "corr_z", "control_ok"), rows)
    decoded = bits_to_hex(t.decoded_bits) if status == "ok" else ""
    summary = (f"# status={status} controls={len(t.control_results)} "
               f"control_failures={t.control_failures} decoded_hex={decoded}\n")
    return body + summary


HANDLERS = {
    "crb-surface": cmd_crb_surface,
    "ellipse": cmd_ellipse,
    "spoof-sweep": cmd_spoof_sweep,
    "session": cmd_session,
    "pingpong-demo": cmd_pingpong_demo,
}


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geoqrypt", description="Geo-encryption simulation toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="INI-style config file")
    ap.add_argument("--seed", type=_seed, default=None, help="overrides [scenario] seed")
    ap.add_argument("--out", default=None, help="output file (default: stdout)")
    return ap


def run(argv: Sequence[str] | None = None) -> tuple[int, str, bool]:
    """Parse, validate and execute.

    Returns (exit code, output text, whether the text went to ``--out``).
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return (EXIT_OK if exc.code == 0 else EXIT_CONFIG), "", False
    try:
        with open(args.config, "rb") as fh:
            text = fh.read().decode("utf-8")
        scenario_cfg, params = read_config(text, args.command)
        threads = thread_count()
        scenario = build_scenario(scenario_cfg, args.seed)
        if args.out is not None:
            check_output_path(args.out)
    except (OSError, UnicodeDecodeError) as exc:
        print(f"geoqrypt: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG, "", False
    except ConfigError as exc:
        print(f"geoqrypt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, "", False
    except GeometryError as exc:
        print(f"geoqrypt: degenerate geometry: {exc}", file=sys.stderr)
        return EXIT_RUNTIME, "", False
    try:
        output = HANDLERS[args.command](scenario, params, threads)
    except ConfigError as exc:
        print(f"geoqrypt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, "", False
    except (GeometryError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"geoqrypt: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME, "", False
    if args.out is None:
        return EXIT_OK, output, False
    try:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(output)
    except OSError as exc:
        print(f"geoqrypt: cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG, "", False
    return EXIT_OK, output, True


def main(argv: Sequence[str] | None = None) -> int:
    code, output, written = run(argv)
    if code == EXIT_OK and not written:
        sys.stdout.flush()
        sys.stdout.buffer.write(output.encode("utf-8"))
        sys.stdout.buffer.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
