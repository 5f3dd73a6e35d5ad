"""Configuration loading: defaults, plain-text files, and dotted overrides.

Files hold `key = value` lines with `#` comments. Keys are flat and named
after the configuration fields; dB-valued keys carry a `_db` suffix and
algorithm subsections use dotted prefixes (`feedback.`, `sync.`). Unknown
keys are rejected by name.

The detection threshold `lambda` is optional: when absent it is calibrated
exactly to the configured false-alarm target, which is the normal mode of
operation (the display-rounded threshold would shift the tangency SINR by
a visible fraction of a dB).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from . import game
from .feedback import QuantizerSpec
from .netmodel import PowerGrid, SystemConfig, build_power_grid

_INT, _FLOAT, _BOOL, _FLOAT_OR_AUTO = "int", "float", "bool", "float_or_auto"

# key -> (type, default); lambda's None default means "calibrate to
# pfa_target at load time".
SCHEMA: dict[str, tuple[str, object]] = {
    "N": (_INT, 1024),
    "Nv": (_INT, 80),
    "M": (_INT, 4),
    "V": (_INT, 36),
    "Ts": (_FLOAT, 89.28e-9),
    "sigma2": (_FLOAT, 1.0),
    "pfa_target": (_FLOAT, 1e-5),
    "lambda": (_FLOAT_OR_AUTO, None),
    "mse_max": (_FLOAT, 324.0),
    "bias2": (_FLOAT, 196.0),
    "theta_max": (_INT, 50),
    "R": (_FLOAT, 670.0),
    "varsigma": (_FLOAT, 2.0),
    "Tf": (_FLOAT, 5e-3),
    "T": (_FLOAT, 1.0),
    "p_min_db": (_FLOAT, -30.0),
    "p_max_db": (_FLOAT, 20.0),
    "delta_db": (_FLOAT, 1.0),
    "feedback.B": (_INT, 3),
    "feedback.gamma_min_db": (_FLOAT, -8.0),
    "feedback.gamma_max_db": (_FLOAT, 16.0),
    "feedback.add_floor_offset": (_BOOL, False),
    "sync.max_frames": (_INT, 4000),
    "sync.codebook_size": (_INT, 0),  # 0: one code per station
    "sync.beb_cmax": (_INT, 6),
}


@dataclass(frozen=True)
class SimParams:
    """Validated bundle of everything a simulation needs."""

    system: SystemConfig
    grid: PowerGrid
    quantizer: QuantizerSpec
    add_floor_offset: bool
    max_frames: int
    codebook_size: int
    beb_cmax: int


def _parse_value(key: str, raw: str):
    kind, _ = SCHEMA[key]
    raw = raw.strip()
    try:
        if kind == _BOOL:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError
        if kind == _INT:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ValueError(f"bad value for {key!r}: {raw!r} (expected {kind})") \
            from None


def parse_config(text: str) -> dict:
    """Parse `key = value` lines into typed values, rejecting unknown keys."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got "
                             f"{line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ValueError(
                f"line {lineno}: unknown key {key!r}; valid keys: "
                + ", ".join(sorted(SCHEMA)))
        out[key] = _parse_value(key, raw)
    return out


def parse_overrides(pairs) -> dict:
    """Parse `key=value` override strings (same schema as config files)."""
    out: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override {pair!r} must look like key=value")
        key, raw = (part.strip() for part in pair.split("=", 1))
        if key not in SCHEMA:
            raise ValueError(f"unknown override key {key!r}; valid keys: "
                             + ", ".join(sorted(SCHEMA)))
        out[key] = _parse_value(key, raw)
    return out


def load_params(path: str | None = None, overrides=()) -> SimParams:
    """Defaults, then the optional file, then overrides; validate and build."""
    table = {key: default for key, (_, default) in SCHEMA.items()}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            table.update(parse_config(fh.read()))
    table.update(parse_overrides(overrides))

    lam = table["lambda"]
    if lam is None:
        lam = game.calibrate_threshold(table["pfa_target"], table["M"],
                                       table["V"])
    system = SystemConfig(
        N=table["N"], Nv=table["Nv"], M=table["M"], V=table["V"],
        Ts=table["Ts"], sigma2=table["sigma2"],
        pfa_target=table["pfa_target"], lam=lam, mse_max=table["mse_max"],
        bias2=table["bias2"], theta_max=table["theta_max"], R=table["R"],
        varsigma=table["varsigma"], Tf=table["Tf"], T=table["T"],
    )
    grid = build_power_grid(table["p_min_db"], table["p_max_db"],
                            table["delta_db"])
    quantizer = QuantizerSpec(
        B=table["feedback.B"],
        gamma_min=10.0 ** (table["feedback.gamma_min_db"] / 10.0),
        gamma_max=10.0 ** (table["feedback.gamma_max_db"] / 10.0),
    )
    if table["sync.codebook_size"] < 0:
        raise ValueError("sync.codebook_size must be nonnegative")
    if table["sync.max_frames"] < 1:
        raise ValueError("sync.max_frames must be positive")
    return SimParams(
        system=system,
        grid=grid,
        quantizer=quantizer,
        add_floor_offset=table["feedback.add_floor_offset"],
        max_frames=table["sync.max_frames"],
        codebook_size=table["sync.codebook_size"],
        beb_cmax=table["sync.beb_cmax"],
    )


def params_to_dict(params: SimParams) -> dict:
    """Flat snapshot of the resolved configuration (for sidecar metadata)."""
    sys_ = params.system
    return {
        "N": sys_.N, "Nv": sys_.Nv, "M": sys_.M, "V": sys_.V, "Ts": sys_.Ts,
        "sigma2": sys_.sigma2, "pfa_target": sys_.pfa_target,
        "lambda": sys_.lam, "mse_max": sys_.mse_max, "bias2": sys_.bias2,
        "theta_max": sys_.theta_max, "R": sys_.R, "varsigma": sys_.varsigma,
        "Tf": sys_.Tf, "T": sys_.T,
        "p_min_db": params.grid.p_min_db, "p_max_db": params.grid.p_max_db,
        "delta_db": params.grid.delta_db,
        "feedback.B": params.quantizer.B,
        "feedback.gamma_min_db": 10.0 * math.log10(params.quantizer.gamma_min),
        "feedback.gamma_max_db": 10.0 * math.log10(params.quantizer.gamma_max),
        "feedback.add_floor_offset": params.add_floor_offset,
        "sync.max_frames": params.max_frames,
        "sync.codebook_size": params.codebook_size,
        "sync.beb_cmax": params.beb_cmax,
    }
