# details: env, paths, simulation constants, single source of truth
from __future__ import annotations
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from dotenv import load_dotenv
from rapidfuzz import process


class ConfigError(ValueError):
    pass


def _find_root() -> Path:
    here = Path(__file__).resolve()
    for p in [here] + list(here.parents):
        if (p / "app").is_dir():
            return p
    return Path.cwd()

ROOT = _find_root()

APP_DIR = ROOT / "app"
DATA_DIR = APP_DIR / "data"
MAPS_DIR = DATA_DIR / "maps"

# .env is optional
load_dotenv(dotenv_path=ROOT / ".env")

def _env_int(name: str, default: int) -> int:
    v = os.getenv(name)
    return default if v is None or not v.strip() else int(v)

def _env_float(name: str, default: float) -> float:
    v = os.getenv(name)
    return default if v is None or not v.strip() else float(v)

def _env_opt_int(name: str) -> Optional[int]:
    v = os.getenv(name)
    return None if v is None or not v.strip() else int(v)


@dataclass(frozen=True)
class CFG:
    root: Path = ROOT
    maps_dir: Path = MAPS_DIR
    # world
    r_fov: Optional[int] = _env_opt_int("R_FOV")  # None → map header
    r_cow: int = _env_int("R_COW", 5)
    cow_w_agent: float = _env_float("COW_W_AGENT", -3)
    cow_w_cow: float = _env_float("COW_W_COW", 1)
    cow_w_wall: float = _env_float("COW_W_WALL", -1)
    switch_reach: int = _env_int("SWITCH_REACH", 3)
    # pathfind
    w_cow: float = _env_float("W_COW", 8)
    w_adj: float = _env_float("W_ADJ", 4)
    w_unknown: float = _env_float("W_UNKNOWN", 2)
    w_herd: float = _env_float("W_HERD", 3)  # per level of closeness to a believed cow, movement only
    # cluster
    link: int = _env_int("LINK", 2)
    max_size: int = _env_int("MAX_SIZE", 8)
    p_opp: float = _env_float("P_OPP", 10)
    r_opp: int = _env_int("R_OPP", 10)
    # agents
    t_stale: int = _env_int("T_STALE", 20)
    d_gap: int = _env_int("D_GAP", 3)
    k_form: int = _env_int("K_FORM", 3)
    spread_deg: float = _env_float("SPREAD_DEG", 60)
    # netmatch
    d_act_ms: int = _env_int("D_ACT_MS", 200)
    accept_timeout_s: float = _env_float("ACCEPT_TIMEOUT_S", 30)
    net_token: str = (os.getenv("NET_TOKEN") or "").strip()
    log_level: str = (os.getenv("LOG_LEVEL") or "INFO").strip().upper()


# fields that shape a match; these go into replay headers
SIM_FIELDS = (
    "r_fov", "r_cow", "cow_w_agent", "cow_w_cow", "cow_w_wall", "switch_reach",
    "w_cow", "w_adj", "w_unknown", "w_herd", "link", "max_size", "p_opp", "r_opp",
    "t_stale", "d_gap", "k_form", "spread_deg",
)

# short symbols → field names
ALIASES = {
    "R_fov": "r_fov", "R_cow": "r_cow", "W_cow": "w_cow", "W_adj": "w_adj",
    "W_unknown": "w_unknown", "W_herd": "w_herd", "L": "link", "max_size": "max_size",
    "T_stale": "t_stale", "D_gap": "d_gap", "K_form": "k_form", "P_opp": "p_opp",
    "R_opp": "r_opp", "D_act": "d_act_ms",
}

_CFG: CFG | None = None

def get_cfg() -> CFG:
    global _CFG
    if _CFG is None:
        _CFG = CFG()
    return _CFG


def _field_types() -> Dict[str, Any]:
    defaults = CFG()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(CFG)}


def _resolve_key(key: str) -> str:
    k = key.strip()
    if k in ALIASES:
        return ALIASES[k]
    low = k.lower()
    names = [f.name for f in fields(CFG) if f.name not in {"root", "maps_dir"}]
    if low in names:
        return low
    guess = process.extractOne(k, list(ALIASES) + names)
    hint = f" (did you mean {guess[0]}?)" if guess and guess[1] >= 60 else ""
    raise ConfigError(f"unknown constant {key!r}{hint}")


def _coerce(name: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    kind = _field_types()[name]
    try:
        if name == "r_fov":
            return None if raw.strip().lower() in {"", "none"} else int(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: {raw!r}") from e
    return raw


def with_overrides(cfg: CFG, overrides: Mapping[str, Any]) -> CFG:
    if not overrides:
        return cfg
    changes = {}
    for k, v in overrides.items():
        name = _resolve_key(k)
        changes[name] = _coerce(name, v)
    c = replace(cfg, **changes)
    if c.link < 1 or c.max_size < 1 or c.k_form < 1 or c.r_cow < 0:
        raise ConfigError("link, max_size and k_form must be >= 1, r_cow >= 0")
    if c.w_cow < 0 or c.w_adj < 0 or c.w_unknown < 1 or c.w_herd < 0:
        raise ConfigError("weights must keep every cell cost >= 1")
    return c


def simulation_constants(cfg: CFG) -> Dict[str, Any]:
    return {name: getattr(cfg, name) for name in SIM_FIELDS}


def from_constants(consts: Mapping[str, Any], base: Optional[CFG] = None) -> CFG:
    c = base or get_cfg()
    known = {k: v for k, v in consts.items() if k in SIM_FIELDS}
    return replace(c, **known)
