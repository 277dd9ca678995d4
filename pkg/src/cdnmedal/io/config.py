"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment. Every key is declared in
:data:`DEFAULTS` and parsed with the type of its default; anything else is
rejected.
"""
from pathlib import Path

from ..cdn_gm import CdnGmConfig
from ..errors import ConfigError, UsageError
from ..medal_net import MedalConfig

_CDN_KEYS = ("K", "T", "sigma_min_gray", "sigma_max_gray", "lr", "batch_size", "epochs", "seed",
             "warmup_steps", "augment")
_MEDAL_KEYS = ("epsilon", "clamp_delta", "lr", "epochs", "batch_size", "seed")


def _defaults():
    cdn = CdnGmConfig()
    med = MedalConfig()
    out = {f"cdn.{k}": getattr(cdn, k) for k in _CDN_KEYS}
    out.update({f"medal.{k}": getattr(med, k) for k in _MEDAL_KEYS})
    out.update({
        "seed": 0,
        "hop": 0,            # 0 means hop = T
        "tau": 20.0,
        "threads": 1,
        "layout": "flat",
        "data": "",
        "out": "out",
        "cdn_weights": "",
        "medal_weights": "",
        "train_histories": 20000,
        "train_pairs": 200,
        "sequence": "",
        "group": "",
    })
    return out


DEFAULTS = _defaults()


def _parse(key, raw):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise UsageError(f"config key {key!r}: cannot parse {raw!r} as {type(default).__name__}") from exc
    return raw


class RunConfig(dict):
    @classmethod
    def from_text(cls, text, where="<config>"):
        cfg = cls(DEFAULTS)
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{where}:{n}: expected key = value")
            key, raw = (s.strip() for s in line.split("=", 1))
            cfg.set(key, raw, where=f"{where}:{n}")
        return cfg

    @classmethod
    def load(cls, path=None):
        if not path:
            return cls(DEFAULTS)
        p = Path(path)
        if not p.exists():
            raise UsageError(f"{p}: config file not found")
        return cls.from_text(p.read_text(), str(p))

    def set(self, key, raw, where="override"):
        if key not in DEFAULTS:
            raise UsageError(f"{where}: unknown config key {key!r}")
        self[key] = _parse(key, raw) if isinstance(raw, str) else raw

    def dumps(self):
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def _section(self, prefix):
        return {k.split(".", 1)[1]: v for k, v in self.items() if k.startswith(prefix)}

    def cdn_config(self, **extra):
        kw = self._section("cdn.")
        kw.update(extra)
        try:
            return CdnGmConfig(**kw)
        except (ConfigError, TypeError) as exc:
            raise UsageError(str(exc)) from exc

    def medal_config(self, H, W, c, **extra):
        kw = self._section("medal.")
        kw.update(extra)
        try:
            return MedalConfig(H=H, W=W, c=c, **kw)
        except (ConfigError, TypeError) as exc:
            raise UsageError(str(exc)) from exc

    @property
    def hop_or_T(self):
        return self["hop"] or self["cdn.T"]

