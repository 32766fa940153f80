"""Run configuration and its ``key=value`` text form (also the run manifest)."""

from dataclasses import asdict, dataclass, fields, replace

from .exceptions import FormatError

__all__ = ["RunConfig", "parse_config", "load_config"]


@dataclass(frozen=True)
class RunConfig:
    patch_size: int = 100
    stride: int = 50
    # MRF; None truncations resolve to (label span / 4)^2 per image
    n_labels: int = 64
    lambda_: float = 1.0
    data_k: float = None
    disc_k: float = None
    iterations: int = 10
    damping: float = 0.0
    # regressor
    hidden: tuple = (100, 100, 50, 50)
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    patience: int = None
    # protocol
    features: str = "lbp"
    folds: int = 5
    groups: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (self.features == "lbp" or self.features.startswith("cfeat:")):
            raise ValueError(f"features must be 'lbp' or 'cfeat:<dir>', got {self.features!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def with_overrides(self, **overrides):
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_text(self):
        lines = []
        for key, value in asdict(self).items():
            if value is None:
                text = "auto"
            elif isinstance(value, tuple):
                text = ",".join(map(str, value))
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{key.rstrip('_')}={text}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name.rstrip("_"): f for f in fields(RunConfig)}


def _convert(field, raw):
    if raw in ("auto", "none", ""):
        return None
    if field.name == "hidden":
        return tuple(int(v) for v in raw.split(","))
    kind = {"int": int, "float": float, "str": str}[field.type if isinstance(field.type, str)
                                                    else field.type.__name__]
    return kind(raw)


def parse_config(text, base=None):
    """Parse ``key=value`` lines (``#`` comments allowed) over ``base``."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _TYPES:
            raise FormatError(f"unknown config entry {line!r}", line=lineno)
        field = _TYPES[key]
        try:
            values[field.name] = _convert(field, raw.strip())
        except ValueError as exc:
            raise FormatError(f"bad value for {key}: {exc}", line=lineno) from None
    return replace(base or RunConfig(), **values)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base)
