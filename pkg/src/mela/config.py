"""Experiment configuration: a flat ``key = value`` file with sections.

Example file::

    [experiment]
    family = sinusoid
    seed = 7

    [train]
    iterations = 400

Every key is optional; missing keys take the defaults of the chosen preset.
``canonical_text`` renders all fields in a fixed order and ``config_hash``
stamps every output file with a digest of that text.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import os
import re
from dataclasses import dataclass, field
from typing import Optional

from .model import MelaSpec
from .nn import MlpSpec

FAMILIES = ("sinusoid", "bounce")
SEED_ENV = "MELA_SEED"


class ConfigError(ValueError):
    """Bad configuration; the message names the offending field (and line)."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


def _f(section, default, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass(frozen=True)
class ExperimentConfig:
    # [experiment]
    family: str = _f("experiment", "sinusoid")
    seed: int = _f("experiment", 0)
    # [data]
    n_train: int = _f("data", 100, positive=True)
    n_heldout: int = _f("data", 1000, positive=True)
    n_validation: int = _f("data", 50, positive=True)
    bounce_steps: int = _f("data", 20, positive=True)
    bounce_trajectories: int = _f("data", 10, positive=True)
    # [model]
    task_hidden: tuple = _f("model", (40, 40))
    s_pool: int = _f("model", 200, positive=True)
    s_code: int = _f("model", 20, positive=True)
    hidden: int = _f("model", 60, positive=True)
    slope: float = _f("model", 0.3)
    # [train]
    iterations: int = _f("train", 400, positive=True)
    lr: float = _f("train", 1e-3, positive=True)
    eval_every: int = _f("train", 10, positive=True)
    patience: Optional[int] = _f("train", None, positive=True)
    # [baselines]
    baseline_steps: int = _f("baselines", 20000, positive=True)
    baseline_lr: float = _f("baselines", 1e-3, positive=True)
    baseline_lr_final: Optional[float] = _f("baselines", None, positive=True)
    baseline_eval_every: int = _f("baselines", 500, positive=True)
    baseline_patience: Optional[int] = _f("baselines", 10, positive=True)
    tasks_per_step: int = _f("baselines", 1, positive=True)
    maml_inner_lr: float = _f("baselines", 0.01, positive=True)
    maml_inner_steps: int = _f("baselines", 1, positive=True)
    maml_steps: Optional[int] = _f("baselines", None, positive=True)
    # [eval]
    finetune_steps: int = _f("eval", 10)
    eval_lr: float = _f("eval", 1e-3, positive=True)
    horizon: float = _f("eval", 1.0, positive=True)
    rollout_starts: int = _f("eval", 10, positive=True)
    interact_tasks: int = _f("eval", 200, positive=True)
    n_given: int = _f("eval", 2, positive=True)
    n_candidates: int = _f("eval", 8, positive=True)
    x_star: float = _f("eval", -4.0)
    influence_rooms: int = _f("eval", 100, positive=True)
    top_k: int = _f("eval", 10, positive=True)
    subset_k: int = _f("eval", 3, positive=True)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"experiment.family: expected one of {FAMILIES}, got {self.family!r}", "family")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.metadata.get("positive") and v is not None and not v > 0:
                raise ConfigError(f"{f.metadata['section']}.{f.name}: must be positive, got {v!r}", f.name)
        if self.finetune_steps < 0:
            raise ConfigError(f"eval.finetune_steps: must be >= 0, got {self.finetune_steps}", "finetune_steps")
        if not 0 < self.slope <= 1:
            raise ConfigError(f"model.slope: must lie in (0, 1], got {self.slope}", "slope")
        if any(int(h) <= 0 for h in self.task_hidden):
            raise ConfigError(f"model.task_hidden: layer sizes must be positive, got {self.task_hidden}", "task_hidden")
        if self.family == "bounce" and self.bounce_steps < 4:
            raise ConfigError(f"data.bounce_steps: must be >= 4, got {self.bounce_steps}", "bounce_steps")

    @property
    def x_dim(self) -> int:
        return 1 if self.family == "sinusoid" else 6

    @property
    def y_dim(self) -> int:
        return 1 if self.family == "sinusoid" else 2

    def task_spec(self) -> MlpSpec:
        return MlpSpec((self.x_dim, *self.task_hidden, self.y_dim), self.slope)

    def mela_spec(self) -> MelaSpec:
        return MelaSpec(self.task_spec(), s_pool=self.s_pool, s_code=self.s_code, hidden=self.hidden, slope=self.slope)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def canonical_text(self) -> str:
        lines, section = [], None
        for f in sorted(dataclasses.fields(self), key=lambda f: (f.metadata["section"], f.name)):
            if f.metadata["section"] != section:
                section = f.metadata["section"]
                lines.append(f"[{section}]")
            lines.append(f"{f.name} = {_render(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()[:16]


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(int(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- presets -----------------------------------------------------------------------

def sinusoid_preset(**changes) -> ExperimentConfig:
    """Few-shot sinusoid regression at desk scale."""
    return ExperimentConfig(family="sinusoid").replace(**changes)


def bounce_preset(**changes) -> ExperimentConfig:
    """Bouncing ball: more rooms, fewer meta-iterations, batched baselines."""
    base = ExperimentConfig(
        family="bounce", n_train=1000, n_heldout=200, n_validation=50,
        task_hidden=(40, 40, 40), iterations=60, eval_every=5,
        baseline_steps=60000, baseline_lr=3e-3, baseline_eval_every=2000, baseline_patience=None,
        tasks_per_step=10, maml_steps=3000, finetune_steps=0, influence_rooms=200,
    )
    return base.replace(**changes)


PRESETS = {"sinusoid": sinusoid_preset, "bounce": bounce_preset}


# -- parsing -----------------------------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_OPTIONAL = {"patience", "baseline_patience", "maml_steps", "baseline_lr_final"}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    where, section = {}, None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            continue
        m = re.match(r"([^=:#;\s]+)\s*[=:]", line)
        if m and section is not None:
            where[(section, m.group(1).lower())] = n
    return where


def _parse_value(name: str, text: str):
    f = _FIELDS[name]
    default = f.default
    t = text.strip()
    if name in _OPTIONAL and t.lower() == "none":
        return None
    if isinstance(default, tuple):
        return tuple(int(x) for x in t.split(",") if x.strip())
    if isinstance(default, float) or "float" in str(f.type):
        return float(t)
    if isinstance(default, int) or default is None:
        return int(t)
    return t


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse config text. The ``family`` key picks the preset that supplies
    defaults; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lines = _key_lines(text)
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            line = lines.get((section.lower(), key), "?")
            f = _FIELDS.get(key)
            if f is None or f.metadata["section"] != section.lower():
                raise ConfigError(f"{source}:{line}: unknown field {section}.{key}")
            try:
                values[key] = _parse_value(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{line}: {section}.{key}: cannot parse {raw!r} ({exc})") from exc
    family = values.pop("family", "sinusoid")
    if family not in PRESETS:
        raise ConfigError(f"{source}:{lines.get(('experiment', 'family'), '?')}: experiment.family: "
                          f"expected one of {FAMILIES}, got {family!r}")
    try:
        return PRESETS[family](**values)
    except ConfigError as exc:
        f = _FIELDS.get(exc.field)
        line = lines.get((f.metadata["section"], exc.field)) if f is not None else None
        where = f"{source}:{line}" if line is not None else source
        raise ConfigError(f"{where}: {exc}", exc.field) from exc


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def seed_override(cfg: ExperimentConfig, flag: Optional[int] = None, environ=None) -> ExperimentConfig:
    """Apply ``MELA_SEED`` and then an explicit ``--seed`` flag."""
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is not None and raw.strip():
        try:
            cfg = cfg.replace(seed=int(raw))
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}: not an integer: {raw!r}") from exc
    if flag is not None:
        cfg = cfg.replace(seed=int(flag))
    return cfg
