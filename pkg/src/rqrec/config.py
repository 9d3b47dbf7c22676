"""Line-oriented `section.key = value` pipeline configuration with CLI overrides."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .collab import CollabConfig
from .rqvae import RqVaeConfig
from .scorer import ScorerConfig
from .synth import SyntheticConfig

RERANK_MODES = ("full", "ceid-only", "seid-only", "conf-only", "cons-only")


@dataclass
class PipelineConfig:
    out_dir: Path = Path("runs/out")
    interactions: Path = Path("interactions.tsv")
    semantic_emb: Path = Path("semantic.emb")
    seed: int = 0
    templates: int = 10
    kcore: int = 5
    max_len: int = 20
    k_retrieve: int = 20
    k_report: list[int] = field(default_factory=lambda: [5, 10])
    analysis_k: int = 10          # hit sets for PER/CHR use top-10 predictions
    alpha: float = 0.8
    tau: float = 10.0
    mode: str = "full"
    breakdown: bool = False
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    collab: CollabConfig = field(default_factory=CollabConfig)
    rqvae_ceid: RqVaeConfig = field(default_factory=RqVaeConfig)
    rqvae_seid: RqVaeConfig = field(default_factory=RqVaeConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)

    def validate(self) -> None:
        if self.k_retrieve < max(self.k_report):
            raise ValueError(f"k_retrieve ({self.k_retrieve}) must be >= "
                             f"max reported K ({max(self.k_report)})")
        if not 1 <= self.templates <= 10:
            raise ValueError(f"templates must be in 1..10, got {self.templates}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.mode not in RERANK_MODES:
            raise ValueError(f"mode must be one of {RERANK_MODES}, got {self.mode!r}")
        self.collab.validate()
        self.rqvae_ceid.validate()
        self.rqvae_seid.validate()
        self.scorer.validate()

    def snapshot(self) -> dict[str, str]:
        """Flat, sorted key -> value view recorded in run manifests."""
        out: dict[str, str] = {}
        for key, value in sorted(_flatten(self).items()):
            out[key] = str(value)
        return out


_SECTIONS = {
    "synthetic": ("synthetic", SyntheticConfig),
    "collab": ("collab", CollabConfig),
    "rqvae_ceid": ("rqvae_ceid", RqVaeConfig),
    "rqvae_seid": ("rqvae_seid", RqVaeConfig),
    "scorer": ("scorer", ScorerConfig),
}

_TOP_KEYS = {
    "paths.out_dir": ("out_dir", Path),
    "paths.interactions": ("interactions", Path),
    "paths.semantic_emb": ("semantic_emb", Path),
    "pipeline.seed": ("seed", int),
    "pipeline.templates": ("templates", int),
    "data.kcore": ("kcore", int),
    "data.max_len": ("max_len", int),
    "retrieval.k": ("k_retrieve", int),
    "eval.k_report": ("k_report", "int_list"),
    "eval.analysis_k": ("analysis_k", int),
    "rerank.alpha": ("alpha", float),
    "rerank.tau": ("tau", float),
    "rerank.mode": ("mode", str),
    "rerank.breakdown": ("breakdown", "bool"),
}


def _flatten(cfg: PipelineConfig) -> dict[str, object]:
    out: dict[str, object] = {}
    for dotted, (attr, _) in _TOP_KEYS.items():
        value = getattr(cfg, attr)
        out[dotted] = ",".join(str(v) for v in value) if isinstance(value, list) else value
    for section, (attr, cls) in _SECTIONS.items():
        sub = getattr(cfg, attr)
        for f in fields(cls):
            out[f"{section}.{f.name}"] = getattr(sub, f.name)
    return out


def _coerce(kind, raw: str):
    if kind is Path:
        return Path(raw)
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected boolean, got {raw!r}")
    if kind == "int_list":
        return [int(x) for x in raw.split(",") if x.strip()]
    return kind(raw)


def apply_setting(cfg: PipelineConfig, dotted: str, raw: str) -> None:
    """Set one `section.key = value` entry, with type coercion."""
    if dotted in _TOP_KEYS:
        attr, kind = _TOP_KEYS[dotted]
        setattr(cfg, attr, _coerce(kind, raw))
        return
    section, _, key = dotted.partition(".")
    aliases = dict(_SECTIONS)
    aliases["rqvae"] = ("rqvae", RqVaeConfig)  # shorthand applying to both index types
    if section not in aliases:
        raise ValueError(f"unknown config key {dotted!r}")
    attr, cls = aliases[section]
    defaults = cls()
    if not hasattr(defaults, key):
        raise ValueError(f"unknown config key {dotted!r}")
    value = _coerce(type(getattr(defaults, key)), raw)
    targets = [cfg.rqvae_ceid, cfg.rqvae_seid] if section == "rqvae" else [getattr(cfg, attr)]
    for target in targets:
        setattr(target, key, value)


def load_config(path: str | Path | None,
                overrides: list[str] | None = None,
                seed: int | None = None) -> PipelineConfig:
    """Parse a config file plus `--set key=value` overrides; validate before use."""
    cfg = PipelineConfig()
    entries: list[tuple[str, str]] = []
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'section.key = value'")
            key, _, raw = line.partition("=")
            entries.append((key.strip(), raw.strip()))
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} must be section.key=value")
        key, _, raw = item.partition("=")
        entries.append((key.strip(), raw.strip()))
    for key, raw in entries:
        apply_setting(cfg, key, raw)
    if seed is not None:
        cfg.seed = seed
    _derive_seeds(cfg, explicit={k for k, _ in entries})
    cfg.validate()
    return cfg


def _derive_seeds(cfg: PipelineConfig, explicit: set[str]) -> None:
    """Module seeds default to fixed offsets from the global seed."""
    if "rqvae.seed" in explicit:
        explicit = explicit | {"rqvae_ceid.seed", "rqvae_seid.seed"}
    derived = {
        "synthetic.seed": ("synthetic", 0),
        "collab.seed": ("collab", 1),
        "rqvae_ceid.seed": ("rqvae_ceid", 2),
        "rqvae_seid.seed": ("rqvae_seid", 3),
        "scorer.seed": ("scorer", 4),
    }
    for dotted, (attr, offset) in derived.items():
        if dotted not in explicit:
            getattr(cfg, attr).seed = cfg.seed + offset
