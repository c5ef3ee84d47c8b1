"""Named pipeline profiles and JSON profile files."""
import json
from dataclasses import asdict, dataclass, field, replace

from .control import GAOptions, GDOptions
from .lab import LabConfig, bosonic_config, fermionic_config
from .model import TrainOptions
from .pulses import ConfigurationError, PulseConstraints

DEFAULT_V = {"fermionic": 2.0, "bosonic": 1.3}
SWEEP_V = {"fermionic": (0.2, 1.0, 2.0), "bosonic": (0.13, 0.65, 1.3)}
SHOTS = (512, 1024, None)


@dataclass
class Profile:
    name: str
    lab: LabConfig
    pulses: PulseConstraints
    n_train: int = 1000
    n_test: int = 200
    shots: int | None = 1024
    hidden: tuple = (32, 32)
    train: TrainOptions = field(default_factory=TrainOptions)
    gd: GDOptions = field(default_factory=GDOptions)
    ga: GAOptions = field(default_factory=GAOptions)
    out: str | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if (self.lab.T, self.lab.M) != (self.pulses.T, self.pulses.M):
            raise ConfigurationError(
                f"profile {self.name}: lab grid (T={self.lab.T}, M={self.lab.M}) differs from "
                f"pulse grid (T={self.pulses.T}, M={self.pulses.M})")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigurationError(f"profile {self.name}: dataset sizes must be positive")
        if self.shots is not None and self.shots < 1:
            raise ConfigurationError(f"profile {self.name}: shots must be positive or null")
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ConfigurationError(f"profile {self.name}: hidden must be two positive sizes")

    def to_dict(self):
        return {"name": self.name, "lab": self.lab.to_dict(), "pulses": self.pulses.to_dict(),
                "n_train": self.n_train, "n_test": self.n_test, "shots": self.shots,
                "hidden": list(self.hidden), "train": asdict(self.train), "gd": asdict(self.gd),
                "ga": asdict(self.ga), "out": self.out}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(name=d.get("name", "custom"), lab=LabConfig.from_dict(d["lab"]),
                       pulses=PulseConstraints.from_dict(d["pulses"]),
                       n_train=int(d.get("n_train", 1000)), n_test=int(d.get("n_test", 200)),
                       shots=d.get("shots", 1024), hidden=tuple(d.get("hidden", (32, 32))),
                       train=TrainOptions(**d.get("train", {})), gd=GDOptions(**d.get("gd", {})),
                       ga=GAOptions(**d.get("ga", {})), out=d.get("out"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"bad profile: {exc!r}") from exc


def _shots_tag(shots):
    return "inf" if shots is None else str(shots)


def _v_tag(v):
    return f"{v:g}"


def _make(name, bath, axes, shots, V, A_max=25.0, full=False):
    lab = (fermionic_config if bath == "fermionic" else bosonic_config)(V=V)
    pulses = PulseConstraints(axes=axes, A_max=A_max)
    if full:
        return Profile(name, lab, pulses, n_train=9000, n_test=1000, shots=shots, hidden=(100, 100))
    return Profile(name, lab, pulses, shots=shots)


def builtin_profiles():
    """Every named profile, keyed by name.

    ``{bath}-{single|multi}-{512|1024|inf}`` use the default coupling; ``-v{V}`` suffixes
    pick a sweep value; ``full-`` prefixes use 9000/1000 examples and 100-unit layers.
    """
    out = {}
    for bath in ("fermionic", "bosonic"):
        for axes_tag, axes in (("single", ("x",)), ("multi", ("x", "y"))):
            for shots in SHOTS:
                base = f"{bath}-{axes_tag}-{_shots_tag(shots)}"
                out[base] = _make(base, bath, axes, shots, DEFAULT_V[bath])
                out["full-" + base] = _make("full-" + base, bath, axes, shots, DEFAULT_V[bath], full=True)
                for v in SWEEP_V[bath]:
                    name = f"{base}-v{_v_tag(v)}"
                    out[name] = _make(name, bath, axes, shots, v)
                    out["full-" + name] = _make("full-" + name, bath, axes, shots, v, full=True)
    for bath, v in (("fermionic", 1.0), ("bosonic", 0.65)):
        name = f"{bath}-multi-1024-v{_v_tag(v)}-amax100"
        out[name] = _make(name, bath, ("x", "y"), 1024, v, A_max=100.0)
        out["full-" + name] = _make("full-" + name, bath, ("x", "y"), 1024, v, A_max=100.0, full=True)
    for axes_tag, axes in (("single", ("x",)), ("multi", ("x", "y"))):
        name = f"closed-{axes_tag}"
        out[name] = Profile(name, fermionic_config(V=0.0), PulseConstraints(axes=axes), shots=None)
    out["smoke"] = Profile("smoke", fermionic_config(V=0.0, M=32), PulseConstraints(axes=("x", "y"), M=32),
                           n_train=64, n_test=16, shots=None, hidden=(8, 8),
                           train=TrainOptions(iterations=200, batch=32),
                           gd=GDOptions(iterations=150, restarts=4), ga=GAOptions(generations=60))
    return out


def load_profile(name):
    """A built-in profile name, or a path to a JSON profile file."""
    profiles = builtin_profiles()
    if name in profiles:
        return profiles[name]
    if name.endswith(".json"):
        try:
            with open(name) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read profile {name}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"profile {name}: invalid JSON: {exc}") from exc
        return Profile.from_dict(d)
    raise ConfigurationError(f"unknown profile {name!r} (not a built-in name or .json file)")


def with_overrides(profile, **kw):
    return replace(profile, **{k: v for k, v in kw.items() if v is not None})
