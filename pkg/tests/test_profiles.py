import json

import pytest

from graybox.profiles import Profile, builtin_profiles, load_profile, with_overrides
from graybox.pulses import ConfigurationError


def test_grid_of_builtins():
    p = builtin_profiles()
    for bath in ("fermionic", "bosonic"):
        for axes in ("single", "multi"):
            for shots in ("512", "1024", "inf"):
                assert f"{bath}-{axes}-{shots}" in p
                assert f"full-{bath}-{axes}-{shots}" in p
    assert p["fermionic-multi-1024-v0.2"].lab.V == 0.2
    assert p["bosonic-single-inf-v0.13"].shots is None
    assert p["bosonic-multi-512"].lab.dim == 40
    assert p["fermionic-multi-1024-v1-amax100"].pulses.A_max == 100.0
    full = p["full-fermionic-single-inf"]
    assert (full.n_train, full.n_test, full.hidden) == (9000, 1000, (100, 100))
    desk = p["fermionic-single-inf"]
    assert (desk.n_train, desk.n_test, desk.hidden, desk.pulses.M) == (1000, 200, (32, 32), 128)
    assert p["closed-multi"].lab.V == 0.0


def test_json_round_trip(tmp_path):
    prof = builtin_profiles()["bosonic-multi-1024-v0.65"]
    path = tmp_path / "p.json"
    path.write_text(json.dumps(prof.to_dict()))
    back = load_profile(str(path))
    assert back.to_dict() == prof.to_dict()


@pytest.mark.parametrize("mutate", [
    lambda d: d["pulses"].update(M=64),
    lambda d: d.update(shots=0),
    lambda d: d.update(hidden=[8]),
    lambda d: d["pulses"].update(sigma=0.1),
    lambda d: d["lab"].update(gamma_L=-1),
    lambda d: d.pop("lab"),
    lambda d: d["train"].update(bogus=1),
])
def test_invalid_profiles(tmp_path, mutate):
    d = builtin_profiles()["smoke"].to_dict()
    mutate(d)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ConfigurationError):
        load_profile(str(path))


def test_unknown_and_unreadable(tmp_path):
    with pytest.raises(ConfigurationError, match="unknown profile"):
        load_profile("no-such-profile")
    with pytest.raises(ConfigurationError):
        load_profile(str(tmp_path / "missing.json"))
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(ConfigurationError, match="invalid JSON"):
        load_profile(str(tmp_path / "x.json"))


def test_overrides():
    p = builtin_profiles()["smoke"]
    q = with_overrides(p, n_train=10, shots=None)
    assert q.n_train == 10 and q.n_test == p.n_test
    assert isinstance(q, Profile)
