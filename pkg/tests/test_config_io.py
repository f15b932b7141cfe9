import io
from dataclasses import fields
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lakesim.config import ConfigError, RunConfig, help_text, load_config, parse_config, serialize
from lakesim.dynamics import DiagnosticsRow
from lakesim.io import (
    CSV_COLUMNS,
    CSV_VERSION_LINE,
    SNAPSHOT_MAGIC,
    SnapshotError,
    format_rows,
    read_diagnostics_csv,
    read_snapshot,
    write_snapshot,
    write_table_csv,
)

GOLDEN = Path(__file__).resolve().parents[1] / "default.cfg"
MINIMAL = "n = 16\nT = 0.01\ndt = 0.001\nseed = 7\n"


# -- config -------------------------------------------------------------------------


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert (cfg.n, cfg.T, cfg.dt, cfg.seed) == (16, 0.01, 0.001, 7)
    defaults = {f.name: f.default for f in fields(RunConfig)}
    for key in ("k", "delta", "integrator", "noise_m", "R", "n_max", "paths"):
        assert getattr(cfg, key) == defaults[key]


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\n" + MINIMAL.replace("seed = 7", "seed = 7   # trailing"))
    assert cfg.seed == 7


@pytest.mark.parametrize("text,key", [
    (MINIMAL.replace("n = 16", "n = 100"), "n"),
    (MINIMAL.replace("n = 16", "n = 4"), "n"),
    (MINIMAL.replace("dt = 0.001", "dt = 0.003"), "T"),
    (MINIMAL.replace("dt = 0.001", "dt = -1"), "dt"),
    (MINIMAL + "delta = -0.5\n", "delta"),
    (MINIMAL + "bath_amp = 0.995\n", "bath_amp"),
    (MINIMAL + "integrator = rk4\n", "integrator"),
    (MINIMAL + "k = 1\n", "k"),
    (MINIMAL + "tol = 2\n", "tol"),
    (MINIMAL + "n_max = 0\n", "n_max"),
    (MINIMAL + "paths = 0\n", "paths"),
    (MINIMAL + "noise_m = many\n", "noise_m"),
    (MINIMAL.replace("seed = 7", "seed = -1"), "seed"),
])
def test_invalid_values_name_the_key(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key
    assert str(exc.value).startswith(key)


def test_structural_errors():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(MINIMAL + "viscosity = 1\n")
    with pytest.raises(ConfigError, match="more than once"):
        parse_config(MINIMAL + "n = 32\n")
    with pytest.raises(ConfigError) as exc:
        parse_config("n = 16\nT = 0.01\ndt = 0.001\n")
    assert exc.value.key == "seed"
    with pytest.raises(ConfigError, match="key = value"):
        parse_config(MINIMAL + "just words\n")


def test_golden_config_round_trips():
    cfg = load_config(GOLDEN)
    assert cfg.n == 32 and cfg.integrator == "strat_heun"
    assert parse_config(serialize(cfg)) == cfg


def test_overrides():
    cfg = parse_config(MINIMAL)
    assert cfg.with_overrides(seed=9, out=None).seed == 9
    with pytest.raises(ConfigError):
        cfg.with_overrides(n=12)


def test_help_lists_every_key():
    text = help_text()
    for f in fields(RunConfig):
        assert f.name in text


configs = st.builds(
    RunConfig,
    n=st.sampled_from([8, 16, 32, 64]),
    T=st.integers(0, 50).map(lambda s: s * 1e-3),
    dt=st.just(1e-3),
    seed=st.integers(0, 2**64 - 1),
    delta=st.floats(0, 2),
    bath_amp=st.floats(-0.4, 0.4),
    noise_m=st.integers(0, 12),
    noise_scale=st.floats(0, 1),
    R=st.floats(1e-3, 1e6),
    integrator=st.sampled_from(["ito_em", "strat_heun"]),
    initial=st.sampled_from(["mixed", "single_mode", "taylor_green", "zero"]),
    epsilon=st.floats(0, 1),
)


@given(configs)
def test_serialize_parse_round_trip(cfg):
    assert parse_config(serialize(cfg)) == cfg


# -- snapshots --------------------------------------------------------------------------


def test_snapshot_round_trip_is_bitwise(tmp_path):
    fields_ = np.random.default_rng(0).standard_normal((3, 16, 16))
    fields_[0, 0, 0] = -0.0
    write_snapshot(tmp_path / "s.lsf", fields_, 0.125)
    t, back = read_snapshot(tmp_path / "s.lsf")
    assert t == 0.125
    assert back.tobytes() == fields_.tobytes()


def test_snapshot_single_field(tmp_path):
    f = np.arange(64.0).reshape(8, 8)
    write_snapshot(tmp_path / "s.lsf", f, 0.0)
    _, back = read_snapshot(tmp_path / "s.lsf")
    assert back.shape == (1, 8, 8) and np.array_equal(back[0], f)


def test_snapshot_errors(tmp_path):
    write_snapshot(tmp_path / "s.lsf", np.ones((2, 8, 8)), 1.0)
    raw = (tmp_path / "s.lsf").read_bytes()
    assert raw.startswith(SNAPSHOT_MAGIC)
    (tmp_path / "magic.lsf").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(SnapshotError, match="bad magic"):
        read_snapshot(tmp_path / "magic.lsf")
    (tmp_path / "short.lsf").write_bytes(raw[:-1])
    with pytest.raises(SnapshotError, match="truncated"):
        read_snapshot(tmp_path / "short.lsf")
    (tmp_path / "head.lsf").write_bytes(raw[:12])
    with pytest.raises(SnapshotError, match="truncated"):
        read_snapshot(tmp_path / "head.lsf")
    with pytest.raises(SnapshotError, match="shape"):
        write_snapshot(tmp_path / "bad.lsf", np.ones((2, 8, 4)), 0.0)


# -- CSV ---------------------------------------------------------------------------------


def rows():
    return [DiagnosticsRow(0.0, 1.0, 2.0, 3.0, 1e-15, 1.0, False),
            DiagnosticsRow(0.001, 0.1 + 0.2, 2.5, 3.5, 2e-15, 0.5, True)]


def test_csv_format():
    text = format_rows(rows())
    lines = text.splitlines()
    assert lines[0] == CSV_VERSION_LINE
    assert lines[1] == ",".join(CSV_COLUMNS)
    assert lines[2].endswith(",0") and lines[3].endswith(",1")
    assert text.endswith("\n") and len(lines) == 4


def test_csv_round_trip_is_exact():
    data = read_diagnostics_csv(format_rows(rows()))
    assert data["l2b"][1] == 0.1 + 0.2
    assert list(data["stopped"]) == [0.0, 1.0]
    with pytest.raises(ValueError, match="version"):
        read_diagnostics_csv("t,l2b\n")


def test_table_csv():
    fh = io.StringIO()
    write_table_csv(fh, ("n", "gap"), [(1, 0.5), (2, 0.25)])
    assert fh.getvalue() == f"{CSV_VERSION_LINE}\nn,gap\n1,0.5\n2,0.25\n"
