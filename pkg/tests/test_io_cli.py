import copy
import json
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from lris import cli
from lris.io import load_config, parse_config, run_to_directory
from lris.lowrank import exact_eig, save_spectrum
from lris.problems import make_problem
from lris.samplers import ConfigError
from lris.store import NA, ChainRecord, ChainStore

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = {
    "problem": {"kind": "shaw", "params": {"n": 16}, "noise_level": 0.01, "noise_seed": 0},
    "prior": {"kind": "laplacian", "shift": 0.01},
    "sampler": {"name": "lris_gibbs", "hyperprior": {"a_mu": 0.1, "b_mu": 0.1, "a_sigma": 0.1, "b_sigma": 0.1}},
    "lowrank": {"method": "exact", "rank": 5},
    "run": {"iterations": 100, "burn_in": 20, "chains": 1, "seed": 7},
    "theory": {"enabled": True},
}


def _write(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


def _edit(**changes):
    raw = copy.deepcopy(BASE)
    for dotted, value in changes.items():
        block, key = dotted.split("__")
        raw[block][key] = value
    return raw


# -- config parsing ---------------------------------------------------------------


@pytest.mark.parametrize("changes, field", [
    ({"sampler__name": "hmc"}, "sampler.name"),
    ({"problem__kind": "radon"}, "problem.kind"),
    ({"run__iterations": "many"}, "run.iterations"),
    ({"run__stride": 0}, "run.stride"),
    ({"lowrank__method": "lanczos"}, "lowrank.method"),
    ({"lowrank__bogus": 1}, "lowrank.bogus"),
    ({"problem__noise_level": -0.1}, "problem.noise_level"),
])
def test_schema_errors_name_field(changes, field):
    with pytest.raises(ConfigError) as info:
        parse_config(_edit(**changes))
    assert info.value.path == field


def test_missing_and_conditional_fields():
    raw = copy.deepcopy(BASE)
    del raw["run"]
    with pytest.raises(ConfigError, match="^run"):
        parse_config(raw)
    raw = copy.deepcopy(BASE)
    del raw["lowrank"]["rank"]
    with pytest.raises(ConfigError, match="lowrank.rank"):
        parse_config(raw)
    with pytest.raises(ConfigError, match="lowrank.spectrum_file"):
        parse_config(_edit(lowrank__method="file"))
    with pytest.raises(ConfigError, match="hyperprior.a_mu"):
        parse_config(_edit(sampler__hyperprior={"a_mu": -1.0}))
    with pytest.raises(ConfigError, match="unknown block"):
        parse_config({**BASE, "extra": {}})


def test_shipped_configs_parse():
    paths = sorted(CONFIGS.glob("*.yaml"))
    assert paths
    for path in paths:
        spec = load_config(path)
        assert spec.run.iterations > spec.run.burn_in


# -- store ---------------------------------------------------------------------


@st.composite
def stores(draw):
    n = draw(st.integers(1, 4))
    chains = []
    floats = st.floats(allow_nan=False, allow_infinity=False, width=64)
    rows = draw(st.integers(0, 6))  # samplers keep the same rows for every chain
    for c in range(draw(st.integers(1, 3))):
        rec = ChainRecord.allocate(c, rows, n, store_x=True)
        rec.iters[:] = np.arange(1, rows + 1) * draw(st.integers(1, 3))
        for name in ("hyper1", "hyper2", "logw"):
            getattr(rec, name)[:] = draw(st.lists(floats, min_size=rows, max_size=rows))
        rec.x_accept[:] = draw(st.lists(st.integers(0, 1), min_size=rows, max_size=rows))
        rec.hyper_accept[:] = draw(st.lists(st.sampled_from([NA, 0, 1]), min_size=rows, max_size=rows))
        rec.x[:] = np.reshape(draw(st.lists(st.floats(-1e6, 1e6), min_size=rows * n, max_size=rows * n)), (rows, n))
        rec.x_sumsq[:] = draw(st.lists(st.floats(0, 1e6), min_size=n, max_size=n))
        rec.n_moment = 1
        rec.x_sum[:] = draw(st.lists(st.floats(-1e6, 1e6), min_size=n, max_size=n))
        rec.rank_schedule = [(0, 3), (100, 5)]
        rec.timings_ns = {"x_step": draw(st.integers(0, 10**12))}
        rec.seed_entropy = [7, c]
        chains.append(rec)
    return ChainStore(chains, ("mu", "sigma"), 0, {"sampler": "lris_gibbs"})


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(store=stores())
def test_store_round_trip(tmp_path, store):
    out = tmp_path / "s"
    if out.exists():
        shutil.rmtree(out)
    out.mkdir()
    store.save(out)
    back = ChainStore.load(out)
    assert back.hyper_names == store.hyper_names and back.meta == store.meta
    for a, b in zip(store.chains, back.chains):
        for name in ("iters", "hyper1", "hyper2", "x_accept", "hyper_accept", "logw", "x", "x_sum", "x_sumsq"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        assert a.rank_schedule == b.rank_schedule and a.timings_ns == b.timings_ns


# -- end-to-end runs ----------------------------------------------------------------


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    assert cli.main(["run", str(CONFIGS / "shaw16_smoke.yaml"), "--output-dir", str(out)]) == 0
    return out


def test_run_writes_declared_files(smoke_run):
    summary = json.loads((smoke_run / "summary.json").read_text())
    for name in summary["files"]:
        assert (smoke_run / name).exists()
    assert {"chains.csv", "x_mean.bin", "summary.json", "spectrum.bin"} <= set(summary["files"])
    header = (smoke_run / "chains.csv").read_text().splitlines()[0]
    assert header == "chain,iter,mu_or_kappa2,sigma_or_upsilon,x_accept,hyper_accept,logw"
    assert summary["theory"]["N"][0] >= 1


def test_summary_acceptance_equals_flags(smoke_run):
    summary = json.loads((smoke_run / "summary.json").read_text())
    store = ChainStore.load(smoke_run)
    flags = np.concatenate(store.series("x_accept"))
    assert summary["acceptance_rate"] == float(np.mean(flags))
    assert all(v >= 0 for v in summary["timings_ns"]["total"].values())


@settings(max_examples=8, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(seed=st.integers(0, 10**6), burn=st.integers(0, 30), stride=st.integers(1, 4),
       sampler=st.sampled_from(["lris_gibbs", "block_gibbs", "proper_jeffreys", "ncp"]))
def test_run_invariants_property(tmp_path, seed, burn, stride, sampler):
    raw = _edit(run__seed=seed, run__burn_in=burn, run__stride=stride, sampler__name=sampler,
                run__iterations=60, theory__enabled=False)
    if sampler == "proper_jeffreys":
        raw["sampler"]["hyperprior"] = {}
    spec = parse_config(raw)
    out = run_to_directory(spec, tmp_path / f"o{seed}_{burn}_{stride}_{sampler}")
    summary = json.loads((out / "summary.json").read_text())
    store = ChainStore.load(out)
    rec = store.chains[0]
    assert rec.iters.tolist() == [t for t in range(1, 61) if t > burn and (t - burn) % stride == 0]
    assert summary["acceptance_rate"] == float(np.mean(np.concatenate(store.series("x_accept"))))
    assert np.all(rec.hyper1 > 0) and np.all(rec.hyper2 > 0)
    assert all(v >= 0 for v in rec.timings_ns.values())
    shutil.rmtree(out)


def test_failed_run_leaves_nothing(tmp_path):
    raw = _edit(lowrank__method="file", lowrank__spectrum_file=str(tmp_path / "missing.bin"))
    out = tmp_path / "out"
    assert cli.main(["run", str(_write(tmp_path, raw)), "--output-dir", str(out)]) == 1
    assert not out.exists()
    assert [p.name for p in tmp_path.iterdir()] == ["cfg.yaml"]


def test_cli_unknown_sampler(tmp_path, capsys):
    path = _write(tmp_path, _edit(sampler__name="hmc"))
    assert cli.main(["run", str(path)]) != 0
    assert "sampler.name" in capsys.readouterr().err


def test_cli_seed_override_changes_chains(tmp_path):
    path = _write(tmp_path, _edit(run__iterations=40))
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cli.main(["run", str(path), "--output-dir", str(a)]) == 0
    assert cli.main(["run", str(path), "--output-dir", str(b), "--seed-override", "8"]) == 0
    assert cli.main(["run", str(path), "--output-dir", str(c), "--threads", "2"]) == 0
    assert (a / "chains.csv").read_bytes() != (b / "chains.csv").read_bytes()
    assert (a / "chains.csv").read_bytes() == (c / "chains.csv").read_bytes()


def test_cli_verify_pass_and_corrupted_spectrum(tmp_path, capsys):
    assert cli.main(["verify", str(CONFIGS / "shaw32_verify.yaml")]) == 0
    assert "verify: all checks passed" in capsys.readouterr().out
    p = make_problem("shaw", {"n": 32}, noise_level=0.01, noise_seed=0)
    spec = exact_eig(p.A, p.L).truncate(5)
    good = tmp_path / "good.bin"
    save_spectrum(spec, good)
    bad = tmp_path / "bad.bin"
    vals = spec.values.copy()
    vals[2] *= 1.05
    save_spectrum(type(spec)(spec.vectors, vals), bad)
    raw = yaml.safe_load((CONFIGS / "shaw32_verify.yaml").read_text())
    raw["lowrank"] = {"method": "file", "spectrum_file": "good.bin"}
    assert cli.main(["verify", str(_write(tmp_path, raw))]) == 0
    raw["lowrank"]["spectrum_file"] = "bad.bin"
    capsys.readouterr()
    assert cli.main(["verify", str(_write(tmp_path, raw, "bad.yaml"))]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] ratio_equality" in out and "verify: FAILED" in out
