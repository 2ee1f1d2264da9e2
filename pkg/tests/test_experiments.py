import numpy as np
import pytest

from ranloop.cli import main as cli_main
from ranloop.dataset import read_collect_csv
from ranloop.experiments import (
    BundleValidationError,
    ExperimentSpec,
    emit_summary,
    load_bundle,
    pearson,
    run_collect,
    run_eval,
    run_train,
    summarize_kpm_logs,
)
from ranloop.ran_sim import SimConfig


def tiny_config(**kwargs):
    defaults = dict(n_bs=1, rng_seed=3)
    defaults.update(kwargs)
    return SimConfig(**defaults)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small end-to-end pipeline shared by the tests in this module."""
    root = tmp_path_factory.mktemp("exp")
    config = tiny_config(n_bs=2)
    csv_paths = run_collect(config, seeds=[21, 22], duration_s=60, out_dir=root / "collect")
    bundle = run_train(
        csv_paths, root / "bundle", seed=5, ae_epochs=60, q_epochs=5
    )
    spec = ExperimentSpec(
        config=config, seeds=[31, 32], duration_s=15, out_dir=str(root / "results")
    )
    results = run_eval(spec, bundle)
    return dict(
        root=root, config=config, csv_paths=csv_paths, bundle=bundle,
        spec=spec, results=results,
    )


# -- collect -------------------------------------------------------------------


def test_collect_row_count_matches_windows(tmp_path):
    # 60 s at 250 ms windows = 240 windows x 3 slices per BS file
    config = tiny_config()
    paths = run_collect(config, seeds=[9], duration_s=60, out_dir=tmp_path)
    assert len(paths) == 1
    rows = read_collect_csv(paths[0])
    assert len(rows) == 240 * 3


def test_collect_same_seed_identical_files(tmp_path):
    config = tiny_config()
    (a,) = run_collect(config, seeds=[9], duration_s=20, out_dir=tmp_path / "a")
    (b,) = run_collect(config, seeds=[9], duration_s=20, out_dir=tmp_path / "b")
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() == fb.read()


def test_collect_seven_bs_campaign_writes_seven_files(tmp_path):
    config = SimConfig(n_bs=7, rng_seed=4)
    paths = run_collect(config, seeds=[5], duration_s=5, out_dir=tmp_path)
    assert len(paths) == 7
    names = sorted(p.rsplit("/", 1)[-1] for p in paths)
    assert names == [f"collect_bs{i}.csv" for i in range(1, 8)]


def test_collect_actions_cover_the_space(workspace):
    rows = []
    for path in workspace["csv_paths"]:
        rows.extend(read_collect_csv(path))
    deltas = {r.prb_delta for r in rows}
    policies = {r.policy for r in rows}
    assert deltas == {-2, 0, 2}
    assert policies == {"RR", "WF", "PF"}


# -- train ----------------------------------------------------------------------


def test_train_same_inputs_byte_identical_bundles(tmp_path, workspace):
    csv_paths = workspace["csv_paths"]
    run_train(csv_paths, tmp_path / "b1", seed=5, ae_epochs=60, q_epochs=5)
    run_train(csv_paths, tmp_path / "b2", seed=5, ae_epochs=60, q_epochs=5)
    names = sorted(p.name for p in (tmp_path / "b1").iterdir())
    assert "autoencoder.txt" in names and "qtable_embb.txt" in names
    for name in names:
        assert (tmp_path / "b1" / name).read_bytes() == (
            tmp_path / "b2" / name
        ).read_bytes()


def test_train_rejects_corrupt_csv(tmp_path):
    bad = tmp_path / "collect_bs1.csv"
    bad.write_text("not,a,valid,collect,file\n1,2,3\n")
    with pytest.raises(ValueError):
        run_train([str(bad)], tmp_path / "bundle", seed=1)


def test_train_validation_gate_blocks_export(tmp_path, workspace, monkeypatch):
    import ranloop.experiments as ex

    monkeypatch.setattr(
        ex,
        "validate_q_machinery",
        lambda **kw: {"match": False, "greedy_policy": [], "oracle_policy": []},
    )
    with pytest.raises(BundleValidationError, match="toy_mdp_oracle_match"):
        run_train(
            workspace["csv_paths"], tmp_path / "bundle", seed=5, ae_epochs=5, q_epochs=1
        )
    assert not (tmp_path / "bundle").exists()


def test_bundle_round_trip(workspace):
    bundle = workspace["bundle"]
    loaded = load_bundle(workspace["root"] / "bundle")
    assert loaded.ae.sizes == bundle.ae.sizes
    for s in ("embb", "mtc", "urllc"):
        assert np.array_equal(loaded.tables[s].values, bundle.tables[s].values)
        assert np.array_equal(loaded.ranges[s].mins, bundle.ranges[s].mins)
    validation = (workspace["root"] / "bundle" / "validation.txt").read_text()
    assert "check toy_mdp_oracle_match PASS" in validation


def test_fresh_tables_are_independent_copies(workspace):
    bundle = workspace["bundle"]
    fresh = bundle.fresh_tables()
    fresh["embb"].values[0, 0] += 99.0
    assert bundle.tables["embb"].values[0, 0] != fresh["embb"].values[0, 0]


# -- eval -----------------------------------------------------------------------


def test_eval_matrix_runs_clean(workspace):
    results = workspace["results"]
    assert set(results) == {
        (m, t) for m in ("frozen", "finetune") for t in ("slice_based", "uniform")
    }
    for cell in results.values():
        for entry in cell.values():
            assert entry["dropped"] == 0
            assert entry["audit_failures"] == 0
            summary = entry["summary"]
            assert summary.windows == 60 * 2  # 15 s at 250 ms, 2 base stations
            for s in ("embb", "mtc", "urllc"):
                assert summary.slice_stats[s]["mean_throughput_mbps"] > 0


def test_eval_writes_cell_outputs(workspace):
    root = workspace["root"]
    for cell in ("cell_frozen_slice", "cell_finetune_uniform"):
        cell_dir = root / "results" / cell
        assert (cell_dir / "summary_slices.csv").exists()
        assert (cell_dir / "summary_runs.csv").exists()
        assert (cell_dir / "scatter.csv").exists()
        runs = (cell_dir / "summary_runs.csv").read_text().strip().splitlines()
        assert len(runs) == 1 + 2  # header + 2 seeds


def test_frozen_agent_never_mutates_tables(workspace):
    from ranloop.orchestrator import run_lockstep
    from ranloop.drl_agent import SliceControlAgent

    bundle = workspace["bundle"]
    config = workspace["config"]
    tables = bundle.fresh_tables()
    before_values = {s: t.values.copy() for s, t in tables.items()}
    before_visits = {s: t.visits.copy() for s, t in tables.items()}

    def factory(bs_id, bs_index):
        return SliceControlAgent(
            bs_id, bundle.ae, bundle.ranges, tables, config.total_prbs,
            mode="frozen", seed=(1, bs_index),
        )

    run_lockstep(config, 10, factory, out_dir=None)
    for s in tables:
        assert np.array_equal(tables[s].values, before_values[s])
        assert np.array_equal(tables[s].visits, before_visits[s])


def test_finetune_agent_updates_tables(workspace):
    from ranloop.orchestrator import run_lockstep
    from ranloop.drl_agent import SliceControlAgent

    bundle = workspace["bundle"]
    config = workspace["config"]
    tables = bundle.fresh_tables()
    before = sum(t.visits.sum() for t in tables.values())

    def factory(bs_id, bs_index):
        return SliceControlAgent(
            bs_id, bundle.ae, bundle.ranges, tables, config.total_prbs,
            mode="finetune", seed=(1, bs_index),
        )

    run_lockstep(config, 10, factory, out_dir=None)
    assert sum(t.visits.sum() for t in tables.values()) > before


# -- report ----------------------------------------------------------------------


def test_pearson_basics():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == pytest.approx(-1.0, abs=1e-9)
    assert pearson([1, 1, 1], [1, 2, 3]) is None  # zero variance
    assert pearson([1], [2]) is None


def test_emit_summary_outputs_and_purity(workspace):
    root = workspace["root"]
    report = emit_summary(root / "results")
    report_dir = root / "results" / "report"
    first = {
        p.name: p.read_bytes() for p in sorted(report_dir.iterdir())
    }
    assert "comparison.txt" in first
    assert "correlations.csv" in first
    assert any(name.startswith("scatter_") for name in first)
    assert len(report["cells"]) == 4

    # recomputing from the same logs yields identical bytes
    emit_summary(root / "results")
    second = {p.name: p.read_bytes() for p in sorted(report_dir.iterdir())}
    assert first == second


def test_emit_summary_requires_eval_outputs(tmp_path):
    with pytest.raises(FileNotFoundError):
        emit_summary(tmp_path)


def test_summary_handles_constant_buffer_column(tmp_path, workspace):
    # constant (thr, buffer) pairs: correlation must come out undefined
    from ranloop.dataset import KpmCsvWriter
    from ranloop.e2_wire import KpmRecord

    writer = KpmCsvWriter(tmp_path / "kpm_bs1.csv")
    records = [
        KpmRecord(250 * (i + 1), "bs1", "embb", 5.0, 10, 100, 36, 6.0)
        for i in range(10)
    ]
    writer.append(records)
    writer.close()
    summary = summarize_kpm_logs([str(tmp_path / "kpm_bs1.csv")], workspace["bundle"].ranges)
    thr = [p[0] for p in summary.pairs["embb"]]
    buf = [p[1] for p in summary.pairs["embb"]]
    assert pearson(thr, buf) is None


# -- CLI ---------------------------------------------------------------------------


def test_cli_end_to_end(tmp_path, capsys):
    scenario = tmp_path / "scenario.cfg"
    assert cli_main(["scenario", "--out", str(scenario)]) == 0
    text = scenario.read_text()
    scenario.write_text(text.replace("n_bs = 7", "n_bs = 1"))

    assert (
        cli_main(
            [
                "collect",
                "--config", str(scenario),
                "--seed", "41",
                "--duration", "40",
                "--out", str(tmp_path / "data"),
            ]
        )
        == 0
    )
    assert (
        cli_main(
            [
                "train",
                "--data", str(tmp_path / "data"),
                "--out", str(tmp_path / "bundle"),
                "--seed", "3",
                "--ae-epochs", "40",
                "--q-epochs", "3",
            ]
        )
        == 0
    )
    assert (
        cli_main(
            [
                "eval",
                "--config", str(scenario),
                "--bundle", str(tmp_path / "bundle"),
                "--seed", "51",
                "--duration", "10",
                "--out", str(tmp_path / "results"),
            ]
        )
        == 0
    )
    assert cli_main(["report", "--run", str(tmp_path / "results")]) == 0
    out = capsys.readouterr().out
    assert "cell_frozen_slice" in out


def test_cli_train_fails_without_data(tmp_path):
    assert (
        cli_main(
            ["train", "--data", str(tmp_path), "--out", str(tmp_path / "bundle")]
        )
        == 1
    )
