import csv
import json

import numpy as np
import pytest

from sefc import matrix_io
from sefc.cli import ABLATION_ROWS, main
from sefc.embedding import load_embedding_table
from sefc.evaluation import rescore_rows

SMALL = ["model.d_model=8", "model.d_llm=8", "model.vocab_size=16", "model.n_prototypes=4", "tscc.k_top=2",
         "model.ffn_width=16", "adapter.rank=2", "adapter.hidden=4"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, (json.loads(out.out) if out.out.strip() else None), out.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "sine.csv"
    assert main(["synthetic", "--out", str(data), "--length", "600", "--seed", "3"]) == 0
    conf = root / "small.conf"
    conf.write_text("\n".join([
        "data.context_length = 32", "data.horizon = 8", "data.patch_len = 8", "data.stride = 2",
        "model.d_model = 16", "model.d_llm = 16", "model.vocab_size = 32", "model.n_prototypes = 8",
        "model.align_heads = 2", "model.layers = 1", "model.heads = 2", "model.ffn_width = 32",
        "model.max_positions = 4", "tscc.k_top = 3", "train.max_epochs = 2", "train.batch_size = 16",
        "eval.horizons = 8, 20", "eval.seasonal_period = 24",
    ]) + "\n")
    return root, data, conf


@pytest.fixture(scope="module")
def trained(workspace):
    root, data, conf = workspace
    out = root / "train"
    assert main(["train", "--config", str(conf), "--data", str(data), "--out", str(out)]) == 0
    return out


def test_train_outputs_and_reproducible(capsys, workspace, trained):
    root, data, conf = workspace
    for name in ("config.resolved", "checkpoint.selm", "report.json"):
        assert (trained / name).exists()
    first = json.loads((trained / "report.json").read_text())
    code, again, _ = run(capsys, "train", "--config", conf, "--data", data, "--out", root / "again")
    assert code == 0 and again["fingerprint"] == first["fingerprint"]
    assert first["test"]["n_windows"] > 0


def test_evaluate_matches_offline_recomputation(capsys, workspace, trained):
    root, data, _ = workspace
    out = root / "eval"
    code, payload, _ = run(capsys, "evaluate", "--checkpoint", trained / "checkpoint.selm", "--data", data,
                           "--horizons", "8,20", "--out", out)
    assert code == 0 and [r["horizon"] for r in payload["reports"]] == [8, 20]
    with open(out / "forecasts.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    with open(out / "metrics.csv") as fh:
        metrics = {int(r["horizon"]): r for r in csv.DictReader(fh)}
    for h in (8, 20):
        again = rescore_rows([r for r in rows if int(r[0]) == h], 24)
        for key in ("mse", "mae", "smape", "mase", "owa"):
            assert again[key] == pytest.approx(float(metrics[h][key]), rel=1e-12)


def test_evaluate_rejects_bad_horizon(capsys, workspace, trained):
    root, data, _ = workspace
    code, _, err = run(capsys, "evaluate", "--checkpoint", trained / "checkpoint.selm", "--data", data,
                       "--horizons", "0", "--out", root / "bad")
    assert code == 2 and "horizon" in err


def test_export_embeddings(capsys, workspace, trained):
    root, data, _ = workspace
    code, payload, _ = run(capsys, "export-embeddings", "--checkpoint", trained / "checkpoint.selm",
                           "--data", data, "--out", root / "emb", "--batch", 3)
    assert code == 0
    assert payload["files"]["GA"]["shape"] == [3 * 4, 16]
    M = matrix_io.read_matrix(root / "emb" / "M.selm")
    assert np.all(np.abs(M) <= 1 + 1e-6)
    for name in ("GA", "GC", "M", "l2"):
        table = load_embedding_table(root / "emb" / f"{name}.selm")
        assert table.weight.shape == tuple(payload["files"][name]["shape"])


def test_ablate_structure_and_parity(capsys, workspace):
    root, data, conf = workspace
    code, payload, _ = run(capsys, "ablate", "--config", conf, "--data", data, "--horizons", "8,20",
                           "--out", root / "ablate", "--set", "train.max_epochs=1")
    assert code == 0 and payload["batch_parity"]
    pairs = [(r["configuration"], r["horizon"]) for r in payload["rows"]]
    assert pairs == [(name, h) for name, _ in ABLATION_ROWS for h in (8, 20)]
    base = [r for r in payload["rows"] if r["configuration"] == "baseline"]
    assert all(not r["use_tscc"] and not r["use_adapter"] for r in base)


def test_gradcheck_pass_and_fault(capsys):
    args = ["gradcheck"] + [a for kv in SMALL for a in ("--set", kv)]
    code, payload, _ = run(capsys, *args)
    assert code == 0 and payload["passed"] and payload["seconds"] < 60
    code, payload, err = run(capsys, *args, "--fault", "gelu")
    assert code == 5 and payload["failing_ops"] == ["gelu"]
    assert "gelu" in err and payload["worst_parameter"] in err


def test_gradcheck_enforces_caps(capsys):
    code, _, err = run(capsys, "gradcheck", "--set", "model.d_model=64", "--set", "model.d_llm=64")
    assert code == 2


def test_error_exit_codes(capsys, workspace, tmp_path):
    _, data, conf = workspace
    bad = tmp_path / "bad.conf"
    bad.write_text("model.widht = 4\n")
    code, _, err = run(capsys, "train", "--config", bad, "--data", data, "--out", tmp_path / "o")
    assert code == 2 and "model.widht" in err
    code, _, err = run(capsys, "train", "--config", conf, "--data", tmp_path / "missing.csv", "--out", tmp_path / "o")
    assert code == 3
    code, _, _ = run(capsys, "evaluate", "--checkpoint", tmp_path / "nothing.selm", "--data", data)
    assert code == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(capsys, workspace, tmp_path):
    _, data, conf = workspace
    code, _, err = run(capsys, "train", "--config", conf, "--data", data, "--out", tmp_path / "o",
                       "--set", "train.lr=1e300", "--set", "train.clip_norm=1e300")
    assert code == 4 and "diverged" in err
