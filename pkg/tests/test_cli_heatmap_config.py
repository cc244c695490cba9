import re

import numpy as np
import pytest

from netcut import cli, heatmap
from netcut.config import parse_config
from netcut.errors import ConfigError, FormatError
from netcut.training import EpochRecord, TrajectoryLog

BLOB_CFG = """# small blob run
dataset = blobs
blobs_n_per_class = 50
train_size = 160
n_layers = 6
epochs = 40
batch_size = 64
head_lr = 0.1
beta = 0.01
out_dir = out
"""


def _run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


# -- config -------------------------------------------------------------------

def test_config_defaults_and_types(tmp_path):
    cfg = parse_config("epochs = 3\nbeta = 1e-3\nseeds = 1, 2 3\nwidth = 16\n", tmp_path)
    assert cfg.train.epochs == 3 and cfg.train.beta == 1e-3
    assert cfg.seeds == (1, 2, 3) and cfg.width == 16
    assert cfg.dataset == "blobs" and cfg.arch == "chain"
    assert cfg.path("out") == tmp_path / "out"


@pytest.mark.parametrize("text", [
    "epochs 3\n",
    "epochs = three\n",
    "colour = red\n",
    "epochs = 3\nepochs = 4\n",
    "dataset = mnist\n",
    "dataset = blobs\ntext_train = a.csv\n",
    "arch = chain\ngraph_file = g.txt\n",
    "dataset = idx\n",
    "arch = graph\n",
    "beta = -1\n",
    "scheme = average\n",
    "input_scale = 0\n",
])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_builds_graph_arch(tmp_path):
    (tmp_path / "g.txt").write_text("nodes 3\nwidth 5\nedge 0 1\nedge 0 2\n")
    cfg = parse_config("arch = graph\ngraph_file = g.txt\n", tmp_path)
    arch = cfg.build_arch(4, 2)
    assert arch.n_nodes == 3 and arch.width == 5 and arch.kind == "dag"


def test_config_text_dataset(tmp_path):
    (tmp_path / "tr.csv").write_text("0,1,0\n1,0,1\n")
    cfg = parse_config("dataset = text\ntext_train = tr.csv\ninput_scale = 2\n", tmp_path)
    tr, te = cfg.load_data()
    assert te is None and tr.features.max() == 2.0


# -- heatmap ------------------------------------------------------------------

def _cells(svg):
    return {(int(h), int(e)): fill for h, e, fill in
            re.findall(r'data-head="(\d+)" data-epoch="(\d+)"[^>]*fill="(#[0-9a-f]{6})"', svg)}


def test_heatmap_shape_and_one_hot_row():
    w = np.tile([0.0, 1.0, 0.0], (5, 1))
    svg = heatmap.render(w)
    cells = _cells(svg)
    assert len(cells) == 15
    top = heatmap.color(1.0)
    assert all(cells[(2, e)] == top for e in range(1, 6))
    assert all(cells[(k, e)] == heatmap.color(0.0) for k in (1, 3) for e in range(1, 6))
    assert svg.startswith("<?xml") and 'version="1.1"' in svg
    assert "linearGradient" in svg and "1e-4" in svg


def test_heatmap_uniform_and_clamp():
    cells = _cells(heatmap.render(np.full((3, 4), 0.25)))
    assert set(cells.values()) == {heatmap.color(0.25)}
    assert heatmap.level(0.25) == pytest.approx((np.log10(0.25) + 4) / 4)
    assert heatmap.color(1e-9) == heatmap.color(1e-4) == heatmap.color(0.0)
    assert heatmap.level(1e-4) == 0.0 and heatmap.level(1.0) == 1.0


def test_heatmap_levels_are_monotone():
    levels = [heatmap.level(w) for w in np.logspace(-5, 0, 30)]
    assert levels == sorted(levels)


def test_heatmap_rejects_empty(tmp_path):
    with pytest.raises(FormatError):
        heatmap.render(np.zeros((0, 3)))
    TrajectoryLog().to_csv(tmp_path / "empty.csv")
    with pytest.raises(FormatError):
        heatmap.emit_heatmap(tmp_path / "empty.csv", tmp_path / "x.svg")


def test_emit_heatmap_from_csv(tmp_path):
    log = TrajectoryLog([EpochRecord(e, 1.0, 0.5, 0.5, np.array([0.7, 0.3]), np.ones(2))
                         for e in (1, 2)])
    log.to_csv(tmp_path / "t.csv")
    heatmap.emit_heatmap(tmp_path / "t.csv", tmp_path / "t.svg")
    assert len(_cells((tmp_path / "t.svg").read_text())) == 4


# -- cli ----------------------------------------------------------------------

def test_train_writes_all_artifacts(tmp_path, capsys):
    code, out, _ = _run(["train", _write(tmp_path, BLOB_CFG)], capsys)
    assert code == 0
    run = tmp_path / "out"
    for name in ("trajectory.csv", "model.netcut", "weights.svg", "summary.txt"):
        assert (run / name).is_file()
    m = re.fullmatch(r"chosen_head=(\d+) max_w=(\S+) test_acc=(\S+)\n", out)
    assert m
    final = TrajectoryLog.from_csv(run / "trajectory.csv").final
    assert int(m[1]) == int(np.argmax(final.w)) + 1
    assert float(m[2]) == final.w.max() and float(m[3]) == final.test_acc


def test_train_reruns_are_deterministic(tmp_path, capsys):
    cfg = _write(tmp_path, BLOB_CFG.replace("epochs = 40", "epochs = 3"))
    _run(["train", cfg], capsys)
    first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    _run(["train", cfg], capsys)
    second = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    assert first == second


def test_seed_sweep_gets_one_directory_per_seed(tmp_path, capsys):
    cfg = _write(tmp_path, BLOB_CFG.replace("epochs = 40", "epochs = 2") + "seeds = 4 5\n")
    code, out, _ = _run(["train", cfg], capsys)
    assert code == 0 and out.count("chosen_head=") == 2
    assert (tmp_path / "out" / "seed_4" / "model.netcut").is_file()
    assert (tmp_path / "out" / "seed_5" / "model.netcut").is_file()


def test_malformed_config_exits_1_without_artifacts(tmp_path, capsys):
    code, _, err = _run(["train", _write(tmp_path, "epochs: 3\nout_dir = out\n")], capsys)
    assert code == 1 and "error" in err
    assert not (tmp_path / "out").exists()
    assert _run(["train", tmp_path / "missing.cfg"], capsys)[0] == 1
    assert _run(["frobnicate"], capsys)[0] == 1


def test_prob_naive_overflow_exits_3(tmp_path, capsys):
    text = BLOB_CFG + "scheme = prob-naive\ninput_scale = 1000\n"
    code, out, _ = _run(["train", _write(tmp_path, text.replace("epochs = 40", "epochs = 30"))],
                        capsys)
    assert code == 3 and "nan_halt_epoch=" in out
    log = TrajectoryLog.from_csv(tmp_path / "out" / "trajectory.csv")
    assert log.nan_epoch == len(log.records) <= 30


def test_runtime_error_exits_2(tmp_path, capsys):
    text = BLOB_CFG + "init_scale = 1e200\n"
    code, _, err = _run(["train", _write(tmp_path, text)], capsys)
    assert code == 2 and "error" in err


def test_cut_and_eval(tmp_path, capsys):
    cfg = _write(tmp_path, BLOB_CFG)
    _run(["train", cfg], capsys)
    full, small = tmp_path / "out" / "model.netcut", tmp_path / "cut.netcut"
    code, out, _ = _run(["cut", full, small], capsys)
    assert code == 0
    before, after = map(int, re.search(r"params_before=(\d+) params_after=(\d+)", out).groups())
    assert before > after
    max_w = TrajectoryLog.from_csv(tmp_path / "out" / "trajectory.csv").final.w.max()
    acc = []
    for model in (full, small):
        code, out, _ = _run(["eval", model, cfg], capsys)
        assert code == 0
        acc.append(float(re.search(r"accuracy=(\S+)", out)[1]))
    assert max_w >= 0.99
    assert abs(acc[0] - acc[1]) <= 0.02


def test_cut_error_codes(tmp_path, capsys):
    assert _run(["cut", tmp_path / "nope", tmp_path / "x"], capsys)[0] == 1
    (tmp_path / "junk").write_bytes(b"not a model")
    assert _run(["cut", tmp_path / "junk", tmp_path / "x"], capsys)[0] == 2


def test_gen_graph_is_byte_identical(tmp_path, capsys):
    for name in ("a.txt", "b.txt"):
        assert _run(["gen-graph", tmp_path / name, "--nodes", 10, "--prob", 0.3, "--seed", 7],
                    capsys)[0] == 0
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_bench_writes_report(tmp_path, capsys):
    code, out, _ = _run(["bench", tmp_path / "b.csv", "--width", 16, "--depths", "3-5",
                         "--repeats", 30, "--warmup", 5], capsys)
    assert code == 0 and "r2=" in out
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines] == ["depth", "3", "4", "5", "fit"]


def test_bench_on_model_files(tmp_path, capsys):
    _run(["train", _write(tmp_path, BLOB_CFG.replace("epochs = 40", "epochs = 1"))], capsys)
    code, _, _ = _run(["bench", tmp_path / "b.csv", "--model", tmp_path / "out" / "model.netcut",
                       "--repeats", 30, "--warmup", 5], capsys)
    assert code == 0
    assert (tmp_path / "b.csv").read_text().splitlines()[1].split(",")[1] == "1"


def test_analyze_writes_reports(tmp_path, capsys):
    cfg = _write(tmp_path, BLOB_CFG.replace("epochs = 40", "epochs = 2"))
    code, out, _ = _run(["analyze", cfg, "--epochs", "0,2", "--batch", 32], capsys)
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "out" / "analysis").iterdir()) == [
        "rho_full.csv", "rho_matrix_epoch0.csv", "rho_matrix_epoch2.csv"]
    errs = [float(v) for v in re.findall(r"decomposition_error=(\S+)", out)]
    assert len(errs) == 2 and max(errs) <= 1e-8


def test_heatmap_command(tmp_path, capsys):
    TrajectoryLog().to_csv(tmp_path / "empty.csv")
    assert _run(["heatmap", tmp_path / "empty.csv", tmp_path / "x.svg"], capsys)[0] == 2
    assert _run(["heatmap", tmp_path / "none.csv", tmp_path / "x.svg"], capsys)[0] == 1
