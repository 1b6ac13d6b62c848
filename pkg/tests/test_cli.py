import pytest

from meshae.cli import build_parser, main
from meshae.evaluation import load_dataset, save_dataset
from meshae.mesh_core import read_obj, read_sparse, write_obj
from meshae.model import load_checkpoint
from meshae.shapes import fibonacci_sphere, icosphere
from meshae.synthetic import generate_synthetic_dataset

SUBCOMMANDS = ["decimate", "hierarchy", "train", "eval", "sweep", "sample", "pca", "benchmark", "synth"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    ds = generate_synthetic_dataset(fibonacci_sphere(300), num_sequences=2, frames_per_sequence=60, seed=2)
    save_dataset(root, ds)
    return root


@pytest.fixture(scope="module")
def checkpoint(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    cfg = out / "cfg.txt"
    cfg.write_text("epochs = 2\nbatch_size = 16\nw_kld = 0.001\n", encoding="utf-8")
    ckpt = out / "ckpt.bin"
    assert main(["train", "--config", str(cfg), "--data", str(data_dir), "--out", str(ckpt), "--figures"]) == 0
    return ckpt


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help_for_every_subcommand(command, capsys):
    assert main([command, "--help"]) == 0
    assert "usage:" in capsys.readouterr().out


def test_parser_lists_all_subcommands():
    text = build_parser().format_help()
    for command in SUBCOMMANDS:
        assert command in text


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["decimate", "x.obj"]) == 1  # missing --target
    assert main(["decimate", "x.obj", "--target", "ten", "--out", "y.obj"]) == 1
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_two(tmp_path, capsys):
    assert main(["decimate", str(tmp_path / "missing.obj"), "--target", "3", "--out", str(tmp_path / "o.obj")]) == 2
    mesh = tmp_path / "m.obj"
    write_obj(mesh, icosphere(1))
    assert main(["decimate", str(mesh), "--target", "500", "--out", str(tmp_path / "o.obj")]) == 2
    assert "meshae:" in capsys.readouterr().err


def test_decimate_writes_target_vertex_count(tmp_path):
    src = tmp_path / "in.obj"
    write_obj(src, icosphere(3))
    out = tmp_path / "coarse.obj"
    qd, qu = tmp_path / "qd.npz", tmp_path / "qu.npz"
    assert main(["decimate", str(src), "--target", "100", "--out", str(out), "--qd", str(qd), "--qu", str(qu)]) == 0
    assert read_obj(out).n_vertices == 100
    assert read_sparse(qd).shape == (100, 642)
    assert read_sparse(qu).shape == (642, 100)


def test_hierarchy_prints_sizes(tmp_path, capsys):
    src = tmp_path / "in.obj"
    write_obj(src, icosphere(3))
    assert main(["hierarchy", str(src), "--out", str(tmp_path / "h")]) == 0
    assert capsys.readouterr().out.split() == ["642", "161", "41", "11", "3"]


def test_synth_writes_dataset(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--subdivisions", "1", "--sequences", "3", "--frames", "4"]) == 0
    ds = load_dataset(tmp_path)
    assert len(ds.names) == 3 and len(ds) == 12
    assert (tmp_path / "bareteeth" / "0000.obj").exists()


def test_train_emits_checkpoint_and_history(checkpoint):
    model, h, header = load_checkpoint(checkpoint)
    assert model.variational and header["config"]["epochs"] == 2
    assert h.sizes == [300, 75, 19, 5, 2]
    lines = checkpoint.with_name("ckpt.bin.history.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("epoch,lr,") and len(lines) == 3
    assert checkpoint.with_name("ckpt.bin.history.png").exists()


def test_eval_and_pca(checkpoint, data_dir, tmp_path):
    assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data_dir), "--out", str(tmp_path / "e")]) == 0
    rows = (tmp_path / "e" / "errors.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "model,mean,std,median,max,frames"
    assert rows[1].startswith("mesh_autoencoder,") and rows[1].endswith(",120")
    assert main(["pca", "--data", str(data_dir), "--k", "8", "--out", str(tmp_path / "p")]) == 0
    row = (tmp_path / "p" / "errors.csv").read_text(encoding="utf-8").splitlines()[1]
    assert row.startswith("pca,") and row.endswith(",10")
    assert (tmp_path / "p" / "histogram_pca.csv").exists()


def test_sweep_and_sample(checkpoint, data_dir, tmp_path):
    mesh = data_dir / "bareteeth" / "0005.obj"
    assert main(["sweep", "--checkpoint", str(checkpoint), "--mesh", str(mesh), "--dim", "2",
                 "--out", str(tmp_path / "s")]) == 0
    assert len(list((tmp_path / "s").glob("*.obj"))) == 9
    assert main(["sweep", "--checkpoint", str(checkpoint), "--mesh", str(mesh), "--dim", "8",
                 "--out", str(tmp_path / "bad")]) == 2
    assert main(["sample", "--checkpoint", str(checkpoint), "--count", "3", "--out", str(tmp_path / "g")]) == 0
    assert len(list((tmp_path / "g").glob("*.obj"))) == 3


def test_benchmark_extrapolation_fold(data_dir, tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["benchmark", "--data", str(data_dir), "--mode", "extrapolation", "--hold", "bareteeth",
                 "--epochs", "1", "--out", str(out), "--no-figures"]) == 0
    assert capsys.readouterr().out.startswith("bareteeth: pca ")
    text = (out / "report.csv").read_text(encoding="utf-8")
    assert text.startswith("# mode=extrapolation held_out=bareteeth\n")
    assert ",8,60,60\n" in text


def test_benchmark_all_folds(data_dir, tmp_path):
    out = tmp_path / "b"
    assert main(["benchmark", "--data", str(data_dir), "--mode", "extrapolation", "--hold", "all",
                 "--epochs", "1", "--out", str(out), "--no-figures"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["bareteeth", "cheeks_in"]


def test_benchmark_argument_errors(data_dir, tmp_path):
    assert main(["benchmark", "--data", str(data_dir), "--mode", "extrapolation", "--out", str(tmp_path)]) == 1
    assert main(["benchmark", "--data", str(data_dir), "--mode", "extrapolation", "--hold", "nope",
                 "--epochs", "1", "--out", str(tmp_path)]) == 2
    assert main(["benchmark", "--data", str(data_dir), "--k", "5", "--epochs", "1", "--out", str(tmp_path)]) == 2
