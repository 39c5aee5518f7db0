import pytest

from scripthmm.cli import main, read_config
from scripthmm.files import load_model, read_corpus


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def corpus_file(tmp_path, capsys):
    path = tmp_path / "corpus.txt"
    assert run(capsys, "generate", "--builtin", "six-state", "--n", 60, "--seed", 2, "--corpus", path)[0] == 0
    return path


def test_generate_is_reproducible(tmp_path, capsys):
    a = run(capsys, "generate", "--builtin", "six-state", "--n", 30, "--seed", 4)[1]
    b = run(capsys, "generate", "--builtin", "six-state", "--n", 30, "--seed", 4)[1]
    assert a == b and len(a.splitlines()) == 30


def test_generate_from_model_file(tmp_path, capsys):
    model = tmp_path / "m.txt"
    run(capsys, "generate", "--builtin", "six-state", "--n", 1, "--save-model", model)
    code, out, _ = run(capsys, "generate", "--model", model, "--n", 5, "--seed", 1)
    assert code == 0 and len(out.splitlines()) == 5


def test_train_and_inspect(tmp_path, capsys, corpus_file):
    model, cons = tmp_path / "model.txt", tmp_path / "cons.txt"
    code, _, _ = run(capsys, "train", "--corpus", corpus_file, "--model", model, "--constraints", cons, "--r", 20)
    assert code == 0 and cons.exists()
    hmm, counts = load_model(model)
    assert counts.visits
    code, out, _ = run(capsys, "inspect", "--model", model)
    assert code == 0
    assert out.splitlines()[1] == "[0] start"
    assert "emits" in out and "next" in out
    # a second run reads the saved constraints
    model2 = tmp_path / "model2.txt"
    run(capsys, "train", "--corpus", corpus_file, "--model", model2, "--constraints", cons, "--r", 20)
    assert model.read_bytes() == model2.read_bytes()


def test_inspect_trellis(tmp_path, capsys):
    model = tmp_path / "m.txt"
    run(capsys, "generate", "--builtin", "six-state", "--n", 1, "--save-model", model)
    code, out, _ = run(capsys, "inspect", "--model", model, "--trellis", "hear open talk")
    assert code == 0 and out.startswith("alpha\t0\t0\t0\t1")


def test_evaluate_table_and_rows(tmp_path, capsys, corpus_file):
    rows = tmp_path / "rows.tsv"
    code, out, _ = run(capsys, "evaluate", "--corpus", corpus_file, "--method", "frequency",
                       "--method", "conditional", "--r", 5, "--r", 10, "--rows", rows)
    assert code == 0
    assert out.splitlines()[0].split() == ["method", "r=5", "r=10"]
    assert rows.read_text().splitlines()[0] == "domain\tmethod\tr\tcorrect\ttotal\taccuracy"


def test_evaluate_with_model(tmp_path, capsys, corpus_file):
    model = tmp_path / "m.txt"
    run(capsys, "generate", "--builtin", "six-state", "--n", 1, "--save-model", model)
    code, out, _ = run(capsys, "evaluate", "--corpus", corpus_file, "--method", "frequency", "--model", model)
    assert code == 0 and f"model {model}:" in out


def test_extract(tmp_path, capsys):
    src = tmp_path / "n.txt"
    src.write_text("Hear the doorbell.\nOpen the door.\n\nListen for the doorbell.\nOpen the door.\n")
    out, clusters = tmp_path / "c.txt", tmp_path / "k.tsv"
    code, _, _ = run(capsys, "extract", "--narratives", src, "--corpus", out, "--clusters", clusters)
    assert code == 0
    corpus = read_corpus(out)
    assert len(corpus) == 2 and corpus[0][2] == corpus[1][2] == "open"
    assert len(clusters.read_text().splitlines()) == 4


def test_config_file_and_override(tmp_path, capsys, corpus_file):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# evaluation\ncorpus = {corpus_file}\nmethod = frequency\nseed = 3\n")
    code, a, _ = run(capsys, "--config", cfg, "evaluate")
    assert code == 0 and "frequency" in a and "conditional" not in a
    code, b, _ = run(capsys, "--config", cfg, "evaluate", "--method", "conditional")
    assert code == 0 and "conditional" in b and "frequency" not in b
    assert read_config(cfg)["seed"] == "3"


def test_usage_errors(tmp_path, capsys):
    assert run(capsys, "train")[0] == 1
    assert run(capsys, "evaluate", "--corpus", "x", "--method", "magic")[0] == 1
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = run(capsys, "--config", cfg, "evaluate")
    assert code == 1 and "unknown config key" in err
    assert run(capsys, "generate", "--builtin", "six-state", "--n", 0)[0] == 1


def test_data_errors(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("this is not a model\n")
    code, _, err = run(capsys, "inspect", "--model", bad)
    assert code == 2 and err.startswith("scripthmm: error:")
    code, _, _ = run(capsys, "train", "--corpus", tmp_path / "missing.txt", "--model", tmp_path / "m.txt")
    assert code == 2
