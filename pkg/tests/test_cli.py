import subprocess
import sys

import pytest

from modcrf import crf
from modcrf.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_VERIFY, main
from modcrf.config import default_manifest
from modcrf.data import SynthSpec, generate_synthetic_corpus, project_partial, write_conll
from modcrf.verify import check_crf_oracle

TINY = ["--char-embed-dim", "3", "--char-hidden", "2", "--word-embed-dim", "4", "--word-hidden", "3"]
SHORT = TINY + ["--max-epochs", "2", "--min-epochs", "0"]
FAST = SHORT + ["--quiet"]


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = generate_synthetic_corpus(SynthSpec(n_sentences=30, types=("pos", "neg")), 0)
    paths = {}
    for name, rng in (("train", range(0, 20)), ("dev", range(20, 25)), ("test", range(25, 30))):
        paths[name] = root / f"{name}.txt"
        write_conll(corpus.subset(rng), paths[name])
    paths["seg"] = root / "seg.txt"
    write_conll(project_partial(corpus.subset(range(25, 30)), "SegOnly", 1.0), paths["seg"])
    paths["typ"] = root / "typ.txt"
    write_conll(project_partial(corpus.subset(range(25, 30)), "TypeOnly", 1.0), paths["typ"])
    paths["raw"] = root / "raw.txt"
    paths["raw"].write_text("".join(" ".join(s.words).replace(" ", "\n") + "\n\n" for s in corpus.subset(range(25, 27))))
    paths["root"] = root
    return paths


def train_args(files, out, *extra):
    return ["train", "--train", str(files["train"]), "--dev", str(files["dev"]), "--output", str(out)] + FAST + list(extra)


@pytest.fixture(scope="module")
def checkpoints(files):
    out = {}
    for variant in ("TIg", "Baseline"):
        path = files["root"] / f"{variant}.zip"
        assert main(train_args(files, path, "--variant", variant)) == EXIT_OK
        out[variant] = path
    return out


def test_train_writes_checkpoint_log_and_manifest(checkpoints):
    path = checkpoints["TIg"]
    log = (path.parent / (path.name + ".log")).read_text().splitlines()
    assert log[0] == "epoch\tloss\tdev_f1"
    assert [line.split("\t")[0] for line in log[1:]] == ["1", "2"]
    manifest = (path.parent / (path.name + ".manifest")).read_text()
    assert "types=neg,pos" in manifest and "config_hash=" in manifest and "best_epoch=" in manifest


def test_eval_modes(files, checkpoints, capsys):
    for mode, data in (("Full", "test"), ("SegOnly", "seg"), ("TypeOnly", "typ")):
        assert main(["eval", "--checkpoint", str(checkpoints["TIg"]), "--test", str(files[data]), "--mode", mode]) == EXIT_OK
        out = capsys.readouterr().out
        assert f"mode={mode}" in out and "Pre\tRec\tF1" in out


def test_eval_partial_mode_on_baseline_is_config_error(files, checkpoints):
    args = ["eval", "--checkpoint", str(checkpoints["Baseline"]), "--test", str(files["seg"]), "--mode", "SegOnly"]
    assert main(args) == EXIT_CONFIG


def test_eval_full_mode_on_partial_data_is_data_error(files, checkpoints):
    assert main(["eval", "--checkpoint", str(checkpoints["TIg"]), "--test", str(files["seg"])]) == EXIT_DATA


def test_predict(files, checkpoints, tmp_path):
    out = tmp_path / "pred.txt"
    assert main(["predict", "--checkpoint", str(checkpoints["TIg"]), "--input", str(files["raw"]), "--output", str(out)]) == EXIT_OK
    blocks = out.read_text().strip().split("\n\n")
    assert len(blocks) == 2
    for line in blocks[0].splitlines():
        word, label = line.split(" ")
        assert label == "O" or label[:2] in ("B-", "I-")


def test_partial_training_file(files, tmp_path):
    assert main(train_args(files, tmp_path / "p.zip", "--train", str(files["seg"]), "--types", "pos,neg")) == EXIT_OK
    assert main(train_args(files, tmp_path / "b.zip", "--train", str(files["seg"]), "--variant", "Baseline")) == EXIT_CONFIG


def test_exit_codes(files, tmp_path, capsys):
    assert main(train_args(files, tmp_path / "m.zip", "--lr", "fast")) == EXIT_CONFIG
    assert main(train_args(files, tmp_path / "m.zip", "--variant", "Nope")) == EXIT_CONFIG
    assert main(["train", "--train", str(tmp_path / "none.txt"), "--dev", str(files["dev"]), "--output", "x"] + FAST) == EXIT_DATA
    bad = tmp_path / "bad.txt"
    bad.write_text("a B-pos\nb I-neg\n")
    assert main(train_args(files, tmp_path / "m.zip", "--train", str(bad), "--types", "pos,neg")) == EXIT_DATA
    assert main(["eval", "--checkpoint", str(tmp_path / "none.zip"), "--test", str(files["test"])]) == EXIT_CHECKPOINT
    junk = tmp_path / "junk.zip"
    junk.write_bytes(b"junk")
    assert main(["predict", "--checkpoint", str(junk), "--input", str(files["raw"])]) == EXIT_CHECKPOINT
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lr\n")
    assert main(train_args(files, tmp_path / "m.zip", "--config", str(cfg))) == EXIT_CONFIG
    capsys.readouterr()


def test_defaults_prints_manifest(capsys):
    assert main(["defaults"]) == EXIT_OK
    assert capsys.readouterr().out == default_manifest()


def test_experiment_on_synthetic_data(tmp_path, capsys):
    table = tmp_path / "rows.tsv"
    args = ["experiment", "--protocol", "PartialCurve", "--grid", "0,0.4", "--seeds", "0", "--synthetic-sentences", "24",
            "--output-table", str(table)] + SHORT
    assert main(args) == EXIT_OK
    lines = table.read_text().splitlines()
    assert lines[0].split("\t") == ["fraction", "seed", "system", "f1", "epochs", "n_full", "n_partial"]
    assert len(lines) == 1 + 4
    assert capsys.readouterr().out == table.read_text()
    assert main(["experiment", "--grid", "0,0.9"] + SHORT) == EXIT_CONFIG


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "modcrf", "defaults"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.startswith("variant=TIg")


@pytest.mark.slow
def test_verify_passes(capsys):
    assert main(["verify"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "all checks passed" in out


def off_by_one_viterbi(original):
    def decode(em, trans, mask=None):
        path, score = original(em, trans, mask)
        return [(y + 1) % em.shape[1] for y in path], score

    return decode


def test_verify_catches_a_broken_decoder(monkeypatch):
    monkeypatch.setattr(crf, "viterbi_decode", off_by_one_viterbi(crf.viterbi_decode))
    result = check_crf_oracle(n=50)
    assert not result.passed and "path mismatches" in result.detail


@pytest.mark.slow
def test_verify_exit_code_on_broken_decoder(monkeypatch, capsys):
    monkeypatch.setattr(crf, "viterbi_decode", off_by_one_viterbi(crf.viterbi_decode))
    assert main(["verify"]) == EXIT_VERIFY
    assert "FAIL\tcrf-oracle" in capsys.readouterr().out
