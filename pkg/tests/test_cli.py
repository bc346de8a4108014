import hashlib
import os
import shutil

import numpy as np
import pytest

from codeclm.cli import main
from codeclm.errors import NumericError


def _write(path, text):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


CORPUS_CFG = """\
seed=11
n_asr=30
n_mt=30
n_tts=30
n_dev=3
n_test=3
speakers_train=4
speakers_dev=2
speakers_test=2
k=16
len_min=3
len_max=6
"""

AR_CFG = """\
arch=ar
d_model=32
n_layers=2
n_heads=2
d_ffn=64
lstm_layers=2
max_len=192
steps=400
batch_size=8
max_lr=0.003
warmup=50
log_every=100
checkpoint_every=0
streams=asr_a,mt_ab,tts_b
seed=1
"""

NAR_CFG = """\
arch=nar
d_model=32
n_layers=2
n_heads=2
d_ffn=64
lstm_layers=2
max_len=192
steps=150
batch_size=8
max_lr=0.003
warmup=40
log_every=100
checkpoint_every=0
seed=2
"""


def _dir_digest(root):
    digest = hashlib.sha256()
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name)
        if os.path.isfile(path):
            digest.update(name.encode())
            with open(path, "rb") as f:
                digest.update(f.read())
    return digest.hexdigest()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth-data -> train (AR and NAR) once, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus_cfg = root / "corpus.cfg"
    _write(corpus_cfg, CORPUS_CFG)
    corpus_dir = root / "corpus"
    assert main(["synth-data", "--config", str(corpus_cfg), "--out", str(corpus_dir)]) == 0

    ar_cfg = root / "ar.cfg"
    _write(ar_cfg, AR_CFG)
    ar_dir = root / "ar"
    assert main(["train", "--config", str(ar_cfg), "--data", str(corpus_dir), "--out", str(ar_dir)]) == 0

    nar_cfg = root / "nar.cfg"
    _write(nar_cfg, NAR_CFG)
    nar_dir = root / "nar"
    assert main(["train", "--config", str(nar_cfg), "--data", str(corpus_dir), "--out", str(nar_dir)]) == 0

    return {
        "root": root,
        "corpus_cfg": corpus_cfg,
        "corpus": corpus_dir,
        "ar_ckpt": ar_dir / "ckpt_final.vlck",
        "nar_ckpt": nar_dir / "ckpt_final.vlck",
    }


def test_train_outputs_exist(pipeline):
    assert pipeline["ar_ckpt"].exists()
    assert pipeline["nar_ckpt"].exists()
    assert (pipeline["corpus"] / "manifest_test.tsv").exists()
    log = (pipeline["root"] / "ar" / "train_log.tsv").read_text()
    assert log.startswith("# step\tlr\tloss_total")


def test_infer_asr_and_eval(pipeline):
    corpus = pipeline["corpus"]
    before = _dir_digest(corpus)
    hyp = pipeline["root"] / "asr_hyp.tsv"
    rc = main(
        ["infer", "--task", "asr", "--ckpt", str(pipeline["ar_ckpt"]),
         "--beam", "2", "--in", str(corpus / "manifest_test.tsv"), "--out", str(hyp)]
    )
    assert rc == 0
    lines = hyp.read_text().splitlines()
    assert len(lines) == 6  # three held-out utterances per language
    for line in lines:
        fields = line.split("\t")
        assert len(fields) == 6
        assert fields[1] == "asr" and fields[2] == "-"
    report = pipeline["root"] / "asr_report.tsv"
    rc = main(["eval", "--task", "asr", "--hyp", str(hyp), "--ref", str(corpus / "manifest_test.tsv"),
               "--out", str(report)])
    assert rc == 0
    rows = dict()
    for line in report.read_text().splitlines():
        task, metric, value = line.split("\t")
        assert task == "asr"
        rows[metric] = value
    assert 0.0 <= float(rows["per"]) <= 2.0
    assert rows["n"] == "6"
    assert _dir_digest(corpus) == before, "inference or eval mutated the corpus directory"


def test_infer_beam_one_equals_greedy_decode(pipeline):
    corpus = pipeline["corpus"]
    out1 = pipeline["root"] / "greedy1.tsv"
    out2 = pipeline["root"] / "greedy2.tsv"
    base = ["infer", "--task", "asr", "--ckpt", str(pipeline["ar_ckpt"]),
            "--in", str(corpus / "manifest_test.tsv")]
    assert main(base + ["--beam", "1", "--out", str(out1)]) == 0
    assert main(base + ["--beam", "1", "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()

    from codeclm.corpus import Corpus, read_manifest
    from codeclm.inference import decode_text
    from codeclm.model_ar import config_from_dict
    from codeclm.config import load_flat
    from codeclm.training import load_model

    cfg = config_from_dict(load_flat(pipeline["root"] / "ar" / "model_config.txt"))
    params = load_model(pipeline["ar_ckpt"], cfg)
    c = Corpus(corpus)
    _, records = read_manifest(corpus / "manifest_test.tsv")
    rec = next(r for r in records if r.task == "asr")
    hyp = decode_text(params, cfg, c.vocab, "asr", rec.lang_in, rec.lang_in, "ac8",
                      c.tokens(rec).astype(np.int64), beam=1)[0]
    expected = " ".join(c.vocab.symbol_of(int(t)) for t in hyp.tokens)
    line = next(l for l in out1.read_text().splitlines() if l.startswith(rec.id + "\t"))
    assert line.split("\t")[5] == expected


def test_infer_mt_and_eval(pipeline):
    corpus = pipeline["corpus"]
    hyp = pipeline["root"] / "mt_hyp.tsv"
    rc = main(["infer", "--task", "mt", "--ckpt", str(pipeline["ar_ckpt"]),
               "--beam", "2", "--in", str(corpus / "manifest_test.tsv"), "--out", str(hyp)])
    assert rc == 0
    report = pipeline["root"] / "mt_report.tsv"
    rc = main(["eval", "--task", "mt", "--hyp", str(hyp), "--ref", str(corpus / "manifest_test.tsv"),
               "--out", str(report)])
    assert rc == 0
    content = report.read_text()
    assert "mt\tbleu\t" in content and "mt\tn\t3" in content


def test_infer_tts_and_eval(pipeline):
    corpus = pipeline["corpus"]
    hyp = pipeline["root"] / "tts_hyp.tsv"
    rc = main(["infer", "--task", "tts", "--ckpt", str(pipeline["ar_ckpt"]),
               "--nar-ckpt", str(pipeline["nar_ckpt"]), "--strategy", "2", "--seed", "3",
               "--in", str(corpus / "manifest_test.tsv"), "--out", str(hyp)])
    assert rc == 0
    lines = hyp.read_text().splitlines()
    assert len(lines) == 6
    for line in lines:
        fields = line.split("\t")
        assert fields[1] == "tts" and fields[2] == "2"
        assert len(fields[3].split(",")) == 5 and len(fields[4].split(",")) == 5
        if fields[5]:
            assert all(len(fr.split(",")) == 8 for fr in fields[5].split(";"))
    report = pipeline["root"] / "tts_report.tsv"
    rc = main(["eval", "--task", "tts", "--hyp", str(hyp), "--ref", str(corpus / "manifest_test.tsv"),
               "--out", str(report)])
    assert rc == 0
    rows = {l.split("\t")[1]: l.split("\t")[2] for l in report.read_text().splitlines()}
    assert set(rows) == {"per", "recovery", "n"}


def test_infer_tts_requires_nar_checkpoint(pipeline):
    corpus = pipeline["corpus"]
    rc = main(["infer", "--task", "tts", "--ckpt", str(pipeline["ar_ckpt"]),
               "--in", str(corpus / "manifest_test.tsv"), "--out", str(pipeline["root"] / "x.tsv")])
    assert rc == 3


def test_infer_s2st_cascade(pipeline, tmp_path):
    # trimmed copy: two train utterances the model has memorized
    corpus2 = tmp_path / "corpus2"
    shutil.copytree(pipeline["corpus"], corpus2)
    with open(corpus2 / "manifest_train.tsv", encoding="utf-8") as f:
        lines = f.read().splitlines()
    header = [l for l in lines if l.startswith("#")]
    asr_rows = [l for l in lines if not l.startswith("#") and "\tasr\t" in l and "\ta\t" in l][:2]
    _write(corpus2 / "manifest_smoke.tsv", "\n".join(header + asr_rows) + "\n")

    hyp = tmp_path / "s2st_hyp.tsv"
    rc = main(["infer", "--task", "s2st", "--ckpt", str(pipeline["ar_ckpt"]),
               "--nar-ckpt", str(pipeline["nar_ckpt"]), "--strategy", "1", "--beam", "2",
               "--in", str(corpus2 / "manifest_smoke.tsv"), "--out", str(hyp)])
    assert rc == 0
    lines = hyp.read_text().splitlines()
    assert len(lines) == 2
    for line in lines:
        fields = line.split("\t")
        assert fields[1] == "s2st" and fields[2] == "1"
    report = tmp_path / "s2st_report.tsv"
    rc = main(["eval", "--task", "s2st", "--hyp", str(hyp), "--ref", str(corpus2 / "manifest_smoke.tsv"),
               "--out", str(report)])
    assert rc == 0
    assert "s2st\tbleu\t" in report.read_text()


def test_infer_s2tt(pipeline):
    corpus = pipeline["corpus"]
    hyp = pipeline["root"] / "s2tt_hyp.tsv"
    rc = main(["infer", "--task", "s2tt", "--ckpt", str(pipeline["ar_ckpt"]),
               "--beam", "2", "--in", str(corpus / "manifest_test.tsv"), "--out", str(hyp)])
    assert rc == 0
    lines = hyp.read_text().splitlines()
    assert len(lines) == 3  # language-a test utterances only
    rc = main(["eval", "--task", "s2tt", "--hyp", str(hyp), "--ref", str(corpus / "manifest_test.tsv"),
               "--out", str(pipeline["root"] / "s2tt_report.tsv")])
    assert rc == 0


def test_synth_data_determinism(pipeline, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["synth-data", "--config", str(pipeline["corpus_cfg"]), "--out", str(a)]) == 0
    assert main(["synth-data", "--config", str(pipeline["corpus_cfg"]), "--out", str(b)]) == 0
    assert _dir_digest(a) == _dir_digest(b)
    assert _dir_digest(a) == _dir_digest(pipeline["corpus"])


def test_train_codec_standalone(pipeline, tmp_path):
    out1 = tmp_path / "cb1.vlcb"
    out2 = tmp_path / "cb2.vlcb"
    base = ["train-codec", "--frames", str(pipeline["corpus"]), "--k", "16", "--seed", "5"]
    assert main(base + ["--out", str(out1)]) == 0
    assert main(base + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    from codeclm import codec

    cb = codec.load_codebooks(out1)
    assert cb.k == 16 and cb.n_layers == 8


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as e:
        main(["infer", "--task", "asr"])  # missing required arguments
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["no-such-command"])
    assert e.value.code == 2


def test_missing_file_exits_three(tmp_path):
    rc = main(["synth-data", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "o")])
    assert rc == 3


def test_numeric_error_exits_four(pipeline, monkeypatch, tmp_path):
    import codeclm.training as training

    def boom(*a, **k):
        raise NumericError("non-finite loss at step 3")

    monkeypatch.setattr(training, "train_model", boom)
    cfg = tmp_path / "t.cfg"
    _write(cfg, AR_CFG)
    rc = main(["train", "--config", str(cfg), "--data", str(pipeline["corpus"]), "--out", str(tmp_path / "o")])
    assert rc == 4


def test_unknown_config_key_rejected(pipeline, tmp_path):
    cfg = tmp_path / "bad.cfg"
    _write(cfg, AR_CFG + "definitely_not_a_key=1\n")
    rc = main(["train", "--config", str(cfg), "--data", str(pipeline["corpus"]), "--out", str(tmp_path / "o")])
    assert rc == 3
