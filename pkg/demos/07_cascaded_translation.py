"""Speech-to-text and speech-to-speech translation as cascades.

There is no direct translation path from source speech: the pipeline chains
recognition (speech -> source text), translation (source text -> target
text), and for s2st synthesis (target text -> target speech), reusing the
source utterance as the speaker prompt so the translated voice matches the
original speaker.

This demo trains on the dollhouse scale and runs the cascade on a training
utterance, where every stage is reliable enough to follow the hand-off.

Run: python3 demos/07_cascaded_translation.py   (two to three minutes)
"""

import tempfile
import time

import numpy as np

from codeclm import codec
from codeclm.corpus import Corpus, CorpusConfig, generate_corpus, oracle_decode, toy_translate
from codeclm.inference import cascade_s2st, cascade_s2tt
from codeclm.model_ar import ARConfig
from codeclm.model_nar import NARConfig
from codeclm.training import TrainConfig, train_model, train_nar_model

cfg = CorpusConfig(seed=21, n_asr=150, n_mt=300, n_tts=150, n_dev=6, n_test=6,
                   speakers_train=8, speakers_dev=2, speakers_test=2, k=16,
                   len_min=3, len_max=7)
mcfg = ARConfig(d_model=48, n_layers=2, n_heads=2, d_ffn=128, lstm_layers=2,
                k=16, n_phonemes=40, max_len=160)
ncfg = NARConfig(d_model=48, n_layers=2, n_heads=2, d_ffn=128, lstm_layers=2,
                 k=16, n_phonemes=40, max_len=160)

with tempfile.TemporaryDirectory() as work:
    generate_corpus(cfg, f"{work}/corpus")
    corpus = Corpus(f"{work}/corpus")
    vocab = corpus.vocab

    t0 = time.time()
    print("training recognition + translation + synthesis jointly...")
    ar = train_model(corpus, mcfg,
                     TrainConfig(steps=2500, batch_size=8, max_lr=3e-3, warmup=120,
                                 seed=0, log_every=1250, checkpoint_every=0),
                     f"{work}/ar", progress=print)
    print("training the layer filler...")
    nar = train_nar_model(corpus, ncfg,
                          TrainConfig(steps=800, batch_size=8, max_lr=3e-3, warmup=80,
                                      seed=1, log_every=400, checkpoint_every=0,
                                      streams=("tts_a", "tts_b")),
                          f"{work}/nar", progress=print)
    print(f"trained in {time.time() - t0:.0f}s\n")

    # shortest source first: the synthesis stage sees the source and target
    # text concatenated, and a dollhouse model only handles combined lengths
    # it trained on
    rec = min((r for r in corpus.records("train") if r.task == "asr" and r.lang_in == 0),
              key=lambda r: len(corpus.text(r, "text")[1]))
    _, src_local = corpus.text(rec, "text")
    tokens = corpus.tokens(rec).astype(np.int64)
    expected = toy_translate(src_local, cfg.n_phonemes)
    print(f"source utterance {rec.id}, speaker {rec.speaker}")
    print(f"source text:          {src_local.tolist()}")
    print(f"reference translation: {expected.tolist()}\n")

    res = cascade_s2tt(ar.params, mcfg, vocab, tokens, rec.lang_in, 1 - rec.lang_in, beam=4)
    asr_local = [vocab.phoneme_local(int(t), rec.lang_in) for t in res.asr_ids]
    mt_local = [vocab.phoneme_local(int(t), 1 - rec.lang_in) for t in res.mt_ids]
    print("s2tt cascade:")
    print(f"  recognized:  {asr_local}")
    print(f"  translated:  {mt_local}\n")

    full = cascade_s2st(ar.params, mcfg, nar.params, ncfg, vocab, tokens,
                        rec.lang_in, 1 - rec.lang_in, beam=4, strategy=2,
                        codebooks=corpus.codebooks, signatures=corpus.signatures,
                        signature_mean=corpus.signature_mean, seed=3)
    print("s2st cascade:")
    print(f"  chose candidate {full.chosen} of {len(full.candidates)}, "
          f"{len(full.tokens)} frames of speech")
    if full.candidates:
        chosen = full.candidates[full.chosen]
        print(f"  similarity to the source speaker: {chosen.ss:.4f}")
    if len(full.tokens):
        frames = codec.decode(full.tokens, corpus.codebooks)
        said = oracle_decode(frames, 1 - rec.lang_in, corpus.signatures)
        print(f"  the generated speech says: {said.tolist()}")
    print(f"  reference translation was: {expected.tolist()}")
    print("(content is rough at this scale; the acceptance suite checks the")
    print(" full-size cascade for translation quality and speaker transfer)")
