"""
Depression detection downstream
===============================

Fine-tune DepAudioNet on labelled sessions, average segment probabilities
per session and score the decisions with per-class F1.
"""

from idlspeech.scenarios import ToyDownstream, ToyPretraining
from idlspeech.train import TrainConfig, evaluate, f1_scores, finetune_ensemble

# the synthetic "depressed" class speaks more slowly with flatter pitch
down = ToyDownstream(epochs=30)
train, test = down.sessions(seed=0)
print(len(train), "training sessions,", len(test), "test sessions,",
      sum(u.label for u in train), "labelled depressed in training")

# one model on every training segment at lr 1e-2 (profile B)
cfg = TrainConfig(epochs=down.epochs, batch_size=20, lr0=1e-2, seed=0)
baseline = finetune_ensemble(train, None, cfg, k_models=1, profile="B")
report = evaluate(baseline, test)
print("no pre-training: f1_avg", round(report.f1_avg, 3), "confusion [[tn, fp], [fn, tp]]", report.confusion)

# the same recipe from pre-trained weights
stage1 = ToyPretraining().run("DS", seed=0)
report = evaluate(finetune_ensemble(train, stage1, cfg, k_models=1, profile="B"), test)
print("DS pre-training: f1_avg", round(report.f1_avg, 3), "confusion", report.confusion)

# profile A: five models, each on a balanced crop of the training sessions, lr 1e-3
cfg_a = TrainConfig(epochs=down.epochs, batch_size=20, lr0=1e-3, seed=0)
ensemble = finetune_ensemble(train, stage1, cfg_a, k_models=5, profile="A")
print("profile A ensemble: f1_avg", round(evaluate(ensemble, test).f1_avg, 3))

# F1 by hand: 3 true positives, 1 false positive, 2 false negatives -> 2*3 / (2*3 + 1 + 2)
pred = {"a": 1, "b": 1, "c": 1, "d": 1, "e": 0, "f": 0}
truth = {"a": 1, "b": 1, "c": 1, "d": 0, "e": 1, "f": 1}
print("hand example f1_d:", round(f1_scores(pred, truth).f1_d, 4))
