"""
Pseudo-instance batches and the speaker probe
=============================================

Random batches may hold two segments of one speaker, which the loss then
pushes apart.  Distinct-speaker batches avoid that when speaker labels exist;
without them, k-means clusters of a first-stage model stand in for speakers.
"""

from collections import Counter

import numpy as np

from idlspeech.nn import init_params
from idlspeech.sampling import assign_pseudo_labels, kmeans_fit, make_plan
from idlspeech.scenarios import ToyPretraining, mean_probe_accuracy, synth_segments
from idlspeech.train import embed_segments

toy = ToyPretraining()
pool, val = toy.pools()

# how often does a random batch of 10 repeat a speaker?
repeats = [len(b) - len({pool[i].speaker_id for i in b}) for b in make_plan("RS", pool, 10, seed=0)]
print("random batches with a repeated speaker:", sum(r > 0 for r in repeats), "of", len(repeats))

# stage 1: distinct-speaker pre-training, then cluster its embeddings into C = batch size groups
stage1 = toy.run("DS", seed=0, pools=(pool, val))
emb = embed_segments(stage1.params, pool)
km = kmeans_fit(emb, toy.batch_size, seed=0)
assign_pseudo_labels(pool, km, embeddings=emb)
print("cluster sizes:", sorted(Counter(s.pseudo_label for s in pool).values()))
print("inertia per Lloyd iteration:", np.round(km.inertia_history, 3))

# every PIS batch takes one segment from each cluster
batch = make_plan("PIS", pool, toy.batch_size, seed=0).batches[0]
print("pseudo-labels in one PIS batch:", sorted(pool[i].pseudo_label for i in batch))

# stage 2 continues from the stage-1 weights
stage2 = toy.run_pis(stage1, seed=0, pools=(pool, val))

# a linear SVM on 70% of each unseen speaker's segments, scored on the other 30%
unseen = synth_segments(10, 12, seed=14, prefix="new")
for name, params in (("untrained", init_params(0)), ("DS", stage1.params), ("PIS", stage2.params)):
    print(f"speaker probe, {name:9s}: {mean_probe_accuracy(params, unseen):.3f}")
