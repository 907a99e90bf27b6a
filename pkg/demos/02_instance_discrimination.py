"""
Instance discrimination on a batch and on a small corpus
========================================================

Every segment is its own class.  The loss rewards an embedding for being
closest to its own augmented copy and penalises it for resembling the other
originals in the batch.
"""

import numpy as np

from idlspeech.loss import aug_probabilities, idl_loss, inst_probabilities
from idlspeech.nn import init_params
from idlspeech.nn.autodiff import Tensor
from idlspeech.scenarios import ToyPretraining, augment_gap

# two orthogonal unit embeddings whose augmented copies are exact
F = np.eye(2, 4)
print("perfect copies:", round(idl_loss(Tensor(F), Tensor(F), tau=10.0).item(), 4))

# swapping the copies makes the positive pair the least similar one
print("swapped copies:", round(idl_loss(Tensor(F), Tensor(F[::-1]), tau=10.0).item(), 4))

# with tau = 10 the logits lie in [-0.1, 0.1], so probabilities stay close to 1/n
rng = np.random.default_rng(0)
G = rng.normal(size=(5, 128))
G /= np.linalg.norm(G, axis=1, keepdims=True)
Q = aug_probabilities(G, G, tau=10.0)
print("P(x_i | x^_i) with exact copies, n = 5:", np.round(np.diag(Q), 3))
print("columns sum to one:", np.allclose(Q.sum(axis=0), 1.0))
P = inst_probabilities(G)
np.fill_diagonal(P, 0.0)
print("largest P(x_i | x_j), i != j:", round(float(P.max()), 3))

# pre-train DepAudioNet with distinct-speaker batches and time masking
toy = ToyPretraining()
pool, val = toy.pools()
print(len(pool), "training segments from", len({s.speaker_id for s in pool}), "speakers")
before = augment_gap(init_params(0), pool)
ck = toy.run("DS", seed=0, pools=(pool, val))
after = augment_gap(ck.params, pool)
for name, (pos, cross) in (("untrained", before), ("pre-trained", after)):
    print(f"{name:12s} <f_i, f^_i> = {pos:.3f}   <f_i, f_j> = {cross:.3f}   gap = {pos - cross:.3f}")
curve = ck.meta["loss_curve"]
print("train loss", round(curve[0]["train_loss"], 4), "->", round(curve[-1]["train_loss"], 4),
      "| best validation epoch", ck.meta["epoch"])
