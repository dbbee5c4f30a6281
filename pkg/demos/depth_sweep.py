"""Accuracy against depth with the distance-margin loss.

A deep GCN read only at its last layer oversmooths: by depth 32 the final
embeddings of different classes have nearly merged. MetSelect can still read
each node at a shallow layer. Expect a few minutes; depth 32 is the slow part.
"""

from metselect import EncoderConfig, SbmSpec, TrainConfig, evaluate, generate_sbm, make_splits, train

g = generate_sbm(SbmSpec(n=400, C=4, p_in=0.05, p_out=0.005, mu_sig=0.5, seed=1))
split = make_splits(g, n_splits=1, seed=1)[0]

print("depth   final  metselect")
for depth in (2, 8, 32):
    enc = EncoderConfig("gcn", depth, 32, g.num_features)
    row = []
    for policy in ("final", "metselect"):
        m = train(g, split, enc, TrainConfig(loss="distance", policy=policy, epochs=300, seed=1))
        row.append(evaluate(m, g, split).test_f1)
    print(f"{depth:>5}   {row[0]:.3f}  {row[1]:.3f}")
