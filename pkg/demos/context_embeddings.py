"""
Context embeddings from the spatial graph autoencoder
=====================================================

Each community becomes a 9-node graph (centre plus 8 surrounding squares).
A variational graph autoencoder is trained on all of them and the pooled
latent means serve as context embeddings.
"""

import numpy as np

from lucgen.features import ContextFeaturizer, fit_scaler
from lucgen.geodata import SynthConfig, synth_city
from lucgen.landuse import label_communities
from lucgen.spatialgraph import VgaeConfig, build_graph, embed, reconstruction_auc, train_vgae

city = synth_city(SynthConfig(communities=120, seed=2))
ids, F = ContextFeaturizer(city).corpus()
graphs = [build_graph(f) for f in fit_scaler(F).apply(F)]

params, log = train_vgae(graphs, VgaeConfig(epochs=60), seed=0)
print("loss: first epoch %.2f, last epoch %.2f" % (log.epoch_loss[0], log.epoch_loss[-1]))
print("mean edge reconstruction AUC: %.3f"
      % np.mean([reconstruction_auc(g, params) for g in graphs]))

# embeddings of excellent and terrible neighbourhoods sit apart on average
Z = embed(graphs, params)
labels = np.array(label_communities(city).labels)
gap = Z[labels == "excellent"].mean(axis=0) - Z[labels == "terrible"].mean(axis=0)
print("distance between class centroids: %.3f" % np.linalg.norm(gap))
