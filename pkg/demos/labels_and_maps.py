"""
Labelling a synthetic city and drawing its land use
===================================================

Build a small synthetic city, score every community by check-in frequency
and POI diversity, then write a dominant-category map and per-channel
heatmaps for the best community.
"""

import os
import sys

import numpy as np

from lucgen.export import export_heatmap
from lucgen.geodata import SynthConfig, synth_city
from lucgen.landuse import label_communities, poi_proportions

out = sys.argv[1] if len(sys.argv) > 1 else "demo_maps"
os.makedirs(out, exist_ok=True)

city = synth_city(SynthConfig(communities=100, seed=1))
corpus = label_communities(city)

# how often the Q label agrees with the label planted by the generator
agree = np.mean([city.planted[i] == lab for i, lab in zip(corpus.ids, corpus.labels)])
print("communities: %d, excellent: %d, agreement with planted labels: %.3f"
      % (len(corpus.ids), corpus.labels.count("excellent"), agree))

best = int(np.argmax([s.Q for s in corpus.scores]))
config = corpus.configs[best]
print("best community %s has Q = %.3f" % (corpus.ids[best], corpus.scores[best].Q))
print("top categories:", np.argsort(poi_proportions(config))[::-1][:5])

# one grayscale raster per category plus the merged colour map
paths = export_heatmap(config, 10, out, corpus.ids[best])
print("wrote %d rasters to %s" % (len(paths), out))
