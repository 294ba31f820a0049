"""
A one-cell adversarial planner
==============================

Excellent "plans" hold about 5 POIs, terrible ones about 0.  The generator
sees random context vectors and should learn to emit counts near 5, while
the discriminator learns to tell the two modes apart.
"""

import numpy as np

from lucgen.advplanner import planted_toy

gen, disc, log, held = planted_toy(seed=0)

# what the trained generator proposes for unseen contexts
out = gen(held).ravel()
print("generated counts: mean %.2f, min %.2f, max %.2f" % (out.mean(), out.min(), out.max()))
print("closer to the excellent mode: %.1f%%" % (100 * np.mean(np.abs(out - 5) < np.abs(out))))

# the discriminator's view at the end of training
print("D(excellent) %.3f  D(generated) %.3f  D(terrible) %.3f"
      % (log.d_real[-1], log.d_fake[-1], log.d_terrible[-1]))
