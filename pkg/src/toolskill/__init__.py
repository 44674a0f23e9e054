"""Desk-scale workbench for few-shot tool-use skill transfer.

Pipeline: collect primitive-motion data in a 2D contact simulator, pre-train
a seq2seq policy on it, fine-tune only the decoder output layer on a handful
of scripted demonstrations, execute receding-horizon rollouts, and reproduce
the comparative metrics and latent-space analyses.
"""

import os

# Training interleaves BLAS matmuls with numba kernels; spinning worker pools
# on either side starve the other on small machines. Must be set before numpy
# first loads OpenBLAS, hence here. Values already in the environment win.
os.environ.setdefault("OPENBLAS_THREAD_TIMEOUT", "1")
os.environ.setdefault("OMP_WAIT_POLICY", "PASSIVE")
os.environ.setdefault("GOMP_SPINCOUNT", "0")
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
