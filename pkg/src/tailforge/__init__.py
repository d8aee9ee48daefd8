"""tailforge: long-tail triplet augmentation with conditional feature diffusion.

Library layout mirrors the pipeline stages: ``taxonomy`` and ``corpus`` cover
triplet augmentation, ``encoders`` the embedding plumbing, ``hardness`` the
cluster-distance conditioning, ``diffusion`` the generative model, and
``vrrmodel`` the reference classifier plus evaluation.  ``pipeline`` wires
the stages behind the ``tailforge`` command line.
"""

__version__ = "0.1.0"
