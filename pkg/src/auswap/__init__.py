"""auswap: expression swapping between procedural glyph faces.

Two unpaired face images are disentangled into action-unit-related and
action-unit-free features by two-stage multi-class adversarial training;
swapping the AU-related halves and regenerating yields images with
exchanged expressions and preserved identities.  Everything runs on an
in-repo float64 autodiff stack; no deep-learning framework is involved.
"""

__version__ = "0.1.0"
