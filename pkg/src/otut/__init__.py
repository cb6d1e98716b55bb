"""Over-/under-translation detection for subtitle pairs without reference translations.

Submodules:

* ``corpus``      loading, tokenizing, sentence splitting and seed filtering
* ``encoders``    embedding backends (reference implementations and adapters)
* ``synthesis``   synthetic OT/UT samples and dataset assembly
* ``models``      GRU / CNN / hybrid classifier heads, training and prediction
* ``evaluation``  metrics, annotator collation and per-language reports
* ``desk``        a toy cognate-language corpus for offline experiments
* ``cli``         the ``otut`` command line
"""

__version__ = "0.1.0"
