"""Detecting unintelligible spans in learner speech from a rater's shadowing.

The library covers the whole workflow: frame-sequence data model and file
formats, synthetic corpus generation, the two-stage warp-based labeling
pipeline, a differentiable monotonic aligner, the multi-task conversion model
with its disfluency heads, evaluation, and a command-line front end.
"""

__version__ = "0.1.0"
