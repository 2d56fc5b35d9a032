"""Frozen segmentation backbone + trainable HOI decoder producing
<human box, object box+class, verb, union mask> quadruplets."""

__version__ = "0.1.0"
