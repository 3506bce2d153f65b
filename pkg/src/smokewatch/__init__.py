"""smokewatch: wildfire smoke detection and alerting.

A from-scratch anchor-free smoke detector (multi-scale deformable-conv
fusion head, score-based adaptive sample selection, focal/IoU/centerness
composite loss) together with the operational loop around it: camera
polling, human-confirmed alerts, webhook dispatch, and an evaluation
harness with a synthetic smoke corpus.
"""

__version__ = "0.1.0"
