"""
Deterministic 2-D tabletop world: scenes, physics, scripted expert,
demonstration and visual-question datasets.
"""
