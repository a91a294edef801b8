"""Simulation of an eight-legged, tendon-driven robot that senses prey on an orb web by crouching.

Modules
-------
web       orb-web graph construction and prey attachment
spider    robot morphology, joints and tendon actuation
system    coupling of robot and web into one lumped-mass system
dynamics  time integration, settling, trials, energy and modes
analysis  filtering, spectra, peak detection, prey classification, pose ratios
config    YAML experiment configuration
harness   experiment orchestration and persistence (CLI in ``cli``)
"""

__version__ = "0.1.0"
