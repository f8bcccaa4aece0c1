"""Two-stage volt/var control sandbox for radial distribution feeders.

Day-ahead tap changer and capacitor scheduling (advisor-backed) combined
with intra-day PV inverter reactive control (PPO), plus the simulation,
scenario generation, and experiment harness needed to train and compare
both controllers.
"""

__version__ = "0.1.0"
